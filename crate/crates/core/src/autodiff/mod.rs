//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its output value and the handles
//! of its inputs, so the tape is topologically ordered by construction.
//! [`Tape::backward`] walks the nodes once in reverse, and deposits
//! `d output / d node` into the gradient buffer of every node flagged with
//! `requires_grad`. Deposits accumulate across calls until
//! [`Tape::zero_grad`] is called.
//!
//! A tape is confined to one thread. Parallel work runs one tape per sample.

mod kernels;

pub use kernels::Padding;
pub(crate) use kernels::{conv2d_forward, dense_forward, maxpool2_forward, ConvDims};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernels: Var, bias: Var, dims: ConvDims },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Dense { input: Var, weights: Var, bias: Var },
    Tanh(Var),
    Affine { input: Var, gamma: Var, beta: Var },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Sum(Var),
    Scale(Var, f64),
    AddScalar(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernels, bias, .. } => vec![input, kernels, bias],
            Op::MaxPool2 { input, .. } => vec![input],
            Op::Dense { input, weights, bias } => vec![input, weights, bias],
            Op::Affine { input, gamma, beta } => vec![input, gamma, beta],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Tanh(a) | Op::Reshape(a) | Op::Square(a) | Op::Sum(a) | Op::Scale(a, _) | Op::AddScalar(a) => {
                vec![a]
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = false;
        value.grad = None;
        self.push(value, Op::Leaf)
    }

    /// Records an input whose gradient should be collected.
    pub fn variable(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = true;
        value.zero_grad();
        self.push(value, Op::Leaf)
    }

    /// Flags an intermediate node so that `backward` keeps its gradient.
    pub fn retain_grad(&mut self, v: Var) {
        let t = &mut self.nodes[v.0].value;
        t.requires_grad = true;
        if t.grad.is_none() {
            t.zero_grad();
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if node.value.requires_grad {
                node.value.zero_grad();
            }
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Stride-1 cross-correlation of a `[C_in, H, W]` input with
    /// `[C_out, C_in, kH, kW]` kernels plus a per-channel bias.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, pad: Padding) -> Result<Var> {
        let (ish, ksh, bsh) = (self.shape(input), self.shape(kernels), self.shape(bias));
        let (&[c_in, h, w], &[c_out, kc, kh, kw]) = (ish, ksh) else {
            return Err(Error::Shape(format!(
                "conv2d expects [C,H,W] input and [O,C,kH,kW] kernels, got {ish:?} and {ksh:?}"
            )));
        };
        if kc != c_in {
            return Err(Error::Shape(format!(
                "conv2d: kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if bsh != [c_out] {
            return Err(Error::Shape(format!("conv2d: bias shape {bsh:?}, expected [{c_out}]")));
        }
        if kh > h + pad.top + pad.bottom || kw > w + pad.left + pad.right {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} exceeds padded input {}x{}",
                h + pad.top + pad.bottom,
                w + pad.left + pad.right
            )));
        }
        let dims = ConvDims { c_in, h, w, c_out, kh, kw, pad };
        let out = conv2d_forward(&dims, self.data(input), self.data(kernels), self.data(bias));
        let value = Tensor::new(&[c_out, dims.out_h(), dims.out_w()], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernels, bias, dims }))
    }

    /// 2x2 max pooling with stride 2 over a `[C, H, W]` tensor; odd extents round up.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let &[c, h, w] = self.shape(input) else {
            return Err(Error::Shape(format!(
                "maxpool2 expects [C,H,W], got {:?}",
                self.shape(input)
            )));
        };
        let (out, argmax) = maxpool2_forward(c, h, w, self.data(input));
        let value = Tensor::new(&[c, h.div_ceil(2), w.div_ceil(2)], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }))
    }

    /// Affine map `weights · input + bias` for a rank-1 input.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (ish, wsh, bsh) = (self.shape(input), self.shape(weights), self.shape(bias));
        let (&[n], &[m, wn]) = (ish, wsh) else {
            return Err(Error::Shape(format!(
                "dense expects [N] input and [M,N] weights, got {ish:?} and {wsh:?}"
            )));
        };
        if wn != n || bsh != [m] {
            return Err(Error::Shape(format!(
                "dense: input {ish:?}, weights {wsh:?}, bias {bsh:?}"
            )));
        }
        let out = dense_forward(m, n, self.data(input), self.data(weights), self.data(bias));
        Ok(self.push(Tensor::new(&[m], out)?, Op::Dense { input, weights, bias }))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let value = self.value(input).map(f64::tanh);
        self.push(value, Op::Tanh(input))
    }

    /// Elementwise `gamma * input + beta`, all three of identical shape.
    pub fn affine(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.same_shape(input, gamma, "affine gamma")?;
        self.same_shape(input, beta, "affine beta")?;
        let out: Vec<f64> = self
            .data(input)
            .iter()
            .zip(self.data(gamma))
            .zip(self.data(beta))
            .map(|((x, g), b)| g * x + b)
            .collect();
        let value = Tensor::new(self.shape(input), out)?;
        Ok(self.push(value, Op::Affine { input, gamma, beta }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone();
        let mut value = value.reshape(shape)?;
        value.grad = None;
        value.requires_grad = false;
        Ok(self.push(value, Op::Reshape(input)))
    }

    pub fn flatten(&mut self, input: Var) -> Var {
        let n = self.value(input).len();
        self.reshape(input, &[n]).expect("flatten preserves length")
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, what)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let v = self.value(a).map(|x| x + offset);
        self.push(v, Op::AddScalar(a))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Propagates `d output / d node` back through the tape and adds it to
    /// the gradient buffer of every node with `requires_grad`.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let last = output.0;
        // A node needs an adjoint if it or any of its ancestors wants a gradient.
        let mut needs = vec![false; last + 1];
        for i in 0..=last {
            let node = &self.nodes[i];
            needs[i] = node.value.requires_grad || node.op.parents().iter().any(|p| needs[p.0]);
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = (0..=last).map(|_| None).collect();
        adjoint[last] = Some(vec![1.0]);

        for i in (0..=last).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            let node = &self.nodes[i];
            let deposit = |p: Var, adj: &mut Vec<Option<Vec<f64>>>, f: &mut dyn FnMut(&mut [f64])| {
                if needs[p.0] {
                    let n = self.nodes[p.0].value.len();
                    f(adj[p.0].get_or_insert_with(|| vec![0.0; n]));
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { input, kernels, bias, dims } => {
                    let (input, kernels, bias) = (*input, *kernels, *bias);
                    let mut gi = needs[input.0].then(|| adjoint[input.0].take().unwrap_or_else(|| vec![0.0; self.nodes[input.0].value.len()]));
                    let mut gk = needs[kernels.0].then(|| adjoint[kernels.0].take().unwrap_or_else(|| vec![0.0; self.nodes[kernels.0].value.len()]));
                    let mut gb = needs[bias.0].then(|| adjoint[bias.0].take().unwrap_or_else(|| vec![0.0; self.nodes[bias.0].value.len()]));
                    kernels::conv2d_backward(
                        dims,
                        self.data(input),
                        self.data(kernels),
                        &g,
                        gi.as_deref_mut(),
                        gk.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    for (v, buf) in [(input, gi), (kernels, gk), (bias, gb)] {
                        if let Some(buf) = buf {
                            adjoint[v.0] = Some(buf);
                        }
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    deposit(*input, &mut adjoint, &mut |acc| {
                        for (&src, &gv) in argmax.iter().zip(&g) {
                            acc[src] += gv;
                        }
                    });
                }
                Op::Dense { input, weights, bias } => {
                    let x = self.data(*input);
                    let w = self.data(*weights);
                    let n = x.len();
                    deposit(*input, &mut adjoint, &mut |acc| {
                        for (row, &gv) in w.chunks_exact(n).zip(&g) {
                            for (a, &wv) in acc.iter_mut().zip(row) {
                                *a += gv * wv;
                            }
                        }
                    });
                    deposit(*weights, &mut adjoint, &mut |acc| {
                        for (row, &gv) in acc.chunks_exact_mut(n).zip(&g) {
                            for (a, &xv) in row.iter_mut().zip(x) {
                                *a += gv * xv;
                            }
                        }
                    });
                    deposit(*bias, &mut adjoint, &mut |acc| {
                        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv);
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    deposit(*a, &mut adjoint, &mut |acc| {
                        for ((a, &gv), &yv) in acc.iter_mut().zip(&g).zip(y) {
                            *a += gv * (1.0 - yv * yv);
                        }
                    });
                }
                Op::Affine { input, gamma, beta } => {
                    let x = self.data(*input);
                    let gm = self.data(*gamma);
                    deposit(*input, &mut adjoint, &mut |acc| {
                        for ((a, &gv), &s) in acc.iter_mut().zip(&g).zip(gm) {
                            *a += gv * s;
                        }
                    });
                    deposit(*gamma, &mut adjoint, &mut |acc| {
                        for ((a, &gv), &xv) in acc.iter_mut().zip(&g).zip(x) {
                            *a += gv * xv;
                        }
                    });
                    deposit(*beta, &mut adjoint, &mut |acc| {
                        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv);
                    });
                }
                Op::Reshape(a) | Op::Add(a, _) | Op::AddScalar(a) => {
                    deposit(*a, &mut adjoint, &mut |acc| {
                        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv);
                    });
                    if let Op::Add(_, b) = node.op {
                        deposit(b, &mut adjoint, &mut |acc| {
                            acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv);
                        });
                    }
                }
                Op::Sub(a, b) => {
                    deposit(*a, &mut adjoint, &mut |acc| {
                        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv);
                    });
                    deposit(*b, &mut adjoint, &mut |acc| {
                        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a -= gv);
                    });
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (self.data(*a), self.data(*b));
                    deposit(*a, &mut adjoint, &mut |acc| {
                        for ((a, &gv), &o) in acc.iter_mut().zip(&g).zip(xb) {
                            *a += gv * o;
                        }
                    });
                    deposit(*b, &mut adjoint, &mut |acc| {
                        for ((a, &gv), &o) in acc.iter_mut().zip(&g).zip(xa) {
                            *a += gv * o;
                        }
                    });
                }
                Op::Square(a) => {
                    let x = self.data(*a);
                    deposit(*a, &mut adjoint, &mut |acc| {
                        for ((a, &gv), &xv) in acc.iter_mut().zip(&g).zip(x) {
                            *a += 2.0 * gv * xv;
                        }
                    });
                }
                Op::Sum(a) => {
                    let gv = g[0];
                    deposit(*a, &mut adjoint, &mut |acc| acc.iter_mut().for_each(|a| *a += gv));
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    deposit(*a, &mut adjoint, &mut |acc| {
                        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv * f);
                    });
                }
            }
            let value = &mut self.nodes[i].value;
            if value.requires_grad {
                let buf = value.grad.get_or_insert_with(|| vec![0.0; g.len()]);
                buf.iter_mut().zip(&g).for_each(|(b, gv)| *b += gv);
            }
        }
        Ok(())
    }
}

/// Largest relative discrepancy between the tape gradient of `f` at `point`
/// and central finite differences with the given `step`:
/// `max_k |analytic_k - numeric_k| / (|analytic_k| + 1e-12)`.
///
/// `f` builds a scalar on a fresh tape from the input handle it is given.
pub fn finite_diff_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.variable(point.clone());
        let y = f(&mut tape, x)?;
        tape.backward(y)?;
        tape.grad(x).expect("variable has a gradient").to_vec()
    };
    let eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(p);
        let y = f(&mut tape, x)?;
        tape.value(y).item()
    };
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[k] += step;
        let mut minus = point.clone();
        minus.data_mut()[k] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        worst = worst.max((a - numeric).abs() / (a.abs() + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_gradient_is_one() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(3.5));
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let y = tape.variable(Tensor::scalar(3.0));
        let p = tape.mul(x, y).unwrap();
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0]);
        assert_eq!(tape.grad(y).unwrap(), &[2.0]);
    }

    #[test]
    fn gradients_accumulate_until_reset() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let y = tape.square(x);
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[8.0]);
        tape.zero_grad();
        assert_eq!(tape.grad(x).unwrap(), &[0.0]);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_shape_errors_are_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.conv2d(x, k, b, Padding::default()).is_err());
        let k = tape.constant(Tensor::zeros(&[3, 2, 5, 5]));
        assert!(tape.conv2d(x, k, b, Padding::default()).is_err());
        assert!(tape.conv2d(x, k, b, Padding::symmetric(1, 1)).is_ok());
        let bad_bias = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.conv2d(x, k, bad_bias, Padding::symmetric(1, 1)).is_err());
    }

    #[test]
    fn dense_shape_errors_are_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4]));
        let w = tape.constant(Tensor::zeros(&[3, 5]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.dense(x, w, b).is_err());
    }

    #[test]
    fn retained_intermediate_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, -2.0]));
        let h = tape.scale(x, 3.0);
        tape.retain_grad(h);
        let s = tape.square(h);
        let y = tape.sum(s);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(h).unwrap(), &[6.0, -12.0]);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn finite_diff_check_examples() {
        let linear = |t: &mut Tape, x: Var| -> Result<Var> {
            let s = t.scale(x, 1.75);
            let s = t.add_scalar(s, -0.3);
            Ok(t.sum(s))
        };
        let p = Tensor::from_vec(vec![0.3, -1.2, 4.0]);
        assert!(finite_diff_check(linear, &p, 1e-3).unwrap() < 1e-10);

        let quad = |t: &mut Tape, x: Var| -> Result<Var> { Ok(t.square(x)) };
        assert!(finite_diff_check(quad, &Tensor::scalar(1.0), 1e-5).unwrap() < 1e-8);

        let sat = |t: &mut Tape, x: Var| -> Result<Var> { Ok(t.tanh(x)) };
        assert!(finite_diff_check(sat, &Tensor::scalar(50.0), 1e-6).unwrap() < 1e-4);

        assert!(finite_diff_check(quad, &Tensor::scalar(1.0), 0.0).is_err());
    }
}
