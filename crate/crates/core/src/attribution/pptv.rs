use crate::error::{Error, Result};
use crate::model::Regressor;
use crate::par;
use crate::tensor::Tensor;

use super::{Method, SaliencyMap};

/// Samples per parallel batch. Each batch is reduced in sample order.
const CHUNK: usize = 64;

pub(crate) fn check_samples<S: AsRef<Tensor>>(model: &impl Regressor, samples: &[S]) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Err(Error::Empty("attribution needs at least one sample".into()));
    }
    let shape = model.input_shape();
    for (i, s) in samples.iter().enumerate() {
        if s.as_ref().shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "sample {i} has shape {:?}, model expects {shape:?}",
                s.as_ref().shape()
            )));
        }
    }
    Ok(shape)
}

fn abs_gradient(model: &impl Regressor, x: &Tensor, sample: usize) -> Result<Vec<f64>> {
    let (_, g) = model.predict_with_grad(x)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { sample });
    }
    Ok(g.into_iter().map(f64::abs).collect())
}

/// Mean absolute input gradient over `samples`.
///
/// Gradients are evaluated in parallel and summed in sample order, so the
/// result does not depend on the number of workers.
pub fn pptv<R: Regressor, S: AsRef<Tensor> + Sync>(model: &R, samples: &[S]) -> Result<SaliencyMap> {
    let shape = check_samples(model, samples)?;
    let mut sum = vec![0.0; shape.iter().product::<usize>()];
    for (c, chunk) in samples.chunks(CHUNK).enumerate() {
        let grads = par::try_map_indexed(chunk.len(), |k| abs_gradient(model, chunk[k].as_ref(), c * CHUNK + k))?;
        for g in grads {
            sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
        }
    }
    let m = samples.len() as f64;
    let raw = Tensor::new(&shape, sum.into_iter().map(|s| s / m).collect())?;
    SaliencyMap::new(raw, Method::Pptv, samples.len())
}

/// Dataset-level vanilla back-propagation map: the same mean of absolute
/// gradients as [`pptv`], tagged as VBP.
pub fn vbp_saliency<R: Regressor, S: AsRef<Tensor> + Sync>(model: &R, samples: &[S]) -> Result<SaliencyMap> {
    let map = pptv(model, samples)?;
    SaliencyMap::new(map.raw, Method::Vbp, map.sample_count)
}

/// One absolute-gradient map per sample.
pub fn vbp_sample_maps<R: Regressor, S: AsRef<Tensor> + Sync>(model: &R, samples: &[S]) -> Result<Vec<SaliencyMap>> {
    let shape = check_samples(model, samples)?;
    par::try_map_indexed(samples.len(), |i| {
        let g = abs_gradient(model, samples[i].as_ref(), i)?;
        SaliencyMap::new(Tensor::new(&shape, g)?, Method::Vbp, 1)
    })
}

/// Tensor-product midpoint quadrature of `∫ p(x) |∂f/∂x_k| dx` over a box,
/// for each variable `k`. Partial derivatives use central differences.
///
/// Intended as a reference for low-dimensional test functions.
pub fn pptv_quadrature_oracle(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    density: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<Vec<f64>> {
    let dim = bounds.len();
    if dim == 0 || dim > 3 {
        return Err(Error::InvalidArgument(format!(
            "quadrature supports 1 to 3 variables, got {dim}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid interval [{lo}, {hi}]")));
    }
    let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / resolution as f64).collect();
    let cell: f64 = widths.iter().product();
    let points = resolution.pow(dim as u32);

    // Each worker handles one slab along the first axis.
    let slabs = par::map_indexed(resolution, |i0| {
        let mut acc = vec![0.0; dim + 1];
        let mut x = vec![0.0; dim];
        for rest in 0..points / resolution {
            let mut r = rest;
            x[0] = bounds[0].0 + (i0 as f64 + 0.5) * widths[0];
            for d in 1..dim {
                x[d] = bounds[d].0 + ((r % resolution) as f64 + 0.5) * widths[d];
                r /= resolution;
            }
            let p = density(&x);
            acc[dim] += p;
            if p == 0.0 {
                continue;
            }
            for k in 0..dim {
                let h = 1e-5 * x[k].abs().max(1.0);
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                acc[k] += p * ((f(&xp) - f(&xm)) / (2.0 * h)).abs();
            }
        }
        acc
    });
    let mut total = vec![0.0; dim + 1];
    for s in slabs {
        total.iter_mut().zip(&s).for_each(|(t, v)| *t += v);
    }
    let mass = total[dim] * cell;
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::InvalidArgument(format!(
            "density integrates to {mass} on the grid, expected 1"
        )));
    }
    Ok(total[..dim].iter().map(|v| v * cell).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;

    #[test]
    fn empty_dataset_rejected() {
        let m = LinearModel::new(Tensor::from_vec(vec![1.0, 2.0]), 0.0);
        let none: Vec<Tensor> = Vec::new();
        assert!(matches!(pptv(&m, &none), Err(Error::Empty(_))));
        assert!(matches!(
            pptv(&m, &[Tensor::from_vec(vec![1.0])]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn nan_gradient_names_sample() {
        let m = LinearModel::new(Tensor::from_vec(vec![1.0, f64::NAN]), 0.0);
        let xs = vec![Tensor::from_vec(vec![1.0, 1.0]); 3];
        let err = pptv(&m, &xs).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { sample: 0 }));
    }

    #[test]
    fn oracle_rejects_high_dimension() {
        let f = |x: &[f64]| x[0];
        let p = |_: &[f64]| 1.0;
        assert!(pptv_quadrature_oracle(&f, &p, &[(0.0, 1.0); 4], 2).is_err());
        assert!(pptv_quadrature_oracle(&f, &|_: &[f64]| 2.0, &[(0.0, 1.0)], 10).is_err());
    }
}
