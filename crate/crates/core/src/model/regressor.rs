use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Model;

/// Final convolution features of one sample and `d output / d features`.
#[derive(Debug, Clone)]
pub struct FeatureGrad {
    /// `[channels, h, w]` activations of the last convolution block.
    pub features: Tensor,
    pub grad: Vec<f64>,
}

/// A differentiable scalar function of a fixed-shape tensor.
///
/// Attribution methods are written against this trait so that closed-form
/// test functions and the convolutional model go through the same code.
pub trait Regressor: Sync {
    fn input_shape(&self) -> Vec<usize>;

    fn predict(&self, x: &Tensor) -> Result<f64>;

    /// Prediction together with its gradient for every input element.
    fn predict_with_grad(&self, x: &Tensor) -> Result<(f64, Vec<f64>)>;

    /// Convolution features for class-activation style methods. `None` for
    /// functions without convolution layers.
    fn conv_features(&self, _x: &Tensor) -> Option<Result<FeatureGrad>> {
        None
    }
}

impl Regressor for Model {
    fn input_shape(&self) -> Vec<usize> {
        self.config().input_shape().to_vec()
    }

    fn predict(&self, x: &Tensor) -> Result<f64> {
        Model::predict(self, x)
    }

    fn predict_with_grad(&self, x: &Tensor) -> Result<(f64, Vec<f64>)> {
        Model::predict_with_grad(self, x)
    }

    fn conv_features(&self, x: &Tensor) -> Option<Result<FeatureGrad>> {
        let run = || {
            let mut tape = Tape::new();
            let input = tape.constant(x.clone());
            let fwd = self.forward(&mut tape, input, false)?;
            tape.retain_grad(fwd.features);
            tape.backward(fwd.output)?;
            let mut features = tape.value(fwd.features).clone();
            let grad = features.grad.take().expect("retained gradient");
            features.requires_grad = false;
            Ok(FeatureGrad { features, grad })
        };
        Some(run())
    }
}

/// `f(x) = weights · x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Tensor,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(weights: Tensor, bias: f64) -> Self {
        LinearModel { weights, bias }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.weights.shape() {
            return Err(Error::Shape(format!(
                "linear model expects {:?}, got {:?}",
                self.weights.shape(),
                x.shape()
            )));
        }
        Ok(())
    }
}

impl Regressor for LinearModel {
    fn input_shape(&self) -> Vec<usize> {
        self.weights.shape().to_vec()
    }

    fn predict(&self, x: &Tensor) -> Result<f64> {
        self.check(x)?;
        Ok(self.bias + self.weights.data().iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>())
    }

    fn predict_with_grad(&self, x: &Tensor) -> Result<(f64, Vec<f64>)> {
        Ok((self.predict(x)?, self.weights.data().to_vec()))
    }
}

/// Wraps a closure that records a scalar function on a tape.
pub struct TapeFunction<F> {
    shape: Vec<usize>,
    f: F,
}

impl<F> TapeFunction<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    pub fn new(shape: &[usize], f: F) -> Self {
        TapeFunction {
            shape: shape.to_vec(),
            f,
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.shape.as_slice() {
            return Err(Error::Shape(format!("function expects {:?}, got {:?}", self.shape, x.shape())));
        }
        Ok(())
    }
}

impl<F> Regressor for TapeFunction<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    fn input_shape(&self) -> Vec<usize> {
        self.shape.clone()
    }

    fn predict(&self, x: &Tensor) -> Result<f64> {
        self.check(x)?;
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = (self.f)(&mut tape, v)?;
        tape.value(y).item()
    }

    fn predict_with_grad(&self, x: &Tensor) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let mut tape = Tape::new();
        let v = tape.variable(x.clone());
        let y = (self.f)(&mut tape, v)?;
        tape.backward(y)?;
        Ok((tape.value(y).item()?, tape.grad(v).expect("input gradient").to_vec()))
    }
}
