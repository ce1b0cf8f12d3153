//! Gradient-based attribution for gridded regression networks.
//!
//! The crate bundles a small reverse-mode autodiff engine, a convolutional
//! index regressor with optional pre-activation calibration, a synthetic
//! planted-signal data generator, the practical partial total variation
//! (PPTV) saliency estimator with three baseline methods, and the
//! retraining experiments used to check that the regions it flags really
//! carry the predictive signal.

pub mod attribution;
pub mod autodiff;
mod binio;
pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
pub mod par;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use tensor::Tensor;
