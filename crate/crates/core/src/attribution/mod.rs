//! Saliency maps for scalar regressors.
//!
//! The central estimator is the practical partial total variation (PPTV):
//! for each input variable `x_k`, the expectation under the data
//! distribution of `|df/dx_k|`, estimated as the mean absolute input
//! gradient over the samples of a dataset. Perturbation (occlusion),
//! vanilla back-propagation and Grad-CAM maps are provided for comparison,
//! along with the reductions used to summarise maps.

mod baselines;
mod export;
mod pptv;
mod reduce;

pub use baselines::{gradcam_saliency, perturbation_saliency, PerturbationConfig};
pub use export::{parse_saliency_csv, saliency_csv, write_pgm, SaliencyTable};
pub use pptv::{pptv, pptv_quadrature_oracle, vbp_sample_maps, vbp_saliency};
pub use reduce::{
    aggregate_channels, attention_indicator, meridional_mean, threshold_mask, zonal_mean, AttentionIndicator,
    ChannelMode, Scope,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Pptv,
    Perturbation,
    Vbp,
    GradCam,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pptv, Method::Perturbation, Method::Vbp, Method::GradCam];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pptv => "pptv",
            Method::Perturbation => "perturbation",
            Method::Vbp => "vbp",
            Method::GradCam => "gradcam",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attribution method {s:?}")))
    }
}

/// Non-negative importance per input element, with its `[0, 1]` view.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub raw: Tensor,
    pub normalized: Tensor,
    pub method: Method,
    pub sample_count: usize,
}

impl SaliencyMap {
    pub fn new(raw: Tensor, method: Method, sample_count: usize) -> Result<Self> {
        let normalized = normalize(&raw)?;
        Ok(SaliencyMap {
            raw,
            normalized,
            method,
            sample_count,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.raw.data().iter().all(|&v| v == 0.0)
    }
}

/// Divides by the global maximum. An all-zero map stays all-zero.
pub fn normalize(raw: &Tensor) -> Result<Tensor> {
    if let Some(v) = raw.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "saliency values must be finite and non-negative, found {v}"
        )));
    }
    let max = raw.max();
    if max == 0.0 {
        return Ok(Tensor::zeros(raw.shape()));
    }
    Ok(raw.map(|v| v / max))
}

/// Variation `sum |f(x_i) - f(x_{i-1})|` of a sampled function over the
/// partition given by consecutive samples.
pub fn tv_1d(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("total variation needs at least two values".into()));
    }
    Ok(values.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_1d(&[2.0; 5]).unwrap(), 0.0);
        assert_eq!(tv_1d(&[1.0, 1.5, 4.0, 9.0]).unwrap(), 8.0);
        assert!(tv_1d(&[1.0]).is_err());
        let n = 10_000;
        let sine: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).sin())
            .collect();
        assert!((tv_1d(&sine).unwrap() - 4.0).abs() < 1e-3);
    }

    #[test]
    fn normalize_examples() {
        let raw = Tensor::from_vec(vec![1.0, 4.0, 2.0]);
        let n = normalize(&raw).unwrap();
        assert_eq!(n.data(), &[0.25, 1.0, 0.5]);
        assert_eq!(normalize(&Tensor::zeros(&[3])).unwrap(), Tensor::zeros(&[3]));
        assert!(normalize(&Tensor::from_vec(vec![1.0, -0.5])).is_err());
        let scaled = raw.map(|v| v * 7.5);
        assert_eq!(normalize(&scaled).unwrap(), n);
        assert_eq!(normalize(&n).unwrap(), n);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("lrp".parse::<Method>().is_err());
    }
}
