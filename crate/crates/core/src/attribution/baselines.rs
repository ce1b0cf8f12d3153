use crate::error::{Error, Result};
use crate::model::Regressor;
use crate::par;
use crate::tensor::Tensor;

use super::pptv::check_samples;
use super::{Method, SaliencyMap};

/// Occlusion settings. Patches slide over the last two axes of the input,
/// one leading-axis slice (channel) at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationConfig {
    pub patch: (usize, usize),
    pub stride: usize,
    pub fill: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            patch: (3, 3),
            stride: 1,
            fill: 0.0,
        }
    }
}

fn split_shape(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [.., h, w] => Ok((shape[..shape.len() - 2].iter().product(), *h, *w)),
        _ => Err(Error::Shape(format!("spatial input needs rank >= 2, got {shape:?}"))),
    }
}

fn positions(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    (0..=extent - patch).step_by(stride).collect()
}

/// Mean over samples of the occlusion map: each patch contributes
/// `|f(x) - f(x with the patch set to fill)|` to every cell it covers, and
/// cells covered by several patches take the average.
pub fn perturbation_saliency<R: Regressor, S: AsRef<Tensor> + Sync>(
    model: &R,
    samples: &[S],
    config: &PerturbationConfig,
) -> Result<SaliencyMap> {
    let shape = check_samples(model, samples)?;
    let (channels, h, w) = split_shape(&shape)?;
    let (ph, pw) = config.patch;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::InvalidArgument(format!(
            "patch {ph}x{pw} does not fit the {h}x{w} grid"
        )));
    }
    if config.stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if !config.fill.is_finite() {
        return Err(Error::InvalidArgument("fill must be finite".into()));
    }
    let rows = positions(h, ph, config.stride);
    let cols = positions(w, pw, config.stride);

    let mut coverage = vec![0u32; h * w];
    for &r in &rows {
        for &c in &cols {
            for i in r..r + ph {
                for j in c..c + pw {
                    coverage[i * w + j] += 1;
                }
            }
        }
    }

    let per_sample = par::try_map_indexed(samples.len(), |s| {
        let x = samples[s].as_ref();
        let base = model.predict(x)?;
        let mut acc = vec![0.0; channels * h * w];
        let mut occluded = x.clone();
        for ch in 0..channels {
            let plane = ch * h * w;
            for &r in &rows {
                for &c in &cols {
                    for i in r..r + ph {
                        for j in c..c + pw {
                            occluded.data_mut()[plane + i * w + j] = config.fill;
                        }
                    }
                    let delta = (base - model.predict(&occluded)?).abs();
                    if !delta.is_finite() {
                        return Err(Error::NonFiniteGradient { sample: s });
                    }
                    for i in r..r + ph {
                        for j in c..c + pw {
                            let k = plane + i * w + j;
                            acc[k] += delta;
                            occluded.data_mut()[k] = x.data()[k];
                        }
                    }
                }
            }
        }
        Ok(acc)
    })?;

    let mut sum = vec![0.0; channels * h * w];
    for acc in per_sample {
        sum.iter_mut().zip(&acc).for_each(|(s, v)| *s += v);
    }
    let m = samples.len() as f64;
    let raw: Vec<f64> = sum
        .iter()
        .enumerate()
        .map(|(k, s)| match coverage[k % (h * w)] {
            0 => 0.0,
            n => s / n as f64 / m,
        })
        .collect();
    SaliencyMap::new(Tensor::new(&shape, raw)?, Method::Perturbation, samples.len())
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub(crate) fn upsample_bilinear(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let axis = |n: usize, out: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = s.floor() as usize;
                (lo, (lo + 1).min(n - 1), s - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, oh);
    let xs = axis(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Grad-CAM adapted to regression: per sample, `|sum_c w_c A_c|` over the
/// final convolution features with `w_c` the spatial mean of `df/dA_c`,
/// upsampled to the input grid and averaged over samples. The map is the
/// same for every input channel.
pub fn gradcam_saliency<R: Regressor, S: AsRef<Tensor> + Sync>(model: &R, samples: &[S]) -> Result<SaliencyMap> {
    let shape = check_samples(model, samples)?;
    let (channels, h, w) = split_shape(&shape)?;
    let cams = par::try_map_indexed(samples.len(), |s| {
        let fg = model
            .conv_features(samples[s].as_ref())
            .ok_or_else(|| Error::InvalidArgument("Grad-CAM needs a model with a convolution layer".into()))??;
        let (fc, fh, fw) = match fg.features.shape() {
            &[c, a, b] => (c, a, b),
            other => return Err(Error::Shape(format!("conv features must be [c, h, w], got {other:?}"))),
        };
        let plane = fh * fw;
        let mut cam = vec![0.0; plane];
        for c in 0..fc {
            let g = &fg.grad[c * plane..(c + 1) * plane];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { sample: s });
            }
            let weight = g.iter().sum::<f64>() / plane as f64;
            let a = &fg.features.data()[c * plane..(c + 1) * plane];
            cam.iter_mut().zip(a).for_each(|(m, v)| *m += weight * v);
        }
        cam.iter_mut().for_each(|v| *v = v.abs());
        Ok(upsample_bilinear(&cam, (fh, fw), (h, w)))
    })?;
    let mut sum = vec![0.0; h * w];
    for cam in cams {
        sum.iter_mut().zip(&cam).for_each(|(s, v)| *s += v);
    }
    let m = samples.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let raw: Vec<f64> = (0..channels).flat_map(|_| mean.iter().copied()).collect();
    SaliencyMap::new(Tensor::new(&shape, raw)?, Method::GradCam, samples.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_identity_and_constant() {
        let src = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(upsample_bilinear(&src, (2, 2), (2, 2)), src.to_vec());
        assert!(upsample_bilinear(&[5.0; 6], (2, 3), (7, 11)).iter().all(|&v| v == 5.0));
        // 1-D halfway check: 2 -> 4 along columns
        let up = upsample_bilinear(&[0.0, 4.0], (1, 2), (1, 4));
        assert_eq!(up, vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn patch_must_fit() {
        let m = crate::model::LinearModel::new(Tensor::zeros(&[1, 3, 3]), 0.0);
        let xs = vec![Tensor::zeros(&[1, 3, 3])];
        let cfg = PerturbationConfig {
            patch: (4, 1),
            ..PerturbationConfig::default()
        };
        assert!(perturbation_saliency(&m, &xs, &cfg).is_err());
    }
}
