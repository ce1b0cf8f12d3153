//! The convolutional index regressor.
//!
//! Layout, for an input of 6 channels on an `nlat x nlon` grid:
//!
//! ```text
//! conv -> calib -> tanh -> pool -> conv -> calib -> tanh -> pool
//!      -> conv -> calib -> tanh -> flatten -> dense -> tanh -> dense(1)
//! ```
//!
//! Convolutions use "same" padding, pooling is 2x2 with ceil rounding. The
//! calibration layers are per-element affine maps (`gamma * z + beta`) over
//! the full `[channels, lat, lon]` pre-activation, initialised to identity.

mod checkpoint;
mod regressor;
mod saturation;

pub use checkpoint::{load_checkpoint, save_checkpoint, read_checkpoint, write_checkpoint};
pub use regressor::{FeatureGrad, LinearModel, Regressor, TapeFunction};
pub use saturation::{saturation_report, SaturationReport, DEAD_GRADIENT_THRESHOLD, DEFAULT_Z_SAT};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of input channels: SST and heat content for three consecutive months.
pub const INPUT_CHANNELS: usize = 6;
pub const MAX_LEAD_MONTHS: u32 = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMonth {
    All,
    Month(u8),
}

impl TargetMonth {
    pub fn includes(self, month: u8) -> bool {
        match self {
            TargetMonth::All => true,
            TargetMonth::Month(m) => m == month,
        }
    }
}

impl fmt::Display for TargetMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetMonth::All => f.write_str("all"),
            TargetMonth::Month(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for TargetMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(TargetMonth::All);
        }
        match s.parse::<u8>() {
            Ok(m @ 1..=12) => Ok(TargetMonth::Month(m)),
            _ => Err(Error::config("target_month", format!("expected 1..12 or \"all\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub conv_filters: [usize; 3],
    pub dense_neurons: usize,
    /// Convolution kernel extent as (lat, lon).
    pub kernel: (usize, usize),
    /// Input grid as (nlat, nlon).
    pub grid: (usize, usize),
    pub lead_months: u32,
    pub target_month: TargetMonth,
    pub calibration_enabled: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_filters: [8, 8, 8],
            dense_neurons: 16,
            kernel: (4, 8),
            grid: (24, 72),
            lead_months: 1,
            target_month: TargetMonth::All,
            calibration_enabled: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.conv_filters.iter().position(|&f| f == 0) {
            return Err(Error::config("conv_filters", format!("layer {} has zero filters", i + 1)));
        }
        if self.dense_neurons == 0 {
            return Err(Error::config("dense_neurons", "must be positive"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::config("kernel", "extents must be positive"));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::config("grid", "extents must be positive"));
        }
        if !(1..=MAX_LEAD_MONTHS).contains(&self.lead_months) {
            return Err(Error::config(
                "lead_months",
                format!("{} outside 1..={MAX_LEAD_MONTHS}", self.lead_months),
            ));
        }
        if let TargetMonth::Month(m) = self.target_month {
            if !(1..=12).contains(&m) {
                return Err(Error::config("target_month", format!("{m} outside 1..12")));
            }
        }
        Ok(())
    }

    /// Spatial extents of the three convolution outputs.
    pub fn feature_extents(&self) -> [(usize, usize); 3] {
        let (h, w) = self.grid;
        let h2 = h.div_ceil(2);
        let w2 = w.div_ceil(2);
        [(h, w), (h2, w2), (h2.div_ceil(2), w2.div_ceil(2))]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [INPUT_CHANNELS, self.grid.0, self.grid.1]
    }

    /// Closed-form parameter count for this architecture.
    pub fn parameter_count(&self) -> usize {
        let (kh, kw) = self.kernel;
        let ext = self.feature_extents();
        let mut c_in = INPUT_CHANNELS;
        let mut total = 0;
        for (&f, &(h, w)) in self.conv_filters.iter().zip(&ext) {
            total += f * c_in * kh * kw + f;
            if self.calibration_enabled {
                total += 2 * f * h * w;
            }
            c_in = f;
        }
        let flat = self.conv_filters[2] * ext[2].0 * ext[2].1;
        total + self.dense_neurons * flat + self.dense_neurons + self.dense_neurons + 1
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let f = self.conv_filters;
        vec![
            ("conv_filters".into(), format!("{},{},{}", f[0], f[1], f[2])),
            ("dense_neurons".into(), self.dense_neurons.to_string()),
            ("kernel".into(), format!("{},{}", self.kernel.0, self.kernel.1)),
            ("grid".into(), format!("{},{}", self.grid.0, self.grid.1)),
            ("lead_months".into(), self.lead_months.to_string()),
            ("target_month".into(), self.target_month.to_string()),
            ("calibration".into(), self.calibration_enabled.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Parses `key=value` pairs produced by [`to_key_values`](Self::to_key_values).
    /// Missing keys keep their defaults; unknown keys are rejected.
    pub fn from_key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (key, value) in pairs {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "conv_filters" => self.conv_filters = parse_list::<3>(key, value)?,
            "dense_neurons" => self.dense_neurons = parse_num(key, value)?,
            "kernel" => {
                let [a, b] = parse_list::<2>(key, value)?;
                self.kernel = (a, b);
            }
            "grid" => {
                let [a, b] = parse_list::<2>(key, value)?;
                self.grid = (a, b);
            }
            "lead_months" => self.lead_months = parse_num(key, value)?,
            "target_month" => self.target_month = value.parse()?,
            "calibration" => self.calibration_enabled = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(Error::config(key, "unknown model key")),
        }
        Ok(())
    }
}

pub(crate) fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

pub(crate) fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_num(key, p))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::config(key, format!("expected {N} comma-separated values, got {value:?}")))
}

/// Handles produced by one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    /// Parameter handles, in [`Model::params`] order.
    pub params: Vec<Var>,
    /// Inputs to every tanh (three conv blocks, then the hidden dense layer).
    pub pre_activations: Vec<Var>,
    /// Output of the last convolution block, after its activation.
    pub features: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Model {
    /// Builds a freshly initialised network. Weights and biases are drawn
    /// uniformly from `[-b, b]` with `b = sqrt(1 / fan_in)`; calibration
    /// layers start at `gamma = 1`, `beta = 0`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("shape")
        };

        let (kh, kw) = config.kernel;
        let ext = config.feature_extents();
        let mut c_in = INPUT_CHANNELS;
        for (i, (&f, &(h, w))) in config.conv_filters.iter().zip(&ext).enumerate() {
            let fan_in = c_in * kh * kw;
            names.push(format!("conv{}.weight", i + 1));
            params.push(uniform(&[f, c_in, kh, kw], fan_in));
            names.push(format!("conv{}.bias", i + 1));
            params.push(uniform(&[f], fan_in));
            if config.calibration_enabled {
                names.push(format!("calib{}.gamma", i + 1));
                params.push(Tensor::full(&[f, h, w], 1.0));
                names.push(format!("calib{}.beta", i + 1));
                params.push(Tensor::zeros(&[f, h, w]));
            }
            c_in = f;
        }
        let flat = config.conv_filters[2] * ext[2].0 * ext[2].1;
        let n = config.dense_neurons;
        names.push("fc.weight".into());
        params.push(uniform(&[n, flat], flat));
        names.push("fc.bias".into());
        params.push(uniform(&[n], flat));
        names.push("out.weight".into());
        params.push(uniform(&[1, n], n));
        names.push("out.bias".into());
        params.push(uniform(&[1], n));

        Ok(Model { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Turns calibration on for a model built without it, inserting identity layers.
    pub fn with_identity_calibration(&self) -> Result<Model> {
        if self.config.calibration_enabled {
            return Ok(self.clone());
        }
        let mut config = self.config.clone();
        config.calibration_enabled = true;
        let mut out = Model::build(config)?;
        for (name, t) in self.names.iter().zip(&self.params) {
            *out.param_mut(name).expect("shared parameter") = t.clone();
        }
        Ok(out)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.config.input_shape() {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.config.input_shape(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Records the network on `tape` for an input already placed there.
    pub fn forward(&self, tape: &mut Tape, input: Var, params_require_grad: bool) -> Result<Forward> {
        self.check_input(tape.value(input))?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if params_require_grad {
                    tape.variable(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let (kh, kw) = self.config.kernel;
        let pad = Padding::same(kh, kw);
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("parameter layout");
        let mut pre_activations = Vec::with_capacity(4);
        let mut h = input;
        for layer in 0..3 {
            let (k, b) = (take(), take());
            let mut z = tape.conv2d(h, k, b, pad)?;
            if self.config.calibration_enabled {
                let (gamma, beta) = (take(), take());
                z = tape.affine(z, gamma, beta)?;
            }
            pre_activations.push(z);
            h = tape.tanh(z);
            if layer < 2 {
                h = tape.maxpool2(h)?;
            }
        }
        let features = h;
        let flat = tape.flatten(h);
        let (w, b) = (take(), take());
        let z = tape.dense(flat, w, b)?;
        pre_activations.push(z);
        let hidden = tape.tanh(z);
        let (w, b) = (take(), take());
        let output = tape.dense(hidden, w, b)?;
        Ok(Forward {
            output,
            params,
            pre_activations,
            features,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<f64> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, input, false)?;
        tape.value(fwd.output).item()
    }

    /// Prediction and its gradient with respect to every input cell.
    pub fn predict_with_grad(&self, x: &Tensor) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let input = tape.variable(x.clone());
        let fwd = self.forward(&mut tape, input, false)?;
        tape.backward(fwd.output)?;
        let y = tape.value(fwd.output).item()?;
        Ok((y, tape.grad(input).expect("input gradient").to_vec()))
    }

    /// Squared error against `target` and its gradient for every parameter.
    pub fn loss_and_grads(&self, x: &Tensor, target: f64) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, input, true)?;
        let shifted = tape.add_scalar(fwd.output, -target);
        let loss = tape.square(shifted);
        tape.backward(loss)?;
        let l = tape.value(loss).item()?;
        let grads = fwd
            .params
            .iter()
            .map(|&p| tape.grad(p).expect("parameter gradient").to_vec())
            .collect();
        Ok((l, grads))
    }
}

/// Mean of the member predictions.
pub fn ensemble_predict(models: &[Model], x: &Tensor) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::Empty("ensemble has no members".into()));
    }
    let shape = models[0].config.input_shape();
    if models.iter().any(|m| m.config.input_shape() != shape) {
        return Err(Error::Shape("ensemble members disagree on input shape".into()));
    }
    let mut sum = 0.0;
    for m in models {
        sum += m.predict(x)?;
    }
    Ok(sum / models.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            conv_filters: [2, 3, 2],
            dense_neurons: 4,
            kernel: (3, 3),
            grid: (7, 10),
            seed: 11,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let mut c = small();
        c.lead_months = 24;
        let err = Model::build(c).unwrap_err().to_string();
        assert!(err.contains("lead_months"), "{err}");
        let mut c = small();
        c.conv_filters = [2, 0, 2];
        assert!(Model::build(c).unwrap_err().to_string().contains("conv_filters"));
        let mut c = small();
        c.dense_neurons = 0;
        assert!(Model::build(c).unwrap_err().to_string().contains("dense_neurons"));
        assert!("13".parse::<TargetMonth>().is_err());
        assert_eq!("7".parse::<TargetMonth>().unwrap(), TargetMonth::Month(7));
    }

    #[test]
    fn feature_extents_round_up() {
        assert_eq!(small().feature_extents(), [(7, 10), (4, 5), (2, 3)]);
    }

    #[test]
    fn parameter_count_matches_tensors() {
        for calib in [false, true] {
            let c = ModelConfig {
                calibration_enabled: calib,
                ..small()
            };
            let m = Model::build(c.clone()).unwrap();
            assert_eq!(m.parameter_count(), c.parameter_count());
        }
    }

    #[test]
    fn key_values_round_trip() {
        let mut c = small();
        c.target_month = TargetMonth::Month(4);
        c.calibration_enabled = false;
        let kv = c.to_key_values();
        let back = ModelConfig::from_key_values(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, c);
        assert!(ModelConfig::from_key_values([("depth", "3")]).is_err());
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let m = Model::build(small()).unwrap();
        assert!(matches!(m.predict(&Tensor::zeros(&[6, 7, 9])), Err(Error::Shape(_))));
        assert!(m.predict(&Tensor::zeros(&[5, 7, 10])).is_err());
    }

    #[test]
    fn empty_ensemble_rejected() {
        assert!(ensemble_predict(&[], &Tensor::zeros(&[6, 7, 10])).is_err());
    }
}
