use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{parse_num, Model};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Gd,
    Momentum,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Gd => "gd",
            Optimizer::Momentum => "momentum",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Optimizer::Gd),
            "momentum" => Ok(Optimizer::Momentum),
            _ => Err(Error::config("optimizer", format!("expected gd or momentum, got {s:?}"))),
        }
    }
}

/// Mini-batch training settings. The loss is always mean squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub seed: u64,
    /// Stop after this many epochs without a better validation loss. 0 disables.
    pub patience: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Momentum,
            momentum: 0.9,
            seed: 0,
            patience: 20,
        }
    }
}

impl TrainSpec {
    pub const KEYS: [&'static str; 7] = ["epochs", "batch_size", "learning_rate", "optimizer", "momentum", "seed", "patience"];

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "optimizer" => self.optimizer = value.trim().parse()?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            _ => return Err(Error::config(key, "unknown training key")),
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let values = [
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.learning_rate.to_string(),
            self.optimizer.to_string(),
            self.momentum.to_string(),
            self.seed.to_string(),
            self.patience.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }
}

/// Pearson correlation between predictions and targets on a validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillReport {
    pub overall: f64,
    /// `(target month, r)` for months with enough non-constant samples.
    pub per_month: Vec<(u8, f64)>,
    pub lead_months: u32,
    pub n_validation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation mean squared error, starting with the untrained model.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept; 0 is the initial model.
    pub best_epoch: usize,
    pub skill: SkillReport,
    /// Dataset indices of the training and validation samples.
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Pearson correlation coefficient.
pub fn correlation_skill(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("correlation needs at least 3 pairs, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mp, mt) = (mean(predictions), mean(targets));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("correlation of a constant series is undefined".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(Error::InvalidArgument("non-finite correlation".into()));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Seeded 80/20 split of `0..n` into training and validation indices.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = (n as f64 * 0.2).round() as usize;
    if n_val < 3 || n - n_val == 0 {
        return Err(Error::Empty(format!("{n} samples are too few for an 80/20 split")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Dataset indices usable for the model's lead and target month.
fn eligible(model: &Model, data: &Dataset) -> Result<Vec<usize>> {
    let cfg = model.config();
    if data.grid.extents() != cfg.grid {
        return Err(Error::Shape(format!(
            "dataset grid {:?} does not match model grid {:?}",
            data.grid.extents(),
            cfg.grid
        )));
    }
    let lead = cfg.lead_months;
    if let Some(i) = data.samples.iter().position(|s| s.target(lead).is_none()) {
        return Err(Error::Missing(format!("lead {lead} target in sample {i}")));
    }
    Ok((0..data.len())
        .filter(|&i| cfg.target_month.includes(data.samples[i].target_month(lead)))
        .collect())
}

fn predictions(model: &Model, xs: &[&Tensor]) -> Result<Vec<f64>> {
    par::try_map_indexed(xs.len(), |i| model.predict(xs[i]))
}

fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Validation skill of `model` on the given dataset indices.
pub(crate) fn skill(model: &Model, data: &Dataset, indices: &[usize]) -> Result<SkillReport> {
    let lead = model.config().lead_months;
    let xs: Vec<&Tensor> = indices.iter().map(|&i| &data.samples[i].fields).collect();
    let ts: Vec<f64> = indices.iter().map(|&i| data.samples[i].target(lead).expect("checked")).collect();
    let ps = predictions(model, &xs)?;
    let overall = correlation_skill(&ps, &ts)?;
    let mut per_month = Vec::new();
    for month in 1..=12u8 {
        let (p, t): (Vec<f64>, Vec<f64>) = indices
            .iter()
            .zip(ps.iter().zip(&ts))
            .filter(|(&i, _)| data.samples[i].target_month(lead) == month)
            .map(|(_, (&p, &t))| (p, t))
            .unzip();
        if let Ok(r) = correlation_skill(&p, &t) {
            per_month.push((month, r));
        }
    }
    Ok(SkillReport {
        overall,
        per_month,
        lead_months: lead,
        n_validation: indices.len(),
    })
}

/// Trains `model` in place and reports the loss curves and validation skill.
///
/// Samples are those whose target month matches the model configuration.
/// They are split 80/20 by `spec.seed`; each epoch visits the training part
/// in a seeded order. Per-sample gradients of a batch are computed in
/// parallel and summed in batch order. The parameters with the lowest
/// validation loss (including the initial ones) are kept.
pub fn train(model: &mut Model, data: &Dataset, spec: &TrainSpec) -> Result<TrainReport> {
    spec.validate()?;
    let pool = eligible(model, data)?;
    let (train_pos, val_pos) = split_indices(pool.len(), spec.seed)?;
    let train_idx: Vec<usize> = train_pos.iter().map(|&k| pool[k]).collect();
    let val_idx: Vec<usize> = val_pos.iter().map(|&k| pool[k]).collect();
    let lead = model.config().lead_months;
    let target = |i: usize| data.samples[i].target(lead).expect("checked");
    let val_x: Vec<&Tensor> = val_idx.iter().map(|&i| &data.samples[i].fields).collect();
    let val_t: Vec<f64> = val_idx.iter().map(|&i| target(i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut velocity: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut best = (mse(&predictions(model, &val_x)?, &val_t), 0, model.params().to_vec());
    let mut val_loss = vec![best.0];
    let mut train_loss = Vec::with_capacity(spec.epochs);
    let mut order = train_idx.clone();

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let per_sample = par::try_map_indexed(batch.len(), |k| {
                let i = batch[k];
                model.loss_and_grads(&data.samples[i].fields, target(i))
            })?;
            let mut grads: Vec<Vec<f64>> = velocity.iter().map(|v| vec![0.0; v.len()]).collect();
            for (loss, g) in &per_sample {
                epoch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((p, g), v) in model.params_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                for ((w, &gk), vk) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                    let step = match spec.optimizer {
                        Optimizer::Gd => gk * scale,
                        Optimizer::Momentum => {
                            *vk = spec.momentum * *vk + gk * scale;
                            *vk
                        }
                    };
                    *w -= spec.learning_rate * step;
                }
            }
        }
        let epoch_loss = epoch_loss / order.len() as f64;
        if !epoch_loss.is_finite() || model.params().iter().any(|p| !p.all_finite()) {
            return Err(Error::Divergence { epoch });
        }
        train_loss.push(epoch_loss);
        let v = mse(&predictions(model, &val_x)?, &val_t);
        if !v.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        val_loss.push(v);
        if v < best.0 {
            best = (v, epoch, model.params().to_vec());
        } else if spec.patience > 0 && epoch - best.1 >= spec.patience {
            break;
        }
    }

    let (_, best_epoch, params) = best;
    model.params_mut().clone_from_slice(&params);
    let skill = skill(model, data, &val_idx)?;
    Ok(TrainReport {
        train_loss,
        val_loss,
        best_epoch,
        skill,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
