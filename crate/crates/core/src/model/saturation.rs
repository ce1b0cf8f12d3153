use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

use super::Model;

/// Input-gradient magnitude below which a cell counts as dead.
pub const DEAD_GRADIENT_THRESHOLD: f64 = 1e-9;

/// Default pre-activation magnitude treated as saturated (`tanh'(2.5) < 0.03`).
pub const DEFAULT_Z_SAT: f64 = 2.5;

/// How much of a network sits in the flat tails of its activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationReport {
    /// Fraction of pre-activations with `|z| > z_sat`, per activation layer
    /// (three convolution blocks, then the hidden dense layer).
    pub layer_fractions: Vec<f64>,
    /// Same fraction pooled over every pre-activation value.
    pub saturation_fraction: f64,
    pub z_sat: f64,
    /// Fraction of input cells, over all samples, whose gradient magnitude is
    /// below [`DEAD_GRADIENT_THRESHOLD`].
    pub dead_gradient_fraction: f64,
}

struct Counts {
    saturated: Vec<usize>,
    total: Vec<usize>,
    dead: usize,
    cells: usize,
}

pub fn saturation_report<S: AsRef<Tensor> + Sync>(model: &Model, samples: &[S], z_sat: f64) -> Result<SaturationReport> {
    if samples.is_empty() {
        return Err(Error::Empty("saturation report needs at least one sample".into()));
    }
    let per_sample = par::try_map_indexed(samples.len(), |i| -> Result<Counts> {
        let mut tape = Tape::new();
        let input = tape.variable(samples[i].as_ref().clone());
        let fwd = model.forward(&mut tape, input, false)?;
        tape.backward(fwd.output)?;
        let mut saturated = Vec::new();
        let mut total = Vec::new();
        for &z in &fwd.pre_activations {
            let data = tape.value(z).data();
            saturated.push(data.iter().filter(|v| v.abs() > z_sat).count());
            total.push(data.len());
        }
        let grad = tape.grad(input).expect("input gradient");
        Ok(Counts {
            saturated,
            total,
            dead: grad.iter().filter(|g| g.abs() < DEAD_GRADIENT_THRESHOLD).count(),
            cells: grad.len(),
        })
    })?;

    let layers = per_sample[0].total.len();
    let mut sat = vec![0usize; layers];
    let mut tot = vec![0usize; layers];
    let (mut dead, mut cells) = (0usize, 0usize);
    for c in &per_sample {
        for l in 0..layers {
            sat[l] += c.saturated[l];
            tot[l] += c.total[l];
        }
        dead += c.dead;
        cells += c.cells;
    }
    Ok(SaturationReport {
        layer_fractions: sat.iter().zip(&tot).map(|(&s, &t)| s as f64 / t as f64).collect(),
        saturation_fraction: sat.iter().sum::<usize>() as f64 / tot.iter().sum::<usize>() as f64,
        z_sat,
        dead_gradient_fraction: dead as f64 / cells as f64,
    })
}
