//! Planted-signal synthetic anomaly fields.
//!
//! The anomaly fields are a sum of fixed smooth spatial patterns whose
//! amplitudes follow independent AR(1) monthly processes. Patterns are
//! either *driver* patterns, supported only inside the driver box, or
//! *remote* patterns, supported only outside it. The target index is a
//! linear-plus-quadratic function of the driver amplitudes alone, so the
//! driver box is the only place an input carries information about it.
//!
//! Heat-content channels show smoothed driver patterns `hc_shift` months
//! ahead of the SST channels, which is what makes short leads fully
//! predictable from the inputs. With `coupling > 0` the remote amplitudes
//! feed the driver amplitudes with a one-month delay, so remote regions
//! gain predictive value as the lead grows.
//!
//! All arithmetic in the generation path uses `libm`, so a seed produces
//! the same bytes on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::INPUT_CHANNELS;
use crate::tensor::Tensor;

use super::{three_month_average, Dataset, GridSample, GridSpec, NamedBox, RegionMask};

const BURN_IN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub grid: GridSpec,
    pub n_samples: usize,
    /// Targets are produced for leads `1..=max_lead`.
    pub max_lead: u32,
    /// White-noise standard deviation added to every field cell, relative
    /// to the unit amplitude of the patterns.
    pub noise_level: f64,
    pub driver_box: NamedBox,
    /// Months by which the index trails the driver amplitudes.
    pub driver_lag: u32,
    /// Months by which heat content leads SST.
    pub hc_shift: u32,
    pub ar_coeff: f64,
    pub driver_patterns: usize,
    pub remote_patterns: usize,
    /// Strength of the one-month remote-to-driver feed.
    pub coupling: f64,
    pub quad_coeff: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid: GridSpec::default(),
            n_samples: 1000,
            max_lead: 16,
            noise_level: 0.1,
            driver_box: NamedBox::new("tropical_pacific", (-10.0, 10.0), (160.0, 270.0)),
            driver_lag: 0,
            hc_shift: 2,
            ar_coeff: 0.8,
            driver_patterns: 3,
            remote_patterns: 8,
            coupling: 0.0,
            quad_coeff: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be at least 1"));
        }
        if self.max_lead == 0 {
            return Err(Error::config("max_lead", "must be at least 1"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::config("noise_level", "must be a non-negative number"));
        }
        if !(self.ar_coeff > -1.0 && self.ar_coeff < 1.0) {
            return Err(Error::config("ar_coeff", "must lie in (-1, 1)"));
        }
        if self.driver_patterns == 0 {
            return Err(Error::config("driver_patterns", "must be at least 1"));
        }
        if !self.coupling.is_finite() || !self.quad_coeff.is_finite() {
            return Err(Error::config("coupling", "must be finite"));
        }
        Ok(())
    }
}

/// Ground truth planted by the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub driver_mask: RegionMask,
    pub driver_lag: u32,
    pub noise_level: f64,
}

struct Gauss {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gauss {
    fn new(rng: ChaCha8Rng) -> Self {
        Gauss { rng, spare: None }
    }

    /// Standard normal draw by the Box-Muller transform.
    fn next(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }
}

/// The fixed spatial structure behind one synthetic dataset.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    config: SynthConfig,
    driver_mask: RegionMask,
    /// Flat `nlat * nlon` SST patterns, drivers first.
    sst_patterns: Vec<Vec<f64>>,
    hc_patterns: Vec<Vec<f64>>,
    /// Index loading of each driver pattern (unit Euclidean norm).
    index_weights: Vec<f64>,
    seed: u64,
}

impl Synthesizer {
    pub fn new(config: SynthConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = config.grid;
        let driver_mask = RegionMask::from_box(&grid, config.driver_box.clone());
        if driver_mask.is_empty() {
            return Err(Error::config("driver_box", "driver mask lies outside the grid"));
        }
        let remote_mask = driver_mask.complement();
        if config.remote_patterns > 0 && remote_mask.is_empty() {
            return Err(Error::config("remote_patterns", "driver box covers the whole grid"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let global = (grid.nlon as f64 * grid.dlon - 360.0).abs() < 1e-9;
        let mut bump = |support: &RegionMask, lat_sigma: (f64, f64), lon_sigma: (f64, f64)| {
            let candidates: Vec<usize> = (0..grid.cells()).filter(|&c| support.cells()[c]).collect();
            let centre = candidates[rng.random_range(0..candidates.len())];
            let (ci, cj) = ((centre / grid.nlon) as f64, (centre % grid.nlon) as f64);
            let si = rng.random_range(lat_sigma.0..lat_sigma.1);
            let sj = rng.random_range(lon_sigma.0..lon_sigma.1);
            let mut p = vec![0.0; grid.cells()];
            for (c, v) in p.iter_mut().enumerate() {
                if !support.cells()[c] {
                    continue;
                }
                let di = (c / grid.nlon) as f64 - ci;
                let mut dj = ((c % grid.nlon) as f64 - cj).abs();
                if global {
                    dj = dj.min(grid.nlon as f64 - dj);
                }
                *v = libm::exp(-(di * di) / (2.0 * si * si) - (dj * dj) / (2.0 * sj * sj));
            }
            p
        };
        let mut sst_patterns = Vec::new();
        for _ in 0..config.driver_patterns {
            sst_patterns.push(bump(&driver_mask, (0.8, 2.0), (1.5, 4.0)));
        }
        for _ in 0..config.remote_patterns {
            sst_patterns.push(bump(&remote_mask, (1.0, 3.0), (2.0, 6.0)));
        }
        let hc_patterns = sst_patterns
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let support = if k < config.driver_patterns { &driver_mask } else { &remote_mask };
                smooth(&grid, p, support)
            })
            .collect();

        let driver_cells = driver_mask.count() as f64;
        let means: Vec<f64> = sst_patterns[..config.driver_patterns]
            .iter()
            .map(|p| p.iter().sum::<f64>() / driver_cells)
            .collect();
        let norm = libm::sqrt(means.iter().map(|m| m * m).sum::<f64>());
        let index_weights = means.iter().map(|m| m / norm).collect();

        Ok(Synthesizer {
            config,
            driver_mask,
            sst_patterns,
            hc_patterns,
            index_weights,
            seed,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn truth(&self) -> SyntheticTruth {
        SyntheticTruth {
            driver_mask: self.driver_mask.clone(),
            driver_lag: self.config.driver_lag,
            noise_level: self.config.noise_level,
        }
    }

    pub fn sst_patterns(&self) -> &[Vec<f64>] {
        &self.sst_patterns
    }

    /// Heat-content patterns of the driver amplitudes, one flat grid each.
    pub fn driver_hc_patterns(&self) -> &[Vec<f64>] {
        &self.hc_patterns[..self.config.driver_patterns]
    }

    /// The index as a function of the driver amplitudes of one month.
    pub fn index_value(&self, driver_amplitudes: &[f64]) -> f64 {
        let u: f64 = self.index_weights.iter().zip(driver_amplitudes).map(|(w, c)| w * c).sum();
        u + self.config.quad_coeff * u * u
    }

    pub fn generate(&self) -> Result<Dataset> {
        let cfg = &self.config;
        let grid = cfg.grid;
        let cells = grid.cells();
        let n_drivers = cfg.driver_patterns;
        let n_patterns = self.sst_patterns.len();
        let last_input = BURN_IN + 2;
        let horizon = (last_input + cfg.hc_shift as usize).max(last_input + cfg.max_lead as usize + 1) + 1;
        let innovation = libm::sqrt(1.0 - cfg.ar_coeff * cfg.ar_coeff);
        let remote_scale = if n_patterns > n_drivers {
            cfg.coupling / libm::sqrt((n_patterns - n_drivers) as f64)
        } else {
            0.0
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let mut gauss = Gauss::new(rng);
        let mut samples = Vec::with_capacity(cfg.n_samples);
        for _ in 0..cfg.n_samples {
            let start_month = gauss.rng.random_range(1..=12u8);
            // amp[t][k]
            let mut amp = vec![vec![0.0; n_patterns]; horizon];
            for a in amp[0].iter_mut() {
                *a = gauss.next();
            }
            for t in 1..horizon {
                let remote: f64 = amp[t - 1][n_drivers..].iter().sum::<f64>() * remote_scale;
                for k in 0..n_patterns {
                    let mut v = cfg.ar_coeff * amp[t - 1][k] + innovation * gauss.next();
                    if k < n_drivers {
                        v += remote;
                    }
                    amp[t][k] = v;
                }
            }

            let mut fields = Vec::with_capacity(INPUT_CHANNELS * cells);
            for (patterns, shift) in [(&self.sst_patterns, 0), (&self.hc_patterns, cfg.hc_shift as usize)] {
                for m in 0..3 {
                    let t = BURN_IN + m + shift;
                    let mut field = vec![0.0; cells];
                    for (p, &a) in patterns.iter().zip(&amp[t]) {
                        for (f, &v) in field.iter_mut().zip(p) {
                            *f += a * v;
                        }
                    }
                    if cfg.noise_level > 0.0 {
                        for f in field.iter_mut() {
                            *f += cfg.noise_level * gauss.next();
                        }
                    }
                    fields.extend_from_slice(&field);
                }
            }

            let lag = cfg.driver_lag as usize;
            let index: Vec<f64> = (0..horizon)
                .map(|t| if t >= lag { self.index_value(&amp[t - lag][..n_drivers]) } else { 0.0 })
                .collect();
            let targets = (1..=cfg.max_lead as usize)
                .map(|lead| three_month_average(&index, last_input + lead))
                .collect::<Result<Vec<_>>>()?;

            samples.push(GridSample {
                fields: Tensor::new(&[INPUT_CHANNELS, grid.nlat, grid.nlon], fields)?,
                start_month,
                targets,
            });
        }
        Dataset::new(grid, samples)
    }
}

/// 3x3 box mean restricted to `support`, rescaled to a unit maximum.
fn smooth(grid: &GridSpec, p: &[f64], support: &RegionMask) -> Vec<f64> {
    let (h, w) = (grid.nlat as isize, grid.nlon as isize);
    let mut out = vec![0.0; p.len()];
    for i in 0..h {
        for j in 0..w {
            let c = (i * w + j) as usize;
            if !support.cells()[c] {
                continue;
            }
            let (mut s, mut n) = (0.0, 0.0);
            for di in -1..=1 {
                for dj in -1..=1 {
                    let (ii, jj) = (i + di, j + dj);
                    if ii >= 0 && ii < h && jj >= 0 && jj < w {
                        s += p[(ii * w + jj) as usize];
                        n += 1.0;
                    }
                }
            }
            out[c] = s / n;
        }
    }
    let max = out.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    out
}

/// Builds the generator for `config`, draws the dataset, and returns it
/// with the planted truth.
pub fn synth_generate(seed: u64, config: &SynthConfig) -> Result<(Dataset, SyntheticTruth)> {
    let s = Synthesizer::new(config.clone(), seed)?;
    Ok((s.generate()?, s.truth()))
}
