use std::collections::BTreeMap;

use crate::attribution::{aggregate_channels, attention_indicator, pptv, AttentionIndicator, ChannelMode, SaliencyMap, Scope};
use crate::data::{Dataset, RegionMask};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, TargetMonth};
use crate::par;
use crate::tensor::Tensor;

use super::train::{train, SkillReport, TrainReport, TrainSpec};

pub const SPRING_MONTHS: [u8; 4] = [3, 4, 5, 6];
pub const NON_SPRING_MONTHS: [u8; 4] = [9, 10, 11, 12];

/// Mixes a base seed with a key, so each sweep cell gets its own stream
/// regardless of which other cells run.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    let mut z = base ^ key.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainReport {
    pub full: SkillReport,
    pub masked: SkillReport,
    /// `full.overall - masked.overall`.
    pub skill_drop: f64,
}

/// Trains once on all inputs and once with every cell outside `mask` set to
/// zero, from the same initial parameters and seed.
pub fn retrain_validate(config: &ModelConfig, data: &Dataset, mask: &RegionMask, spec: &TrainSpec) -> Result<RetrainReport> {
    if mask.is_empty() {
        return Err(Error::Empty("retraining mask selects no cells".into()));
    }
    let masked_data = data.masked(mask)?;
    let mut full_model = Model::build(config.clone())?;
    let mut masked_model = full_model.clone();
    let full = train(&mut full_model, data, spec)?.skill;
    let masked = train(&mut masked_model, &masked_data, spec)?.skill;
    Ok(RetrainReport {
        skill_drop: full.overall - masked.overall,
        full,
        masked,
    })
}

/// One trained and explained model of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub config: ModelConfig,
    pub model: Model,
    pub report: TrainReport,
    /// PPTV over the cell's training samples.
    pub map: SaliencyMap,
    /// Attention of the channel-mean map.
    pub attention: AttentionIndicator,
}

fn run_cell(config: ModelConfig, data: &Dataset, spec: &TrainSpec, scope: Scope) -> Result<SweepCell> {
    let mut model = Model::build(config.clone())?;
    let report = train(&mut model, data, spec)?;
    let samples: Vec<&Tensor> = report.train_indices.iter().map(|&i| &data.samples[i].fields).collect();
    let map = pptv(&model, &samples)?;
    let mean = aggregate_channels(&map, ChannelMode::Mean)?.remove(0);
    let attention = attention_indicator(&mean.normalized, scope)?;
    Ok(SweepCell {
        config,
        model,
        report,
        map,
        attention,
    })
}

/// Trains and explains one model per lead. Model and training seeds are
/// derived from the template seeds and the lead alone.
pub fn lead_sweep(template: &ModelConfig, data: &Dataset, leads: &[u32], spec: &TrainSpec) -> Result<Vec<SweepCell>> {
    if leads.is_empty() {
        return Err(Error::Empty("no leads requested".into()));
    }
    let available = data.max_lead();
    if let Some(&l) = leads.iter().find(|&&l| l == 0 || l > available) {
        return Err(Error::Missing(format!("lead {l} targets (dataset has 1..={available})")));
    }
    par::try_map_indexed(leads.len(), |k| {
        let lead = leads[k];
        let config = ModelConfig {
            lead_months: lead,
            seed: derive_seed(template.seed, lead as u64),
            ..template.clone()
        };
        let spec = TrainSpec {
            seed: derive_seed(spec.seed, lead as u64),
            ..spec.clone()
        };
        let scope = Scope {
            lead: Some(lead),
            ..Scope::default()
        };
        run_cell(config, data, &spec, scope)
    })
}

/// Trains and explains one model per target month at the template's lead.
pub fn month_sweep(template: &ModelConfig, data: &Dataset, months: &[u8], spec: &TrainSpec) -> Result<Vec<SweepCell>> {
    if let Some(m) = months.iter().find(|m| !(1..=12).contains(*m)) {
        return Err(Error::InvalidArgument(format!("month {m} outside 1..=12")));
    }
    par::try_map_indexed(months.len(), |k| {
        let month = months[k];
        let key = 100 + month as u64;
        let config = ModelConfig {
            target_month: TargetMonth::Month(month),
            seed: derive_seed(template.seed, key),
            ..template.clone()
        };
        let spec = TrainSpec {
            seed: derive_seed(spec.seed, key),
            ..spec.clone()
        };
        let scope = Scope {
            lead: Some(template.lead_months),
            season: Some(format!("month{month}")),
            ..Scope::default()
        };
        run_cell(config, data, &spec, scope)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalPair {
    pub spring: SaliencyMap,
    pub non_spring: SaliencyMap,
}

fn group_mean(maps: &BTreeMap<u8, SaliencyMap>, months: &[u8]) -> Result<SaliencyMap> {
    let mut members = Vec::with_capacity(months.len());
    for m in months {
        members.push(maps.get(m).ok_or_else(|| Error::Missing(format!("saliency map for month {m}")))?);
    }
    let shape = members[0].raw.shape();
    if members.iter().any(|m| m.raw.shape() != shape) {
        return Err(Error::Shape("seasonal maps differ in shape".into()));
    }
    let mut sum = vec![0.0; members[0].raw.len()];
    for m in &members {
        sum.iter_mut().zip(m.raw.data()).for_each(|(s, v)| *s += v);
    }
    let n = members.len() as f64;
    let raw = Tensor::new(shape, sum.into_iter().map(|s| s / n).collect())?;
    SaliencyMap::new(raw, members[0].method, members.iter().map(|m| m.sample_count).sum())
}

/// Mean raw maps over March-June and September-December target months,
/// each re-normalized. Other months are ignored.
pub fn seasonal_group(maps: &BTreeMap<u8, SaliencyMap>) -> Result<SeasonalPair> {
    Ok(SeasonalPair {
        spring: group_mean(maps, &SPRING_MONTHS)?,
        non_spring: group_mean(maps, &NON_SPRING_MONTHS)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;

    #[test]
    fn derived_seeds_differ_by_key() {
        let a: Vec<u64> = (1..=16).map(|l| derive_seed(5, l)).collect();
        let mut b = a.clone();
        b.dedup();
        assert_eq!(a, b);
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
        assert_ne!(derive_seed(5, 3), derive_seed(6, 3));
    }

    #[test]
    fn missing_month_is_named() {
        let map = SaliencyMap::new(Tensor::full(&[2, 2], 1.0), Method::Pptv, 1).unwrap();
        let maps: BTreeMap<u8, SaliencyMap> = [3, 4, 6, 9, 10, 11, 12].iter().map(|&m| (m, map.clone())).collect();
        let err = seasonal_group(&maps).unwrap_err().to_string();
        assert!(err.contains("month 5"), "{err}");
    }
}
