use std::fmt;
use std::str::FromStr;

use crate::data::RegionMask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::SaliencyMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// One map: the channel mean of the raw values.
    Mean,
    /// One map per channel.
    PerChannel,
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Mean => "mean",
            ChannelMode::PerChannel => "per",
        })
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ChannelMode::Mean),
            "per" => Ok(ChannelMode::PerChannel),
            _ => Err(Error::InvalidArgument(format!("unknown channel mode {s:?} (mean|per)"))),
        }
    }
}

fn planes(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref other => Err(Error::Shape(format!("expected a [channels, lat, lon] map, got {other:?}"))),
    }
}

fn grid_2d(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        ref other => Err(Error::Shape(format!("expected a [lat, lon] map, got {other:?}"))),
    }
}

/// Reduces a channel-stacked map to `[lat, lon]` maps, each re-normalized.
pub fn aggregate_channels(map: &SaliencyMap, mode: ChannelMode) -> Result<Vec<SaliencyMap>> {
    let (c, h, w) = planes(&map.raw)?;
    let plane = h * w;
    let raw = map.raw.data();
    let reduced = match mode {
        ChannelMode::Mean => {
            let mean = (0..plane)
                .map(|k| (0..c).map(|ch| raw[ch * plane + k]).sum::<f64>() / c as f64)
                .collect();
            vec![mean]
        }
        ChannelMode::PerChannel => raw.chunks_exact(plane).map(<[f64]>::to_vec).collect(),
    };
    reduced
        .into_iter()
        .map(|v| SaliencyMap::new(Tensor::new(&[h, w], v)?, map.method, map.sample_count))
        .collect()
}

/// What an attention value was computed over. `channel` and `region`
/// restrict the cells; `lead` and `season` are labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scope {
    pub channel: Option<usize>,
    pub lead: Option<u32>,
    pub season: Option<String>,
    pub region: Option<RegionMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionIndicator {
    pub value: f64,
    pub scope: Scope,
}

/// Unweighted mean of normalized saliency over the scoped cells. Accepts
/// `[lat, lon]` or `[channels, lat, lon]` maps.
pub fn attention_indicator(normalized: &Tensor, scope: Scope) -> Result<AttentionIndicator> {
    let (c, h, w) = match *normalized.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        ref other => return Err(Error::Shape(format!("cannot take attention over shape {other:?}"))),
    };
    if let Some(v) = normalized.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("normalized value {v} outside [0, 1]")));
    }
    let channels: Vec<usize> = match scope.channel {
        Some(ch) if normalized.rank() == 3 && ch < c => vec![ch],
        Some(ch) => return Err(Error::InvalidArgument(format!("channel {ch} not in map of shape {:?}", normalized.shape()))),
        None => (0..c).collect(),
    };
    if let Some(r) = &scope.region {
        if r.shape() != (h, w) {
            return Err(Error::Shape(format!("region {:?} does not match map {h}x{w}", r.shape())));
        }
    }
    let plane = h * w;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ch in channels {
        for k in 0..plane {
            if scope.region.as_ref().is_none_or(|r| r.cells()[k]) {
                sum += normalized.data()[ch * plane + k];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Empty("attention scope selects no cells".into()));
    }
    Ok(AttentionIndicator {
        value: sum / n as f64,
        scope,
    })
}

/// Mean over longitudes for each latitude row.
pub fn zonal_mean(map: &Tensor) -> Result<Vec<f64>> {
    let (_, w) = grid_2d(map)?;
    Ok(map.data().chunks_exact(w).map(|row| row.iter().sum::<f64>() / w as f64).collect())
}

/// Mean over latitudes for each longitude column.
pub fn meridional_mean(map: &Tensor) -> Result<Vec<f64>> {
    let (h, w) = grid_2d(map)?;
    let d = map.data();
    Ok((0..w).map(|j| (0..h).map(|i| d[i * w + j]).sum::<f64>() / h as f64).collect())
}

/// Cells whose normalized value is at least `tau`.
pub fn threshold_mask(normalized: &Tensor, tau: f64) -> Result<RegionMask> {
    let (h, w) = grid_2d(normalized)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside (0, 1]")));
    }
    RegionMask::new(h, w, normalized.data().iter().map(|&v| v >= tau).collect())
}
