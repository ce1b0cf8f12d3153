//! Gridded samples, region masks, the synthetic generator and file formats.

mod index;
mod io;
mod synth;

pub use index::{nino34, three_month_average, NINO34_BOX};
pub use io::{
    load_dataset, mask_to_csv, read_dataset, save_dataset, write_dataset, field_to_csv,
};
pub use synth::{synth_generate, SynthConfig, Synthesizer, SyntheticTruth};

use crate::error::{Error, Result};
use crate::model::INPUT_CHANNELS;
use crate::tensor::Tensor;

/// Short names of the six input channels, in storage order.
pub const CHANNEL_NAMES: [&str; INPUT_CHANNELS] = ["sst_m3", "sst_m2", "sst_m1", "hc_m3", "hc_m2", "hc_m1"];

/// A regular latitude/longitude grid described by its first cell centre
/// and spacing, in degrees. Longitudes run eastward from `lon0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nlat: usize,
    pub nlon: usize,
    pub lat0: f64,
    pub dlat: f64,
    pub lon0: f64,
    pub dlon: f64,
}

impl Default for GridSpec {
    /// 5 degree global band, 60S to 60N.
    fn default() -> Self {
        GridSpec {
            nlat: 24,
            nlon: 72,
            lat0: -57.5,
            dlat: 5.0,
            lon0: 2.5,
            dlon: 5.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nlat == 0 {
            return Err(Error::config("nlat", "must be positive"));
        }
        if self.nlon == 0 {
            return Err(Error::config("nlon", "must be positive"));
        }
        if !(self.dlat > 0.0 && self.dlat.is_finite()) {
            return Err(Error::config("dlat", "must be positive"));
        }
        if !(self.dlon > 0.0 && self.dlon.is_finite()) {
            return Err(Error::config("dlon", "must be positive"));
        }
        if !self.lat0.is_finite() || self.lat0 - self.dlat / 2.0 < -90.0 - 1e-9 || self.lat(self.nlat - 1) + self.dlat / 2.0 > 90.0 + 1e-9 {
            return Err(Error::config("lat0", "grid extends beyond the poles"));
        }
        if !self.lon0.is_finite() || self.dlon * self.nlon as f64 > 360.0 + 1e-9 {
            return Err(Error::config("dlon", "grid wraps more than 360 degrees"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat0 + i as f64 * self.dlat
    }

    pub fn lon(&self, j: usize) -> f64 {
        self.lon0 + j as f64 * self.dlon
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.nlat, self.nlon)
    }
}

/// Wraps a longitude into `[0, 360)`.
pub fn wrap_lon(lon: f64) -> f64 {
    lon.rem_euclid(360.0)
}

/// A labelled latitude/longitude box. Longitude bounds are eastward
/// degrees; `lon.0 > lon.1` denotes a box crossing the prime meridian.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedBox {
    pub lat: (f64, f64),
    pub lon: (f64, f64),
    pub label: String,
}

impl NamedBox {
    pub fn new(label: &str, lat: (f64, f64), lon: (f64, f64)) -> Self {
        NamedBox {
            lat,
            lon,
            label: label.to_owned(),
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let (lo, hi) = (wrap_lon(self.lon.0), wrap_lon(self.lon.1));
        let l = wrap_lon(lon);
        let in_lon = if lo <= hi { l >= lo && l <= hi } else { l >= lo || l <= hi };
        lat >= self.lat.0 && lat <= self.lat.1 && in_lon
    }
}

/// Boolean selection over the `nlat x nlon` cells of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    nlat: usize,
    nlon: usize,
    cells: Vec<bool>,
    pub boxes: Vec<NamedBox>,
}

impl RegionMask {
    pub fn new(nlat: usize, nlon: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != nlat * nlon {
            return Err(Error::Shape(format!(
                "mask of {} cells for a {nlat}x{nlon} grid",
                cells.len()
            )));
        }
        Ok(RegionMask {
            nlat,
            nlon,
            cells,
            boxes: Vec::new(),
        })
    }

    pub fn all(nlat: usize, nlon: usize) -> Self {
        RegionMask::new(nlat, nlon, vec![true; nlat * nlon]).expect("sized")
    }

    pub fn none(nlat: usize, nlon: usize) -> Self {
        RegionMask::new(nlat, nlon, vec![false; nlat * nlon]).expect("sized")
    }

    /// Cells whose centre lies inside `b`.
    pub fn from_box(grid: &GridSpec, b: NamedBox) -> Self {
        let cells = (0..grid.nlat)
            .flat_map(|i| (0..grid.nlon).map(move |j| (i, j)))
            .map(|(i, j)| b.contains(grid.lat(i), grid.lon(j)))
            .collect();
        let mut mask = RegionMask::new(grid.nlat, grid.nlon, cells).expect("sized");
        mask.boxes.push(b);
        mask
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nlat, self.nlon)
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.nlon + j]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> RegionMask {
        RegionMask::new(self.nlat, self.nlon, self.cells.iter().map(|c| !c).collect()).expect("sized")
    }

    /// True if every cell selected here is also selected in `other`.
    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }
}

/// One training example: six anomaly fields and the target index per lead.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    /// `[6, nlat, nlon]`, channels ordered as [`CHANNEL_NAMES`].
    pub fields: Tensor,
    /// Calendar month (1..=12) of the first input month.
    pub start_month: u8,
    /// `targets[l - 1]` is the 3-month-mean index for lead `l`.
    pub targets: Vec<f64>,
}

impl AsRef<Tensor> for GridSample {
    fn as_ref(&self) -> &Tensor {
        &self.fields
    }
}

impl GridSample {
    /// Calendar month the lead-`lead` target is centred on.
    pub fn target_month(&self, lead: u32) -> u8 {
        month_offset(self.start_month, 2 + lead as i64)
    }

    pub fn target(&self, lead: u32) -> Option<f64> {
        lead.checked_sub(1).and_then(|i| self.targets.get(i as usize)).copied()
    }
}

/// Calendar month `offset` months after `month` (both 1-based).
pub fn month_offset(month: u8, offset: i64) -> u8 {
    ((month as i64 - 1 + offset).rem_euclid(12) + 1) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub samples: Vec<GridSample>,
}

impl Dataset {
    pub fn new(grid: GridSpec, samples: Vec<GridSample>) -> Result<Self> {
        let shape = [INPUT_CHANNELS, grid.nlat, grid.nlon];
        for (i, s) in samples.iter().enumerate() {
            if s.fields.shape() != shape {
                return Err(Error::Shape(format!(
                    "sample {i} has fields {:?}, grid needs {shape:?}",
                    s.fields.shape()
                )));
            }
            if !(1..=12).contains(&s.start_month) {
                return Err(Error::InvalidArgument(format!("sample {i} has start month {}", s.start_month)));
            }
        }
        Ok(Dataset { grid, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest lead available in every sample.
    pub fn max_lead(&self) -> u32 {
        self.samples.iter().map(|s| s.targets.len()).min().unwrap_or(0) as u32
    }

    pub fn inputs(&self) -> Vec<&Tensor> {
        self.samples.iter().map(|s| &s.fields).collect()
    }

    /// Copy with every input cell outside `mask` set to zero in all channels.
    pub fn masked(&self, mask: &RegionMask) -> Result<Dataset> {
        if mask.shape() != self.grid.extents() {
            return Err(Error::Shape(format!(
                "mask {:?} does not match grid {:?}",
                mask.shape(),
                self.grid.extents()
            )));
        }
        let cells = self.grid.cells();
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for chunk in s.fields.data_mut().chunks_exact_mut(cells) {
                    for (v, &keep) in chunk.iter_mut().zip(mask.cells()) {
                        if !keep {
                            *v = 0.0;
                        }
                    }
                }
                s
            })
            .collect();
        Ok(Dataset {
            grid: self.grid,
            samples,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            grid: self.grid,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_crossing_dateline() {
        let b = NamedBox::new("x", (-10.0, 10.0), (350.0, 20.0));
        assert!(b.contains(0.0, 355.0));
        assert!(b.contains(0.0, 5.0));
        assert!(b.contains(0.0, -5.0));
        assert!(!b.contains(0.0, 180.0));
        assert!(!b.contains(15.0, 5.0));
    }

    #[test]
    fn month_arithmetic_wraps() {
        assert_eq!(month_offset(11, 3), 2);
        assert_eq!(month_offset(1, -1), 12);
        let s = GridSample {
            fields: Tensor::zeros(&[6, 1, 1]),
            start_month: 10,
            targets: vec![0.1, 0.2],
        };
        assert_eq!(s.target_month(1), 1);
        assert_eq!(s.target(2), Some(0.2));
        assert_eq!(s.target(3), None);
        assert_eq!(s.target(0), None);
    }

    #[test]
    fn masking_zeroes_outside_cells_in_every_channel() {
        let grid = GridSpec {
            nlat: 2,
            nlon: 2,
            ..GridSpec::default()
        };
        let s = GridSample {
            fields: Tensor::full(&[6, 2, 2], 3.0),
            start_month: 1,
            targets: vec![1.0],
        };
        let ds = Dataset::new(grid, vec![s]).unwrap();
        let mask = RegionMask::new(2, 2, vec![true, false, false, true]).unwrap();
        let m = ds.masked(&mask).unwrap();
        for c in 0..6 {
            assert_eq!(m.samples[0].fields.at(&[c, 0, 0]), 3.0);
            assert_eq!(m.samples[0].fields.at(&[c, 0, 1]), 0.0);
        }
        assert_eq!(ds.masked(&RegionMask::all(2, 2)).unwrap(), ds);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::default().validate().is_ok());
        let g = GridSpec { nlat: 0, ..GridSpec::default() };
        assert!(g.validate().unwrap_err().to_string().contains("nlat"));
        let g = GridSpec { nlat: 40, ..GridSpec::default() };
        assert!(g.validate().is_err());
    }
}
