//! `PPTVDAT1` dataset files and CSV field exports.
//!
//! ```text
//! magic      8 bytes "PPTVDAT1"
//! header     n_samples, nlat, nlon, channels (u64), lat0, dlat, lon0, dlon (f64)
//! records    per sample: start_month (u8), target count (u64),
//!            targets (f64 each), channels * nlat * nlon field values (f64)
//! ```
//!
//! Everything is little-endian.

use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{put_f64, put_f64s, put_u64, Reader};
use crate::error::{Error, FormatError, Result};
use crate::model::INPUT_CHANNELS;
use crate::tensor::Tensor;

use super::{Dataset, GridSample, GridSpec, RegionMask};

const MAGIC: &[u8; 8] = b"PPTVDAT1";

pub fn write_dataset(ds: &Dataset) -> Vec<u8> {
    let g = &ds.grid;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [ds.len(), g.nlat, g.nlon, INPUT_CHANNELS] {
        put_u64(&mut out, v as u64);
    }
    for v in [g.lat0, g.dlat, g.lon0, g.dlon] {
        put_f64(&mut out, v);
    }
    for s in &ds.samples {
        out.push(s.start_month);
        put_u64(&mut out, s.targets.len() as u64);
        put_f64s(&mut out, &s.targets);
        put_f64s(&mut out, s.fields.data());
    }
    out
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let n = r.count("sample count")?;
    let nlat = r.count("nlat")?;
    let nlon = r.count("nlon")?;
    let channels = r.count("channel count")?;
    let grid = GridSpec {
        nlat,
        nlon,
        lat0: r.f64("lat0")?,
        dlat: r.f64("dlat")?,
        lon0: r.f64("lon0")?,
        dlon: r.f64("dlon")?,
    };
    let per_sample = channels
        .checked_mul(nlat)
        .and_then(|v| v.checked_mul(nlon))
        .filter(|v| v.checked_mul(8).is_some())
        .ok_or_else(|| FormatError::ExtentOverflow(format!("{channels} x {nlat} x {nlon} field values")))?;
    // each record needs at least its fixed part; reject impossible counts
    // before allocating anything
    let min_record = per_sample
        .checked_mul(8)
        .and_then(|v| v.checked_add(9))
        .ok_or_else(|| FormatError::ExtentOverflow("record size".into()))?;
    if n.checked_mul(min_record).is_none() {
        return Err(FormatError::ExtentOverflow(format!("{n} samples of {min_record} bytes")).into());
    }
    if n * min_record > r.remaining() {
        return Err(FormatError::Truncated { what: "sample records" }.into());
    }
    if channels != INPUT_CHANNELS {
        return Err(FormatError::Malformed(format!("{channels} channels, expected {INPUT_CHANNELS}")).into());
    }
    if nlat == 0 || nlon == 0 {
        return Err(FormatError::Malformed("zero grid extent".into()).into());
    }

    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let start_month = r.u8("start month")?;
        let n_targets = r.count("target count")?;
        let targets = r.f64s(n_targets, "targets")?;
        let fields = r.f64s(per_sample, "field values")?;
        samples.push(GridSample {
            fields: Tensor::new(&[channels, nlat, nlon], fields)?,
            start_month,
            targets,
        });
    }
    r.finish()?;
    Dataset::new(grid, samples).map_err(|e| FormatError::Malformed(e.to_string()).into())
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, write_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}

/// `lat,lon,value` rows for one `[nlat, nlon]` field, 17 significant digits.
pub fn field_to_csv(grid: &GridSpec, field: &Tensor) -> Result<String> {
    if field.shape() != [grid.nlat, grid.nlon] {
        return Err(Error::Shape(format!(
            "field {:?} does not match grid {}x{}",
            field.shape(),
            grid.nlat,
            grid.nlon
        )));
    }
    let mut out = String::from("lat,lon,value\n");
    for i in 0..grid.nlat {
        for j in 0..grid.nlon {
            let _ = writeln!(out, "{},{},{:.16e}", grid.lat(i), grid.lon(j), field.data()[i * grid.nlon + j]);
        }
    }
    Ok(out)
}

/// `lat,lon,driver` rows with 1 for selected cells.
pub fn mask_to_csv(grid: &GridSpec, mask: &RegionMask) -> String {
    let mut out = String::from("lat,lon,driver\n");
    for i in 0..grid.nlat {
        for j in 0..grid.nlon {
            let _ = writeln!(out, "{},{},{}", grid.lat(i), grid.lon(j), u8::from(mask.get(i, j)));
        }
    }
    out
}
