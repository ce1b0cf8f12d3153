use std::fmt::Write as _;

use crate::data::GridSpec;
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

use super::{Method, SaliencyMap};

/// Labelled `[lat, lon]` planes of raw and normalized saliency, the content
/// of a saliency CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyTable {
    pub nlat: usize,
    pub nlon: usize,
    pub labels: Vec<String>,
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
}

impl SaliencyTable {
    /// One plane per channel of a `[channels, lat, lon]` map, or a single
    /// plane for a `[lat, lon]` map. `labels` must name every plane.
    pub fn from_map(map: &SaliencyMap, labels: &[&str]) -> Result<Self> {
        let (c, h, w) = match *map.raw.shape() {
            [h, w] => (1, h, w),
            [c, h, w] => (c, h, w),
            ref other => return Err(Error::Shape(format!("cannot tabulate map of shape {other:?}"))),
        };
        if labels.len() != c {
            return Err(Error::InvalidArgument(format!("{} labels for {c} planes", labels.len())));
        }
        let plane = h * w;
        Ok(SaliencyTable {
            nlat: h,
            nlon: w,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            raw: map.raw.data().chunks_exact(plane).map(<[f64]>::to_vec).collect(),
            normalized: map.normalized.data().chunks_exact(plane).map(<[f64]>::to_vec).collect(),
        })
    }

    /// Channel-mean of the raw planes as a `[lat, lon]` map, re-normalized.
    pub fn mean_map(&self, method: Method) -> Result<SaliencyMap> {
        let plane = self.nlat * self.nlon;
        let n = self.raw.len() as f64;
        let raw = (0..plane).map(|k| self.raw.iter().map(|p| p[k]).sum::<f64>() / n).collect();
        SaliencyMap::new(Tensor::new(&[self.nlat, self.nlon], raw)?, method, 1)
    }

    /// Stacks several single-plane tables.
    pub fn concat(parts: Vec<SaliencyTable>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut out = it.next().ok_or_else(|| Error::Empty("no saliency planes".into()))?;
        for p in it {
            if (p.nlat, p.nlon) != (out.nlat, out.nlon) {
                return Err(Error::Shape("saliency planes differ in grid size".into()));
            }
            out.labels.extend(p.labels);
            out.raw.extend(p.raw);
            out.normalized.extend(p.normalized);
        }
        Ok(out)
    }
}

/// `channel,lat,lon,raw,normalized` rows, values to 17 significant digits.
pub fn saliency_csv(grid: &GridSpec, table: &SaliencyTable) -> Result<String> {
    if (table.nlat, table.nlon) != grid.extents() {
        return Err(Error::Shape(format!(
            "saliency {}x{} does not match grid {:?}",
            table.nlat,
            table.nlon,
            grid.extents()
        )));
    }
    let mut out = String::from("channel,lat,lon,raw,normalized\n");
    for (p, label) in table.labels.iter().enumerate() {
        for i in 0..grid.nlat {
            for j in 0..grid.nlon {
                let k = i * grid.nlon + j;
                let _ = writeln!(
                    out,
                    "{label},{},{},{:.16e},{:.16e}",
                    grid.lat(i),
                    grid.lon(j),
                    table.raw[p][k],
                    table.normalized[p][k]
                );
            }
        }
    }
    Ok(out)
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn regular_axis(values: &[f64], what: &str) -> Result<(f64, f64)> {
    let step = if values.len() > 1 { values[1] - values[0] } else { 1.0 };
    let regular = values
        .iter()
        .enumerate()
        .all(|(i, v)| (values[0] + i as f64 * step - v).abs() <= 1e-9 * step.abs().max(1.0));
    if !regular {
        return Err(FormatError::Malformed(format!("{what} values are not evenly spaced")).into());
    }
    Ok((values[0], step))
}

/// Reads a file written by [`saliency_csv`], returning the regular grid its
/// coordinates describe. Planes keep their order of first appearance.
pub fn parse_saliency_csv(text: &str) -> Result<(GridSpec, SaliencyTable)> {
    let bad = |line: usize, what: &str| FormatError::Malformed(format!("line {line}: {what}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("channel,lat,lon,raw,normalized") {
        return Err(bad(1, "missing header").into());
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n + 2, "expected 5 fields").into());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(n + 2, "bad number"));
        rows.push((f[0].to_string(), num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?));
    }
    let lats = sorted_unique(rows.iter().map(|r| r.1).collect());
    let lons = sorted_unique(rows.iter().map(|r| r.2).collect());
    let mut labels: Vec<String> = Vec::new();
    for r in &rows {
        if !labels.contains(&r.0) {
            labels.push(r.0.clone());
        }
    }
    let (nlat, nlon) = (lats.len(), lons.len());
    if nlat == 0 || rows.len() != labels.len() * nlat * nlon {
        return Err(FormatError::Malformed("rows do not form complete lat/lon planes".into()).into());
    }
    let mut raw = vec![vec![f64::NAN; nlat * nlon]; labels.len()];
    let mut normalized = raw.clone();
    for (label, lat, lon, r, v) in rows {
        let p = labels.iter().position(|l| *l == label).expect("collected");
        let i = lats.binary_search_by(|x| x.total_cmp(&lat)).expect("collected");
        let j = lons.binary_search_by(|x| x.total_cmp(&lon)).expect("collected");
        raw[p][i * nlon + j] = r;
        normalized[p][i * nlon + j] = v;
    }
    if raw.iter().flatten().any(|v| v.is_nan()) {
        return Err(FormatError::Malformed("duplicate cells in saliency file".into()).into());
    }
    let (lat0, dlat) = regular_axis(&lats, "latitude")?;
    let (lon0, dlon) = regular_axis(&lons, "longitude")?;
    let grid = GridSpec {
        nlat,
        nlon,
        lat0,
        dlat,
        lon0,
        dlon,
    };
    let table = SaliencyTable {
        nlat,
        nlon,
        labels,
        raw,
        normalized,
    };
    Ok((grid, table))
}

/// Binary 8-bit graymap of a `[lat, lon]` normalized map. The first image
/// row is the northernmost latitude.
pub fn write_pgm(normalized: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *normalized.shape() {
        [h, w] => (h, w),
        ref other => return Err(Error::Shape(format!("graymap needs a [lat, lon] map, got {other:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for i in (0..h).rev() {
        for &v in &normalized.data()[i * w..(i + 1) * w] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("normalized value {v} outside [0, 1]")));
            }
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_orientation() {
        let m = Tensor::new(&[2, 3], vec![0.0, 0.5, 1.0, 1.0, 0.2, 0.0]).unwrap();
        let b = write_pgm(&m).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[255, 51, 0, 0, 128, 255]);
    }
}
