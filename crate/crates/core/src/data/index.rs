use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{wrap_lon, GridSpec, NamedBox};

/// The Nino3.4 box: 5S-5N, 170W-120W (190E-240E).
pub const NINO34_BOX: ((f64, f64), (f64, f64)) = ((-5.0, 5.0), (190.0, 240.0));

fn lon_covered(grid: &GridSpec, lon: f64) -> bool {
    (0..grid.nlon).any(|j| {
        let d = (wrap_lon(lon - grid.lon(j) + 180.0) - 180.0).abs();
        d <= grid.dlon / 2.0 + 1e-9
    })
}

/// Cosine-latitude weighted mean of an `[nlat, nlon]` anomaly field over
/// the cells whose centres fall inside the Nino3.4 box.
pub fn nino34(field: &Tensor, grid: &GridSpec) -> Result<f64> {
    if field.shape() != [grid.nlat, grid.nlon] {
        return Err(Error::Shape(format!(
            "field {:?} does not match grid {}x{}",
            field.shape(),
            grid.nlat,
            grid.nlon
        )));
    }
    let ((lat_lo, lat_hi), (lon_lo, lon_hi)) = NINO34_BOX;
    let south = grid.lat(0) - grid.dlat / 2.0;
    let north = grid.lat(grid.nlat - 1) + grid.dlat / 2.0;
    let step = (grid.dlon / 2.0).min(1.0);
    let mut lon = lon_lo;
    let mut lon_ok = true;
    while lon <= lon_hi {
        lon_ok &= lon_covered(grid, lon);
        lon += step;
    }
    lon_ok &= lon_covered(grid, lon_hi);
    if south > lat_lo + 1e-9 || north < lat_hi - 1e-9 || !lon_ok {
        return Err(Error::InvalidArgument("grid does not cover the Nino3.4 box (5S-5N, 170W-120W)".into()));
    }

    let region = NamedBox::new("nino34", (lat_lo, lat_hi), (lon_lo, lon_hi));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..grid.nlat {
        let lat = grid.lat(i);
        let w = lat.to_radians().cos();
        for j in 0..grid.nlon {
            if region.contains(lat, grid.lon(j)) {
                num += w * field.data()[i * grid.nlon + j];
                den += w;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("no grid cell centre falls inside the Nino3.4 box".into()));
    }
    Ok(num / den)
}

/// Mean of `series[center - 1..=center + 1]`.
pub fn three_month_average(series: &[f64], center: usize) -> Result<f64> {
    if center == 0 || center + 1 >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "month {center} of a {}-month series lacks a neighbour",
            series.len()
        )));
    }
    Ok((series[center - 1] + series[center] + series[center + 1]) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_field_gives_its_value() {
        let g = GridSpec::default();
        let f = Tensor::full(&[g.nlat, g.nlon], 1.0);
        assert!((nino34(&f, &g).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn field_outside_box_is_ignored() {
        let g = GridSpec::default();
        let mut f = Tensor::zeros(&[g.nlat, g.nlon]);
        for i in 0..g.nlat {
            for j in 0..g.nlon {
                let inside = NamedBox::new("", (-5.0, 5.0), (190.0, 240.0)).contains(g.lat(i), g.lon(j));
                if !inside {
                    f.data_mut()[i * g.nlon + j] = (i * 7 + j) as f64;
                }
            }
        }
        assert_eq!(nino34(&f, &g).unwrap(), 0.0);
    }

    #[test]
    fn uncovered_grid_rejected() {
        let g = GridSpec {
            nlat: 4,
            nlon: 10,
            lat0: 20.0,
            dlat: 5.0,
            lon0: 0.0,
            dlon: 5.0,
        };
        assert!(nino34(&Tensor::zeros(&[4, 10]), &g).is_err());
        let g = GridSpec {
            nlat: 4,
            nlon: 8,
            lat0: -7.5,
            dlat: 5.0,
            lon0: 195.0,
            dlon: 5.0,
        };
        assert!(nino34(&Tensor::zeros(&[4, 8]), &g).is_err());
    }

    #[test]
    fn three_month_examples() {
        assert_eq!(three_month_average(&[1.0, 2.0, 3.0], 1).unwrap(), 2.0);
        assert!((three_month_average(&[0.7; 5], 3).unwrap() - 0.7).abs() < 1e-15);
        assert!(three_month_average(&[1.0, 2.0, 3.0], 0).is_err());
        assert!(three_month_average(&[1.0, 2.0, 3.0], 2).is_err());
    }
}
