//! Lookup-table denoisers fitted by exact minimization of a weighted loss,
//! cell by cell, on a one-dimensional dataset.
//!
//! In a cell `X x T` the weighted loss `E[w_t (c - x1)^2; x_t in X, t in T]`
//! is minimized by the weighted mean of `x1` over the cell. Pairs are drawn
//! with `x_t` uniform on `X`, `t` uniform on `T` and `x1` cycling through the
//! dataset; each draw carries the density ratio
//! `phi((x_t - t x1) / (1 - t)) / (1 - t)` times `w_t`. The MMSE denoiser,
//! averaged with the same weights over the same draws, is the reference the
//! fitted value is compared with.

use rand::Rng;

use crate::closedform::gaussian_mmse_denoiser;
use crate::data::Dataset;
use crate::error::{FmError, Result};
use crate::rng::substream;
use crate::training::weighting::WeightingScheme;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularGrid {
    pub x_centers: Vec<f64>,
    pub x_halfwidth: f64,
    pub t_centers: Vec<f64>,
    pub t_halfwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularCell {
    pub x: f64,
    pub t: f64,
    /// Weighted mean of `x1`: the exact minimizer on this cell.
    pub fitted: f64,
    /// The MMSE denoiser averaged with the same weights.
    pub reference: f64,
    /// Monte-Carlo standard error of `fitted - reference`.
    pub std_error: f64,
}

/// Cells with positive total weight, row-major over `(t, x)`.
pub fn fit_tabular_denoiser(
    ds: &Dataset,
    ws: &WeightingScheme,
    grid: &TabularGrid,
    draws_per_cell: usize,
    seed: u64,
) -> Result<Vec<TabularCell>> {
    if ds.dim() != 1 {
        return Err(FmError::InvalidArgument("tabular fits are one-dimensional".into()));
    }
    if ds.is_empty() || draws_per_cell == 0 {
        return Err(FmError::Empty("tabular fit"));
    }
    let n = ds.len();
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut cells = Vec::new();
    for (ti, &tc) in grid.t_centers.iter().enumerate() {
        let t_lo = (tc - grid.t_halfwidth).max(0.0);
        let t_hi = (tc + grid.t_halfwidth).min(1.0 - 1e-9);
        if t_lo > t_hi {
            continue;
        }
        for (xi, &xc) in grid.x_centers.iter().enumerate() {
            let mut rng = substream(seed, (ti * grid.x_centers.len() + xi) as u64);
            let (mut sw, mut sx, mut sm, mut sq) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..draws_per_cell {
                let t = if t_lo < t_hi { rng.random_range(t_lo..t_hi) } else { t_lo };
                let w = ws.weight(t);
                let x = xc + grid.x_halfwidth * rng.random_range(-1.0..1.0);
                if w == 0.0 {
                    continue;
                }
                let x1 = ds.row(k % n)[0];
                let s = 1.0 - t;
                let z = (x - t * x1) / s;
                let omega = w * inv_sqrt_2pi * (-0.5 * z * z).exp() / s;
                if omega == 0.0 {
                    continue;
                }
                let m = gaussian_mmse_denoiser(ds, &[x], t)?[0];
                sw += omega;
                sx += omega * x1;
                sm += omega * m;
                sq += omega * omega * (x1 - m) * (x1 - m);
            }
            if sw > 0.0 {
                cells.push(TabularCell {
                    x: xc,
                    t: tc,
                    fitted: sx / sw,
                    reference: sm / sw,
                    std_error: sq.sqrt() / sw,
                });
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_cells_are_skipped() {
        let ds = Dataset::from_rows("two", vec![vec![-1.0], vec![1.0]], None).unwrap();
        let grid = TabularGrid {
            x_centers: vec![0.0, 0.5],
            x_halfwidth: 0.01,
            t_centers: vec![0.02, 0.5],
            t_halfwidth: 0.01,
        };
        let ws = WeightingScheme::classic(19.0).unwrap();
        let cells = fit_tabular_denoiser(&ds, &ws, &grid, 1000, 0).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.t == 0.5));
    }

    #[test]
    fn one_point_dataset_is_exact() {
        let ds = Dataset::from_rows("one", vec![vec![0.3]], None).unwrap();
        let grid = TabularGrid {
            x_centers: vec![-1.0, 0.0, 1.0],
            x_halfwidth: 0.1,
            t_centers: vec![0.2, 0.7],
            t_halfwidth: 0.05,
        };
        for c in fit_tabular_denoiser(&ds, &WeightingScheme::fm(), &grid, 500, 1).unwrap() {
            assert!((c.fitted - 0.3).abs() < 1e-15);
            assert!((c.reference - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_multidimensional_data() {
        let ds = Dataset::from_rows("2d", vec![vec![0.0, 1.0]], None).unwrap();
        let grid = TabularGrid { x_centers: vec![0.0], x_halfwidth: 0.1, t_centers: vec![0.5], t_halfwidth: 0.1 };
        assert!(fit_tabular_denoiser(&ds, &WeightingScheme::den(), &grid, 10, 0).is_err());
    }
}
