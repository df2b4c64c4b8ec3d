//! Synthetic datasets.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageShape};
use crate::error::{FmError, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GenSpec {
    /// `k` points uniform on `[-scale, scale]^dim`.
    KPoint { k: usize, dim: usize, scale: f64 },
    /// A named fixed dataset.
    Preset { name: String },
    /// `components` isotropic Gaussians centred on a circle of `radius` in 2D.
    GaussianMixture { n: usize, components: usize, radius: f64, std: f64 },
    /// Uniform density on the dark squares of a `cells x cells` board
    /// covering `[-extent, extent]^2`.
    Checkerboard2d { n: usize, cells: usize, extent: f64 },
    /// 8x8 single-channel images holding one Gaussian blob in `[0, 1]`.
    Blobs8x8 { n: usize },
}

/// Three points in one dimension: `{-4, 0, 4}`.
pub const FIG5A_3PT: &str = "fig5a-3pt";

pub fn preset(name: &str) -> Result<Dataset> {
    match name {
        FIG5A_3PT => Dataset::from_rows(FIG5A_3PT, vec![vec![-4.0], vec![0.0], vec![4.0]], None),
        _ => Err(FmError::InvalidArgument(format!("unknown preset {name:?}"))),
    }
}

pub fn generate(spec: &GenSpec, seed: u64) -> Result<Dataset> {
    let mut rng = seeded(seed);
    let positive = |v: usize, what: &str| {
        if v == 0 {
            Err(FmError::InvalidArgument(format!("{what} must be positive")))
        } else {
            Ok(())
        }
    };
    match spec {
        GenSpec::Preset { name } => preset(name),
        GenSpec::KPoint { k, dim, scale } => {
            positive(*k, "k")?;
            positive(*dim, "dim")?;
            let rows = (0..*k)
                .map(|_| (0..*dim).map(|_| rng.random_range(-scale..=*scale)).collect())
                .collect();
            Dataset::from_rows("k-point", rows, None)
        }
        GenSpec::GaussianMixture { n, components, radius, std } => {
            positive(*n, "n")?;
            positive(*components, "components")?;
            let rows = (0..*n)
                .map(|_| {
                    let c = rng.random_range(0..*components);
                    let angle = 2.0 * PI * c as f64 / *components as f64;
                    let gx: f64 = rng.sample(StandardNormal);
                    let gy: f64 = rng.sample(StandardNormal);
                    vec![radius * angle.cos() + std * gx, radius * angle.sin() + std * gy]
                })
                .collect();
            Dataset::from_rows("gaussian-mixture", rows, None)
        }
        GenSpec::Checkerboard2d { n, cells, extent } => {
            positive(*n, "n")?;
            positive(*cells, "cells")?;
            let size = 2.0 * extent / *cells as f64;
            let rows = (0..*n)
                .map(|_| loop {
                    let i = rng.random_range(0..*cells);
                    let j = rng.random_range(0..*cells);
                    if (i + j) % 2 == 0 {
                        let x = -extent + size * (i as f64 + rng.random::<f64>());
                        let y = -extent + size * (j as f64 + rng.random::<f64>());
                        break vec![x, y];
                    }
                })
                .collect();
            Dataset::from_rows("checkerboard-2d", rows, None)
        }
        GenSpec::Blobs8x8 { n } => {
            positive(*n, "n")?;
            let shape = ImageShape::new(1, 8, 8);
            let rows = (0..*n)
                .map(|_| {
                    let cy = rng.random_range(1.5..6.5);
                    let cx = rng.random_range(1.5..6.5);
                    let r: f64 = rng.random_range(1.0..2.0);
                    let amp: f64 = rng.random_range(0.6..1.0);
                    let mut img = Vec::with_capacity(64);
                    for h in 0..8 {
                        for w in 0..8 {
                            let d2 = (h as f64 - cy).powi(2) + (w as f64 - cx).powi(2);
                            img.push(amp * (-d2 / (2.0 * r * r)).exp());
                        }
                    }
                    img
                })
                .collect();
            Dataset::from_rows("blobs-8x8", rows, Some(shape))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_fig5a() {
        let ds = generate(&GenSpec::Preset { name: FIG5A_3PT.into() }, 0).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 1));
        assert!(preset("nope").is_err());
    }

    #[test]
    fn k_point_with_one_row() {
        let ds = generate(&GenSpec::KPoint { k: 1, dim: 4, scale: 1.0 }, 3).unwrap();
        assert_eq!((ds.len(), ds.dim()), (1, 4));
        assert!(ds.row(0).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn generators_are_deterministic() {
        for spec in [
            GenSpec::GaussianMixture { n: 1000, components: 8, radius: 4.0, std: 0.3 },
            GenSpec::Checkerboard2d { n: 300, cells: 4, extent: 2.0 },
            GenSpec::Blobs8x8 { n: 20 },
        ] {
            let a = generate(&spec, 11).unwrap();
            let b = generate(&spec, 11).unwrap();
            let c = generate(&spec, 12).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn checkerboard_samples_sit_on_dark_squares() {
        let ds = generate(&GenSpec::Checkerboard2d { n: 500, cells: 4, extent: 2.0 }, 1).unwrap();
        for p in ds.rows() {
            let i = ((p[0] + 2.0) / 1.0).floor() as i64;
            let j = ((p[1] + 2.0) / 1.0).floor() as i64;
            assert_eq!((i + j) % 2, 0);
        }
    }

    #[test]
    fn blobs_have_image_shape_and_range() {
        let ds = generate(&GenSpec::Blobs8x8 { n: 10 }, 2).unwrap();
        assert_eq!(ds.shape(), Some(ImageShape::new(1, 8, 8)));
        let (lo, hi) = ds.value_range();
        assert!(lo >= 0.0 && hi <= 1.0);
    }
}
