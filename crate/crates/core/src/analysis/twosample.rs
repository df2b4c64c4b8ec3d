//! Kernel two-sample statistics standing in for feature-based distances
//! between generated and reference sets.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::sq_dist;
use crate::error::{check_dim, FmError, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TwoSampleKind {
    EnergyDistance,
    /// Gaussian-kernel MMD^2; the median heuristic picks the bandwidth when
    /// none is given.
    GaussianMmd { bandwidth: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub statistic: f64,
    pub kind: TwoSampleKind,
    /// Bandwidth actually used by the MMD.
    pub bandwidth: Option<f64>,
    pub n_a: usize,
    pub n_b: usize,
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(FmError::Empty("two-sample set"));
    }
    let d = a[0].len();
    for x in a.iter().chain(b) {
        check_dim(d, x.len())?;
    }
    Ok(d)
}

fn mean_pair<F: Fn(f64) -> f64>(a: &[Vec<f64>], b: &[Vec<f64>], f: F) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += f(sq_dist(x, y));
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Median of the nonzero pairwise distances in the pooled sample.
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let d = sq_dist(pooled[i], pooled[j]).sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

/// V-statistic forms of the energy distance
/// `2 E|a - b| - E|a - a'| - E|b - b'|` and of MMD^2; both are nonnegative
/// and vanish when the two multisets coincide.
pub fn two_sample_statistic(a: &[Vec<f64>], b: &[Vec<f64>], kind: TwoSampleKind) -> Result<TwoSampleReport> {
    check_sets(a, b)?;
    let (statistic, bandwidth) = match kind {
        TwoSampleKind::EnergyDistance => {
            let f = |d2: f64| d2.sqrt();
            let s = 2.0 * mean_pair(a, b, f) - mean_pair(a, a, f) - mean_pair(b, b, f);
            (s, None)
        }
        TwoSampleKind::GaussianMmd { bandwidth } => {
            let h = bandwidth.unwrap_or_else(|| median_bandwidth(a, b));
            if !(h > 0.0) {
                return Err(FmError::InvalidArgument(format!("bandwidth must be positive, got {h}")));
            }
            let f = |d2: f64| (-d2 / (2.0 * h * h)).exp();
            let s = mean_pair(a, a, f) + mean_pair(b, b, f) - 2.0 * mean_pair(a, b, f);
            (s, Some(h))
        }
    };
    Ok(TwoSampleReport {
        statistic,
        kind,
        bandwidth,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Permutation p-value `(1 + #{perm >= observed}) / (1 + n_perm)`. The MMD
/// bandwidth is fixed from the unpermuted data.
pub fn permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    kind: TwoSampleKind,
    n_perm: usize,
    seed: u64,
) -> Result<(TwoSampleReport, f64)> {
    let observed = two_sample_statistic(a, b, kind)?;
    let kind = match kind {
        TwoSampleKind::GaussianMmd { .. } => TwoSampleKind::GaussianMmd {
            bandwidth: observed.bandwidth,
        },
        k => k,
    };
    let mut pooled: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    let mut rng = seeded(seed);
    let mut hits = 0;
    for _ in 0..n_perm {
        pooled.shuffle(&mut rng);
        let (pa, pb) = pooled.split_at(a.len());
        if two_sample_statistic(pa, pb, kind)?.statistic >= observed.statistic {
            hits += 1;
        }
    }
    let p = (1 + hits) as f64 / (1 + n_perm) as f64;
    Ok((observed, p))
}
