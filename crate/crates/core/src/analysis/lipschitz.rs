use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::spectral::jacobian_spectral_norm;
use crate::error::{FmError, Result};
use crate::field::VelocityField;
use crate::rng::{substream, SourceKind};
use crate::sampling::{states_at, IntegratorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProfile {
    pub t_grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation over trajectories.
    pub std: Vec<f64>,
    pub n_traj: usize,
}

impl LipschitzProfile {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "mean", "std"])?;
        for k in 0..self.t_grid.len() {
            out.write_record([
                self.t_grid[k].to_string(),
                self.mean[k].to_string(),
                self.std[k].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `n` equispaced times on `[0, 1 - eps_end]`.
pub fn uniform_grid(n: usize, eps_end: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|k| (1.0 - eps_end) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Spectral norm of `grad_x v` along `n_traj` trajectories started from
/// `source` (trajectory `i` uses substream `i` of `seed`), evaluated at each
/// time of `t_grid`.
pub fn lipschitz_profile<V: VelocityField + ?Sized>(
    v: &V,
    source: SourceKind,
    n_traj: usize,
    t_grid: &[f64],
    spec: &IntegratorSpec,
    power_iters: usize,
    seed: u64,
) -> Result<LipschitzProfile> {
    if n_traj == 0 {
        return Err(FmError::Empty("trajectory count"));
    }
    let d = v.dim();
    let per_traj: Vec<Vec<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let x0 = source.draw(&mut rng, d);
            let states = states_at(v, &x0, t_grid, spec)?;
            states
                .iter()
                .zip(t_grid)
                .enumerate()
                .map(|(k, (x, &t))| {
                    let s = seed ^ ((i as u64) << 20 | k as u64);
                    jacobian_spectral_norm(v, x, t, power_iters, s)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = n_traj as f64;
    let mut mean = vec![0.0; t_grid.len()];
    let mut std = vec![0.0; t_grid.len()];
    for k in 0..t_grid.len() {
        let m = per_traj.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = per_traj.iter().map(|r| (r[k] - m) * (r[k] - m)).sum::<f64>() / n;
        mean[k] = m;
        std[k] = var.sqrt();
    }
    Ok(LipschitzProfile {
        t_grid: t_grid.to_vec(),
        mean,
        std,
        n_traj,
    })
}

/// Indices of strict interior local maxima of `values`.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&k| values[k] > values[k - 1] && values[k] > values[k + 1])
        .collect()
}
