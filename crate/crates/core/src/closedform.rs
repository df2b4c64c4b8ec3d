//! Analytic oracles for an empirical target measure `(1/n) sum_i delta_{x_i}`.
//!
//! With Gaussian `p0` the flow-matching minimizer is
//! `v*(x, t) = sum_i lambda_i(x, t) (x_i - x) / (1 - t)` where
//! `lambda = softmax_j(-|x - t x_j|^2 / (2 (1 - t)^2))`, and the induced
//! denoiser is the posterior mean `sum_i lambda_i x_i`.
//!
//! With uniform `p0` on `[-1, 1]^d` the minimizer is supported on cones:
//! `x` belongs to cone `i` at time `t` when `(x - t x_i) / (1 - t)` lies in
//! the box, and the velocity points at the mean of the active points.

use crate::data::{sq_dist, Dataset};
use crate::error::{check_dim, FmError, Result};
use crate::field::{central_difference_with_step, fd_step, Denoiser, VelocityField};
use crate::rng::SourceKind;

fn require_before_one(t: f64) -> Result<()> {
    if t >= 1.0 {
        return Err(FmError::SingularTime {
            t,
            what: "closed-form velocity is undefined at t = 1",
        });
    }
    if !(0.0..1.0).contains(&t) {
        return Err(FmError::InvalidTime(t));
    }
    Ok(())
}

/// Posterior weights `lambda_i(x, t)`, computed with log-sum-exp so they stay
/// finite for every `t < 1`. At `t = 1` the weights are one-hot on the
/// nearest stored point.
pub fn softmax_weights(ds: &Dataset, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(ds.dim(), x.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(FmError::InvalidTime(t));
    }
    let n = ds.len();
    if t == 1.0 {
        let mut w = vec![0.0; n];
        w[ds.nearest(x).0] = 1.0;
        return Ok(w);
    }
    let denom = 2.0 * (1.0 - t) * (1.0 - t);
    let logits: Vec<f64> = ds
        .rows()
        .map(|xi| {
            let d2: f64 = x
                .iter()
                .zip(xi)
                .map(|(a, b)| {
                    let r = a - t * b;
                    r * r
                })
                .sum();
            -d2 / denom
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

fn weighted_mean(ds: &Dataset, weights: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; ds.dim()];
    for (xi, &w) in ds.rows().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (acc, v) in m.iter_mut().zip(xi) {
            *acc += w * v;
        }
    }
    m
}

/// Posterior mean `E[x1 | x_t = x]` under the empirical measure.
pub fn gaussian_mmse_denoiser(ds: &Dataset, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let w = softmax_weights(ds, x, t)?;
    Ok(weighted_mean(ds, &w))
}

/// The empirical-measure optimal velocity for Gaussian `p0`.
pub fn gaussian_closed_form_velocity(ds: &Dataset, x: &[f64], t: f64) -> Result<Vec<f64>> {
    require_before_one(t)?;
    let m = gaussian_mmse_denoiser(ds, x, t)?;
    let s = 1.0 - t;
    Ok(m.iter().zip(x).map(|(a, b)| (a - b) / s).collect())
}

/// `t / (1 - t)^2 * Cov_lambda(x_i) u`, the x-Jacobian of the posterior mean
/// applied to `u` (the covariance is symmetric, so this is also the VJP).
fn mmse_jacobian_apply(ds: &Dataset, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
    check_dim(ds.dim(), u.len())?;
    if t == 1.0 {
        return Ok(vec![0.0; ds.dim()]);
    }
    let w = softmax_weights(ds, x, t)?;
    let m = weighted_mean(ds, &w);
    let scale = t / ((1.0 - t) * (1.0 - t));
    let mut out = vec![0.0; ds.dim()];
    for (xi, &wi) in ds.rows().zip(&w) {
        if wi == 0.0 {
            continue;
        }
        let proj: f64 = xi.iter().zip(&m).zip(u).map(|((a, b), c)| (a - b) * c).sum();
        for ((o, a), b) in out.iter_mut().zip(xi).zip(&m) {
            *o += wi * proj * (a - b);
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Whether `x` lies in the closed cone of point `i` at time `t`.
pub fn cone_membership(ds: &Dataset, i: usize, x: &[f64], t: f64) -> Result<bool> {
    check_dim(ds.dim(), x.len())?;
    require_before_one(t)?;
    if i >= ds.len() {
        return Err(FmError::InvalidArgument(format!(
            "cone index {i} out of range for {} points",
            ds.len()
        )));
    }
    Ok(in_cone(ds.row(i), x, t))
}

fn in_cone(xi: &[f64], x: &[f64], t: f64) -> bool {
    let s = 1.0 - t;
    x.iter()
        .zip(xi)
        .all(|(a, b)| ((a - t * b) / s).abs() <= 1.0)
}

/// Indices of the cones containing `x` at time `t`.
pub fn active_cones(ds: &Dataset, x: &[f64], t: f64) -> Result<Vec<usize>> {
    check_dim(ds.dim(), x.len())?;
    require_before_one(t)?;
    Ok(ds
        .rows()
        .enumerate()
        .filter(|(_, xi)| in_cone(xi, x, t))
        .map(|(i, _)| i)
        .collect())
}

/// The empirical-measure optimal velocity for uniform `p0` on `[-1, 1]^d`.
pub fn uniform_cone_velocity(ds: &Dataset, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let active = active_cones(ds, x, t)?;
    if active.is_empty() {
        return Err(FmError::OutsideSupport { t });
    }
    let mut m = vec![0.0; ds.dim()];
    for &i in &active {
        for (acc, v) in m.iter_mut().zip(ds.row(i)) {
            *acc += v;
        }
    }
    let k = active.len() as f64;
    let s = 1.0 - t;
    Ok(m.iter().zip(x).map(|(a, b)| (a / k - b) / s).collect())
}

/// [`uniform_cone_velocity`] extended outside the support: when no cone
/// contains `x`, the cones nearest in the scaled sup-norm
/// `|(x - t x_i) / (1 - t)|_inf` are treated as active. Discretized
/// trajectories can step into the gaps that open between cones when they
/// split; this continues them with the limit from the closest cone.
pub fn uniform_cone_velocity_extended(ds: &Dataset, x: &[f64], t: f64) -> Result<Vec<f64>> {
    match uniform_cone_velocity(ds, x, t) {
        Err(FmError::OutsideSupport { .. }) => {}
        other => return other,
    }
    let s = 1.0 - t;
    let scaled: Vec<f64> = ds
        .rows()
        .map(|xi| {
            x.iter()
                .zip(xi)
                .map(|(a, b)| ((a - t * b) / s).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let best = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let mut m = vec![0.0; ds.dim()];
    let mut k = 0.0;
    for (i, &v) in scaled.iter().enumerate() {
        if v == best {
            for (acc, b) in m.iter_mut().zip(ds.row(i)) {
                *acc += b;
            }
            k += 1.0;
        }
    }
    Ok(m.iter().zip(x).map(|(a, b)| (a / k - b) / s).collect())
}

/// The closed-form optimal velocity as a [`VelocityField`].
#[derive(Debug, Clone)]
pub struct ClosedFormVelocity {
    dataset: Dataset,
    pub source: SourceKind,
    /// Finite-difference resolution for the cone field's Jacobian. The cone
    /// field is piecewise affine with jumps on cone boundaries, so a step of
    /// `fd_step(x)` only ever sees the in-cone part `-I / (1 - t)`; a coarser
    /// step makes the boundary jumps visible to the Lipschitz estimate.
    pub cone_fd_step: Option<f64>,
    /// Use [`uniform_cone_velocity_extended`] instead of failing outside the
    /// support.
    pub extend_outside_support: bool,
}

impl ClosedFormVelocity {
    pub fn gaussian(dataset: Dataset) -> Self {
        Self {
            dataset,
            source: SourceKind::Gaussian,
            cone_fd_step: None,
            extend_outside_support: false,
        }
    }

    pub fn uniform(dataset: Dataset) -> Self {
        Self {
            dataset,
            source: SourceKind::UniformBox,
            cone_fd_step: None,
            extend_outside_support: false,
        }
    }

    pub fn with_cone_fd_step(mut self, h: f64) -> Self {
        self.cone_fd_step = Some(h);
        self
    }

    pub fn extended_outside_support(mut self) -> Self {
        self.extend_outside_support = true;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn cone_velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if self.extend_outside_support {
            uniform_cone_velocity_extended(self.dataset(), x, t)
        } else {
            uniform_cone_velocity(self.dataset(), x, t)
        }
    }

    fn cone_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let h = self.cone_fd_step.unwrap_or_else(|| fd_step(x));
        let f = |y: &[f64]| self.cone_velocity(y, t);
        match central_difference_with_step(f, x, u, h) {
            Err(FmError::OutsideSupport { .. }) => {}
            other => return other,
        }
        // One side left the support: fall back to the side that stayed.
        let centre = f(x)?;
        for sign in [1.0, -1.0] {
            let y: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + sign * h * b).collect();
            if let Ok(fy) = f(&y) {
                return Ok(fy
                    .iter()
                    .zip(&centre)
                    .map(|(p, c)| sign * (p - c) / h)
                    .collect());
            }
        }
        let s = 1.0 - t;
        Ok(u.iter().map(|v| -v / s).collect())
    }
}

impl VelocityField for ClosedFormVelocity {
    fn dim(&self) -> usize {
        self.dataset().dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match self.source {
            SourceKind::Gaussian => gaussian_closed_form_velocity(self.dataset(), x, t),
            SourceKind::UniformBox => self.cone_velocity(x, t),
        }
    }

    fn velocity_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        require_before_one(t)?;
        match self.source {
            SourceKind::Gaussian => {
                let jm = mmse_jacobian_apply(self.dataset(), x, t, u)?;
                let s = 1.0 - t;
                Ok(jm.iter().zip(u).map(|(a, b)| (a - b) / s).collect())
            }
            SourceKind::UniformBox => self.cone_jvp(x, t, u),
        }
    }

    fn velocity_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        match self.source {
            // Symmetric Jacobian.
            SourceKind::Gaussian => Some(self.velocity_jvp(x, t, w)),
            SourceKind::UniformBox => None,
        }
    }
}

/// The posterior-mean denoiser as a [`Denoiser`], with exact Jacobians.
#[derive(Debug, Clone)]
pub struct MmseDenoiser {
    dataset: Dataset,
}

impl MmseDenoiser {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
}

impl Denoiser for MmseDenoiser {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        gaussian_mmse_denoiser(&self.dataset, x, t)
    }

    fn denoise_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        mmse_jacobian_apply(&self.dataset, x, t, u)
    }

    fn denoise_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(mmse_jacobian_apply(&self.dataset, x, t, w))
    }
}

/// Squared distance from `x` to the nearest stored point.
pub fn nearest_sq_dist(ds: &Dataset, x: &[f64]) -> f64 {
    ds.rows().map(|r| sq_dist(r, x)).fold(f64::INFINITY, f64::min)
}
