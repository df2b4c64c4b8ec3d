//! Jacobian spectral-norm penalty `lambda 1[t in I] max(|grad_x v(x_t, t)|_2, M)`.

use serde::{Deserialize, Serialize};

use crate::analysis::spectral::{power_iteration, DEFAULT_POWER_ITERS};
use crate::error::{FmError, Result};
use crate::field::VelocityField;
use crate::net::ParametrizedDenoiser;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub lambda: f64,
    /// Target bound `M`: norms below it are not penalized further.
    pub bound: f64,
    #[serde(default = "default_iters")]
    pub power_iters: usize,
}

fn default_iters() -> usize {
    DEFAULT_POWER_ITERS
}

impl RegSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.t_min)
            && (0.0..=1.0).contains(&self.t_max)
            && self.t_min <= self.t_max
            && self.lambda >= 0.0
            && self.bound > 0.0
            && self.power_iters >= 1;
        if ok {
            Ok(())
        } else {
            Err(FmError::InvalidArgument(format!("invalid regularizer {self:?}")))
        }
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    /// Power-method estimate, 0 when `t` is outside the interval.
    pub sigma: f64,
    /// Weight gradient of `value`; empty when `t` is outside the interval.
    pub grad: Vec<f64>,
}

/// Penalty value for any velocity field.
pub fn penalty_value<V: VelocityField + ?Sized>(
    v: &V,
    x: &[f64],
    t: f64,
    spec: &RegSpec,
    seed: u64,
) -> Result<f64> {
    if !spec.active(t) {
        return Ok(0.0);
    }
    let est = power_iteration(v, x, t, spec.power_iters, seed)?;
    Ok(spec.lambda * est.sigma.max(spec.bound))
}

/// Penalty and its weight gradient. The singular vectors from the power
/// method are held fixed, so the gradient is `lambda grad_theta (l^T J r)`
/// when the estimate exceeds the bound and zero otherwise.
pub fn spectral_norm_penalty(
    pd: &ParametrizedDenoiser,
    x: &[f64],
    t: f64,
    spec: &RegSpec,
    seed: u64,
) -> Result<Penalty> {
    if !spec.active(t) {
        return Ok(Penalty {
            value: 0.0,
            sigma: 0.0,
            grad: Vec::new(),
        });
    }
    let est = power_iteration(pd, x, t, spec.power_iters, seed)?;
    let value = spec.lambda * est.sigma.max(spec.bound);
    let grad = if est.sigma > spec.bound && spec.lambda > 0.0 {
        let mut g = pd.velocity_jvp_weight_grad(x, t, &est.right, &est.left)?;
        g.iter_mut().for_each(|a| *a *= spec.lambda);
        g
    } else {
        vec![0.0; pd.net.weights().len()]
    };
    Ok(Penalty {
        value,
        sigma: est.sigma,
        grad,
    })
}
