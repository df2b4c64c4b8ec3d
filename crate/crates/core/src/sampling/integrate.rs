//! Fixed-step and adaptive ODE integration of `dx/dt = v(x, t)` from `t = 0`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::spectral::jacobian_spectral_norm;
use crate::data::norm;
use crate::error::{check_dim, FmError, Result};
use crate::field::VelocityField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Euler,
    Heun,
    Rk4,
    /// Dormand-Prince 5(4) with embedded error control.
    AdaptiveRk45,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    /// Number of steps for fixed-step schemes over `[0, t_end]`.
    pub steps: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Integration stops at `t_end = 1 - eps_end`.
    pub eps_end: f64,
    /// Finish with `x <- x + (1 - t_end) v(x, t_end)`, i.e. `D(x, t_end)`.
    pub terminal_jump: bool,
    /// Power iterations for a per-step Jacobian spectral norm, if wanted.
    pub spectral_iters: Option<usize>,
    /// Cap on accepted plus rejected adaptive steps.
    pub max_steps: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            scheme: Scheme::Euler,
            steps: 100,
            rtol: 1e-6,
            atol: 1e-8,
            eps_end: 1e-3,
            terminal_jump: true,
            spectral_iters: None,
            max_steps: 100_000,
        }
    }
}

impl IntegratorSpec {
    pub fn fixed(scheme: Scheme, steps: usize) -> Self {
        Self {
            scheme,
            steps,
            ..Self::default()
        }
    }

    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        Self {
            scheme: Scheme::AdaptiveRk45,
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn t_end(&self) -> f64 {
        1.0 - self.eps_end
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(FmError::InvalidArgument("integrator needs steps >= 1".into()));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(FmError::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.eps_end > 0.0 && self.eps_end < 1.0) {
            return Err(FmError::InvalidArgument("eps_end must lie in (0, 1)".into()));
        }
        if self.spectral_iters == Some(0) {
            return Err(FmError::InvalidArgument("spectral_iters must be positive".into()));
        }
        Ok(())
    }
}

/// A sampled path. Per-step entries describe the step starting at
/// `times[k]`, so they have one entry fewer than `times`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub velocity_norms: Vec<f64>,
    pub perturbation_active: Vec<bool>,
    pub spectral_norms: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Columns `t, x_0, ..., x_{d-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|j| format!("x_{j}")));
        out.write_record(&header)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Everything but the states, for a JSON sidecar.
    pub fn diagnostics(&self) -> serde_json::Value {
        serde_json::json!({
            "times": self.times,
            "velocity_norms": self.velocity_norms,
            "perturbation_active": self.perturbation_active,
            "spectral_norms": self.spectral_norms,
        })
    }
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One fixed step of size `h` from `(x, t)`, reusing `k1 = v(x, t)`.
fn fixed_step<V: VelocityField + ?Sized>(
    v: &V,
    scheme: Scheme,
    x: &[f64],
    t: f64,
    h: f64,
    k1: &[f64],
) -> Result<Vec<f64>> {
    Ok(match scheme {
        Scheme::Euler => axpy(x, h, k1),
        Scheme::Heun => {
            let k2 = v.velocity(&axpy(x, h, k1), t + h)?;
            x.iter()
                .zip(k1.iter().zip(&k2))
                .map(|(a, (p, q))| a + 0.5 * h * (p + q))
                .collect()
        }
        Scheme::Rk4 | Scheme::AdaptiveRk45 => {
            let k2 = v.velocity(&axpy(x, 0.5 * h, k1), t + 0.5 * h)?;
            let k3 = v.velocity(&axpy(x, 0.5 * h, &k2), t + 0.5 * h)?;
            let k4 = v.velocity(&axpy(x, h, &k3), t + h)?;
            (0..x.len())
                .map(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                .collect()
        }
    })
}

// Dormand-Prince tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince attempt: the fifth-order solution and the scaled
/// error norm.
fn dopri_step<V: VelocityField + ?Sized>(
    v: &V,
    x: &[f64],
    t: f64,
    h: f64,
    k1: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<(Vec<f64>, f64)> {
    let d = x.len();
    let mut ks: Vec<Vec<f64>> = vec![k1.to_vec()];
    for s in 1..7 {
        let mut xs = x.to_vec();
        for (j, k) in ks.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..d {
                    xs[i] += h * a * k[i];
                }
            }
        }
        ks.push(v.velocity(&xs, t + C[s] * h)?);
    }
    let mut x5 = x.to_vec();
    let mut err = 0.0f64;
    for i in 0..d {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for s in 0..7 {
            hi += B5[s] * ks[s][i];
            lo += B4[s] * ks[s][i];
        }
        x5[i] += h * hi;
        let scale = atol + rtol * x[i].abs().max(x5[i].abs());
        err = err.max((h * (hi - lo)).abs() / scale);
    }
    Ok((x5, err))
}

struct Recorder<'a, V: ?Sized> {
    v: &'a V,
    spectral_iters: Option<usize>,
    rec: TrajectoryRecord,
}

impl<V: VelocityField + ?Sized> Recorder<'_, V> {
    fn begin_step(&mut self, x: &[f64], t: f64, k1: &[f64]) -> Result<()> {
        self.rec.velocity_norms.push(norm(k1));
        self.rec.perturbation_active.push(self.v.perturbation_active(t));
        if let Some(iters) = self.spectral_iters {
            let step = self.rec.velocity_norms.len() as u64;
            let s = jacobian_spectral_norm(self.v, x, t, iters, step)?;
            self.rec.spectral_norms.get_or_insert_with(Vec::new).push(s);
        }
        Ok(())
    }

    fn push(&mut self, t: f64, x: Vec<f64>) -> Result<()> {
        let finite = x.iter().all(|a| a.is_finite());
        self.rec.times.push(t);
        self.rec.states.push(x);
        if !finite {
            let mut partial = std::mem::take(&mut self.rec);
            partial.times.pop();
            partial.states.pop();
            return Err(FmError::NonFiniteTrajectory {
                step: partial.velocity_norms.len(),
                partial: Box::new(partial),
            });
        }
        Ok(())
    }
}

/// Integrates from `t = 0` to `t_end` and optionally applies the terminal
/// denoiser jump to land at `t = 1`.
pub fn sample<V: VelocityField + ?Sized>(
    v: &V,
    x0: &[f64],
    spec: &IntegratorSpec,
) -> Result<TrajectoryRecord> {
    spec.validate()?;
    check_dim(v.dim(), x0.len())?;
    if x0.iter().any(|a| !a.is_finite()) {
        return Err(FmError::NonFinite("initial state".into()));
    }
    let t_end = spec.t_end();
    let mut r = Recorder {
        v,
        spectral_iters: spec.spectral_iters,
        rec: TrajectoryRecord::default(),
    };
    r.push(0.0, x0.to_vec())?;
    let mut x = x0.to_vec();

    match spec.scheme {
        Scheme::Euler | Scheme::Heun | Scheme::Rk4 => {
            let n = spec.steps;
            for k in 0..n {
                let t = t_end * k as f64 / n as f64;
                let t_next = t_end * (k + 1) as f64 / n as f64;
                let k1 = v.velocity(&x, t)?;
                r.begin_step(&x, t, &k1)?;
                x = fixed_step(v, spec.scheme, &x, t, t_next - t, &k1)?;
                r.push(t_next, x.clone())?;
            }
        }
        Scheme::AdaptiveRk45 => {
            let mut t = 0.0;
            let mut h = t_end / spec.steps as f64;
            let mut attempts = 0;
            while t < t_end {
                h = h.min(t_end - t);
                let k1 = v.velocity(&x, t)?;
                let (x_new, err) = loop {
                    attempts += 1;
                    if attempts > spec.max_steps {
                        return Err(FmError::InvalidArgument(format!(
                            "adaptive integrator exceeded {} steps at t = {t}",
                            spec.max_steps
                        )));
                    }
                    let (x_new, err) = dopri_step(v, &x, t, h, &k1, spec.rtol, spec.atol)?;
                    if err <= 1.0 || !err.is_finite() && h < 1e-14 {
                        break (x_new, err);
                    }
                    let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
                    h *= factor;
                };
                r.begin_step(&x, t, &k1)?;
                let t_next = if t_end - (t + h) < 1e-14 { t_end } else { t + h };
                x = x_new;
                r.push(t_next, x.clone())?;
                t = t_next;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= factor;
            }
        }
    }

    if spec.terminal_jump {
        let k1 = v.velocity(&x, t_end)?;
        r.begin_step(&x, t_end, &k1)?;
        x = axpy(&x, 1.0 - t_end, &k1);
        r.push(1.0, x)?;
    }
    Ok(r.rec)
}

/// Independent trajectories in parallel; output order follows `x0s`.
pub fn sample_batch<V: VelocityField + ?Sized>(
    v: &V,
    x0s: &[Vec<f64>],
    spec: &IntegratorSpec,
) -> Result<Vec<TrajectoryRecord>> {
    x0s.par_iter().map(|x0| sample(v, x0, spec)).collect()
}

/// Endpoints only.
pub fn sample_endpoints<V: VelocityField + ?Sized>(
    v: &V,
    x0s: &[Vec<f64>],
    spec: &IntegratorSpec,
) -> Result<Vec<Vec<f64>>> {
    x0s.par_iter()
        .map(|x0| sample(v, x0, spec).map(|r| r.endpoint().to_vec()))
        .collect()
}

/// States at the increasing `times` (first may be 0), integrating each
/// segment with the spec's scheme at `spec.steps` steps per unit time (at
/// least one per segment). Adaptive specs use RK4 at that density. No
/// terminal jump.
pub fn states_at<V: VelocityField + ?Sized>(
    v: &V,
    x0: &[f64],
    times: &[f64],
    spec: &IntegratorSpec,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    check_dim(v.dim(), x0.len())?;
    if times.windows(2).any(|w| w[0] >= w[1]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(FmError::InvalidArgument("times must be increasing and nonnegative".into()));
    }
    let segment_scheme = match spec.scheme {
        Scheme::AdaptiveRk45 => Scheme::Rk4,
        s => s,
    };
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.to_vec();
    let mut t = 0.0;
    for &target in times {
        if target > t {
            let n = ((spec.steps as f64 * (target - t)).ceil() as usize).max(1);
            x = integrate_fixed(v, segment_scheme, &x, t, target, n)?;
            t = target;
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn integrate_fixed<V: VelocityField + ?Sized>(
    v: &V,
    scheme: Scheme,
    x0: &[f64],
    t0: f64,
    t1: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    for k in 0..n {
        let t = t0 + (t1 - t0) * k as f64 / n as f64;
        let tn = t0 + (t1 - t0) * (k + 1) as f64 / n as f64;
        let k1 = v.velocity(&x, t)?;
        x = fixed_step(v, scheme, &x, t, tn - t, &k1)?;
        if x.iter().any(|a| !a.is_finite()) {
            return Err(FmError::NonFinite(format!("state at t = {tn}")));
        }
    }
    Ok(x)
}
