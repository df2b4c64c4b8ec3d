//! Plug-and-play inpainting with a time-indexed denoiser as the prior.
//!
//! Iteration `k = 1..N` at `t_k = k / N`:
//! a gradient step on `1/2 |mask (x - y)|^2`, re-noising
//! `t_k z + (1 - t_k) eps` with fresh `eps ~ N(0, I)`, then `x <- D(., t_k)`.

use serde::{Deserialize, Serialize};

use crate::analysis::psnr::psnr;
use crate::error::{check_dim, FmError, Result};
use crate::field::Denoiser;
use crate::rng::{normal_vec, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseProblem {
    pub observation: Vec<f64>,
    /// `true` where the coordinate is observed.
    pub mask: Vec<bool>,
    pub noise_std: f64,
}

impl InverseProblem {
    pub fn new(observation: Vec<f64>, mask: Vec<bool>, noise_std: f64) -> Result<Self> {
        check_dim(observation.len(), mask.len())?;
        if !mask.iter().any(|&m| m) {
            return Err(FmError::InvalidArgument("mask observes no coordinate".into()));
        }
        if !(noise_std >= 0.0) {
            return Err(FmError::InvalidArgument("noise_std must be nonnegative".into()));
        }
        Ok(Self {
            observation,
            mask,
            noise_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.observation.len()
    }

    /// Observed coordinates from `y`, zeros elsewhere.
    pub fn initialization(&self) -> Vec<f64> {
        self.observation
            .iter()
            .zip(&self.mask)
            .map(|(y, &m)| if m { *y } else { 0.0 })
            .collect()
    }

    /// `|mask (x - y)|`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.observation)
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Fidelity step `alpha` at every iteration.
    #[default]
    Constant,
    /// Fidelity step `(1 - t_k)^alpha`.
    Decaying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnpOptions {
    pub alpha: f64,
    pub n_iters: usize,
    pub seed: u64,
    pub step_rule: StepRule,
    /// With noiseless observations, reset observed coordinates to `y` after
    /// the last iteration.
    pub final_projection: bool,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            n_iters: 100,
            seed: 0,
            step_rule: StepRule::Constant,
            final_projection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpResult {
    pub estimate: Vec<f64>,
    pub times: Vec<f64>,
    /// PSNR of each iterate against the ground truth, when supplied.
    pub psnr_trace: Option<Vec<f64>>,
}

pub fn pnp_flow_inpaint<D: Denoiser + ?Sized>(
    d: &D,
    prob: &InverseProblem,
    opts: &PnpOptions,
    ground_truth: Option<(&[f64], f64)>,
) -> Result<PnpResult> {
    check_dim(d.dim(), prob.dim())?;
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(FmError::InvalidArgument(format!("alpha {} is not in (0, 1]", opts.alpha)));
    }
    if let Some((gt, _)) = ground_truth {
        check_dim(prob.dim(), gt.len())?;
    }
    let n = opts.n_iters;
    let mut rng = seeded(opts.seed);
    let mut x = prob.initialization();
    let mut times = Vec::with_capacity(n);
    let mut trace = ground_truth.map(|_| Vec::with_capacity(n));
    for k in 1..=n {
        let t = k as f64 / n as f64;
        let gamma = match opts.step_rule {
            StepRule::Constant => opts.alpha,
            StepRule::Decaying => (1.0 - t).powf(opts.alpha),
        };
        let eps = normal_vec(&mut rng, prob.dim());
        let noisy: Vec<f64> = (0..prob.dim())
            .map(|j| {
                let z = if prob.mask[j] {
                    x[j] - gamma * (x[j] - prob.observation[j])
                } else {
                    x[j]
                };
                t * z + (1.0 - t) * eps[j]
            })
            .collect();
        x = d.denoise(&noisy, t)?;
        times.push(t);
        if let (Some(tr), Some((gt, data_max))) = (trace.as_mut(), ground_truth) {
            tr.push(psnr(gt, &x, data_max)?);
        }
        if x.iter().any(|a| !a.is_finite()) {
            return Err(FmError::NonFinite(format!(
                "inpainting iterate {k} (PSNR trace so far: {trace:?})"
            )));
        }
    }
    if n > 0 && opts.final_projection && prob.noise_std == 0.0 {
        for j in 0..prob.dim() {
            if prob.mask[j] {
                x[j] = prob.observation[j];
            }
        }
    }
    Ok(PnpResult {
        estimate: x,
        times,
        psnr_trace: trace,
    })
}
