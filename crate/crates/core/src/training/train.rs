use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, FmError, Result};
use crate::net::{NetModel, ParametrizedDenoiser};
use crate::rng::{seeded, SourceKind};
use crate::training::optim::{Adam, AdamConfig, Ema};
use crate::training::regularizer::{spectral_norm_penalty, RegSpec};
use crate::training::weighting::WeightingScheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Times are drawn uniformly from this interval intersected with the
    /// weighting's support.
    pub t_sampling: (f64, f64),
    pub source: SourceKind,
    pub regularizer: Option<RegSpec>,
    /// Fraction of the epochs, counted from the end, with the regularizer on.
    pub reg_fraction: f64,
    /// Overrides the default `ceil(n / batch_size)`.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            ema_decay: 0.999,
            seed: 0,
            t_sampling: (0.0, 1.0 - 1e-3),
            source: SourceKind::Gaussian,
            regularizer: None,
            reg_fraction: 0.1,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(FmError::InvalidArgument(format!("train config: {what}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1]");
        }
        let (lo, hi) = self.t_sampling;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("t_sampling must be an interval inside [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.reg_fraction) {
            return bad("reg_fraction must lie in [0, 1]");
        }
        if let Some(r) = &self.regularizer {
            r.validate()?;
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// First epoch (0-based) with the regularizer enabled.
    pub fn reg_start_epoch(&self) -> usize {
        let on = (self.reg_fraction * self.epochs as f64).ceil() as usize;
        self.epochs - on.min(self.epochs)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ParametrizedDenoiser,
    pub ema: ParametrizedDenoiser,
    /// Mean weighted denoising loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean regularizer value per epoch (0 where it was off).
    pub epoch_penalties: Vec<f64>,
    pub steps: usize,
}

/// Minimizes `E[w_t |D(x_t, t) - x1|^2]` with Adam, keeping an EMA copy.
///
/// Each epoch runs `ceil(n / batch_size)` full batches drawn from a
/// wrap-around shuffled permutation of the dataset. On a non-finite loss or
/// gradient the run stops with [`FmError::Diverged`] carrying the last
/// weights that produced a finite loss.
pub fn train(
    ds: &Dataset,
    init: &ParametrizedDenoiser,
    ws: &WeightingScheme,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(FmError::Empty("training dataset"));
    }
    check_dim(init.dim(), ds.dim())?;
    let lo = cfg.t_sampling.0.max(ws.t_support.0);
    let hi = cfg.t_sampling.1.min(ws.t_support.1);
    if lo > hi {
        return Err(FmError::InvalidArgument(format!(
            "t_sampling {:?} does not meet the weighting support {:?}",
            cfg.t_sampling, ws.t_support
        )));
    }

    let d = ds.dim();
    let b = cfg.batch_size;
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| ds.len().div_ceil(b));
    let reg_start = cfg.reg_start_epoch();

    let mut rng = seeded(cfg.seed);
    let mut model = init.clone();
    let mut adam = Adam::new(cfg.adam(), model.net.weights().len());
    let mut ema = Ema::new(cfg.ema_decay, model.net.weights());
    let mut last_valid: NetModel = model.net.clone();

    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut rng);
    let mut cursor = 0;

    let mut xt = Array2::<f64>::zeros((b, d));
    let mut x1 = Array2::<f64>::zeros((b, d));
    let mut ts = vec![0.0; b];
    let mut wts = vec![0.0; b];

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_penalties = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let reg = cfg.regularizer.filter(|_| epoch >= reg_start);
        let mut loss_sum = 0.0;
        let mut pen_sum = 0.0;
        for _ in 0..steps_per_epoch {
            for row in 0..b {
                if cursor == perm.len() {
                    perm.shuffle(&mut rng);
                    cursor = 0;
                }
                let target = ds.row(perm[cursor]);
                cursor += 1;
                let x0 = cfg.source.draw(&mut rng, d);
                let t = if lo < hi { rng.random_range(lo..=hi) } else { lo };
                for j in 0..d {
                    x1[[row, j]] = target[j];
                    xt[[row, j]] = t * target[j] + (1.0 - t) * x0[j];
                }
                ts[row] = t;
                wts[row] = ws.weight(t);
            }
            let diverged = |step| FmError::Diverged {
                step,
                last_valid: Box::new(last_valid.clone()),
            };
            let (loss, mut grad) = match model.grad_weights(xt.view(), x1.view(), &ts, &wts) {
                Ok(r) => r,
                Err(FmError::NonFiniteLoss { .. }) => return Err(diverged(step)),
                Err(e) => return Err(e),
            };
            let mut penalty = 0.0;
            if let Some(spec) = &reg {
                for row in 0..b {
                    if !spec.active(ts[row]) {
                        continue;
                    }
                    let seed = rng.next_u64();
                    let x = xt.row(row).to_vec();
                    let p = spectral_norm_penalty(&model, &x, ts[row], spec, seed)?;
                    penalty += p.value / b as f64;
                    for (g, pg) in grad.iter_mut().zip(&p.grad) {
                        *g += pg / b as f64;
                    }
                }
            }
            if !(loss.is_finite() && penalty.is_finite()) || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(step));
            }
            last_valid.clone_from(&model.net);
            adam.step(model.net.weights_mut(), &grad);
            ema.update(model.net.weights());
            loss_sum += loss;
            pen_sum += penalty;
            step += 1;
        }
        epoch_losses.push(loss_sum / steps_per_epoch as f64);
        epoch_penalties.push(pen_sum / steps_per_epoch as f64);
    }

    let mut ema_model = model.clone();
    ema_model.net.set_weights(ema.weights().to_vec())?;
    Ok(TrainOutput {
        model,
        ema: ema_model,
        epoch_losses,
        epoch_penalties,
        steps: step,
    })
}
