//! Ten denoisers, each trained on one tenth of the time axis.

use crate::data::Dataset;
use crate::error::{check_dim, FmError, Result};
use crate::field::{Denoiser, VelocityField};
use crate::net::{NetModel, NetSpec, ParamClass, ParametrizedDenoiser};
use crate::training::train::{train, TrainConfig};
use crate::training::weighting::WeightingScheme;

pub const ENSEMBLE_SIZE: usize = 10;

/// Member owning `t`: intervals `[k/10, (k+1)/10)`, with `t = 1` going to the
/// last member. The float product `10 t` is corrected against the exact
/// boundaries so that e.g. `t = 0.3` lands in member 3.
pub fn member_index(t: f64) -> usize {
    let n = ENSEMBLE_SIZE as f64;
    let mut k = (t * n).floor().clamp(0.0, n - 1.0) as usize;
    while k + 1 < ENSEMBLE_SIZE && (k + 1) as f64 / n <= t {
        k += 1;
    }
    while k > 0 && k as f64 / n > t {
        k -= 1;
    }
    k
}

#[derive(Debug, Clone)]
pub struct PiecewiseDenoiser {
    members: Vec<ParametrizedDenoiser>,
}

impl PiecewiseDenoiser {
    pub fn new(members: Vec<ParametrizedDenoiser>) -> Result<Self> {
        if members.len() != ENSEMBLE_SIZE {
            return Err(FmError::InvalidArgument(format!(
                "piecewise denoiser needs {ENSEMBLE_SIZE} members, got {}",
                members.len()
            )));
        }
        let d = members[0].dim();
        for m in &members {
            check_dim(d, m.dim())?;
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ParametrizedDenoiser] {
        &self.members
    }

    pub fn member(&self, t: f64) -> &ParametrizedDenoiser {
        &self.members[member_index(t)]
    }
}

impl Denoiser for PiecewiseDenoiser {
    fn dim(&self) -> usize {
        self.members[0].dim()
    }

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.member(t).denoise(x, t)
    }

    fn denoise_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        self.member(t).denoise_jvp(x, t, u)
    }

    fn denoise_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        self.member(t).denoise_vjp(x, t, w)
    }
}

impl VelocityField for PiecewiseDenoiser {
    fn dim(&self) -> usize {
        self.members[0].dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.member(t).velocity(x, t)
    }

    fn velocity_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        self.member(t).velocity_jvp(x, t, u)
    }

    fn velocity_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        self.member(t).velocity_vjp(x, t, w)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub model: PiecewiseDenoiser,
    pub ema: PiecewiseDenoiser,
    pub epoch_losses: Vec<Vec<f64>>,
}

/// Trains member `k` on `t ~ U[k/10, (k+1)/10]` from its own initialization
/// (seed `cfg.seed + k`) and its own training stream.
pub fn train_ensemble_10(
    ds: &Dataset,
    spec: &NetSpec,
    class: ParamClass,
    ws: &WeightingScheme,
    cfg: &TrainConfig,
) -> Result<EnsembleOutput> {
    let mut models = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut emas = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut losses = Vec::with_capacity(ENSEMBLE_SIZE);
    for k in 0..ENSEMBLE_SIZE {
        let seed = cfg.seed.wrapping_add(k as u64);
        let init = ParametrizedDenoiser::new(NetModel::init(spec, seed)?, class);
        let member_cfg = TrainConfig {
            seed,
            t_sampling: (k as f64 / 10.0, (k + 1) as f64 / 10.0),
            ..cfg.clone()
        };
        let out = train(ds, &init, ws, &member_cfg)?;
        models.push(out.model);
        emas.push(out.ema);
        losses.push(out.epoch_losses);
    }
    Ok(EnsembleOutput {
        model: PiecewiseDenoiser::new(models)?,
        ema: PiecewiseDenoiser::new(emas)?,
        epoch_losses: losses,
    })
}
