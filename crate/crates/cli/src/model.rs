//! Model references in configs and their loaded form.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fmdt_core::closedform::{ClosedFormVelocity, MmseDenoiser};
use fmdt_core::field::{denoiser_from_velocity, velocity_from_denoiser};
use fmdt_core::rng::SourceKind;
use fmdt_core::sampling::{
    resolve_schedule, Calibration, CalibrationOptions, LevelSpec, PerturbationSpec, PerturbedDenoiser,
    SigmaSchedule,
};
use fmdt_core::training::PiecewiseDenoiser;
use fmdt_core::{Dataset, Denoiser, ImageShape, VelocityField};
use serde::{Deserialize, Serialize};

use crate::run::{resolve, runtime, schema, CliError, Inputs};

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A trained network; `ema` selects the averaged weights.
    Checkpoint {
        path: PathBuf,
        #[serde(default = "yes")]
        ema: bool,
    },
    /// Ten checkpoints, member `k` serving `t` in `[k/10, (k+1)/10)`.
    Ensemble {
        members: Vec<PathBuf>,
        #[serde(default = "yes")]
        ema: bool,
    },
    /// The optimal velocity of the empirical measure of `dataset`.
    ClosedForm {
        dataset: PathBuf,
        #[serde(default)]
        source: SourceKind,
        /// Finite-difference step for cone-field Jacobians.
        #[serde(default)]
        cone_fd_step: Option<f64>,
    },
}

impl ModelSpec {
    pub fn resolve_paths(&mut self, base: &Path) {
        match self {
            ModelSpec::Checkpoint { path, .. } => resolve(base, path),
            ModelSpec::Ensemble { members, .. } => members.iter_mut().for_each(|p| resolve(base, p)),
            ModelSpec::ClosedForm { dataset, .. } => resolve(base, dataset),
        }
    }
}

#[derive(Clone)]
pub struct Model {
    pub denoiser: Arc<dyn Denoiser>,
    pub velocity: Arc<dyn VelocityField>,
    pub shape: Option<ImageShape>,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.denoiser.dim()
    }
}

fn pick(ckpt: &fmdt_core::net::Checkpoint, ema: bool, field: &str) -> Result<fmdt_core::net::ParametrizedDenoiser, CliError> {
    if ema {
        ckpt.ema_model()?
            .ok_or_else(|| runtime(format!("{field}: checkpoint has no EMA weights")))
    } else {
        Ok(ckpt.model()?)
    }
}

pub fn load_model(spec: &ModelSpec, field: &str, inputs: &mut Inputs) -> Result<Model, CliError> {
    Ok(match spec {
        ModelSpec::Checkpoint { path, ema } => {
            let f = format!("{field}.path");
            let m = Arc::new(pick(&inputs.checkpoint(&f, path)?, *ema, &f)?);
            Model { denoiser: m.clone(), velocity: m, shape: None }
        }
        ModelSpec::Ensemble { members, ema } => {
            let mut nets = Vec::with_capacity(members.len());
            for (k, p) in members.iter().enumerate() {
                let f = format!("{field}.members[{k}]");
                nets.push(pick(&inputs.checkpoint(&f, p)?, *ema, &f)?);
            }
            let m = Arc::new(PiecewiseDenoiser::new(nets).map_err(|e| schema(format!("{field}.members: {e}")))?);
            Model { denoiser: m.clone(), velocity: m, shape: None }
        }
        ModelSpec::ClosedForm { dataset, source, cone_fd_step } => {
            let ds = inputs.dataset(&format!("{field}.dataset"), dataset)?;
            let shape = ds.shape();
            match source {
                SourceKind::Gaussian => Model {
                    denoiser: Arc::new(MmseDenoiser::new(ds.clone())),
                    velocity: Arc::new(ClosedFormVelocity::gaussian(ds)),
                    shape,
                },
                SourceKind::UniformBox => {
                    let mut v = ClosedFormVelocity::uniform(ds).extended_outside_support();
                    if let Some(h) = cone_fd_step {
                        v = v.with_cone_fd_step(*h);
                    }
                    Model {
                        denoiser: Arc::new(denoiser_from_velocity(v.clone())),
                        velocity: Arc::new(v),
                        shape,
                    }
                }
            }
        }
    })
}

/// Wraps `model` in a perturbation, calibrating its level on `test` when
/// the spec asks for a PSNR ratio.
pub fn perturb_model(
    model: &Model,
    spec: &PerturbationSpec,
    calibration: &CalibrationOptions,
    test: Option<&Dataset>,
) -> Result<(Model, Vec<Calibration>), CliError> {
    spec.validate().map_err(|e| schema(format!("perturbation: {e}")))?;
    let shape = model.shape.or_else(|| test.and_then(Dataset::shape));
    let (schedule, cals) = match (&spec.level, test) {
        (LevelSpec::CalibratedPsnrRatio { .. }, None) => {
            return Err(schema("test_dataset: required for a calibrated perturbation level"));
        }
        (LevelSpec::CalibratedPsnrRatio { .. }, Some(ds)) => {
            resolve_schedule(&*model.denoiser, ds, spec, calibration)?
        }
        (LevelSpec::Table { nodes }, _) => (
            SigmaSchedule::new(nodes.clone()).map_err(|e| schema(format!("perturbation.level: {e}")))?,
            Vec::new(),
        ),
    };
    let p = Arc::new(PerturbedDenoiser::new(
        model.denoiser.clone(),
        spec.direction,
        shape,
        (spec.t_min, spec.t_max),
        schedule,
    )?);
    Ok((
        Model {
            denoiser: p.clone(),
            velocity: Arc::new(velocity_from_denoiser(p)),
            shape,
        },
        cals,
    ))
}
