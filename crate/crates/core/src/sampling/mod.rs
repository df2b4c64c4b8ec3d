//! Sampling: ODE integration, perturbed denoisers and paired sampling.

pub mod calibrate;
pub mod integrate;
pub mod perturb;

pub use calibrate::{
    calibrate_level, calibrate_on_probe, calibrated_perturbation, calibration_times,
    resolve_schedule, Calibration, CalibrationOptions,
};
pub use integrate::{
    sample, sample_batch, sample_endpoints, states_at, IntegratorSpec, Scheme, TrajectoryRecord,
};
pub use perturb::{
    make_direction, perturb_denoiser, Direction, LevelSpec, PerturbationSpec, PerturbedDenoiser,
    SigmaSchedule,
};

use crate::error::{check_dim, FmError, Result};
use crate::field::VelocityField;

/// Endpoints of every model from the same initial states:
/// `out[model][sample]`.
pub fn paired_sample(
    models: &[&dyn VelocityField],
    x0s: &[Vec<f64>],
    spec: &IntegratorSpec,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let first = models.first().ok_or(FmError::Empty("model list"))?;
    for m in models {
        check_dim(first.dim(), m.dim())?;
    }
    models
        .iter()
        .map(|m| sample_endpoints(*m, x0s, spec))
        .collect()
}
