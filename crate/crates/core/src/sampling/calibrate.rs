//! Choosing `sigma(t)` so that the perturbed denoiser keeps a given fraction
//! of the unperturbed PSNR.

use serde::{Deserialize, Serialize};

use crate::analysis::psnr::{default_data_max, PsnrProbe};
use crate::data::{Dataset, ImageShape};
use crate::error::{FmError, Result};
use crate::field::Denoiser;
use crate::rng::SourceKind;
use crate::sampling::perturb::{
    make_direction, Direction, LevelSpec, PerturbationSpec, PerturbedDenoiser, SigmaSchedule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    pub n_eval: usize,
    pub seed: u64,
    /// Defaults to the test set's value range.
    pub data_max: Option<f64>,
    pub source: SourceKind,
    /// Equispaced calibration times on the interval.
    pub nodes: usize,
    pub max_doublings: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            n_eval: 256,
            seed: 0,
            data_max: None,
            source: SourceKind::Gaussian,
            nodes: 7,
            max_doublings: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub t: f64,
    pub sigma: f64,
    pub baseline_psnr: f64,
    pub target_psnr: f64,
    /// PSNR of the perturbed denoiser at `sigma`, re-measured on the probe.
    pub achieved_psnr: f64,
    pub achieved_ratio: f64,
    /// Whether PSNR was non-increasing on a 17-point grid over the bracket.
    pub monotone: bool,
}

fn psnr_at(probe: &PsnrProbe, base: &[Vec<f64>], dirs: &[Vec<f64>], sigma: f64) -> Result<f64> {
    let est: Vec<Vec<f64>> = base
        .iter()
        .zip(dirs)
        .map(|(b, d)| b.iter().zip(d).map(|(x, y)| x + sigma * y).collect())
        .collect();
    probe.mean_psnr(&est)
}

/// Bisection for `PSNR(sigma) = ratio PSNR(0)` on a fixed probe. Because
/// every direction is affine in `sigma` given `D(x_t, t)`, the denoiser is
/// evaluated once.
pub fn calibrate_on_probe<D: Denoiser + ?Sized>(
    d: &D,
    probe: &PsnrProbe,
    delta: Option<&[f64]>,
    ratio: f64,
    max_doublings: usize,
) -> Result<Calibration> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(FmError::Calibration(format!("ratio {ratio} is not in (0, 1]")));
    }
    let base = probe.denoise_all(d)?;
    let dirs: Vec<Vec<f64>> = match delta {
        Some(delta) => vec![delta.to_vec(); base.len()],
        None => probe
            .inputs
            .iter()
            .zip(&base)
            .map(|(x, b)| x.iter().zip(b).map(|(p, q)| p - q).collect())
            .collect(),
    };
    let p0 = psnr_at(probe, &base, &dirs, 0.0)?;
    if !(p0.is_finite() && p0 > 0.0) {
        return Err(FmError::Calibration(format!("baseline PSNR {p0} is not positive")));
    }
    let target = ratio * p0;
    let done = |sigma: f64, monotone: bool| -> Result<Calibration> {
        let achieved = psnr_at(probe, &base, &dirs, sigma)?;
        Ok(Calibration {
            t: probe.t,
            sigma,
            baseline_psnr: p0,
            target_psnr: target,
            achieved_psnr: achieved,
            achieved_ratio: achieved / p0,
            monotone,
        })
    };
    if ratio == 1.0 {
        return done(0.0, true);
    }

    let f = |s: f64| psnr_at(probe, &base, &dirs, s).map(|p| p - target);
    let mut hi = 1e-3 * probe.data_max;
    let mut doublings = 0;
    while f(hi)? > 0.0 {
        if doublings == max_doublings {
            return Err(FmError::Calibration(format!(
                "no bracket for ratio {ratio} at t = {} within {max_doublings} doublings",
                probe.t
            )));
        }
        hi *= 2.0;
        doublings += 1;
    }
    let mut monotone = true;
    let mut prev = p0;
    for k in 1..=16 {
        let p = psnr_at(probe, &base, &dirs, hi * k as f64 / 16.0)?;
        if p > prev + 1e-9 {
            monotone = false;
        }
        prev = p;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    done(0.5 * (lo + hi), monotone)
}

/// Calibrates the level at one time on `n_eval` fresh test pairs.
pub fn calibrate_level<D: Denoiser + ?Sized>(
    d: &D,
    ds_test: &Dataset,
    dir: Direction,
    t: f64,
    ratio: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let data_max = match opts.data_max {
        Some(m) => m,
        None => default_data_max(ds_test)?,
    };
    let probe = PsnrProbe::draw(ds_test, t, opts.n_eval, opts.seed, data_max, opts.source)?;
    let delta = make_direction(dir, ds_test.dim(), ds_test.shape())?;
    calibrate_on_probe(d, &probe, delta.as_deref(), ratio, opts.max_doublings)
}

/// Calibration times: `nodes` equispaced points on `[t_min, t_max]`.
pub fn calibration_times(t_min: f64, t_max: f64, nodes: usize) -> Vec<f64> {
    if nodes <= 1 || t_min == t_max {
        return vec![t_min];
    }
    (0..nodes)
        .map(|k| t_min + (t_max - t_min) * k as f64 / (nodes - 1) as f64)
        .collect()
}

/// Resolves a perturbation spec to a `sigma(t)` schedule: explicit tables
/// pass through; calibrated levels are solved at each node and linearly
/// interpolated.
pub fn resolve_schedule<D: Denoiser + ?Sized>(
    d: &D,
    ds_test: &Dataset,
    spec: &PerturbationSpec,
    opts: &CalibrationOptions,
) -> Result<(SigmaSchedule, Vec<Calibration>)> {
    spec.validate()?;
    match &spec.level {
        LevelSpec::Table { nodes } => Ok((SigmaSchedule::new(nodes.clone())?, Vec::new())),
        LevelSpec::CalibratedPsnrRatio { ratio } => {
            let mut cals = Vec::new();
            for (k, t) in calibration_times(spec.t_min, spec.t_max, opts.nodes).into_iter().enumerate() {
                let node_opts = CalibrationOptions {
                    seed: opts.seed.wrapping_add(k as u64),
                    ..opts.clone()
                };
                cals.push(calibrate_level(d, ds_test, spec.direction, t, *ratio, &node_opts)?);
            }
            let schedule = SigmaSchedule::new(cals.iter().map(|c| (c.t, c.sigma)).collect())?;
            Ok((schedule, cals))
        }
    }
}

/// `resolve_schedule` followed by wrapping `d`.
pub fn calibrated_perturbation<D: Denoiser + Clone>(
    d: &D,
    ds_test: &Dataset,
    shape: Option<ImageShape>,
    spec: &PerturbationSpec,
    opts: &CalibrationOptions,
) -> Result<(PerturbedDenoiser<D>, Vec<Calibration>)> {
    let (schedule, cals) = resolve_schedule(d, ds_test, spec, opts)?;
    let p = PerturbedDenoiser::new(d.clone(), spec.direction, shape, (spec.t_min, spec.t_max), schedule)?;
    Ok((p, cals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::psnr::PSNR_CAP;
    use crate::closedform::MmseDenoiser;
    use crate::field::IdentityDenoiser;
    use crate::rng::{normal_vec, seeded};

    #[test]
    fn unit_ratio_needs_no_perturbation() {
        let ds = Dataset::from_rows("d", vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
        let m = MmseDenoiser::new(ds.clone());
        let c = calibrate_level(&m, &ds, Direction::PosShift, 0.5, 1.0, &CalibrationOptions::default()).unwrap();
        assert_eq!(c.sigma, 0.0);
        assert_eq!(c.achieved_ratio, 1.0);
    }

    #[test]
    fn identity_shift_has_a_closed_form() {
        // Clean inputs, identity denoiser: PSNR(sigma) = 10 log10(M^2 / sigma^2)
        // against a capped baseline, so sigma = M 10^(-ratio * cap / 20).
        let mut rng = seeded(3);
        let clean: Vec<Vec<f64>> = (0..16).map(|_| normal_vec(&mut rng, 5)).collect();
        let m = 2.5;
        let probe = PsnrProbe::from_pairs(0.7, clean.clone(), clean, m).unwrap();
        for ratio in [0.9, 0.5, 0.2] {
            let c = calibrate_on_probe(&IdentityDenoiser { dim: 5 }, &probe, Some(&[1.0; 5]), ratio, 60).unwrap();
            let expected = m * 10f64.powf(-ratio * PSNR_CAP / 20.0);
            assert!((c.sigma - expected).abs() < 1e-6, "{} vs {expected}", c.sigma);
            assert!((c.achieved_ratio - ratio).abs() < 1e-9);
            assert!(c.monotone);
        }
    }

    #[test]
    fn all_directions_hit_the_ratio() {
        let mut rng = seeded(4);
        let shape = ImageShape::new(1, 2, 2);
        let ds = Dataset::from_rows("img", (0..6).map(|_| normal_vec(&mut rng, 4)).collect(), Some(shape)).unwrap();
        let m = MmseDenoiser::new(ds.clone());
        for dir in [
            Direction::Checkerboard { patch_size: 1 },
            Direction::PosShift,
            Direction::NegShift,
            Direction::Residual,
        ] {
            let spec = PerturbationSpec {
                direction: dir,
                t_min: 0.3,
                t_max: 0.6,
                level: LevelSpec::CalibratedPsnrRatio { ratio: 0.9 },
            };
            let opts = CalibrationOptions { n_eval: 64, ..Default::default() };
            let (p, cals) = calibrated_perturbation(&m, &ds, Some(shape), &spec, &opts).unwrap();
            assert_eq!(cals.len(), 7);
            for (k, c) in cals.iter().enumerate() {
                // Independent re-measurement through the wrapped denoiser.
                let probe = PsnrProbe::draw(&ds, c.t, 64, k as u64, default_data_max(&ds).unwrap(), SourceKind::Gaussian).unwrap();
                let ratio = probe.evaluate(&p).unwrap() / probe.evaluate(&m).unwrap();
                assert!((ratio - 0.9).abs() < 1e-2, "{dir:?} t={} ratio={ratio}", c.t);
            }
        }
    }

    #[test]
    fn bracket_failure_is_reported() {
        let clean = vec![vec![0.0; 2]];
        let probe = PsnrProbe::from_pairs(0.5, clean.clone(), clean, 1.0).unwrap();
        let r = calibrate_on_probe(&IdentityDenoiser { dim: 2 }, &probe, Some(&[1.0, 1.0]), 0.01, 3);
        assert!(matches!(r, Err(FmError::Calibration(_))));
    }

    #[test]
    fn calibration_times_are_equispaced() {
        let ts = calibration_times(0.6, 0.9, 7);
        assert_eq!(ts.len(), 7);
        assert_eq!(ts[0], 0.6);
        assert!((ts[6] - 0.9).abs() < 1e-15);
        assert!((ts[1] - 0.65).abs() < 1e-12);
    }
}
