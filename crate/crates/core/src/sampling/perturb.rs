//! Controlled denoiser perturbations on a time interval:
//! `D + sigma(t) delta` for a fixed pattern `delta`, or the relaxed
//! `D + sigma(t) (Id - D)`.

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{check_dim, FmError, Result};
use crate::field::Denoiser;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Direction {
    /// Alternating `+1`/`-1` square patches, top-left patch `+1`.
    Checkerboard { patch_size: usize },
    PosShift,
    NegShift,
    /// `Id - D`; not a fixed pattern.
    Residual,
}

impl Direction {
    pub fn name(&self) -> String {
        match self {
            Direction::Checkerboard { patch_size } => format!("checkerboard-{patch_size}"),
            Direction::PosShift => "pos-shift".into(),
            Direction::NegShift => "neg-shift".into(),
            Direction::Residual => "residual".into(),
        }
    }
}

/// The pattern `delta` for additive directions; `None` for `Residual`.
/// Checkerboards tile every channel from the top-left corner and truncate at
/// the image border.
pub fn make_direction(dir: Direction, dim: usize, shape: Option<ImageShape>) -> Result<Option<Vec<f64>>> {
    Ok(match dir {
        Direction::PosShift => Some(vec![1.0; dim]),
        Direction::NegShift => Some(vec![-1.0; dim]),
        Direction::Residual => None,
        Direction::Checkerboard { patch_size } => {
            let shape = shape.ok_or_else(|| {
                FmError::InvalidArgument("checkerboard needs image shape metadata".into())
            })?;
            check_dim(shape.numel(), dim)?;
            if patch_size == 0 {
                return Err(FmError::InvalidArgument("patch_size must be positive".into()));
            }
            let mut delta = Vec::with_capacity(dim);
            for _ in 0..shape.channels {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        let even = (h / patch_size + w / patch_size) % 2 == 0;
                        delta.push(if even { 1.0 } else { -1.0 });
                    }
                }
            }
            Some(delta)
        }
    })
}

/// `sigma(t)` as a piecewise-linear function of sorted `(t, sigma)` nodes,
/// constant beyond the first and last node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    pub nodes: Vec<(f64, f64)>,
}

impl SigmaSchedule {
    pub fn new(nodes: Vec<(f64, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(FmError::Empty("sigma schedule"));
        }
        if nodes.windows(2).any(|w| w[0].0 >= w[1].0) || nodes.iter().any(|(t, s)| !t.is_finite() || !s.is_finite()) {
            return Err(FmError::InvalidArgument("sigma schedule needs increasing finite nodes".into()));
        }
        Ok(Self { nodes })
    }

    pub fn constant(sigma: f64) -> Self {
        Self { nodes: vec![(0.0, sigma)] }
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = self.nodes.partition_point(|(tk, _)| *tk <= t);
        if k == 0 {
            return self.nodes[0].1;
        }
        if k == self.nodes.len() {
            return self.nodes[k - 1].1;
        }
        let (t0, s0) = self.nodes[k - 1];
        let (t1, s1) = self.nodes[k];
        s0 + (s1 - s0) * (t - t0) / (t1 - t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LevelSpec {
    Table { nodes: Vec<(f64, f64)> },
    CalibratedPsnrRatio { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub direction: Direction,
    pub t_min: f64,
    pub t_max: f64,
    pub level: LevelSpec,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_min && self.t_min <= self.t_max && self.t_max <= 1.0) {
            return Err(FmError::InvalidArgument(format!(
                "perturbation interval [{}, {}] is not inside [0, 1]",
                self.t_min, self.t_max
            )));
        }
        if let LevelSpec::CalibratedPsnrRatio { ratio } = self.level {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(FmError::InvalidArgument(format!("ratio {ratio} is not in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedDenoiser<D> {
    inner: D,
    direction: Direction,
    delta: Option<Vec<f64>>,
    t_min: f64,
    t_max: f64,
    schedule: SigmaSchedule,
}

impl<D: Denoiser> PerturbedDenoiser<D> {
    pub fn new(
        inner: D,
        direction: Direction,
        shape: Option<ImageShape>,
        (t_min, t_max): (f64, f64),
        schedule: SigmaSchedule,
    ) -> Result<Self> {
        let delta = make_direction(direction, inner.dim(), shape)?;
        Ok(Self {
            inner,
            direction,
            delta,
            t_min,
            t_max,
            schedule,
        })
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn schedule(&self) -> &SigmaSchedule {
        &self.schedule
    }

    fn active(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    /// Applies the perturbation to a precomputed `D(x, t)`.
    pub fn perturb_output(&self, x: &[f64], t: f64, d: Vec<f64>) -> Vec<f64> {
        if !self.active(t) {
            return d;
        }
        let s = self.schedule.at(t);
        match &self.delta {
            Some(delta) => d.iter().zip(delta).map(|(a, b)| a + s * b).collect(),
            None => d.iter().zip(x).map(|(a, b)| a + s * (b - a)).collect(),
        }
    }
}

/// Wraps `d` according to `spec`; calibrated levels must be resolved to a
/// table first.
pub fn perturb_denoiser<D: Denoiser>(
    d: D,
    spec: &PerturbationSpec,
    shape: Option<ImageShape>,
) -> Result<PerturbedDenoiser<D>> {
    spec.validate()?;
    let schedule = match &spec.level {
        LevelSpec::Table { nodes } => SigmaSchedule::new(nodes.clone())?,
        LevelSpec::CalibratedPsnrRatio { .. } => {
            return Err(FmError::Calibration(
                "perturbation level is calibrated but has not been resolved".into(),
            ))
        }
    };
    PerturbedDenoiser::new(d, spec.direction, shape, (spec.t_min, spec.t_max), schedule)
}

impl<D: Denoiser> Denoiser for PerturbedDenoiser<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let d = self.inner.denoise(x, t)?;
        Ok(self.perturb_output(x, t, d))
    }

    fn denoise_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let j = self.inner.denoise_jvp(x, t, u)?;
        if !self.active(t) || self.delta.is_some() {
            return Ok(j);
        }
        let s = self.schedule.at(t);
        Ok(j.iter().zip(u).map(|(a, b)| (1.0 - s) * a + s * b).collect())
    }

    fn denoise_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        let j = self.inner.denoise_vjp(x, t, w)?;
        if !self.active(t) || self.delta.is_some() {
            return Some(j);
        }
        let s = self.schedule.at(t);
        Some(j.map(|j| j.iter().zip(w).map(|(a, b)| (1.0 - s) * a + s * b).collect()))
    }

    fn perturbation_active(&self, t: f64) -> bool {
        self.active(t) || self.inner.perturbation_active(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::MmseDenoiser;
    use crate::rng::{normal_vec, seeded};
    use crate::Dataset;
    use proptest::prelude::*;

    #[test]
    fn direction_patterns() {
        let s = ImageShape::new(1, 2, 2);
        assert_eq!(
            make_direction(Direction::Checkerboard { patch_size: 1 }, 4, Some(s)).unwrap().unwrap(),
            vec![1.0, -1.0, -1.0, 1.0]
        );
        assert_eq!(make_direction(Direction::PosShift, 3, None).unwrap().unwrap(), vec![1.0; 3]);
        assert_eq!(make_direction(Direction::NegShift, 2, None).unwrap().unwrap(), vec![-1.0; 2]);
        assert!(make_direction(Direction::Residual, 2, None).unwrap().is_none());
        assert!(make_direction(Direction::Checkerboard { patch_size: 1 }, 4, None).is_err());

        let s = ImageShape::new(1, 4, 4);
        let d = make_direction(Direction::Checkerboard { patch_size: 2 }, 16, Some(s)).unwrap().unwrap();
        assert_eq!(d.iter().filter(|&&v| v == 1.0).count(), 8);
        assert_eq!(&d[..4], &[1.0, 1.0, -1.0, -1.0]);
        assert_eq!(&d[8..12], &[-1.0, -1.0, 1.0, 1.0]);

        // 3x3 with patch 2 truncates at the border.
        let s = ImageShape::new(2, 3, 3);
        let d = make_direction(Direction::Checkerboard { patch_size: 2 }, 18, Some(s)).unwrap().unwrap();
        assert_eq!(&d[..9], &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0]);
        assert_eq!(&d[..9], &d[9..]);
    }

    #[test]
    fn schedule_interpolates() {
        let s = SigmaSchedule::new(vec![(0.2, 1.0), (0.4, 3.0)]).unwrap();
        assert_eq!(s.at(0.0), 1.0);
        assert!((s.at(0.3) - 2.0).abs() < 1e-12);
        assert_eq!(s.at(0.9), 3.0);
        assert!(SigmaSchedule::new(vec![(0.4, 1.0), (0.2, 1.0)]).is_err());
    }

    fn mmse() -> MmseDenoiser {
        let mut rng = seeded(2);
        MmseDenoiser::new(Dataset::from_rows("m", (0..4).map(|_| normal_vec(&mut rng, 3)).collect(), None).unwrap())
    }

    fn spec(direction: Direction, sigma: f64) -> PerturbationSpec {
        PerturbationSpec {
            direction,
            t_min: 0.3,
            t_max: 0.6,
            level: LevelSpec::Table { nodes: vec![(0.0, sigma)] },
        }
    }

    #[test]
    fn zero_level_is_the_identity_wrapper() {
        let base = mmse();
        let p = perturb_denoiser(mmse(), &spec(Direction::PosShift, 0.0), None).unwrap();
        for t in [0.1, 0.4, 0.9] {
            let x = [0.2, -0.1, 0.5];
            assert_eq!(p.denoise(&x, t).unwrap(), base.denoise(&x, t).unwrap());
        }
    }

    #[test]
    fn residual_with_unit_level_is_identity_inside() {
        let p = perturb_denoiser(mmse(), &spec(Direction::Residual, 1.0), None).unwrap();
        let x = [0.2, -0.1, 0.5];
        assert_eq!(p.denoise(&x, 0.45).unwrap(), x.to_vec());
        assert!(p.perturbation_active(0.45) && !p.perturbation_active(0.7));
    }

    #[test]
    fn pos_shift_adds_a_constant() {
        let base = mmse();
        let p = perturb_denoiser(mmse(), &spec(Direction::PosShift, 0.3), None).unwrap();
        let x = [0.2, -0.1, 0.5];
        let a = base.denoise(&x, 0.5).unwrap();
        let b = p.denoise(&x, 0.5).unwrap();
        for j in 0..3 {
            assert_eq!(b[j], a[j] + 0.3);
        }
    }

    #[test]
    fn unresolved_calibration_is_an_error() {
        let s = PerturbationSpec {
            direction: Direction::PosShift,
            t_min: 0.0,
            t_max: 0.3,
            level: LevelSpec::CalibratedPsnrRatio { ratio: 0.9 },
        };
        assert!(matches!(perturb_denoiser(mmse(), &s, None), Err(FmError::Calibration(_))));
    }

    #[test]
    fn residual_jacobian_matches_finite_differences() {
        let p = perturb_denoiser(mmse(), &spec(Direction::Residual, 0.4), None).unwrap();
        let (x, u) = ([0.2, -0.1, 0.5], [1.0, 0.5, -0.3]);
        let exact = p.denoise_jvp(&x, 0.5, &u).unwrap();
        let fd = crate::field::central_difference(|y| p.denoise(y, 0.5), &x, &u).unwrap();
        for j in 0..3 {
            assert!((exact[j] - fd[j]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn outside_interval_is_bitwise_unchanged(
            t in prop_oneof![0.0f64..0.3, 0.6000001f64..=1.0],
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            sigma in -2.0f64..2.0,
        ) {
            let base = mmse();
            for dir in [Direction::PosShift, Direction::NegShift, Direction::Residual] {
                let p = perturb_denoiser(mmse(), &spec(dir, sigma), None).unwrap();
                let a = p.denoise(&x, t).unwrap();
                let b = base.denoise(&x, t).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
