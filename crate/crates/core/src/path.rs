//! The linear interpolation path and the noise-level/time reparameterization.
//!
//! Noisy inputs are `x_t = t x1 + (1 - t) x0` with `x0 ~ N(0, I)`. Classical
//! denoisers instead see `x_sigma = x1 + sigma x0`; the two are related by
//! `t = 1 / (1 + sigma)` and `x_t = x_sigma / (1 + sigma)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FmError, Result};

/// A time in `[0, 1]`. `t = 0` is pure noise, `t = 1` is clean data.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TimePoint(f64);

impl TimePoint {
    pub const ZERO: TimePoint = TimePoint(0.0);
    pub const ONE: TimePoint = TimePoint(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && (0.0..=1.0).contains(&t) {
            Ok(TimePoint(t))
        } else {
            Err(FmError::InvalidTime(t))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TimePoint {
    type Error = FmError;

    fn try_from(t: f64) -> Result<Self> {
        TimePoint::new(t)
    }
}

impl From<TimePoint> for f64 {
    fn from(t: TimePoint) -> f64 {
        t.0
    }
}

/// A classical noise standard deviation, `sigma >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma >= 0.0 {
            Ok(NoiseLevel(sigma))
        } else {
            Err(FmError::InvalidNoiseLevel(sigma))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NoiseLevel {
    type Error = FmError;

    fn try_from(sigma: f64) -> Result<Self> {
        NoiseLevel::new(sigma)
    }
}

impl From<NoiseLevel> for f64 {
    fn from(s: NoiseLevel) -> f64 {
        s.0
    }
}

/// `t = 1 / (1 + sigma)`.
pub fn sigma_to_t(sigma: NoiseLevel) -> TimePoint {
    TimePoint(1.0 / (1.0 + sigma.0))
}

/// `sigma = (1 - t) / t`, undefined at `t = 0`.
pub fn t_to_sigma(t: TimePoint) -> Result<NoiseLevel> {
    let t = t.0;
    if t == 0.0 {
        return Err(FmError::SingularTime {
            t,
            what: "noise level is infinite at t = 0",
        });
    }
    // 1 - t is exact for t >= 0.5; below that 1/t - 1 loses nothing either
    // and keeps sigma_to_t's images (e.g. 1/20) mapping back to integers.
    let sigma = if t >= 0.5 { (1.0 - t) / t } else { 1.0 / t - 1.0 };
    Ok(NoiseLevel(sigma))
}

/// `(1 - t) x0 + t x1`.
pub fn interpolate(x0: &[f64], x1: &[f64], t: TimePoint) -> Result<Vec<f64>> {
    check_dim(x0.len(), x1.len())?;
    let t = t.0;
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect())
}

/// Generative corruption `x_t = t x1 + (1 - t) x0`.
pub fn corrupt(x1: &[f64], x0: &[f64], t: TimePoint) -> Result<Vec<f64>> {
    interpolate(x0, x1, t)
}

/// Classical corruption `x_sigma = x1 + sigma x0`.
pub fn corrupt_classical(x1: &[f64], x0: &[f64], sigma: NoiseLevel) -> Result<Vec<f64>> {
    check_dim(x1.len(), x0.len())?;
    let s = sigma.0;
    Ok(x1.iter().zip(x0).map(|(a, b)| a + s * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tp(t: f64) -> TimePoint {
        TimePoint::new(t).unwrap()
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let x0 = [0.3, -1.7, 2.5];
        let x1 = [1.0, 4.0, -2.0];
        assert_eq!(interpolate(&x0, &x1, TimePoint::ZERO).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, TimePoint::ONE).unwrap(), x1);
        assert_eq!(
            interpolate(&[0.0, 0.0], &[2.0, 4.0], tp(0.5)).unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn interpolation_rejects_mismatched_dims() {
        assert!(matches!(
            interpolate(&[0.0], &[1.0, 2.0], tp(0.5)),
            Err(FmError::DimensionMismatch { .. })
        ));
        assert!(corrupt_classical(&[0.0], &[1.0, 2.0], NoiseLevel::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn sigma_time_examples() {
        assert_eq!(sigma_to_t(NoiseLevel::new(19.0).unwrap()).get(), 0.05);
        assert_eq!(t_to_sigma(tp(0.05)).unwrap().get(), 19.0);
        assert_eq!(sigma_to_t(NoiseLevel::new(0.0).unwrap()).get(), 1.0);
        assert_eq!(t_to_sigma(tp(0.5)).unwrap().get(), 1.0);
        assert!(t_to_sigma(TimePoint::ZERO).is_err());
    }

    #[test]
    fn invalid_constructors() {
        assert!(TimePoint::new(-0.1).is_err());
        assert!(TimePoint::new(1.0 + 1e-12).is_err());
        assert!(TimePoint::new(f64::NAN).is_err());
        assert!(NoiseLevel::new(-1.0).is_err());
        assert!(NoiseLevel::new(f64::INFINITY).is_err());
    }

    #[test]
    fn corruption_endpoints() {
        let x1 = [0.5, -0.25];
        let x0 = [1.5, 2.0];
        assert_eq!(corrupt(&x1, &x0, TimePoint::ONE).unwrap(), x1);
        assert_eq!(
            corrupt_classical(&x1, &x0, NoiseLevel::new(0.0).unwrap()).unwrap(),
            x1
        );
    }

    proptest! {
        #[test]
        fn sigma_round_trip(sigma in 0.0f64..1e6) {
            let s = NoiseLevel::new(sigma).unwrap();
            let back = t_to_sigma(sigma_to_t(s)).unwrap().get();
            prop_assert!((back - sigma).abs() <= 1e-12 * sigma.max(1.0));
        }

        #[test]
        fn time_round_trip(t in 1e-9f64..=1.0) {
            let back = sigma_to_t(t_to_sigma(tp(t)).unwrap()).get();
            prop_assert!((back - t).abs() <= 4.0 * f64::EPSILON * t);
        }

        #[test]
        fn sigma_to_t_is_decreasing(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            prop_assume!(a < b);
            let ta = sigma_to_t(NoiseLevel::new(a).unwrap()).get();
            let tb = sigma_to_t(NoiseLevel::new(b).unwrap()).get();
            prop_assert!(ta >= tb);
            if b - a > 1e-9 * b.max(1.0) {
                prop_assert!(ta > tb);
            }
        }

        #[test]
        fn interpolation_is_affine_in_t(
            x0 in proptest::collection::vec(-10.0f64..10.0, 3),
            x1 in proptest::collection::vec(-10.0f64..10.0, 3),
            a in 0.0f64..=1.0, b in 0.0f64..=1.0,
        ) {
            let mid = interpolate(&x0, &x1, tp((a + b) / 2.0)).unwrap();
            let xa = interpolate(&x0, &x1, tp(a)).unwrap();
            let xb = interpolate(&x0, &x1, tp(b)).unwrap();
            for i in 0..3 {
                prop_assert!((mid[i] - (xa[i] + xb[i]) / 2.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn generative_and_classical_corruptions_agree(
            x1 in proptest::collection::vec(-5.0f64..5.0, 4),
            x0 in proptest::collection::vec(-5.0f64..5.0, 4),
            sigma in 0.0f64..100.0,
        ) {
            let s = NoiseLevel::new(sigma).unwrap();
            let xt = corrupt(&x1, &x0, sigma_to_t(s)).unwrap();
            let xs = corrupt_classical(&x1, &x0, s).unwrap();
            for i in 0..4 {
                let lhs = xt[i] * (1.0 + sigma);
                prop_assert!((lhs - xs[i]).abs() <= 1e-11 * (1.0 + xs[i].abs() + sigma * x0[i].abs()));
            }
        }
    }
}
