//! Power iteration on `J^T J` for the Jacobian of a velocity field.

use crate::data::norm;
use crate::error::{check_dim, FmError, Result};
use crate::field::VelocityField;
use crate::rng::{normal_vec, seeded};

pub const DEFAULT_POWER_ITERS: usize = 10;

/// Top singular triple estimate `J right ~ sigma left`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    pub sigma: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

enum Transpose {
    Vjp,
    /// Row-major `J`, materialized column by column through JVPs.
    Dense(Vec<f64>),
}

fn apply_transpose<V: VelocityField + ?Sized>(
    v: &V,
    x: &[f64],
    t: f64,
    mode: &Transpose,
    w: &[f64],
) -> Result<Vec<f64>> {
    match mode {
        Transpose::Vjp => v.velocity_vjp(x, t, w).expect("vjp availability was probed"),
        Transpose::Dense(j) => {
            let d = w.len();
            let mut z = vec![0.0; d];
            for (r, wr) in w.iter().enumerate() {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc += j[r * d + c] * wr;
                }
            }
            Ok(z)
        }
    }
}

/// Power iteration from a seeded unit-norm Gaussian start vector. Each
/// iteration applies `J` then `J^T`; the returned `sigma` is `|J u|` for the
/// final unit vector `u`, so it never overestimates the spectral norm.
pub fn power_iteration<V: VelocityField + ?Sized>(
    v: &V,
    x: &[f64],
    t: f64,
    iters: usize,
    seed: u64,
) -> Result<PowerEstimate> {
    if iters == 0 {
        return Err(FmError::InvalidArgument("power iteration needs iters >= 1".into()));
    }
    let d = v.dim();
    check_dim(d, x.len())?;
    let mut rng = seeded(seed);
    let mut u = normal_vec(&mut rng, d);
    let nu = norm(&u);
    u.iter_mut().for_each(|a| *a /= nu);

    let mode = match v.velocity_vjp(x, t, &u) {
        Some(r) => {
            r?;
            Transpose::Vjp
        }
        None => {
            let mut j = vec![0.0; d * d];
            let mut e = vec![0.0; d];
            for c in 0..d {
                e[c] = 1.0;
                let col = v.velocity_jvp(x, t, &e)?;
                for r in 0..d {
                    j[r * d + c] = col[r];
                }
                e[c] = 0.0;
            }
            Transpose::Dense(j)
        }
    };

    let zero = || PowerEstimate {
        sigma: 0.0,
        right: vec![0.0; d],
        left: vec![0.0; d],
    };
    for _ in 0..iters {
        let w = v.velocity_jvp(x, t, &u)?;
        if norm(&w) == 0.0 {
            return Ok(zero());
        }
        let z = apply_transpose(v, x, t, &mode, &w)?;
        let nz = norm(&z);
        if nz == 0.0 {
            return Ok(zero());
        }
        if !nz.is_finite() {
            return Err(FmError::NonFinite("power iteration".into()));
        }
        u = z.into_iter().map(|a| a / nz).collect();
    }
    let w = v.velocity_jvp(x, t, &u)?;
    let sigma = norm(&w);
    if sigma == 0.0 {
        return Ok(zero());
    }
    let left = w.into_iter().map(|a| a / sigma).collect();
    Ok(PowerEstimate {
        sigma,
        right: u,
        left,
    })
}

/// `|grad_x v(x, t)|_2` estimated with `iters` power iterations.
pub fn jacobian_spectral_norm<V: VelocityField + ?Sized>(
    v: &V,
    x: &[f64],
    t: f64,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    power_iteration(v, x, t, iters, seed).map(|e| e.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::ClosedFormVelocity;
    use crate::field::{FnVelocity, LinearVelocity};
    use crate::Dataset;
    use proptest::prelude::*;

    #[test]
    fn diagonal_map() {
        let v = LinearVelocity::diagonal(&[3.0, 1.0]);
        let s = jacobian_spectral_norm(&v, &[0.3, -0.2], 0.5, 10, 0).unwrap();
        assert!((s - 3.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn constant_field_is_zero() {
        let v = FnVelocity::new(3, |_x: &[f64], _t| vec![1.0, 2.0, 3.0]);
        let s = jacobian_spectral_norm(&v, &[0.1, 0.2, 0.3], 0.4, 10, 1).unwrap();
        assert_eq!(s, 0.0);
        let z = LinearVelocity::diagonal(&[0.0, 0.0]);
        assert_eq!(jacobian_spectral_norm(&z, &[1.0, 1.0], 0.1, 5, 1).unwrap(), 0.0);
    }

    #[test]
    fn zero_iterations_rejected() {
        let v = LinearVelocity::diagonal(&[1.0]);
        assert!(jacobian_spectral_norm(&v, &[0.0], 0.0, 0, 0).is_err());
    }

    #[test]
    fn single_point_closed_form_field() {
        let ds = Dataset::from_rows("one", vec![vec![0.4, -1.2]], None).unwrap();
        let v = ClosedFormVelocity::gaussian(ds);
        for k in 1..=9 {
            let t = k as f64 / 10.0;
            let s = jacobian_spectral_norm(&v, &[0.7, 0.1], t, 10, 3).unwrap();
            assert!((s - 1.0 / (1.0 - t)).abs() < 1e-4, "t={t} s={s}");
        }
    }

    #[test]
    fn dense_fallback_without_vjp() {
        let v = FnVelocity::new(2, |x: &[f64], _t| vec![2.0 * x[0] + x[1], x[1]]);
        let s = jacobian_spectral_norm(&v, &[0.5, 0.5], 0.0, 100, 9).unwrap();
        // Singular values of [[2, 1], [0, 1]]: sqrt(3 +- sqrt(5)).
        let expected = (3.0 + 5f64.sqrt()).sqrt();
        assert!((s - expected).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn estimate_is_monotone_in_iterations(
            entries in proptest::collection::vec(-2.0f64..2.0, 16),
            seed in 0u64..1000,
        ) {
            let v = LinearVelocity::new(4, entries).unwrap();
            let x = [0.0; 4];
            let mut prev = 0.0;
            for k in 1..=15 {
                let s = jacobian_spectral_norm(&v, &x, 0.0, k, seed).unwrap();
                prop_assert!(s >= prev - 1e-8, "k={} {} < {}", k, s, prev);
                prev = s;
            }
        }
    }
}
