//! Denoisers, velocity fields and the duality between them:
//! `D(x, t) = x + (1 - t) v(x, t)` and `v(x, t) = (D(x, t) - x) / (1 - t)`.

use std::sync::Arc;

use crate::data::norm;
use crate::error::{check_dim, FmError, Result};

/// A time-indexed map `R^d x [0, 1] -> R^d` estimating the clean sample.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    /// `J_x D(x, t) u`. Defaults to a central difference.
    fn denoise_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        central_difference(|y| self.denoise(y, t), x, u)
    }

    /// `J_x D(x, t)^T w`, when the implementation has one.
    fn denoise_vjp(&self, _x: &[f64], _t: f64, _w: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Whether an injected perturbation is active at `t`.
    fn perturbation_active(&self, _t: f64) -> bool {
        false
    }
}

/// The right-hand side of the generative ODE `dx/dt = v(x, t)`.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    /// `J_x v(x, t) u`. Defaults to a central difference.
    fn velocity_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        central_difference(|y| self.velocity(y, t), x, u)
    }

    /// `J_x v(x, t)^T w`, when the implementation has one.
    fn velocity_vjp(&self, _x: &[f64], _t: f64, _w: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    fn perturbation_active(&self, _t: f64) -> bool {
        false
    }
}

/// Step used by default finite-difference Jacobians: `1e-5 (1 + |x|)`.
pub fn fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + norm(x))
}

/// `(f(x + h u) - f(x - h u)) / 2h` with `h = fd_step(x)`.
pub fn central_difference<F>(f: F, x: &[f64], u: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    central_difference_with_step(f, x, u, fd_step(x))
}

pub fn central_difference_with_step<F>(f: F, x: &[f64], u: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    check_dim(x.len(), u.len())?;
    let plus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - h * b).collect();
    let fp = f(&plus)?;
    let fm = f(&minus)?;
    Ok(fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

macro_rules! forward_denoiser {
    ($($ty:ty),*) => {$(
        impl<T: Denoiser + ?Sized> Denoiser for $ty {
            fn dim(&self) -> usize { (**self).dim() }
            fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> { (**self).denoise(x, t) }
            fn denoise_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
                (**self).denoise_jvp(x, t, u)
            }
            fn denoise_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
                (**self).denoise_vjp(x, t, w)
            }
            fn perturbation_active(&self, t: f64) -> bool { (**self).perturbation_active(t) }
        }
    )*};
}

macro_rules! forward_velocity {
    ($($ty:ty),*) => {$(
        impl<T: VelocityField + ?Sized> VelocityField for $ty {
            fn dim(&self) -> usize { (**self).dim() }
            fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> { (**self).velocity(x, t) }
            fn velocity_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
                (**self).velocity_jvp(x, t, u)
            }
            fn velocity_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
                (**self).velocity_vjp(x, t, w)
            }
            fn perturbation_active(&self, t: f64) -> bool { (**self).perturbation_active(t) }
        }
    )*};
}

forward_denoiser!(&T, Box<T>, Arc<T>);
forward_velocity!(&T, Box<T>, Arc<T>);

/// The denoiser induced by a velocity field. At `t = 1` it is the identity.
#[derive(Debug, Clone)]
pub struct DenoiserFromVelocity<V>(pub V);

/// The velocity field induced by a denoiser. Undefined at `t = 1`.
#[derive(Debug, Clone)]
pub struct VelocityFromDenoiser<D>(pub D);

pub fn denoiser_from_velocity<V: VelocityField>(v: V) -> DenoiserFromVelocity<V> {
    DenoiserFromVelocity(v)
}

pub fn velocity_from_denoiser<D: Denoiser>(d: D) -> VelocityFromDenoiser<D> {
    VelocityFromDenoiser(d)
}

impl<V: VelocityField> DenoiserFromVelocity<V> {
    pub fn inner(&self) -> &V {
        &self.0
    }
}

impl<D: Denoiser> VelocityFromDenoiser<D> {
    pub fn inner(&self) -> &D {
        &self.0
    }
}

impl<V: VelocityField> Denoiser for DenoiserFromVelocity<V> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        if t == 1.0 {
            return Ok(x.to_vec());
        }
        let v = self.0.velocity(x, t)?;
        let s = 1.0 - t;
        Ok(x.iter().zip(&v).map(|(a, b)| a + s * b).collect())
    }

    fn denoise_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        if t == 1.0 {
            return Ok(u.to_vec());
        }
        let jv = self.0.velocity_jvp(x, t, u)?;
        let s = 1.0 - t;
        Ok(u.iter().zip(&jv).map(|(a, b)| a + s * b).collect())
    }

    fn denoise_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        if t == 1.0 {
            return Some(Ok(w.to_vec()));
        }
        let jv = self.0.velocity_vjp(x, t, w)?;
        let s = 1.0 - t;
        Some(jv.map(|jv| w.iter().zip(&jv).map(|(a, b)| a + s * b).collect()))
    }

    fn perturbation_active(&self, t: f64) -> bool {
        self.0.perturbation_active(t)
    }
}

fn singular(t: f64) -> Result<()> {
    if t >= 1.0 {
        return Err(FmError::SingularTime {
            t,
            what: "velocity of a denoiser divides by 1 - t",
        });
    }
    Ok(())
}

impl<D: Denoiser> VelocityField for VelocityFromDenoiser<D> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        singular(t)?;
        let d = self.0.denoise(x, t)?;
        let s = 1.0 - t;
        Ok(d.iter().zip(x).map(|(a, b)| (a - b) / s).collect())
    }

    fn velocity_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        singular(t)?;
        let jd = self.0.denoise_jvp(x, t, u)?;
        let s = 1.0 - t;
        Ok(jd.iter().zip(u).map(|(a, b)| (a - b) / s).collect())
    }

    fn velocity_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        if let Err(e) = singular(t) {
            return Some(Err(e));
        }
        let jd = self.0.denoise_vjp(x, t, w)?;
        let s = 1.0 - t;
        Some(jd.map(|jd| jd.iter().zip(w).map(|(a, b)| (a - b) / s).collect()))
    }

    fn perturbation_active(&self, t: f64) -> bool {
        self.0.perturbation_active(t)
    }
}

/// A denoiser backed by a closure; Jacobians by finite differences.
pub struct FnDenoiser<F> {
    dim: usize,
    f: F,
}

impl<F> FnDenoiser<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((self.f)(x, t))
    }
}

/// A velocity field backed by a closure; Jacobians by finite differences.
pub struct FnVelocity<F> {
    dim: usize,
    f: F,
}

impl<F> FnVelocity<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VelocityField for FnVelocity<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((self.f)(x, t))
    }
}

/// `D(x, t) = x`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityDenoiser {
    pub dim: usize,
}

impl Denoiser for IdentityDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(x.to_vec())
    }

    fn denoise_jvp(&self, _x: &[f64], _t: f64, u: &[f64]) -> Result<Vec<f64>> {
        Ok(u.to_vec())
    }

    fn denoise_vjp(&self, _x: &[f64], _t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(Ok(w.to_vec()))
    }
}

/// `v(x, t) = A x + b`, time independent, with exact Jacobian products.
#[derive(Debug, Clone)]
pub struct LinearVelocity {
    dim: usize,
    /// Row-major `dim x dim`.
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl LinearVelocity {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        check_dim(dim * dim, matrix.len())?;
        Ok(Self {
            dim,
            matrix,
            offset: vec![0.0; dim],
        })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut matrix = vec![0.0; d * d];
        for (i, v) in diag.iter().enumerate() {
            matrix[i * d + i] = *v;
        }
        Self {
            dim: d,
            matrix,
            offset: vec![0.0; d],
        }
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self> {
        check_dim(self.dim, offset.len())?;
        self.offset = offset;
        Ok(self)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (row, wi) in self.matrix.chunks_exact(self.dim).zip(w) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * wi;
            }
        }
        out
    }
}

impl VelocityField for LinearVelocity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut y = self.apply(x);
        y.iter_mut().zip(&self.offset).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    fn velocity_jvp(&self, _x: &[f64], _t: f64, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, u.len())?;
        Ok(self.apply(u))
    }

    fn velocity_vjp(&self, _x: &[f64], _t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        if w.len() != self.dim {
            return Some(Err(FmError::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            }));
        }
        Some(Ok(self.apply_transpose(w)))
    }
}
