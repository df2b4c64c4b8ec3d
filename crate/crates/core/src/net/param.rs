use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{row_view, NetModel};
use crate::error::{check_dim, FmError, Result};
use crate::field::{Denoiser, VelocityField};

/// How a denoiser wraps its network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamClass {
    /// `D(x, t) = N(x, t)`.
    #[serde(rename = "nn")]
    Direct,
    /// `D(x, t) = x + (1 - t) N(x, t)`; identity at `t = 1` by construction.
    #[serde(rename = "identity-plus-nn")]
    IdentityPlus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametrizedDenoiser {
    pub net: NetModel,
    pub class: ParamClass,
}

impl ParametrizedDenoiser {
    pub fn new(net: NetModel, class: ParamClass) -> Self {
        Self { net, class }
    }

    pub fn dim(&self) -> usize {
        self.net.data_dim()
    }

    pub fn apply(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        if self.class == ParamClass::IdentityPlus && t == 1.0 {
            return Ok(x.to_vec());
        }
        let n = self.net.forward(x, t)?;
        Ok(match self.class {
            ParamClass::Direct => n,
            ParamClass::IdentityPlus => {
                let s = 1.0 - t;
                x.iter().zip(&n).map(|(a, b)| a + s * b).collect()
            }
        })
    }

    pub fn apply_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        let mut out = self.net.forward_batch(xs, ts)?;
        if self.class == ParamClass::IdentityPlus {
            for ((mut row, x), &t) in out.rows_mut().into_iter().zip(xs.rows()).zip(ts) {
                let s = 1.0 - t;
                row.zip_mut_with(&x, |n, &xv| *n = if s == 0.0 { xv } else { xv + s * *n });
            }
        }
        Ok(out)
    }

    /// `J_x D(x, t) u`.
    pub fn jvp_x(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let jn = self.net.jvp(x, t, u)?;
        Ok(match self.class {
            ParamClass::Direct => jn,
            ParamClass::IdentityPlus => {
                let s = 1.0 - t;
                u.iter().zip(&jn).map(|(a, b)| a + s * b).collect()
            }
        })
    }

    /// `J_x D(x, t)^T w`.
    pub fn vjp_x(&self, x: &[f64], t: f64, w: &[f64]) -> Result<Vec<f64>> {
        let jn = self.net.vjp(x, t, w)?;
        Ok(match self.class {
            ParamClass::Direct => jn,
            ParamClass::IdentityPlus => {
                let s = 1.0 - t;
                w.iter().zip(&jn).map(|(a, b)| a + s * b).collect()
            }
        })
    }

    /// Loss `(1/B) sum_b w_b |D(x_t[b], t_b) - x1[b]|^2` and its gradient with
    /// respect to the network weights.
    pub fn grad_weights(
        &self,
        xt: ArrayView2<'_, f64>,
        x1: ArrayView2<'_, f64>,
        ts: &[f64],
        loss_weights: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let batch = xt.nrows();
        if batch == 0 {
            return Err(FmError::Empty("batch"));
        }
        check_dim(batch, x1.nrows())?;
        check_dim(batch, ts.len())?;
        check_dim(batch, loss_weights.len())?;
        check_dim(self.dim(), x1.ncols())?;
        let tape = self.net.tape(xt, ts, None)?;
        let n_out = tape.output();
        let scale = 1.0 / batch as f64;
        let mut g = Array2::<f64>::zeros(n_out.raw_dim());
        let mut loss = 0.0;
        for b in 0..batch {
            let t = ts[b];
            let s = match self.class {
                ParamClass::Direct => 1.0,
                ParamClass::IdentityPlus => 1.0 - t,
            };
            let mut term = 0.0;
            for j in 0..self.dim() {
                let d = match self.class {
                    ParamClass::Direct => n_out[[b, j]],
                    ParamClass::IdentityPlus => xt[[b, j]] + s * n_out[[b, j]],
                };
                let r = d - x1[[b, j]];
                term += r * r;
                g[[b, j]] = 2.0 * loss_weights[b] * scale * s * r;
            }
            let term = loss_weights[b] * term;
            if !term.is_finite() {
                return Err(FmError::NonFiniteLoss { index: b });
            }
            loss += term * scale;
        }
        let (grad, _) = tape.backward(&self.net, Some(g.view()), None)?;
        Ok((loss, grad))
    }

    /// Weight gradient of `g . (J_x v(x, t) u)` for the induced velocity `v`,
    /// with `u` and `g` held fixed.
    pub fn velocity_jvp_weight_grad(
        &self,
        x: &[f64],
        t: f64,
        u: &[f64],
        g: &[f64],
    ) -> Result<Vec<f64>> {
        velocity_time_check(t)?;
        let tape = self.net.tape(row_view(x)?, &[t], Some(row_view(u)?))?;
        let (mut grad, _) = tape.backward(&self.net, None, Some(row_view(g)?))?;
        if self.class == ParamClass::Direct {
            let s = 1.0 / (1.0 - t);
            grad.iter_mut().for_each(|v| *v *= s);
        }
        Ok(grad)
    }
}

fn velocity_time_check(t: f64) -> Result<()> {
    if t >= 1.0 {
        return Err(FmError::SingularTime {
            t,
            what: "velocity of a denoiser divides by 1 - t",
        });
    }
    Ok(())
}

impl Denoiser for ParametrizedDenoiser {
    fn dim(&self) -> usize {
        self.net.data_dim()
    }

    fn denoise(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.apply(x, t)
    }

    fn denoise_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        self.jvp_x(x, t, u)
    }

    fn denoise_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.vjp_x(x, t, w))
    }
}

/// The induced velocity `(D - x) / (1 - t)`, simplified per class so that
/// `IdentityPlus` returns the network output without cancellation.
impl VelocityField for ParametrizedDenoiser {
    fn dim(&self) -> usize {
        self.net.data_dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        velocity_time_check(t)?;
        check_dim(self.dim(), x.len())?;
        let n = self.net.forward(x, t)?;
        Ok(match self.class {
            ParamClass::IdentityPlus => n,
            ParamClass::Direct => {
                let s = 1.0 - t;
                n.iter().zip(x).map(|(a, b)| (a - b) / s).collect()
            }
        })
    }

    fn velocity_jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        velocity_time_check(t)?;
        let jn = self.net.jvp(x, t, u)?;
        Ok(match self.class {
            ParamClass::IdentityPlus => jn,
            ParamClass::Direct => {
                let s = 1.0 - t;
                jn.iter().zip(u).map(|(a, b)| (a - b) / s).collect()
            }
        })
    }

    fn velocity_vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Option<Result<Vec<f64>>> {
        if let Err(e) = velocity_time_check(t) {
            return Some(Err(e));
        }
        let jn = match self.net.vjp(x, t, w) {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        Some(Ok(match self.class {
            ParamClass::IdentityPlus => jn,
            ParamClass::Direct => {
                let s = 1.0 - t;
                jn.iter().zip(w).map(|(a, b)| (a - b) / s).collect()
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetSpec, TimeEmbedding};
    use crate::rng::{normal_vec, seeded};
    use rand::Rng;

    fn model(class: ParamClass, act: Activation, hidden: Vec<usize>, seed: u64) -> ParametrizedDenoiser {
        let mut spec = NetSpec::new(3, hidden, act);
        spec.time_embed = TimeEmbedding {
            frequencies: vec![1.0, 2.0, 4.0],
            includes_raw_t: true,
        };
        ParametrizedDenoiser::new(NetModel::init(&spec, seed).unwrap(), class)
    }

    fn batch(seed: u64, b: usize, d: usize) -> (Array2<f64>, Array2<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = seeded(seed);
        let xt = Array2::from_shape_vec((b, d), normal_vec(&mut rng, b * d)).unwrap();
        let x1 = Array2::from_shape_vec((b, d), normal_vec(&mut rng, b * d)).unwrap();
        let ts: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
        let ws: Vec<f64> = ts.iter().map(|t| 1.0 / (1.0 - t).max(0.05)).collect();
        (xt, x1, ts, ws)
    }

    #[test]
    fn identity_plus_is_identity_at_one() {
        let mut rng = seeded(1);
        for seed in 0..100 {
            let pd = model(ParamClass::IdentityPlus, Activation::Tanh, vec![8], seed);
            let x = normal_vec(&mut rng, 3);
            assert_eq!(pd.apply(&x, 1.0).unwrap(), x);
        }
    }

    #[test]
    fn zero_network_classes() {
        for class in [ParamClass::Direct, ParamClass::IdentityPlus] {
            let mut pd = model(class, Activation::Gelu, vec![4], 0);
            pd.net.weights_mut().iter_mut().for_each(|w| *w = 0.0);
            for t in [0.0, 0.5, 1.0] {
                let y = pd.apply(&[1.0, 2.0, 3.0], t).unwrap();
                match class {
                    ParamClass::Direct => assert_eq!(y, vec![0.0; 3]),
                    ParamClass::IdentityPlus => assert_eq!(y, vec![1.0, 2.0, 3.0]),
                }
            }
        }
    }

    #[test]
    fn zero_network_zero_target_has_zero_gradient() {
        let mut pd = model(ParamClass::Direct, Activation::Tanh, vec![5], 0);
        pd.net.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        let (xt, _, ts, ws) = batch(2, 4, 3);
        let zeros = Array2::zeros((4, 3));
        let (loss, grad) = pd.grad_weights(xt.view(), zeros.view(), &ts, &ws).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_is_invariant_to_duplicating_the_batch() {
        let pd = model(ParamClass::IdentityPlus, Activation::Silu, vec![6], 3);
        let (xt, x1, ts, ws) = batch(4, 5, 3);
        let (l1, g1) = pd.grad_weights(xt.view(), x1.view(), &ts, &ws).unwrap();
        let xt2 = ndarray::concatenate![ndarray::Axis(0), xt, xt];
        let x12 = ndarray::concatenate![ndarray::Axis(0), x1, x1];
        let ts2 = [ts.clone(), ts.clone()].concat();
        let ws2 = [ws.clone(), ws.clone()].concat();
        let (l2, g2) = pd.grad_weights(xt2.view(), x12.view(), &ts2, &ws2).unwrap();
        assert!((l1 - l2).abs() <= 1e-12 * l1.abs());
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn non_finite_loss_names_the_sample() {
        let pd = model(ParamClass::Direct, Activation::Tanh, vec![4], 0);
        let (xt, mut x1, ts, ws) = batch(5, 3, 3);
        x1[[2, 1]] = f64::INFINITY;
        match pd.grad_weights(xt.view(), x1.view(), &ts, &ws) {
            Err(FmError::NonFiniteLoss { index }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(pd.grad_weights(empty.view(), empty.view(), &[], &[]).is_err());
    }

    #[test]
    fn jvp_linearity_and_identity() {
        let mut rng = seeded(8);
        let pd = model(ParamClass::IdentityPlus, Activation::Gelu, vec![6, 6], 2);
        let x = normal_vec(&mut rng, 3);
        let u = normal_vec(&mut rng, 3);
        let w = normal_vec(&mut rng, 3);
        let (a, b) = (0.7, -1.3);
        let comb: Vec<f64> = u.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let lhs = pd.jvp_x(&x, 0.3, &comb).unwrap();
        let ju = pd.jvp_x(&x, 0.3, &u).unwrap();
        let jw = pd.jvp_x(&x, 0.3, &w).unwrap();
        for j in 0..3 {
            assert!((lhs[j] - (a * ju[j] + b * jw[j])).abs() <= 1e-10);
        }
        // At t = 1 the identity-plus class is the identity map.
        assert_eq!(pd.jvp_x(&x, 1.0, &u).unwrap(), u);
    }

    #[test]
    fn velocity_view_matches_duality() {
        let mut rng = seeded(12);
        for class in [ParamClass::Direct, ParamClass::IdentityPlus] {
            let pd = model(class, Activation::Tanh, vec![6], 5);
            let x = normal_vec(&mut rng, 3);
            let t = 0.6;
            let d = pd.apply(&x, t).unwrap();
            let v = pd.velocity(&x, t).unwrap();
            for j in 0..3 {
                assert!((x[j] + (1.0 - t) * v[j] - d[j]).abs() < 1e-12);
            }
            assert!(pd.velocity(&x, 1.0).is_err());
        }
    }
}
