//! A small time-conditioned MLP with exact first-order derivatives.
//!
//! The network maps `[x, emb(t)]` through `tanh`/`gelu`/`silu` hidden layers
//! to a linear output of the data dimension. Derivatives are hand-written for
//! this fixed topology:
//!
//! * forward-mode tangents give `J_x N u`;
//! * reverse mode through the primal pass gives weight gradients and `J_x^T w`;
//! * reverse mode through the tangent pass gives weight gradients of
//!   `g^T (J_x N u)`, which the spectral-norm penalty needs.

mod checkpoint;
mod param;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use param::{ParamClass, ParametrizedDenoiser};

use std::sync::OnceLock;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FmError, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Tanh approximation of GELU.
    Gelu,
    Silu,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl Activation {
    /// `(phi(z), phi'(z), phi''(z))`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let y = z.tanh();
                let d1 = 1.0 - y * y;
                (y, d1, -2.0 * y * d1)
            }
            Activation::Gelu => {
                let u = GELU_K * (z + GELU_C * z * z * z);
                let du = GELU_K * (1.0 + 3.0 * GELU_C * z * z);
                let ddu = GELU_K * 6.0 * GELU_C * z;
                let th = u.tanh();
                let sech2 = 1.0 - th * th;
                let y = 0.5 * z * (1.0 + th);
                let d1 = 0.5 * (1.0 + th) + 0.5 * z * sech2 * du;
                let d2 = sech2 * (du + 0.5 * z * (ddu - 2.0 * th * du * du));
                (y, d1, d2)
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                let y = z * s;
                let d1 = s * (1.0 + z * (1.0 - s));
                let d2 = s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
                (y, d1, d2)
            }
        }
    }
}

/// Fourier features of `t`: optionally `t` itself, then `sin(2 pi f t)`,
/// `cos(2 pi f t)` for each frequency `f`, interleaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub frequencies: Vec<f64>,
    pub includes_raw_t: bool,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self {
            frequencies: (0..8).map(|k| (1u32 << k) as f64).collect(),
            includes_raw_t: true,
        }
    }
}

impl TimeEmbedding {
    pub fn none() -> Self {
        Self {
            frequencies: Vec::new(),
            includes_raw_t: false,
        }
    }

    pub fn width(&self) -> usize {
        usize::from(self.includes_raw_t) + 2 * self.frequencies.len()
    }

    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        let mut k = 0;
        if self.includes_raw_t {
            out[0] = t;
            k = 1;
        }
        for f in &self.frequencies {
            let arg = 2.0 * std::f64::consts::PI * f * t;
            out[k] = arg.sin();
            out[k + 1] = arg.cos();
            k += 2;
        }
    }
}

/// Architecture of a [`NetModel`], without weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub time_embed: TimeEmbedding,
}

impl NetSpec {
    pub fn new(data_dim: usize, hidden: Vec<usize>, activation: Activation) -> Self {
        Self {
            data_dim,
            hidden,
            activation,
            time_embed: TimeEmbedding::default(),
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.data_dim + self.time_embed.width()];
        dims.extend(&self.hidden);
        dims.push(self.data_dim);
        dims
    }
}

#[derive(Debug, Clone)]
pub struct NetModel {
    layer_dims: Vec<usize>,
    weights: Vec<f64>,
    activation: Activation,
    time_embed: TimeEmbedding,
    seed: u64,
    /// Whether every weight is finite, computed on first use after a change.
    weights_finite: OnceLock<bool>,
}

impl PartialEq for NetModel {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
            && self.weights == other.weights
            && self.activation == other.activation
            && self.time_embed == other.time_embed
            && self.seed == other.seed
    }
}

pub fn weight_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl NetModel {
    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        let layer_dims = spec.layer_dims();
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(FmError::InvalidArgument("layer widths must be positive".into()));
        }
        let mut rng = seeded(seed);
        let mut weights = Vec::with_capacity(weight_count(&layer_dims));
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                weights.push(rng.random_range(-bound..=bound));
            }
            weights.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            layer_dims,
            weights,
            activation: spec.activation,
            time_embed: spec.time_embed.clone(),
            seed,
            weights_finite: OnceLock::new(),
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<f64>,
        activation: Activation,
        time_embed: TimeEmbedding,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(FmError::InvalidArgument(
                "need at least an input and an output layer of positive width".into(),
            ));
        }
        let out = *layer_dims.last().unwrap();
        check_dim(out + time_embed.width(), layer_dims[0])?;
        check_dim(weight_count(&layer_dims), weights.len())?;
        Ok(Self {
            layer_dims,
            weights,
            activation,
            time_embed,
            seed,
            weights_finite: OnceLock::new(),
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn data_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn time_embed(&self) -> &TimeEmbedding {
        &self.time_embed
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.weights_finite = OnceLock::new();
        &mut self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_dim(self.weights.len(), weights.len())?;
        self.weights = weights;
        self.weights_finite = OnceLock::new();
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    fn check_weights(&self) -> Result<()> {
        if *self.weights_finite.get_or_init(|| self.weights.iter().all(|w| w.is_finite())) {
            return Ok(());
        }
        let i = self.weights.iter().position(|w| !w.is_finite()).unwrap_or(0);
        Err(FmError::NonFinite(format!("network weight {i}")))
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.layer_dims[..=l]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// `(W, b)` of layer `l`, `W` being `fan_out x fan_in`.
    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fi, fo) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let off = self.layer_offset(l);
        let w = ArrayView2::from_shape((fo, fi), &self.weights[off..off + fi * fo]).unwrap();
        let b = ArrayView1::from(&self.weights[off + fi * fo..off + (fi + 1) * fo]);
        (w, b)
    }

    fn build_inputs(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        let d = self.data_dim();
        check_dim(d, xs.ncols())?;
        check_dim(xs.nrows(), ts.len())?;
        let width = self.layer_dims[0];
        let mut input = Array2::<f64>::zeros((xs.nrows(), width));
        input.slice_mut(s![.., ..d]).assign(&xs);
        for (mut row, &t) in input.rows_mut().into_iter().zip(ts) {
            let emb = row.as_slice_mut().unwrap();
            self.time_embed.embed_into(t, &mut emb[d..]);
        }
        Ok(input)
    }

    /// Forward pass over a batch (`B x d`), recording what backprop needs.
    /// With `tangent` (`B x d`), also propagates `J_x N u` row by row.
    pub fn tape(
        &self,
        xs: ArrayView2<'_, f64>,
        ts: &[f64],
        tangent: Option<ArrayView2<'_, f64>>,
    ) -> Result<Tape> {
        self.check_weights()?;
        let d = self.data_dim();
        let input = self.build_inputs(xs, ts)?;
        let mut tangent_in = None;
        if let Some(u) = tangent {
            check_dim(d, u.ncols())?;
            check_dim(xs.nrows(), u.nrows())?;
            let mut ti = Array2::<f64>::zeros(input.raw_dim());
            ti.slice_mut(s![.., ..d]).assign(&u);
            tangent_in = Some(ti);
        }

        let n_layers = self.num_layers();
        let mut acts = Vec::with_capacity(n_layers);
        let mut tacts = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut tpre = Vec::with_capacity(n_layers - 1);
        let mut a = input;
        let mut ta = tangent_in;
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w.t());
            z += &b;
            let tz = ta.as_ref().map(|ta| ta.dot(&w.t()));
            acts.push(a);
            tacts.push(ta);
            if l + 1 == n_layers {
                return Ok(Tape {
                    acts,
                    tacts,
                    pre,
                    tpre,
                    output: z,
                    toutput: tz,
                });
            }
            let mut next = z.clone();
            let mut tnext = tz.clone();
            match tnext.as_mut() {
                Some(tn) => ndarray::Zip::from(&mut next).and(tn).and(&z).for_each(|y, ty, &zz| {
                    let (f, d1, _) = self.activation.eval(zz);
                    *y = f;
                    *ty *= d1;
                }),
                None => next.mapv_inplace(|zz| self.activation.eval(zz).0),
            }
            pre.push(z);
            tpre.push(tz);
            a = next;
            ta = tnext;
        }
        unreachable!("network has at least one layer")
    }

    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        Ok(self.tape(xs, ts, None)?.output)
    }

    /// `N(x, t)`, by matrix-vector products.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_weights()?;
        let d = self.data_dim();
        check_dim(d, x.len())?;
        let mut a = Array1::<f64>::zeros(self.layer_dims[0]);
        let input = a.as_slice_mut().unwrap();
        input[..d].copy_from_slice(x);
        self.time_embed.embed_into(t, &mut input[d..]);
        let n_layers = self.num_layers();
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = w.dot(&a);
            z += &b;
            if l + 1 < n_layers {
                z.mapv_inplace(|v| self.activation.eval(v).0);
            }
            a = z;
        }
        Ok(a.into_raw_vec_and_offset().0)
    }

    /// `J_x N(x, t) u`, exact.
    pub fn jvp(&self, x: &[f64], t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let tape = self.tape(row_view(x)?, &[t], Some(row_view(u)?))?;
        Ok(tape.toutput.unwrap().into_raw_vec_and_offset().0)
    }

    /// `J_x N(x, t)^T w`, exact.
    pub fn vjp(&self, x: &[f64], t: f64, w: &[f64]) -> Result<Vec<f64>> {
        let tape = self.tape(row_view(x)?, &[t], None)?;
        let (_, input_grad) = tape.backward(self, Some(row_view(w)?), None)?;
        Ok(input_grad.row(0).to_vec())
    }
}

fn row_view(x: &[f64]) -> Result<ArrayView2<'_, f64>> {
    ArrayView2::from_shape((1, x.len()), x).map_err(|e| FmError::InvalidArgument(e.to_string()))
}

/// Recorded forward (and optional tangent) pass of a batch.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input of each layer.
    acts: Vec<Array2<f64>>,
    tacts: Vec<Option<Array2<f64>>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    tpre: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
    toutput: Option<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn tangent_output(&self) -> Option<&Array2<f64>> {
        self.toutput.as_ref()
    }

    /// Gradient of `sum_b g_out[b] . y[b] + g_tan[b] . ydot[b]` with respect to
    /// the flat weight vector, plus the gradient of the primal term with
    /// respect to the data inputs (`B x d`).
    pub fn backward(
        &self,
        net: &NetModel,
        g_out: Option<ArrayView2<'_, f64>>,
        g_tan: Option<ArrayView2<'_, f64>>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let batch = self.output.nrows();
        let d = net.data_dim();
        if g_tan.is_some() && self.toutput.is_none() {
            return Err(FmError::InvalidArgument(
                "tangent adjoint given but the tape has no tangent pass".into(),
            ));
        }
        let mut zbar = match g_out {
            Some(g) => {
                check_dim(d, g.ncols())?;
                check_dim(batch, g.nrows())?;
                g.to_owned()
            }
            None => Array2::zeros((batch, d)),
        };
        let mut tzbar = match g_tan {
            Some(g) => {
                check_dim(d, g.ncols())?;
                check_dim(batch, g.nrows())?;
                Some(g.to_owned())
            }
            None => None,
        };

        let mut grad = vec![0.0; net.weights.len()];
        let n_layers = net.num_layers();
        let mut input_grad = None;
        for l in (0..n_layers).rev() {
            let (w, _) = net.layer(l);
            let (fi, fo) = (net.layer_dims[l], net.layer_dims[l + 1]);
            let off = net.layer_offset(l);
            {
                let mut gw = ndarray::ArrayViewMut2::from_shape(
                    (fo, fi),
                    &mut grad[off..off + fi * fo],
                )
                .unwrap();
                gw += &zbar.t().dot(&self.acts[l]);
                if let (Some(tz), Some(ta)) = (tzbar.as_ref(), self.tacts[l].as_ref()) {
                    gw += &tz.t().dot(ta);
                }
            }
            let gb: Array1<f64> = zbar.sum_axis(Axis(0));
            grad[off + fi * fo..off + (fi + 1) * fo]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(g, v)| *g += v);

            let abar = zbar.dot(&w);
            let tabar = tzbar.as_ref().map(|tz| tz.dot(&w));
            if l == 0 {
                input_grad = Some(abar.slice(s![.., ..d]).to_owned());
                break;
            }
            let z = &self.pre[l - 1];
            let mut new_zbar = abar;
            match (tabar, self.tpre[l - 1].as_ref()) {
                (Some(mut tab), Some(tz)) => {
                    ndarray::Zip::from(&mut new_zbar)
                        .and(&mut tab)
                        .and(z)
                        .and(tz)
                        .for_each(|zb, tb, &zz, &tzz| {
                            let (_, d1, d2) = net.activation.eval(zz);
                            *zb = d1 * *zb + d2 * tzz * *tb;
                            *tb *= d1;
                        });
                    tzbar = Some(tab);
                }
                _ => {
                    ndarray::Zip::from(&mut new_zbar)
                        .and(z)
                        .for_each(|zb, &zz| *zb *= net.activation.eval(zz).1);
                    tzbar = None;
                }
            }
            zbar = new_zbar;
        }
        Ok((grad, input_grad.expect("layer 0 visited")))
    }
}
