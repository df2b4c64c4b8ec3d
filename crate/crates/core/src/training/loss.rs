use rand::Rng;

use crate::data::{sq_dist, Dataset};
use crate::error::{check_dim, FmError, Result};
use crate::field::Denoiser;
use crate::path::{interpolate, TimePoint};
use crate::rng::SourceKind;
use crate::training::weighting::WeightingScheme;

/// Triples `(x1, x0, t)` of a denoising loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub x1: Vec<Vec<f64>>,
    pub x0: Vec<Vec<f64>>,
    pub t: Vec<f64>,
}

impl LossBatch {
    /// `x1` uniform over the dataset, `x0` from `source`, `t ~ U[lo, hi]`.
    pub fn draw(
        ds: &Dataset,
        source: SourceKind,
        (lo, hi): (f64, f64),
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if ds.is_empty() {
            return Err(FmError::Empty("dataset"));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(FmError::InvalidArgument(format!("bad time range [{lo}, {hi}]")));
        }
        let mut batch = LossBatch {
            x1: Vec::with_capacity(n),
            x0: Vec::with_capacity(n),
            t: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let i = rng.random_range(0..ds.len());
            batch.x1.push(ds.row(i).to_vec());
            batch.x0.push(source.draw(rng, ds.dim()));
            batch.t.push(if lo < hi { rng.random_range(lo..=hi) } else { lo });
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Per-sample terms `w(t_b) |D(x_t[b], t_b) - x1[b]|^2`.
pub fn loss_terms<D: Denoiser + ?Sized>(
    d: &D,
    ws: &WeightingScheme,
    batch: &LossBatch,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(FmError::Empty("loss batch"));
    }
    check_dim(batch.len(), batch.x1.len())?;
    check_dim(batch.len(), batch.x0.len())?;
    let mut terms = Vec::with_capacity(batch.len());
    for (b, ((x1, x0), &t)) in batch.x1.iter().zip(&batch.x0).zip(&batch.t).enumerate() {
        let w = ws.weight(t);
        let term = if w == 0.0 {
            0.0
        } else {
            let xt = interpolate(x0, x1, TimePoint::new(t)?)?;
            w * sq_dist(&d.denoise(&xt, t)?, x1)
        };
        if !term.is_finite() {
            return Err(FmError::NonFiniteLoss { index: b });
        }
        terms.push(term);
    }
    Ok(terms)
}

/// `(1/B) sum_b w(t_b) |D(x_t[b], t_b) - x1[b]|^2`.
pub fn loss<D: Denoiser + ?Sized>(d: &D, ws: &WeightingScheme, batch: &LossBatch) -> Result<f64> {
    let terms = loss_terms(d, ws, batch)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}
