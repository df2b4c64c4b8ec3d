//! Time weightings of the denoising loss `E[w_t |D(x_t, t) - x1|^2]`.

use serde::{Deserialize, Serialize};

use crate::error::{FmError, Result};

/// Weight functions expressed for the generative time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightKind {
    /// `1 / (1 - t)^2`: plain flow matching rewritten for the denoiser.
    Fm,
    /// `1 / t^2` on `[1 / (1 + sigma_max), 1]`: uniform-sigma classical training.
    Classic { sigma_max: f64 },
    /// `1`.
    Den,
    /// `1 / (1 - t)`.
    Pow1,
    /// `1 / (1 - t)^3`.
    Pow3,
    /// `1 / (t_star - t)^2`.
    Mid { t_star: f64 },
    /// Piecewise-linear through `(t, w)` knots sorted by `t`.
    Custom { table: Vec<(f64, f64)> },
}

pub const DEFAULT_WEIGHT_CAP: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingScheme {
    pub kind: WeightKind,
    /// Closed interval outside of which the weight is zero.
    pub t_support: (f64, f64),
    /// Upper bound applied near singularities.
    pub w_cap: f64,
}

impl WeightingScheme {
    pub fn new(kind: WeightKind) -> Result<Self> {
        let t_support = match &kind {
            WeightKind::Classic { sigma_max } => {
                if !(sigma_max.is_finite() && *sigma_max > 0.0) {
                    return Err(FmError::InvalidArgument(format!(
                        "sigma_max must be positive, got {sigma_max}"
                    )));
                }
                (1.0 / (1.0 + sigma_max), 1.0)
            }
            WeightKind::Mid { t_star } => {
                if !(0.0..=1.0).contains(t_star) {
                    return Err(FmError::InvalidTime(*t_star));
                }
                (0.0, 1.0)
            }
            WeightKind::Custom { table } => {
                if table.is_empty() {
                    return Err(FmError::Empty("custom weight table"));
                }
                let sorted = table.windows(2).all(|w| w[0].0 < w[1].0);
                let valid = table
                    .iter()
                    .all(|(t, w)| (0.0..=1.0).contains(t) && w.is_finite() && *w >= 0.0);
                if !sorted || !valid {
                    return Err(FmError::InvalidArgument(
                        "custom table needs strictly increasing t in [0, 1] and finite w >= 0"
                            .into(),
                    ));
                }
                (table[0].0, table[table.len() - 1].0)
            }
            _ => (0.0, 1.0),
        };
        Ok(Self {
            kind,
            t_support,
            w_cap: DEFAULT_WEIGHT_CAP,
        })
    }

    pub fn fm() -> Self {
        Self::new(WeightKind::Fm).unwrap()
    }

    pub fn den() -> Self {
        Self::new(WeightKind::Den).unwrap()
    }

    pub fn pow1() -> Self {
        Self::new(WeightKind::Pow1).unwrap()
    }

    pub fn pow3() -> Self {
        Self::new(WeightKind::Pow3).unwrap()
    }

    pub fn classic(sigma_max: f64) -> Result<Self> {
        Self::new(WeightKind::Classic { sigma_max })
    }

    pub fn mid(t_star: f64) -> Result<Self> {
        Self::new(WeightKind::Mid { t_star })
    }

    pub fn with_cap(mut self, w_cap: f64) -> Result<Self> {
        if !(w_cap > 0.0) {
            return Err(FmError::InvalidArgument(format!("w_cap must be positive, got {w_cap}")));
        }
        self.w_cap = w_cap;
        Ok(self)
    }

    /// Restricts the support to its intersection with `[lo, hi]`.
    pub fn restricted(mut self, lo: f64, hi: f64) -> Self {
        self.t_support = (self.t_support.0.max(lo), self.t_support.1.min(hi));
        self
    }

    pub fn name(&self) -> String {
        match &self.kind {
            WeightKind::Fm => "fm".into(),
            WeightKind::Classic { sigma_max } => format!("classic-{sigma_max}"),
            WeightKind::Den => "den".into(),
            WeightKind::Pow1 => "pow1".into(),
            WeightKind::Pow3 => "pow3".into(),
            WeightKind::Mid { t_star } => format!("mid-{t_star}"),
            WeightKind::Custom { .. } => "custom".into(),
        }
    }

    pub fn in_support(&self, t: f64) -> bool {
        t >= self.t_support.0 && t <= self.t_support.1
    }

    pub fn weight(&self, t: f64) -> f64 {
        if !self.in_support(t) {
            return 0.0;
        }
        let raw = match &self.kind {
            WeightKind::Fm => 1.0 / ((1.0 - t) * (1.0 - t)),
            WeightKind::Classic { .. } => 1.0 / (t * t),
            WeightKind::Den => 1.0,
            WeightKind::Pow1 => 1.0 / (1.0 - t),
            WeightKind::Pow3 => 1.0 / ((1.0 - t) * (1.0 - t) * (1.0 - t)),
            WeightKind::Mid { t_star } => 1.0 / ((t_star - t) * (t_star - t)),
            WeightKind::Custom { table } => interpolate_table(table, t),
        };
        if raw.is_nan() {
            return self.w_cap;
        }
        raw.min(self.w_cap)
    }
}

fn interpolate_table(table: &[(f64, f64)], t: f64) -> f64 {
    let k = table.partition_point(|(tk, _)| *tk <= t);
    if k == 0 {
        return table[0].1;
    }
    if k == table.len() {
        return table[k - 1].1;
    }
    let (t0, w0) = table[k - 1];
    let (t1, w1) = table[k];
    w0 + (w1 - w0) * (t - t0) / (t1 - t0)
}
