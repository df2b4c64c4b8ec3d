//! JSON checkpoints: `{format: "fmdt-ckpt-1", layer_dims, activation,
//! time_embed, class, seed, weights, ema_weights}` with weight arrays stored
//! as base64 of little-endian `f64`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Activation, NetModel, ParamClass, ParametrizedDenoiser, TimeEmbedding};
use crate::error::{FmError, Result};

pub const CHECKPOINT_FORMAT: &str = "fmdt-ckpt-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub time_embed: TimeEmbedding,
    pub class: ParamClass,
    pub seed: u64,
    pub weights: String,
    pub ema_weights: Option<String>,
}

fn encode(weights: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(weights.len() * 8);
    for w in weights {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(s: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| FmError::Format(format!("checkpoint weights: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(FmError::Format("checkpoint weights are not whole f64s".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn new(model: &ParametrizedDenoiser, ema: Option<&NetModel>) -> Self {
        let net = &model.net;
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            layer_dims: net.layer_dims().to_vec(),
            activation: net.activation(),
            time_embed: net.time_embed().clone(),
            class: model.class,
            seed: net.seed(),
            weights: encode(net.weights()),
            ema_weights: ema.map(|e| encode(e.weights())),
        }
    }

    fn build(&self, weights: Vec<f64>) -> Result<ParametrizedDenoiser> {
        let net = NetModel::from_parts(
            self.layer_dims.clone(),
            weights,
            self.activation,
            self.time_embed.clone(),
            self.seed,
        )?;
        Ok(ParametrizedDenoiser::new(net, self.class))
    }

    fn check_format(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(FmError::Format(format!(
                "unknown checkpoint format {:?}",
                self.format
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ParametrizedDenoiser> {
        self.check_format()?;
        self.build(decode(&self.weights)?)
    }

    pub fn ema_model(&self) -> Result<Option<ParametrizedDenoiser>> {
        self.check_format()?;
        self.ema_weights
            .as_deref()
            .map(|s| self.build(decode(s)?))
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
