//! JSON model/experiment configuration.
//!
//! ```json
//! { "hidden_size": 768, "tau": 10000,
//!   "tubes": [ { "kernel": [8,8,8], "stride": [16,32,32], "offset": [0,0,0],
//!                "s2d_group": [2,1,1], "image_applicable": false } ],
//!   "encoder": { "layers": 12, "heads": 12, "mlp_size": 3072 },
//!   "heads": [ { "name": "k600", "classes": 600 } ] }
//! ```
//!
//! Every other field is optional and defaults to the values below.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EncoderConfig, PoolMode};
use crate::error::{Error, Result};
use crate::posemb::{EmbeddingParams, ExponentMode};
use crate::trainer::{SyntheticTask, TrainConfig};
use crate::tube_config::{Dims, TubeBank, TubeSpec, DEFAULT_TAU};

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_channels() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub layers: usize,
    pub heads: usize,
    pub mlp_size: usize,
    #[serde(default)]
    pub pool: PoolMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_below: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub name: String,
    pub classes: usize,
    /// Synthetic task trained through this head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<SyntheticTask>,
}

/// How positions enter the tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosEmbKind {
    /// Fixed sine/cosine embedding of tube centers.
    #[default]
    Fixed,
    /// The same embedding of each token's grid index within its tube, so
    /// strides and offsets are ignored.
    FixedIndex,
    /// Learned table indexed by token position.
    Learned,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub tubes: Vec<TubeSpec>,
    pub encoder: EncoderSection,
    pub heads: Vec<HeadSpec>,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub posemb: PosEmbKind,
    #[serde(default)]
    pub exponent_mode: ExponentMode,
    /// Base shape of a single shared kernel resampled to every tube.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolated_kernel: Option<Dims>,
    /// Video input size `[T, H, W]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dims: Option<Dims>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn bank(&self) -> TubeBank {
        TubeBank {
            tubes: self.tubes.clone(),
            hidden_size: self.hidden_size,
            tau: self.tau,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.encoder.layers,
            hidden: self.hidden_size,
            heads: self.encoder.heads,
            mlp_size: self.encoder.mlp_size,
            pool: self.encoder.pool,
            gate_layer: self.encoder.gate_layer,
            freeze_below: self.encoder.freeze_below,
        }
    }

    pub fn embedding_params(&self) -> EmbeddingParams {
        EmbeddingParams {
            d: self.hidden_size,
            tau: self.tau,
            mode: self.exponent_mode,
        }
    }

    pub fn head_specs(&self) -> Vec<(String, usize)> {
        self.heads
            .iter()
            .map(|h| (h.name.clone(), h.classes))
            .collect()
    }

    /// Structural checks that need no input size.
    pub fn validate(&self) -> Result<()> {
        self.bank().check()?;
        self.encoder_config().validate()?;
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channels must be positive".into()));
        }
        if matches!(self.posemb, PosEmbKind::Fixed | PosEmbKind::FixedIndex) {
            self.embedding_params().check()?;
        }
        if self.posemb == PosEmbKind::Learned && self.input_dims.is_none() {
            return Err(Error::InvalidConfig(
                "learned positions need input_dims".into(),
            ));
        }
        if self.heads.is_empty() {
            return Err(Error::InvalidConfig("at least one head is required".into()));
        }
        let mut names = HashSet::new();
        for h in &self.heads {
            if h.classes == 0 || !names.insert(h.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "bad or duplicate head {:?}",
                    h.name
                )));
            }
            if let Some(task) = &h.task {
                if task.classes != h.classes {
                    return Err(Error::InvalidConfig(format!(
                        "head {:?} has {} classes but its task has {}",
                        h.name, h.classes, task.classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short stable hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(canon.as_bytes())[..8])
    }
}
