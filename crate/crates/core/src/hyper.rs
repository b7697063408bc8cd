//! Model dimensions, loss weights and optimization constants.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every size and constant the model, pipeline and trainer depend on.
///
/// Defaults are the full-scale settings; desk-scale experiments shrink the
/// dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Word embedding size `d_e`.
    pub embed_dim: usize,
    /// Encoder/decoder hidden size `d`; each GRU direction gets `d/2`.
    pub hidden_dim: usize,
    /// Attention size `d'`.
    pub attn_dim: usize,
    /// Classifier query size `d_q`.
    pub query_dim: usize,
    /// Classifier feed-forward hidden size `d_z`.
    pub classifier_dim: usize,
    /// Number of sentiment classes `K`.
    pub num_classes: usize,
    /// Weight `λ` of the deep states in the residual mix.
    pub residual_mix: f64,
    /// Weights of the generation, source-view, summary-view and inconsistency losses.
    pub loss_weights: [f64; 4],
    pub vocab_cap: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub beam_width: usize,
    pub max_decode_depth: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Half-width of the uniform parameter initialization.
    pub init_scale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embed_dim: 128,
            hidden_dim: 512,
            attn_dim: 512,
            query_dim: 512,
            classifier_dim: 512,
            num_classes: 5,
            residual_mix: 0.5,
            loss_weights: [0.8, 0.1, 0.1, 0.1],
            vocab_cap: 50_000,
            max_src_len: 400,
            max_tgt_len: 100,
            beam_width: 5,
            max_decode_depth: 120,
            dropout: 0.1,
            learning_rate: 0.001,
            batch_size: 32,
            clip_norm: 2.0,
            init_scale: 0.1,
        }
    }
}

impl HyperParams {
    /// Shrinks every hidden size to `hidden` and the embedding to `embed`.
    pub fn with_dims(mut self, embed: usize, hidden: usize) -> Self {
        self.embed_dim = embed;
        self.hidden_dim = hidden;
        self.attn_dim = hidden;
        self.query_dim = hidden;
        self.classifier_dim = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attn_dim", self.attn_dim),
            ("query_dim", self.query_dim),
            ("classifier_dim", self.classifier_dim),
            ("num_classes", self.num_classes),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
            ("beam_width", self.beam_width),
            ("max_decode_depth", self.max_decode_depth),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.hidden_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden_dim must be even, got {}",
                self.hidden_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.residual_mix) {
            return Err(Error::Config("residual_mix must lie in [0, 1]".into()));
        }
        if self.loss_weights.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.vocab_cap < 5 {
            return Err(Error::Config("vocab_cap must leave room for one word".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("hyperparameters serialize");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
