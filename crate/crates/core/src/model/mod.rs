//! The joint model: shared encoder, pointer-generator decoder and the two
//! sentiment classifiers.

mod beam;
mod classifier;
mod decoder;
mod encoder;
mod joint;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::hyper::HyperParams;

pub use beam::{beam_search, greedy_search, BeamConfig, BeamResult, StepScorer};
pub use classifier::{
    classification_loss, classifier_distribution, classify, disagreement_rate, glimpse_aggregate,
    inconsistency_loss, merged_predict, Dropout,
};
pub use decoder::{
    attend, decode_inputs, decode_step, decode_step_embedded, final_distribution, generation_loss,
    teacher_forced_inputs, AttendedMemory, CopySource, Decoded, DecoderStep, LossNorm, LOG_FLOOR,
};
pub use encoder::{bigru_layer, encode, gru_cell, gru_step, residual_combine, EncoderOutput};
pub use joint::{
    batch_gradients, effective_weights, forward_example, predict_example, BatchOutput, ForwardOptions, ForwardVars,
    LossComponents, ModelScorer, Prediction, PredictOptions,
};
pub use params::{
    register, AttnParams, ClassifierParams, DecoderParams, EncoderParams, GruParams, ModelParams,
};

/// Architecture switches for the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// `-I`: drop the inconsistency term from the objective.
    pub no_inconsistency: bool,
    /// `-A`: max-pooling instead of glimpse attention in both classifiers.
    pub maxpool_classifier: bool,
    /// `-R`: a single BiGRU layer whose states are the memory bank.
    pub no_residual: bool,
    /// `-C`: no copying; the decoder generates from the fixed vocabulary only.
    pub no_copy: bool,
}

impl Ablations {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("full");
        }
        let flags = [
            (self.no_inconsistency, "-I"),
            (self.maxpool_classifier, "-A"),
            (self.no_residual, "-R"),
            (self.no_copy, "-C"),
        ];
        for (on, tag) in flags {
            if on {
                f.write_str(tag)?;
            }
        }
        Ok(())
    }
}

impl FromStr for Ablations {
    type Err = Error;

    /// Parses `full` or any combination of `-I`, `-A`, `-R`, `-C` (commas and
    /// whitespace allowed between flags).
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablations::default();
        if s.trim() == "full" || s.trim().is_empty() {
            return Ok(a);
        }
        for c in s.chars() {
            match c.to_ascii_uppercase() {
                'I' => a.no_inconsistency = true,
                'A' => a.maxpool_classifier = true,
                'R' => a.no_residual = true,
                'C' => a.no_copy = true,
                '-' | ',' | ' ' => {}
                other => return Err(Error::Config(format!("unknown ablation flag `{other}`"))),
            }
        }
        Ok(a)
    }
}

/// Parameters together with the settings that shape the computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub hp: HyperParams,
    pub ablations: Ablations,
    pub vocab_size: usize,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl Model {
    /// Freshly initialized parameters drawn from `seed`.
    pub fn new(hp: HyperParams, ablations: Ablations, vocab_size: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        if vocab_size <= crate::text::NUM_SPECIALS {
            return Err(Error::Config(format!(
                "vocabulary of {vocab_size} ids has no regular words"
            )));
        }
        let mut store = ParamStore::new();
        let params = register(&mut store, &hp, vocab_size, seed)?;
        Ok(Model {
            hp,
            ablations,
            vocab_size,
            store,
            params,
        })
    }

    /// A model whose parameter values are copied from `values`.
    pub fn from_values(
        hp: HyperParams,
        ablations: Ablations,
        vocab_size: usize,
        values: &ParamStore,
    ) -> Result<Self> {
        let mut m = Model::new(hp, ablations, vocab_size, 0)?;
        m.store.copy_from(values)?;
        Ok(m)
    }

    /// Whether the decoder mixes in copy probabilities.
    pub fn copies(&self) -> bool {
        !self.ablations.no_copy
    }
}
