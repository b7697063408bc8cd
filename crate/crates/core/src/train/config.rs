//! Training configuration and its flat key/value file form.
//!
//! Precedence is command line over file over defaults: callers build a
//! [`ConfigFile`] from each source and apply them in that order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::DEFAULT_MIN_LR;
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::model::{Ablations, LossNorm};
use crate::par::Parallelism;

/// Which loss drives plateau scheduling, early stopping and best-checkpoint
/// selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationObjective {
    /// The full weighted objective.
    #[default]
    Full,
    /// The generation loss alone.
    Generation,
}

impl std::str::FromStr for ValidationObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ValidationObjective::Full),
            "generation" | "gen" => Ok(ValidationObjective::Generation),
            _ => Err(Error::Config(format!("unknown validation objective `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Model sizes plus loss weights, learning rate, batch size, clip norm and dropout.
    pub hp: HyperParams,
    pub ablations: Ablations,
    pub seed: u64,
    /// Steps between validation checkpoints; `None` means one epoch capped at 1000.
    pub checkpoint_interval: Option<usize>,
    /// Non-improving checkpoints tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub max_steps: Option<usize>,
    pub min_lr: f64,
    pub validation: ValidationObjective,
    pub loss_norm: LossNorm,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hp: HyperParams::default(),
            ablations: Ablations::default(),
            seed: 0,
            checkpoint_interval: None,
            patience: 3,
            max_epochs: 30,
            max_steps: None,
            min_lr: DEFAULT_MIN_LR,
            validation: ValidationObjective::Full,
            loss_norm: LossNorm::TokenMean,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.checkpoint_interval == Some(0) {
            return Err(Error::Config("checkpoint_interval must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.max_steps == Some(0) {
            return Err(Error::Config("training needs at least one step".into()));
        }
        if !(self.min_lr > 0.0) {
            return Err(Error::Config("min_lr must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.hp.batch_size)
    }

    pub fn interval(&self, train_len: usize) -> usize {
        self.checkpoint_interval
            .unwrap_or_else(|| self.steps_per_epoch(train_len).min(1000))
            .max(1)
    }
}

/// Every configurable key, all optional. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub attn_dim: Option<usize>,
    pub query_dim: Option<usize>,
    pub classifier_dim: Option<usize>,
    pub num_classes: Option<usize>,
    pub residual_mix: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub gamma3: Option<f64>,
    pub gamma4: Option<f64>,
    pub vocab_cap: Option<usize>,
    pub max_src_len: Option<usize>,
    pub max_tgt_len: Option<usize>,
    pub beam_width: Option<usize>,
    pub max_decode_depth: Option<usize>,
    pub dropout: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub clip_norm: Option<f64>,
    pub init_scale: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_interval: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub min_lr: Option<f64>,
    pub validation: Option<ValidationObjective>,
    pub loss_norm: Option<LossNorm>,
    /// `full` or a combination of `-I`, `-A`, `-R`, `-C`.
    pub ablations: Option<String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Overwrites the fields of `hp` that this file sets. `hidden_dim` also
    /// sets the attention, query and classifier sizes unless those keys are
    /// present.
    pub fn apply_hyper(&self, hp: &mut HyperParams) {
        if let Some(h) = self.hidden_dim {
            *hp = hp.clone().with_dims(hp.embed_dim, h);
        }
        macro_rules! set {
            ($($key:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$key { hp.$field = v; })*
            };
        }
        set!(
            embed_dim => embed_dim,
            hidden_dim => hidden_dim,
            attn_dim => attn_dim,
            query_dim => query_dim,
            classifier_dim => classifier_dim,
            num_classes => num_classes,
            residual_mix => residual_mix,
            vocab_cap => vocab_cap,
            max_src_len => max_src_len,
            max_tgt_len => max_tgt_len,
            beam_width => beam_width,
            max_decode_depth => max_decode_depth,
            dropout => dropout,
            lr => learning_rate,
            batch_size => batch_size,
            clip_norm => clip_norm,
            init_scale => init_scale,
        );
        for (i, g) in [self.gamma1, self.gamma2, self.gamma3, self.gamma4].into_iter().enumerate() {
            if let Some(g) = g {
                hp.loss_weights[i] = g;
            }
        }
    }

    /// Overwrites the fields of `cfg` that this file sets.
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        self.apply_hyper(&mut cfg.hp);
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(i) = self.checkpoint_interval {
            cfg.checkpoint_interval = Some(i);
        }
        if let Some(p) = self.patience {
            cfg.patience = p;
        }
        if let Some(e) = self.max_epochs {
            cfg.max_epochs = e;
        }
        if let Some(s) = self.max_steps {
            cfg.max_steps = Some(s);
        }
        if let Some(m) = self.min_lr {
            cfg.min_lr = m;
        }
        if let Some(v) = self.validation {
            cfg.validation = v;
        }
        if let Some(n) = self.loss_norm {
            cfg.loss_norm = n;
        }
        if let Some(a) = &self.ablations {
            cfg.ablations = a.parse()?;
        }
        Ok(())
    }
}
