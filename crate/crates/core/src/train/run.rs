//! The checkpointed training loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{TrainConfig, ValidationObjective};
use super::optim::{clip_gradients, AdamState};
use super::schedule::{early_stop, latest_improved, lr_on_plateau};
use crate::autodiff::{Checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::model::{batch_gradients, disagreement_rate, effective_weights, LossComponents, Model};
use crate::seed::derive_seed;
use crate::text::{Dataset, Example, Vocabulary};

/// Value of the `format` header field of model checkpoints.
pub const MODEL_FORMAT: &str = "dualview-model";

const ORDER_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Everything besides parameters and moments needed to continue a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer steps taken.
    pub step: usize,
    pub lr: f64,
    pub adam_t: u64,
    /// Validation objective at each checkpoint.
    pub history: Vec<f64>,
    pub best_valid: Option<f64>,
    pub best_step: Option<usize>,
}

/// One line of the training log, written at every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub seed: u64,
    /// Learning rate used since the previous checkpoint.
    pub lr: f64,
    /// Mean training losses since the previous checkpoint.
    pub train: LossComponents,
    pub train_objective: f64,
    pub valid: LossComponents,
    pub valid_objective: f64,
    /// Validation disagreement between the source view and the teacher-forced summary view.
    pub disagreement_rate: f64,
    /// Mean pre-clipping gradient norm since the previous checkpoint.
    pub grad_norm: f64,
    pub improved: bool,
}

/// Output files; any of them may be omitted.
#[derive(Clone, Debug, Default)]
pub struct TrainPaths {
    pub best: Option<PathBuf>,
    pub last: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxSteps,
    MaxEpochs,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the checkpoint with the lowest validation objective.
    pub best: Model,
    pub last: Model,
    pub log: Vec<LogEntry>,
    pub state: TrainState,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub losses: LossComponents,
    pub objective: f64,
    pub grad_norm: f64,
    pub clip_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub losses: LossComponents,
    pub objective: f64,
    pub disagreement_rate: f64,
}

/// Mean validation losses without dropout, plus classifier disagreement
/// under teacher forcing.
pub fn validation_loss(model: &Model, examples: &[Example], cfg: &TrainConfig) -> Result<ValidationReport> {
    let refs: Vec<&Example> = examples.iter().collect();
    let out = batch_gradients(model, &refs, None, None, cfg.loss_norm, cfg.parallelism)?;
    let weights = match cfg.validation {
        ValidationObjective::Full => effective_weights(model, cfg.hp.loss_weights),
        ValidationObjective::Generation => [1.0, 0.0, 0.0, 0.0],
    };
    Ok(ValidationReport {
        objective: out.losses.weighted(&weights),
        losses: out.losses,
        disagreement_rate: disagreement_rate(&out.source_labels, &out.summary_labels)?,
    })
}

/// A trained model together with the vocabulary and settings it was trained under.
#[derive(Clone, Debug)]
pub struct ModelArtifact {
    pub model: Model,
    pub vocab: Vocabulary,
    pub config: TrainConfig,
    pub state: TrainState,
}

impl ModelArtifact {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.header;
        if h["format"] != MODEL_FORMAT {
            return Err(Error::Format("checkpoint does not hold a trained model".into()));
        }
        let field = |k: &str| -> Result<serde_json::Value> {
            h.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint header lacks `{k}`")))
        };
        let parse = |e: serde_json::Error| Error::Format(format!("checkpoint header: {e}"));
        let config: TrainConfig = serde_json::from_value(field("config")?).map_err(parse)?;
        let state: TrainState = serde_json::from_value(field("state")?).map_err(parse)?;
        let words: Vec<String> = serde_json::from_value(field("vocab")?).map_err(parse)?;
        let vocab = Vocabulary::from_words(words)?;
        if field("vocab_fingerprint")? != vocab.fingerprint() {
            return Err(Error::Format("vocabulary fingerprint does not match its words".into()));
        }
        let mut model = Model::new(config.hp.clone(), config.ablations, vocab.len(), 0)?;
        ckpt.load_params("param/", &mut model.store)?;
        Ok(ModelArtifact {
            model,
            vocab,
            config,
            state,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Fails unless `vocab` is exactly the training vocabulary.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.fingerprint() != self.vocab.fingerprint() {
            return Err(Error::Compatibility(
                "dataset vocabulary differs from the checkpoint vocabulary".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
struct Window {
    losses: LossComponents,
    objective: f64,
    grad_norm: f64,
    steps: usize,
}

pub struct Trainer<'a> {
    data: &'a Dataset,
    cfg: TrainConfig,
    model: Model,
    adam: AdamState,
    state: TrainState,
    paths: TrainPaths,
    log: Vec<LogEntry>,
    best: Option<ParamStore>,
    window: Window,
    order: Option<(usize, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    /// A fresh run; truncates the log file.
    pub fn new(data: &'a Dataset, cfg: TrainConfig, paths: TrainPaths) -> Result<Self> {
        check_inputs(data, &cfg)?;
        let model = Model::new(cfg.hp.clone(), cfg.ablations, data.vocab.len(), cfg.seed)?;
        if let Some(log) = &paths.log {
            std::fs::write(log, b"").map_err(|e| Error::io(log, e))?;
        }
        let adam = AdamState::new(&model.store, cfg.hp.learning_rate);
        let state = TrainState {
            lr: cfg.hp.learning_rate,
            ..TrainState::default()
        };
        Ok(Trainer {
            data,
            cfg,
            model,
            adam,
            state,
            paths,
            log: Vec::new(),
            best: None,
            window: Window::default(),
            order: None,
        })
    }

    /// Continues the run stored in a checkpoint written by this trainer.
    /// `cfg`, when given, replaces the stored configuration; it must keep the
    /// model settings and seed. New log lines are appended.
    pub fn resume(
        data: &'a Dataset,
        ckpt: &Checkpoint,
        cfg: Option<TrainConfig>,
        paths: TrainPaths,
    ) -> Result<Self> {
        let art = ModelArtifact::from_checkpoint(ckpt)?;
        art.check_vocab(&data.vocab)?;
        let cfg = match cfg {
            Some(c) => {
                if c.hp != art.config.hp || c.ablations != art.config.ablations || c.seed != art.config.seed {
                    return Err(Error::Compatibility(
                        "resumed configuration changes the model, ablations or seed".into(),
                    ));
                }
                c
            }
            None => art.config.clone(),
        };
        check_inputs(data, &cfg)?;
        let adam = AdamState::load_from(ckpt, &art.model.store, art.state.lr, art.state.adam_t)?;
        let best = if ckpt.tensors.iter().any(|(n, _)| n.starts_with("best/")) {
            let mut b = art.model.store.clone();
            ckpt.load_params("best/", &mut b)?;
            Some(b)
        } else {
            None
        };
        Ok(Trainer {
            data,
            cfg,
            model: art.model,
            adam,
            state: art.state,
            paths,
            log: Vec::new(),
            best,
            window: Window::default(),
            order: None,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Mutable access for initialization tweaks such as pretrained embeddings.
    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn steps_per_epoch(&self) -> usize {
        self.cfg.steps_per_epoch(self.data.train.len())
    }

    fn total_steps(&self) -> usize {
        let by_epochs = self.cfg.max_epochs.saturating_mul(self.steps_per_epoch());
        self.cfg.max_steps.map_or(by_epochs, |m| m.min(by_epochs))
    }

    fn epoch_order(&mut self, epoch: usize) -> &[usize] {
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.data.train.len()).collect();
            let seed = derive_seed(&[self.cfg.seed, epoch as u64, ORDER_STREAM]);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            self.order = Some((epoch, order));
        }
        &self.order.as_ref().expect("order just set").1
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (self.state.step / spe, self.state.step % spe);
        let b = self.cfg.hp.batch_size;
        let n = self.data.train.len();
        let idx: Vec<usize> = self.epoch_order(epoch)[pos * b..((pos + 1) * b).min(n)].to_vec();
        let batch: Vec<&Example> = idx.iter().map(|&i| &self.data.train[i]).collect();
        let dropout_seed = (self.cfg.hp.dropout > 0.0)
            .then(|| derive_seed(&[self.cfg.seed, self.state.step as u64, DROPOUT_STREAM]));
        let mut out = batch_gradients(
            &self.model,
            &batch,
            Some(self.cfg.hp.loss_weights),
            dropout_seed,
            self.cfg.loss_norm,
            self.cfg.parallelism,
        )
        .map_err(|e| match e {
            Error::Domain { op, message } => Error::Training {
                param: non_finite_param(&self.model.store).unwrap_or_else(|| "objective".into()),
                message: format!("{message} in {op} at step {}", self.state.step + 1),
            },
            other => other,
        })?;
        if !out.objective.is_finite() {
            return Err(Error::Training {
                param: "objective".into(),
                message: format!("non-finite training loss at step {}", self.state.step + 1),
            });
        }
        let grad_norm = out.grads.global_norm();
        let clip_scale = clip_gradients(&mut out.grads, &self.model.store, self.cfg.hp.clip_norm)?;
        self.adam.lr = self.state.lr;
        self.adam.step(&mut self.model.store, &out.grads);
        self.state.step += 1;
        self.state.adam_t = self.adam.t;
        self.window.losses.add(&out.losses);
        self.window.objective += out.objective;
        self.window.grad_norm += grad_norm;
        self.window.steps += 1;
        Ok(StepReport {
            step: self.state.step,
            losses: out.losses,
            objective: out.objective,
            grad_norm,
            clip_scale,
        })
    }

    fn header(&self) -> serde_json::Value {
        json!({
            "format": MODEL_FORMAT,
            "config": self.cfg,
            "vocab": self.data.vocab.words(),
            "vocab_fingerprint": self.data.vocab.fingerprint(),
            "dataset_hyperparams_hash": self.data.hyper_hash,
            "state": self.state,
        })
    }

    /// Parameters, moments and, for resumable checkpoints, the best parameters so far.
    pub fn checkpoint(&self, include_best: bool) -> Checkpoint {
        let mut ck = Checkpoint::new(self.header());
        ck.push_params("param/", &self.model.store);
        self.adam.push_to(&mut ck, &self.model.store);
        if include_best {
            if let Some(b) = &self.best {
                ck.push_params("best/", b);
            }
        }
        ck
    }

    /// Validates, logs, schedules and persists. Returns whether to stop early.
    fn evaluate_checkpoint(&mut self) -> Result<bool> {
        let v = validation_loss(&self.model, &self.data.valid, &self.cfg)?;
        if !v.objective.is_finite() {
            return Err(Error::Training {
                param: "objective".into(),
                message: format!("non-finite validation loss at step {}", self.state.step),
            });
        }
        self.state.history.push(v.objective);
        let improved = latest_improved(&self.state.history);
        let lr_used = self.state.lr;
        self.state.lr = lr_on_plateau(self.state.lr, &self.state.history, self.cfg.min_lr);
        if improved {
            self.best = Some(self.model.store.clone());
            self.state.best_valid = Some(v.objective);
            self.state.best_step = Some(self.state.step);
        }
        let w = std::mem::take(&mut self.window);
        let k = w.steps.max(1) as f64;
        let mut train = w.losses;
        train.scale(1.0 / k);
        let entry = LogEntry {
            step: self.state.step,
            epoch: (self.state.step - 1) / self.steps_per_epoch(),
            seed: self.cfg.seed,
            lr: lr_used,
            train,
            train_objective: w.objective / k,
            valid: v.losses,
            valid_objective: v.objective,
            disagreement_rate: v.disagreement_rate,
            grad_norm: w.grad_norm / k,
            improved,
        };
        if let Some(path) = &self.paths.log {
            let mut line = serde_json::to_vec(&entry).expect("log entry serializes");
            line.push(b'\n');
            OpenOptions::new()
                .append(true)
                .create(true)
                .open(path)
                .and_then(|mut f| f.write_all(&line))
                .map_err(|e| Error::io(path, e))?;
        }
        log::info!(
            "step {} train {:.4} valid {:.4} disagreement {:.3} lr {:.2e}",
            entry.step,
            entry.train_objective,
            entry.valid_objective,
            entry.disagreement_rate,
            entry.lr
        );
        self.log.push(entry);
        if improved {
            if let Some(p) = &self.paths.best {
                self.checkpoint(false).save(p)?;
            }
        }
        if let Some(p) = &self.paths.last {
            self.checkpoint(true).save(p)?;
        }
        Ok(early_stop(&self.state.history, self.cfg.patience))
    }

    /// Trains until early stopping or the step/epoch budget is exhausted,
    /// checkpointing every interval and after the final step.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let total = self.total_steps();
        let interval = self.cfg.interval(self.data.train.len());
        let mut stop = None;
        while self.state.step < total {
            self.step()?;
            if self.state.step % interval == 0 || self.state.step == total {
                if self.evaluate_checkpoint()? {
                    stop = Some(StopReason::EarlyStop);
                    break;
                }
            }
        }
        let stop = stop.unwrap_or(match self.cfg.max_steps {
            Some(m) if self.state.step >= m => StopReason::MaxSteps,
            _ => StopReason::MaxEpochs,
        });
        let best = match &self.best {
            Some(b) => Model::from_values(self.cfg.hp.clone(), self.cfg.ablations, self.model.vocab_size, b)?,
            None => self.model.clone(),
        };
        Ok(TrainOutcome {
            best,
            last: self.model,
            log: self.log,
            state: self.state,
            stop,
        })
    }
}

fn non_finite_param(store: &ParamStore) -> Option<String> {
    store
        .iter()
        .find(|(_, t)| !t.all_finite())
        .map(|(name, _)| name.to_string())
}

fn check_inputs(data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.num_classes != cfg.hp.num_classes {
        return Err(Error::Compatibility(format!(
            "dataset has {} classes but the model expects {}",
            data.num_classes, cfg.hp.num_classes
        )));
    }
    if data.train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    if data.valid.is_empty() {
        return Err(Error::contract("validation split is empty"));
    }
    Ok(())
}

/// Trains a fresh model.
pub fn train(data: &Dataset, cfg: &TrainConfig, paths: &TrainPaths) -> Result<TrainOutcome> {
    Trainer::new(data, cfg.clone(), paths.clone())?.run()
}
