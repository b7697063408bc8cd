//! Joint forward pass, batched gradients and inference.

use super::beam::{beam_search, BeamConfig, BeamResult, StepScorer};
use super::classifier::{
    classification_loss, classifier_distribution, inconsistency_loss, Dropout,
};
use super::decoder::{
    decode_inputs, decode_step, generation_loss, teacher_forced_inputs, AttendedMemory, CopySource,
    Decoded, LossNorm,
};
use super::encoder::{encode, EncoderOutput};
use super::Model;
use crate::autodiff::{argmax, GradStore, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::par::{try_map_indexed, Parallelism};
use crate::seed::derive_seed;
use crate::text::{Example, Vocabulary, BOS, EOS, PAD, UNK};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Enables classifier dropout with masks drawn from this seed.
    pub dropout_seed: Option<u64>,
    pub loss_norm: LossNorm,
}

/// Per-example graph handles produced by [`forward_example`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub encoder: EncoderOutput,
    pub decoded: Decoded,
    pub gen: Var,
    pub source: Var,
    pub summary: Var,
    pub inconsistency: Var,
    pub p_ec: Var,
    pub p_dc: Var,
}

impl ForwardVars {
    pub fn losses(&self, g: &Graph) -> LossComponents {
        LossComponents {
            gen: g.value(self.gen).item(),
            source: g.value(self.source).item(),
            summary: g.value(self.summary).item(),
            inconsistency: g.value(self.inconsistency).item(),
        }
    }
}

/// The four loss terms of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossComponents {
    pub gen: f64,
    pub source: f64,
    pub summary: f64,
    pub inconsistency: f64,
}

impl LossComponents {
    pub fn as_array(&self) -> [f64; 4] {
        [self.gen, self.source, self.summary, self.inconsistency]
    }

    /// `γ₁L_gen + γ₂L_ec + γ₃L_dc + γ₄L_inc`
    pub fn weighted(&self, weights: &[f64; 4]) -> f64 {
        self.as_array().iter().zip(weights).map(|(l, w)| l * w).sum()
    }

    pub fn add(&mut self, other: &LossComponents) {
        self.gen += other.gen;
        self.source += other.source;
        self.summary += other.summary;
        self.inconsistency += other.inconsistency;
    }

    pub fn scale(&mut self, f: f64) {
        self.gen *= f;
        self.source *= f;
        self.summary *= f;
        self.inconsistency *= f;
    }
}

fn copy_source<'a>(model: &Model, ex: &'a Example) -> Option<CopySource<'a>> {
    model.copies().then(|| CopySource {
        ext_ids: &ex.src_ext_ids,
        size: ex.ext_vocab_size(model.vocab_size),
    })
}

/// Encoder, teacher-forced decoder, both classifiers and all four losses for
/// one example.
pub fn forward_example(
    g: &mut Graph,
    model: &Model,
    ex: &Example,
    opts: &ForwardOptions,
) -> Result<ForwardVars> {
    if ex.label >= model.hp.num_classes {
        return Err(Error::contract(format!(
            "label {} outside 0..{}",
            ex.label, model.hp.num_classes
        )));
    }
    let encoder = encode(g, model, &ex.src_ids)?;
    let mem = AttendedMemory::new(g, encoder.memory, &model.params.decoder.attn, None)?;
    let inputs = teacher_forced_inputs(&ex.tgt_ids);
    let copy = copy_source(model, ex);
    let decoded = decode_inputs(g, model, encoder.decoder_init, &mem, &inputs, copy)?;
    let targets = if copy.is_some() { &ex.tgt_ext_ids } else { &ex.tgt_ids };
    let dists: Vec<Var> = decoded.steps.iter().map(|s| s.dist).collect();
    let gen = generation_loss(g, &dists, targets, opts.loss_norm)?;

    let rate = model.hp.dropout;
    let mut d_src = opts.dropout_seed.map(|s| Dropout::new(s, 0, rate));
    let mut d_sum = opts.dropout_seed.map(|s| Dropout::new(s, 1, rate));
    let p_ec = classifier_distribution(g, model, encoder.memory, &model.params.source, d_src.as_mut())?;
    let p_dc = classifier_distribution(g, model, decoded.states, &model.params.summary, d_sum.as_mut())?;
    let source = classification_loss(g, p_ec, ex.label)?;
    let summary = classification_loss(g, p_dc, ex.label)?;
    let inconsistency = inconsistency_loss(g, p_ec, p_dc)?;
    Ok(ForwardVars {
        encoder,
        decoded,
        gen,
        source,
        summary,
        inconsistency,
        p_ec,
        p_dc,
    })
}

/// Summed gradients and mean statistics of one batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// Gradient of the batch-mean weighted objective.
    pub grads: GradStore,
    /// Batch-mean loss components.
    pub losses: LossComponents,
    /// Batch-mean weighted objective.
    pub objective: f64,
    pub clamped_logs: usize,
    /// 0-based argmax labels of the two classifiers.
    pub source_labels: Vec<usize>,
    pub summary_labels: Vec<usize>,
}

struct ExampleOutput {
    grads: Option<GradStore>,
    losses: LossComponents,
    clamped: usize,
    source_label: usize,
    summary_label: usize,
}

/// Effective loss weights: the `-I` ablation zeroes the inconsistency weight.
pub fn effective_weights(model: &Model, weights: [f64; 4]) -> [f64; 4] {
    let mut w = weights;
    if model.ablations.no_inconsistency {
        w[3] = 0.0;
    }
    w
}

/// Forward and backward over every example on its own tape. When
/// `dropout_seed` is set, example `i` draws its masks from
/// `derive_seed([seed, i])`. Per-example gradients are summed in batch order,
/// so the result does not depend on `par`. With `weights = None` no
/// gradients are computed.
pub fn batch_gradients(
    model: &Model,
    batch: &[&Example],
    weights: Option<[f64; 4]>,
    dropout_seed: Option<u64>,
    loss_norm: LossNorm,
    par: Parallelism,
) -> Result<BatchOutput> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let n = batch.len() as f64;
    let weights = weights.map(|w| effective_weights(model, w));
    let outs = try_map_indexed(batch, par, |i, ex| -> Result<ExampleOutput> {
        let opts = ForwardOptions {
            dropout_seed: dropout_seed.map(|s| derive_seed(&[s, i as u64])),
            loss_norm,
        };
        let mut g = match weights {
            Some(_) => Graph::new(&model.store),
            None => Graph::inference(&model.store),
        };
        let fv = forward_example(&mut g, model, ex, &opts)?;
        let losses = fv.losses(&g);
        let source_label = argmax(g.value(fv.p_ec).data());
        let summary_label = argmax(g.value(fv.p_dc).data());
        let mut grads = None;
        if let Some(w) = weights {
            let terms = [fv.gen, fv.source, fv.summary, fv.inconsistency];
            let mut total: Option<Var> = None;
            for (&t, &wi) in terms.iter().zip(&w) {
                if wi == 0.0 {
                    continue;
                }
                let s = g.scale(t, wi / n)?;
                total = Some(match total {
                    Some(acc) => g.add(acc, s)?,
                    None => s,
                });
            }
            if let Some(total) = total {
                g.backward(total)?;
                grads = g.take_param_grads();
            }
        }
        Ok(ExampleOutput {
            grads,
            losses,
            clamped: g.clamped_logs(),
            source_label,
            summary_label,
        })
    })?;

    let mut grads = GradStore::zeros_like(&model.store);
    let mut losses = LossComponents::default();
    let mut clamped_logs = 0;
    let mut source_labels = Vec::with_capacity(outs.len());
    let mut summary_labels = Vec::with_capacity(outs.len());
    for o in outs {
        if let Some(gs) = &o.grads {
            grads.accumulate(gs);
        }
        losses.add(&o.losses);
        clamped_logs += o.clamped;
        source_labels.push(o.source_label);
        summary_labels.push(o.summary_label);
    }
    losses.scale(1.0 / n);
    let objective = losses.weighted(&weights.unwrap_or([0.0; 4]));
    Ok(BatchOutput {
        grads,
        losses,
        objective,
        clamped_logs,
        source_labels,
        summary_labels,
    })
}

/// Step scorer over a frozen model and one encoded source.
pub struct ModelScorer<'a> {
    model: &'a Model,
    memory: Tensor,
    proj: Tensor,
    init: Tensor,
    ext_ids: &'a [usize],
    ext_size: usize,
}

impl<'a> ModelScorer<'a> {
    /// Encodes `ex` once; every step reuses the memory bank and its attention projection.
    pub fn new(model: &'a Model, ex: &'a Example) -> Result<Self> {
        let mut g = Graph::inference(&model.store);
        let enc = encode(&mut g, model, &ex.src_ids)?;
        let mem = AttendedMemory::new(&mut g, enc.memory, &model.params.decoder.attn, None)?;
        Ok(ModelScorer {
            model,
            memory: g.value(enc.memory).clone(),
            proj: g.value(mem.proj).clone(),
            init: g.value(enc.decoder_init).clone(),
            ext_ids: &ex.src_ext_ids,
            ext_size: ex.ext_vocab_size(model.vocab_size),
        })
    }

    fn memory(&self, g: &mut Graph) -> AttendedMemory {
        AttendedMemory {
            memory: g.constant(self.memory.clone()),
            proj: g.constant(self.proj.clone()),
            mask: None,
        }
    }

    fn copy(&self) -> Option<CopySource<'_>> {
        self.model.copies().then_some(CopySource {
            ext_ids: self.ext_ids,
            size: self.ext_size,
        })
    }

    /// Decoder states `[T × d]` obtained by feeding `inputs`.
    pub fn states(&self, inputs: &[usize]) -> Result<Tensor> {
        let mut g = Graph::inference(&self.model.store);
        let mem = self.memory(&mut g);
        let init = g.constant(self.init.clone());
        let decoded = decode_inputs(&mut g, self.model, init, &mem, inputs, self.copy())?;
        Ok(g.value(decoded.states).clone())
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = Tensor;

    fn start(&self) -> Result<Tensor> {
        Ok(self.init.clone())
    }

    fn step(&self, state: &Tensor, prev: usize) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::inference(&self.model.store);
        let mem = self.memory(&mut g);
        let s = g.constant(state.clone());
        let step = decode_step(&mut g, self.model, prev, s, &mem, self.copy())?;
        let lp = g
            .value(step.dist)
            .data()
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok((g.value(step.state).clone(), lp))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictOptions {
    pub beam_width: usize,
    pub max_depth: usize,
    /// Never emit UNK.
    pub suppress_unk: bool,
    pub length_penalty: Option<f64>,
    /// Also run the summary-view classifier on teacher-forced states.
    pub teacher_forced: bool,
}

impl PredictOptions {
    pub fn from_hyper(hp: &crate::hyper::HyperParams) -> Self {
        PredictOptions {
            beam_width: hp.beam_width,
            max_depth: hp.max_decode_depth,
            suppress_unk: true,
            length_penalty: None,
            teacher_forced: true,
        }
    }

    pub fn beam_config(&self) -> BeamConfig {
        let mut cfg = BeamConfig::new(self.beam_width, self.max_depth, BOS, EOS);
        cfg.banned = vec![PAD, BOS];
        if self.suppress_unk {
            cfg.banned.push(UNK);
        }
        cfg.length_penalty = self.length_penalty;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Generated dynamic-vocabulary ids, without EOS.
    pub tokens: Vec<usize>,
    pub words: Vec<String>,
    pub log_prob: f64,
    pub p_ec: Vec<f64>,
    /// Summary view over the states that generated `tokens`.
    pub p_dc_free: Vec<f64>,
    /// Summary view over teacher-forced states of the reference summary.
    pub p_dc_tf: Option<Vec<f64>>,
}

/// Beam-search summary plus source-view and summary-view distributions.
pub fn predict_example(
    model: &Model,
    ex: &Example,
    vocab: &Vocabulary,
    opts: &PredictOptions,
) -> Result<Prediction> {
    let mut g = Graph::inference(&model.store);
    let enc = encode(&mut g, model, &ex.src_ids)?;
    let p_ec = classifier_distribution(&mut g, model, enc.memory, &model.params.source, None)?;
    let p_ec = g.value(p_ec).data().to_vec();
    let p_dc_tf = if opts.teacher_forced && !ex.tgt_ids.is_empty() {
        let mem = AttendedMemory::new(&mut g, enc.memory, &model.params.decoder.attn, None)?;
        let inputs = teacher_forced_inputs(&ex.tgt_ids);
        let decoded = decode_inputs(&mut g, model, enc.decoder_init, &mem, &inputs, copy_source(model, ex))?;
        let p = classifier_distribution(&mut g, model, decoded.states, &model.params.summary, None)?;
        Some(g.value(p).data().to_vec())
    } else {
        None
    };

    let scorer = ModelScorer::new(model, ex)?;
    let BeamResult {
        tokens,
        log_prob,
        ended_with_eos,
    } = beam_search(&scorer, &opts.beam_config())?;
    let mut emitted = tokens.clone();
    if ended_with_eos {
        emitted.push(EOS);
    }
    let inputs = teacher_forced_inputs(&emitted);
    let states = scorer.states(&inputs)?;
    let mut g = Graph::inference(&model.store);
    let s = g.constant(states);
    let p_dc = classifier_distribution(&mut g, model, s, &model.params.summary, None)?;
    let p_dc_free = g.value(p_dc).data().to_vec();
    let words = tokens.iter().map(|&t| ex.render(t, vocab).to_string()).collect();
    Ok(Prediction {
        tokens,
        words,
        log_prob,
        p_ec,
        p_dc_free,
        p_dc_tf,
    })
}
