//! Pointer-generator decoder: GRU step, additive attention, vocabulary
//! distribution, copy gate and the mixed output distribution.

use serde::{Deserialize, Serialize};

use super::params::AttnParams;
use super::Model;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::text::{BOS, UNK};

/// Floor applied inside every log of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

/// How the per-token negative log-likelihoods of one example are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Mean over target tokens.
    #[default]
    TokenMean,
    /// Plain sum over target tokens.
    Sum,
}

/// A memory matrix with its attention projection `M·W_memᵀ + b` precomputed.
#[derive(Clone, Debug)]
pub struct AttendedMemory {
    pub memory: Var,
    pub proj: Var,
    /// Real positions; `None` means every position is real.
    pub mask: Option<Vec<bool>>,
}

impl AttendedMemory {
    pub fn new(g: &mut Graph, memory: Var, p: &AttnParams, mask: Option<Vec<bool>>) -> Result<Self> {
        let w = g.param(p.w_mem);
        let b = g.param(p.bias);
        let proj = g.matmul_nt(memory, w)?;
        let proj = g.add_row(proj, b)?;
        Ok(AttendedMemory { memory, proj, mask })
    }
}

/// Attention weights `softmax_i(vᵀ tanh(W_mem·m_i + W_query·query + b))` and
/// the context `Σ_i a_i·m_i`.
pub fn attend(g: &mut Graph, mem: &AttendedMemory, p: &AttnParams, query: Var) -> Result<(Var, Var)> {
    let wq = g.param(p.w_query);
    let q = g.matvec(wq, query)?;
    let pre = g.add_row(mem.proj, q)?;
    let act = g.tanh(pre)?;
    let v = g.param(p.v);
    let scores = g.matvec(act, v)?;
    let weights = match &mem.mask {
        Some(mask) => g.masked_softmax(scores, mask)?,
        None => g.softmax(scores)?,
    };
    let context = g.mat_t_vec(mem.memory, weights)?;
    Ok((weights, context))
}

/// The copy side of a step: extended ids of the source positions and the
/// size of the dynamic vocabulary.
#[derive(Clone, Copy, Debug)]
pub struct CopySource<'a> {
    pub ext_ids: &'a [usize],
    pub size: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderStep {
    pub state: Var,
    pub attn: Var,
    pub context: Var,
    /// Copy gate; absent when copying is disabled.
    pub p_gen: Option<Var>,
    /// Distribution over the fixed vocabulary.
    pub vocab_dist: Var,
    /// Distribution over the dynamic vocabulary (equals `vocab_dist` without copying).
    pub dist: Var,
}

/// `p_gen·P_V(w) + (1−p_gen)·Σ_{i: x_i = w} a_i` over `size` ids; `P_V` is
/// zero beyond its own length.
pub fn final_distribution(
    g: &mut Graph,
    vocab_dist: Var,
    attn: Var,
    p_gen: Var,
    ext_ids: &[usize],
    size: usize,
) -> Result<Var> {
    let gen = g.pad(vocab_dist, size)?;
    let gen = g.scale_by(gen, p_gen)?;
    let copy = g.scatter_add(attn, ext_ids, size)?;
    let p_copy = g.affine(p_gen, -1.0, 1.0)?;
    let copy = g.scale_by(copy, p_copy)?;
    g.add(gen, copy)
}

/// One decoder step from an already embedded previous token.
pub fn decode_step_embedded(
    g: &mut Graph,
    model: &Model,
    y_emb: Var,
    s_prev: Var,
    mem: &AttendedMemory,
    copy: Option<CopySource<'_>>,
) -> Result<DecoderStep> {
    let p = &model.params.decoder;
    let state = super::encoder::gru_cell(g, y_emb, s_prev, &p.gru)?;
    let (attn, context) = attend(g, mem, &p.attn, state)?;

    let joined = g.concat(&[state, context], 0)?;
    let w_proj = g.param(p.w_proj);
    let b_proj = g.param(p.b_proj);
    let hidden = g.matvec(w_proj, joined)?;
    let hidden = g.add(hidden, b_proj)?;
    let w_out = g.param(p.w_out);
    let b_out = g.param(p.b_out);
    let logits = g.matvec(w_out, hidden)?;
    let logits = g.add(logits, b_out)?;
    let vocab_dist = g.softmax(logits)?;

    let Some(copy) = copy else {
        return Ok(DecoderStep {
            state,
            attn,
            context,
            p_gen: None,
            vocab_dist,
            dist: vocab_dist,
        });
    };
    let features = g.concat(&[context, state, y_emb], 0)?;
    let v_gen = g.param(p.v_gen);
    let b_gen = g.param(p.b_gen);
    let z = g.matvec(v_gen, features)?;
    let z = g.add(z, b_gen)?;
    let p_gen = g.sigmoid(z)?;
    let dist = final_distribution(g, vocab_dist, attn, p_gen, copy.ext_ids, copy.size)?;
    Ok(DecoderStep {
        state,
        attn,
        context,
        p_gen: Some(p_gen),
        vocab_dist,
        dist,
    })
}

/// One decoder step from the previous token id. Extended (copied) ids are
/// embedded as UNK.
pub fn decode_step(
    g: &mut Graph,
    model: &Model,
    y_prev: usize,
    s_prev: Var,
    mem: &AttendedMemory,
    copy: Option<CopySource<'_>>,
) -> Result<DecoderStep> {
    let id = if y_prev < model.vocab_size { y_prev } else { UNK };
    let table = g.param(model.params.embedding);
    let rows = g.gather_rows(table, &[id])?;
    let y_emb = g.row(rows, 0)?;
    decode_step_embedded(g, model, y_emb, s_prev, mem, copy)
}

/// Decoder inputs under teacher forcing: BOS followed by every target token
/// except the last.
pub fn teacher_forced_inputs(tgt_ids: &[usize]) -> Vec<usize> {
    std::iter::once(BOS)
        .chain(tgt_ids.iter().copied().take(tgt_ids.len().saturating_sub(1)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub steps: Vec<DecoderStep>,
    /// Decoder states stacked as `[T × d]`.
    pub states: Var,
}

/// Runs the decoder over a fixed input sequence starting from `init`.
pub fn decode_inputs(
    g: &mut Graph,
    model: &Model,
    init: Var,
    mem: &AttendedMemory,
    inputs: &[usize],
    copy: Option<CopySource<'_>>,
) -> Result<Decoded> {
    if inputs.is_empty() {
        return Err(Error::contract("decoder needs at least one input token"));
    }
    let ids: Vec<usize> = inputs
        .iter()
        .map(|&i| if i < model.vocab_size { i } else { UNK })
        .collect();
    let table = g.param(model.params.embedding);
    let emb = g.gather_rows(table, &ids)?;
    let mut s = init;
    let mut steps = Vec::with_capacity(ids.len());
    for t in 0..ids.len() {
        let y = g.row(emb, t)?;
        let step = decode_step_embedded(g, model, y, s, mem, copy)?;
        s = step.state;
        steps.push(step);
    }
    let states: Vec<Var> = steps.iter().map(|s| s.state).collect();
    let states = g.stack_rows(&states)?;
    Ok(Decoded { steps, states })
}

/// `−Σ_t ln dist_t(y*_t)`, divided by the target length under
/// [`LossNorm::TokenMean`]. Logs are floored at [`LOG_FLOOR`].
pub fn generation_loss(g: &mut Graph, dists: &[Var], targets: &[usize], norm: LossNorm) -> Result<Var> {
    if dists.len() != targets.len() || dists.is_empty() {
        return Err(Error::contract(format!(
            "generation loss over {} steps and {} targets",
            dists.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&d, &y) in dists.iter().zip(targets) {
        let p = g.pick(d, y)?;
        let lp = g.log_clamped(p, LOG_FLOOR)?;
        total = Some(match total {
            Some(t) => g.add(t, lp)?,
            None => lp,
        });
    }
    let total = total.expect("nonempty");
    let factor = match norm {
        LossNorm::TokenMean => -1.0 / targets.len() as f64,
        LossNorm::Sum => -1.0,
    };
    g.scale(total, factor)
}
