//! Embedding lookup, stacked bidirectional GRUs and the residual memory bank.

use super::params::{EncoderParams, GruParams};
use super::Model;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// First-layer states `U`, `[L × d]`.
    pub shallow: Var,
    /// Second-layer states `H`; absent when the residual stack is disabled.
    pub deep: Option<Var>,
    /// Memory bank `λH + (1−λ)U` (or `U` alone without the second layer).
    pub memory: Var,
    /// `[→h̃_L ; ←h̃_1]`
    pub decoder_init: Var,
    pub len: usize,
}

/// One GRU update given the already projected input `W_in·x + b` (`[3q]`).
pub fn gru_step(g: &mut Graph, projected: Var, s_prev: Var, p: &GruParams) -> Result<Var> {
    let q = p.state_dim;
    let w_gates = g.param(p.w_gates);
    let hidden = g.matvec(w_gates, s_prev)?;
    let gate_in = g.slice(projected, 0, 2 * q)?;
    let gates = g.add(gate_in, hidden)?;
    let gates = g.sigmoid(gates)?;
    let reset = g.slice(gates, 0, q)?;
    let update = g.slice(gates, q, q)?;
    let reset_state = g.mul(reset, s_prev)?;
    let w_cand = g.param(p.w_cand);
    let cand_hidden = g.matvec(w_cand, reset_state)?;
    let cand_in = g.slice(projected, 2 * q, q)?;
    let cand = g.add(cand_in, cand_hidden)?;
    let cand = g.tanh(cand)?;
    g.lerp(update, s_prev, cand)
}

/// `s = c∘s_prev + (1−c)∘g` with reset gate `r`, update gate `c` and
/// candidate `g = tanh(W_ig·x + W_ug·(r∘s_prev) + b_g)`.
pub fn gru_cell(g: &mut Graph, x: Var, s_prev: Var, p: &GruParams) -> Result<Var> {
    let w = g.param(p.w_input);
    let b = g.param(p.bias);
    let projected = g.matvec(w, x)?;
    let projected = g.add(projected, b)?;
    gru_step(g, projected, s_prev, p)
}

fn scan(g: &mut Graph, projected: Var, len: usize, p: &GruParams, reverse: bool) -> Result<Var> {
    let mut s = g.constant(Tensor::zeros(&[p.state_dim]));
    let mut states = vec![s; len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for i in order {
        let x = g.row(projected, i)?;
        s = gru_step(g, x, s, p)?;
        states[i] = s;
    }
    g.stack_rows(&states)
}

/// Bidirectional GRU over `[L × p]` inputs; row `i` of the result is
/// `[→u_i ; ←u_i]`. Both directions start from zero states.
pub fn bigru_layer(g: &mut Graph, inputs: Var, fwd: &GruParams, bwd: &GruParams) -> Result<Var> {
    let shape = g.shape(inputs).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::contract(format!("bigru_layer needs [L × p] inputs with L ≥ 1, got {shape:?}")));
    }
    let len = shape[0];
    let mut halves = Vec::with_capacity(2);
    for (p, reverse) in [(fwd, false), (bwd, true)] {
        let w = g.param(p.w_input);
        let b = g.param(p.bias);
        let proj = g.matmul_nt(inputs, w)?;
        let proj = g.add_row(proj, b)?;
        halves.push(scan(g, proj, len, p, reverse)?);
    }
    g.concat(&halves, 1)
}

/// `λH + (1−λ)U`
pub fn residual_combine(g: &mut Graph, deep: Var, shallow: Var, lambda: f64) -> Result<Var> {
    let h = g.scale(deep, lambda)?;
    let u = g.scale(shallow, 1.0 - lambda)?;
    g.add(h, u)
}

/// Runs the shared encoder over a source id sequence (fixed-vocabulary ids).
pub fn encode(g: &mut Graph, model: &Model, src_ids: &[usize]) -> Result<EncoderOutput> {
    if src_ids.is_empty() {
        return Err(Error::contract("cannot encode an empty source"));
    }
    let p: &EncoderParams = &model.params.encoder;
    let table = g.param(model.params.embedding);
    let emb = g.gather_rows(table, src_ids)?;
    let shallow = bigru_layer(g, emb, &p.fwd1, &p.bwd1)?;
    let (deep, memory) = if model.ablations.no_residual {
        (None, shallow)
    } else {
        let deep = bigru_layer(g, shallow, &p.fwd2, &p.bwd2)?;
        let memory = residual_combine(g, deep, shallow, model.hp.residual_mix)?;
        (Some(deep), memory)
    };
    let len = src_ids.len();
    let half = model.hp.hidden_dim / 2;
    let last = g.row(memory, len - 1)?;
    let first = g.row(memory, 0)?;
    let fwd = g.slice(last, 0, half)?;
    let bwd = g.slice(first, half, half)?;
    let decoder_init = g.concat(&[fwd, bwd], 0)?;
    Ok(EncoderOutput {
        shallow,
        deep,
        memory,
        decoder_init,
        len,
    })
}
