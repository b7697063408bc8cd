//! Parameter registration for every component of the joint model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore};
use crate::error::Result;
use crate::hyper::HyperParams;

/// One GRU direction. The input projection packs the reset, update and
/// candidate blocks (in that order) so that a whole sequence can be projected
/// with one product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    /// `[3q × p]`
    pub w_input: ParamId,
    /// `[3q]`
    pub bias: ParamId,
    /// `[2q × q]`, reset then update.
    pub w_gates: ParamId,
    /// `[q × q]`, applied to `r ∘ s_prev`.
    pub w_cand: ParamId,
    pub input_dim: usize,
    pub state_dim: usize,
}

/// Additive attention `vᵀ tanh(W_mem·m_i + W_query·x + b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnParams {
    pub w_mem: ParamId,
    pub w_query: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    pub query: ParamId,
    pub glimpse: AttnParams,
    pub second: AttnParams,
    pub w_z1: ParamId,
    pub b_z1: ParamId,
    pub w_z2: ParamId,
    pub b_z2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub fwd1: GruParams,
    pub bwd1: GruParams,
    pub fwd2: GruParams,
    pub bwd2: GruParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub gru: GruParams,
    /// `W_h`, `W_s`, `b_attn`, `v`.
    pub attn: AttnParams,
    /// `[d × 2d]`
    pub w_proj: ParamId,
    pub b_proj: ParamId,
    /// `[|V| × d]`
    pub w_out: ParamId,
    pub b_out: ParamId,
    /// `[1 × (2d + d_e)]`
    pub v_gen: ParamId,
    /// `[1]`
    pub b_gen: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelParams {
    /// `[|V| × d_e]`, shared by the encoder and the decoder.
    pub embedding: ParamId,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub source: ClassifierParams,
    pub summary: ClassifierParams,
}

struct Registrar<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    scale: f64,
}

impl Registrar<'_> {
    fn add(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.insert_uniform(name, shape, self.scale, &mut self.rng)
    }

    fn gru(&mut self, prefix: &str, p: usize, q: usize) -> Result<GruParams> {
        Ok(GruParams {
            w_input: self.add(&format!("{prefix}.w_input"), &[3 * q, p])?,
            bias: self.add(&format!("{prefix}.bias"), &[3 * q])?,
            w_gates: self.add(&format!("{prefix}.w_gates"), &[2 * q, q])?,
            w_cand: self.add(&format!("{prefix}.w_cand"), &[q, q])?,
            input_dim: p,
            state_dim: q,
        })
    }

    fn attn(&mut self, prefix: &str, mem: usize, query: usize, hidden: usize) -> Result<AttnParams> {
        Ok(AttnParams {
            w_mem: self.add(&format!("{prefix}.w_mem"), &[hidden, mem])?,
            w_query: self.add(&format!("{prefix}.w_query"), &[hidden, query])?,
            bias: self.add(&format!("{prefix}.bias"), &[hidden])?,
            v: self.add(&format!("{prefix}.v"), &[hidden])?,
        })
    }

    fn classifier(&mut self, prefix: &str, hp: &HyperParams) -> Result<ClassifierParams> {
        let d = hp.hidden_dim;
        Ok(ClassifierParams {
            query: self.add(&format!("{prefix}.query"), &[hp.query_dim])?,
            glimpse: self.attn(&format!("{prefix}.glimpse"), d, hp.query_dim, hp.attn_dim)?,
            second: self.attn(&format!("{prefix}.second"), d, d, hp.attn_dim)?,
            w_z1: self.add(&format!("{prefix}.w_z1"), &[hp.classifier_dim, d])?,
            b_z1: self.add(&format!("{prefix}.b_z1"), &[hp.classifier_dim])?,
            w_z2: self.add(&format!("{prefix}.w_z2"), &[hp.num_classes, hp.classifier_dim])?,
            b_z2: self.add(&format!("{prefix}.b_z2"), &[hp.num_classes])?,
        })
    }
}

/// Registers every parameter in a fixed order, drawing values uniformly from
/// `[-init_scale, init_scale]` with a generator seeded by `seed`.
pub fn register(
    store: &mut ParamStore,
    hp: &HyperParams,
    vocab_size: usize,
    seed: u64,
) -> Result<ModelParams> {
    let mut r = Registrar {
        store,
        rng: ChaCha8Rng::seed_from_u64(seed),
        scale: hp.init_scale,
    };
    let (de, d) = (hp.embed_dim, hp.hidden_dim);
    let half = d / 2;
    let embedding = r.add("embedding", &[vocab_size, de])?;
    let encoder = EncoderParams {
        fwd1: r.gru("enc.l1.fwd", de, half)?,
        bwd1: r.gru("enc.l1.bwd", de, half)?,
        fwd2: r.gru("enc.l2.fwd", d, half)?,
        bwd2: r.gru("enc.l2.bwd", d, half)?,
    };
    let decoder = DecoderParams {
        gru: r.gru("dec.gru", de, d)?,
        attn: r.attn("dec.attn", d, d, hp.attn_dim)?,
        w_proj: r.add("dec.w_proj", &[d, 2 * d])?,
        b_proj: r.add("dec.b_proj", &[d])?,
        w_out: r.add("dec.w_out", &[vocab_size, d])?,
        b_out: r.add("dec.b_out", &[vocab_size])?,
        v_gen: r.add("dec.v_gen", &[1, 2 * d + de])?,
        b_gen: r.add("dec.b_gen", &[1])?,
    };
    let source = r.classifier("cls.source", hp)?;
    let summary = r.classifier("cls.summary", hp)?;
    Ok(ModelParams {
        embedding,
        encoder,
        decoder,
        source,
        summary,
    })
}
