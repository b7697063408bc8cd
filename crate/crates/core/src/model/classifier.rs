//! Source-view and summary-view sentiment classifiers and their losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::decoder::{attend, AttendedMemory, LOG_FLOOR};
use super::params::ClassifierParams;
use super::Model;
use crate::autodiff::{argmax, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Inverted dropout on the classifier hidden layer, drawing masks from a
/// seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    rng: ChaCha8Rng,
    rate: f64,
}

impl Dropout {
    pub fn new(seed: u64, stream: u64, rate: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Dropout { rng, rate }
    }

    fn mask(&mut self, n: usize) -> Tensor {
        let keep = 1.0 - self.rate;
        Tensor::vector(
            (0..n)
                .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
        )
    }
}

/// Two attention passes over `memory`: the trainable query produces a
/// glimpse, which then queries the memory again (with its own parameters)
/// for the context vector `e`.
pub fn glimpse_aggregate(
    g: &mut Graph,
    memory: Var,
    mask: Option<Vec<bool>>,
    p: &ClassifierParams,
) -> Result<Var> {
    let first = AttendedMemory::new(g, memory, &p.glimpse, mask.clone())?;
    let query = g.param(p.query);
    let (_, glimpse) = attend(g, &first, &p.glimpse, query)?;
    let second = AttendedMemory::new(g, memory, &p.second, mask)?;
    let (_, e) = attend(g, &second, &p.second, glimpse)?;
    Ok(e)
}

/// `softmax(W_z2·ReLU(W_z1·e + b_z1) + b_z2)`, with dropout on the hidden
/// layer when `dropout` is given.
pub fn classify(g: &mut Graph, e: Var, p: &ClassifierParams, dropout: Option<&mut Dropout>) -> Result<Var> {
    let w1 = g.param(p.w_z1);
    let b1 = g.param(p.b_z1);
    let h = g.matvec(w1, e)?;
    let h = g.add(h, b1)?;
    let mut h = g.relu(h)?;
    if let Some(d) = dropout {
        if d.rate > 0.0 {
            let m = d.mask(g.value(h).len());
            let m = g.constant(m);
            h = g.mul(h, m)?;
        }
    }
    let w2 = g.param(p.w_z2);
    let b2 = g.param(p.b_z2);
    let logits = g.matvec(w2, h)?;
    let logits = g.add(logits, b2)?;
    g.softmax(logits)
}

/// Aggregates `memory` (glimpse attention, or max-pooling under the `-A`
/// ablation) and classifies the result.
pub fn classifier_distribution(
    g: &mut Graph,
    model: &Model,
    memory: Var,
    p: &ClassifierParams,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let e = if model.ablations.maxpool_classifier {
        g.max_rows(memory)?
    } else {
        glimpse_aggregate(g, memory, None, p)?
    };
    classify(g, e, p, dropout)
}

/// `−ln P(z*)` for a 0-based label.
pub fn classification_loss(g: &mut Graph, dist: Var, label: usize) -> Result<Var> {
    let p = g.pick(dist, label)?;
    let lp = g.log_clamped(p, LOG_FLOOR)?;
    g.scale(lp, -1.0)
}

/// `D_KL(P_ec ‖ P_dc) = Σ_k P_ec(k)·(ln P_ec(k) − ln P_dc(k))`; gradients
/// reach both arguments.
pub fn inconsistency_loss(g: &mut Graph, p_ec: Var, p_dc: Var) -> Result<Var> {
    let a = g.log_clamped(p_ec, LOG_FLOOR)?;
    let b = g.log_clamped(p_dc, LOG_FLOOR)?;
    let diff = g.sub(a, b)?;
    let terms = g.mul(p_ec, diff)?;
    g.sum(terms)
}

/// Averages two class distributions; the label is the 0-based argmax with
/// ties going to the lower index.
pub fn merged_predict(p_ec: &[f64], p_dc: &[f64]) -> Result<(Vec<f64>, usize)> {
    if p_ec.len() != p_dc.len() || p_ec.is_empty() {
        return Err(Error::Dimension {
            op: "merged_predict",
            lhs: vec![p_ec.len()],
            rhs: vec![p_dc.len()],
        });
    }
    let merged: Vec<f64> = p_ec.iter().zip(p_dc).map(|(a, b)| (a + b) / 2.0).collect();
    let label = argmax(&merged);
    Ok((merged, label))
}

/// Fraction of positions where the two label lists differ.
pub fn disagreement_rate(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "disagreement_rate",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
}
