//! Adam, global-norm clipping and the weighted multi-task objective.

use crate::autodiff::{Checkpoint, GradStore, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `γ₁L_gen + γ₂L_ec + γ₃L_dc + γ₄L_inc`
pub fn multi_task_loss(losses: [f64; 4], weights: [f64; 4]) -> f64 {
    losses.iter().zip(&weights).map(|(l, w)| l * w).sum()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied scale (1 when no clipping happened).
pub fn clip_gradients(grads: &mut GradStore, params: &ParamStore, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Config(format!("clip norm must be positive, got {max_norm}")));
    }
    for (id, g) in params.ids().zip(grads.iter()) {
        if let Some(v) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Training {
                param: params.name(id).to_string(),
                message: format!("non-finite gradient value {v}"),
            });
        }
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.scale(scale);
        Ok(scale)
    } else {
        Ok(1.0)
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for ((id, g), (m, v)) in ids.into_iter().zip(grads.iter()).zip(self.m.iter_mut().zip(&mut self.v)) {
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// Appends the moments as `adam_m/<name>` and `adam_v/<name>`.
    pub fn push_to(&self, ckpt: &mut Checkpoint, params: &ParamStore) {
        for (prefix, buf) in [("adam_m/", &self.m), ("adam_v/", &self.v)] {
            for ((name, t), b) in params.iter().zip(buf) {
                let moment = Tensor::new(t.shape().to_vec(), b.clone()).expect("moment mirrors parameter");
                ckpt.push(format!("{prefix}{name}"), moment);
            }
        }
    }

    /// Restores moments written by [`AdamState::push_to`].
    pub fn load_from(ckpt: &Checkpoint, params: &ParamStore, lr: f64, t: u64) -> Result<Self> {
        let mut state = AdamState::new(params, lr);
        state.t = t;
        for (prefix, buf) in [("adam_m/", &mut state.m), ("adam_v/", &mut state.v)] {
            for ((name, p), b) in params.iter().zip(buf.iter_mut()) {
                let key = format!("{prefix}{name}");
                let src = ckpt
                    .get(&key)
                    .ok_or_else(|| Error::Compatibility(format!("checkpoint lacks tensor `{key}`")))?;
                if src.shape() != p.shape() {
                    return Err(Error::Dimension {
                        op: "load_adam",
                        lhs: p.shape().to_vec(),
                        rhs: src.shape().to_vec(),
                    });
                }
                b.copy_from_slice(src.data());
            }
        }
        Ok(state)
    }
}
