//! Beam search over any step-wise scorer.

use crate::error::{Error, Result};

/// A left-to-right model: a start state, and for each state and previous
/// token the next state plus log-probabilities over all output ids.
pub trait StepScorer {
    type State: Clone;

    fn start(&self) -> Result<Self::State>;

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum number of emitted tokens (EOS included).
    pub max_depth: usize,
    pub bos: usize,
    pub eos: usize,
    /// Ids that are never emitted.
    pub banned: Vec<usize>,
    /// Scores finished hypotheses by `log_prob / len^α` when set.
    pub length_penalty: Option<f64>,
    /// Also decode greedily and return that sequence when it scores higher.
    pub keep_greedy: bool,
}

impl BeamConfig {
    pub fn new(width: usize, max_depth: usize, bos: usize, eos: usize) -> Self {
        BeamConfig {
            width,
            max_depth,
            bos,
            eos,
            banned: Vec::new(),
            length_penalty: None,
            keep_greedy: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    /// Emitted ids, without the trailing EOS.
    pub tokens: Vec<usize>,
    /// Total log-probability, including EOS when it was emitted.
    pub log_prob: f64,
    pub ended_with_eos: bool,
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
}

fn score(log_prob: f64, len: usize, cfg: &BeamConfig) -> f64 {
    match cfg.length_penalty {
        Some(alpha) if len > 0 => log_prob / (len as f64).powf(alpha),
        _ => log_prob,
    }
}

fn finish<S>(h: Hyp<S>, eos: usize) -> BeamResult {
    let mut tokens = h.tokens;
    let ended = tokens.last() == Some(&eos);
    if ended {
        tokens.pop();
    }
    BeamResult {
        tokens,
        log_prob: h.log_prob,
        ended_with_eos: ended,
    }
}

fn search<M: StepScorer>(model: &M, cfg: &BeamConfig, width: usize) -> Result<BeamResult> {
    if width == 0 || cfg.max_depth == 0 {
        return Err(Error::contract("beam width and depth must be at least 1"));
    }
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.start()?,
    }];
    let mut finished: Vec<(f64, Hyp<M::State>)> = Vec::new();

    for depth in 1..=cfg.max_depth {
        // (score, hyp index, token, log_prob, next state index)
        let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (hi, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(cfg.bos);
            let (state, lp) = model.step(&h.state, prev)?;
            next_states.push(state);
            let mut local: Vec<(f64, usize)> = lp
                .iter()
                .enumerate()
                .filter(|(t, v)| v.is_finite() && !cfg.banned.contains(t))
                .map(|(t, v)| (h.log_prob + v, t))
                .collect();
            local.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            local.truncate(width);
            for (total, t) in local {
                let s = if t == cfg.eos || depth == cfg.max_depth {
                    score(total, depth, cfg)
                } else {
                    total
                };
                cands.push((s, hi, t, total));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);

        let mut next = Vec::with_capacity(width);
        for (s, hi, t, total) in cands {
            let mut tokens = live[hi].tokens.clone();
            tokens.push(t);
            let h = Hyp {
                tokens,
                log_prob: total,
                state: next_states[hi].clone(),
            };
            if t == cfg.eos || depth == cfg.max_depth {
                finished.push((s, h));
            } else {
                next.push(h);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // Extending a hypothesis never raises its log-probability, so without a
        // length penalty nothing live can overtake the best finished one.
        if cfg.length_penalty.is_none() {
            let best_finished = finished.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best_finished >= best_live {
                break;
            }
        }
    }

    let best = finished
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .map(|(_, h)| h)
        .or_else(|| live.into_iter().next());
    best.map(|h| finish(h, cfg.eos))
        .ok_or_else(|| Error::contract("every token is banned; nothing to decode"))
}

/// Width-1 search.
pub fn greedy_search<M: StepScorer>(model: &M, cfg: &BeamConfig) -> Result<BeamResult> {
    search(model, cfg, 1)
}

/// Beam search from BOS. Hypotheses finish at EOS or at `max_depth`; the
/// best finished hypothesis is returned. With `keep_greedy`, the greedy
/// sequence is returned instead whenever it scores strictly higher, so the
/// result is never worse than greedy decoding.
pub fn beam_search<M: StepScorer>(model: &M, cfg: &BeamConfig) -> Result<BeamResult> {
    let beam = search(model, cfg, cfg.width)?;
    if !cfg.keep_greedy || cfg.width == 1 {
        return Ok(beam);
    }
    let greedy = search(model, cfg, 1)?;
    let len = |r: &BeamResult| r.tokens.len() + usize::from(r.ended_with_eos);
    if score(greedy.log_prob, len(&greedy), cfg) > score(beam.log_prob, len(&beam), cfg) {
        Ok(greedy)
    } else {
        Ok(beam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Log-probabilities depend only on the step index.
    struct Table(Vec<Vec<f64>>);

    impl StepScorer for Table {
        type State = usize;
        fn start(&self) -> Result<usize> {
            Ok(0)
        }
        fn step(&self, t: &usize, _prev: usize) -> Result<(usize, Vec<f64>)> {
            let row = &self.0[(*t).min(self.0.len() - 1)];
            Ok((t + 1, row.iter().map(|p: &f64| p.ln()).collect()))
        }
    }

    /// Next-token distribution conditioned on the previous token.
    struct Bigram(Vec<Vec<f64>>);

    impl StepScorer for Bigram {
        type State = ();
        fn start(&self) -> Result<()> {
            Ok(())
        }
        fn step(&self, _: &(), prev: usize) -> Result<((), Vec<f64>)> {
            Ok(((), self.0[prev].iter().map(|p: &f64| p.ln()).collect()))
        }
    }

    #[test]
    fn peaked_model_emits_its_sequence() {
        // ids: 0 = bos, 1 = eos, 2, 3
        let m = Table(vec![
            vec![0.0, 0.02, 0.95, 0.03],
            vec![0.0, 0.02, 0.03, 0.95],
            vec![0.0, 0.96, 0.02, 0.02],
        ]);
        let cfg = BeamConfig::new(3, 10, 0, 1);
        let r = beam_search(&m, &cfg).unwrap();
        assert_eq!(r.tokens, vec![2, 3]);
        assert!(r.ended_with_eos);
        assert_eq!(greedy_search(&m, &cfg).unwrap(), r);
    }

    #[test]
    fn beam_beats_greedy_on_a_trap() {
        // Greedy takes 2 (0.6) then faces a flat distribution; 3 (0.4) leads to a sure EOS.
        let mut t = vec![vec![0.0; 5]; 5];
        t[0] = vec![0.0, 0.0, 0.6, 0.4, 0.0];
        t[2] = vec![0.0, 0.34, 0.0, 0.33, 0.33];
        t[3] = vec![0.0, 1.0, 0.0, 0.0, 0.0];
        t[4] = vec![0.0, 1.0, 0.0, 0.0, 0.0];
        let m = Bigram(t);
        let mut cfg = BeamConfig::new(2, 2, 0, 1);
        cfg.banned = vec![0];
        let g = greedy_search(&m, &cfg).unwrap();
        assert_eq!(g.tokens, vec![2]);
        let b = beam_search(&m, &cfg).unwrap();
        assert_eq!(b.tokens, vec![3]);
        assert!((b.log_prob - 0.4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn max_depth_finishes_without_eos() {
        let m = Table(vec![vec![0.0, 0.1, 0.9]]);
        let cfg = BeamConfig::new(2, 3, 0, 1);
        let r = beam_search(&m, &cfg).unwrap();
        assert_eq!(r.tokens, vec![2, 2, 2]);
        assert!(!r.ended_with_eos);
    }

    #[test]
    fn banned_ids_are_never_emitted() {
        let m = Table(vec![vec![0.0, 0.1, 0.8, 0.1]]);
        let mut cfg = BeamConfig::new(2, 3, 0, 1);
        cfg.banned = vec![2];
        let r = beam_search(&m, &cfg).unwrap();
        assert!(!r.tokens.contains(&2));
        cfg.banned = vec![1, 2, 3];
        assert!(beam_search(&m, &cfg).is_err());
    }
}
