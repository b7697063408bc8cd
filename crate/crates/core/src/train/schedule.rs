//! Plateau-based learning-rate halving and early stopping over the history
//! of validation losses, one entry per checkpoint.

/// A loss improves on the best so far only when lower by more than this.
pub const PLATEAU_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MIN_LR: f64 = 1e-6;

fn improves(x: f64, best: f64) -> bool {
    x < best - PLATEAU_TOLERANCE
}

/// Index and value of the running best; later values replace it only on
/// strict improvement.
pub fn running_best(history: &[f64]) -> Option<(usize, f64)> {
    let (&first, rest) = history.split_first()?;
    let mut best = (0, first);
    for (i, &x) in rest.iter().enumerate() {
        if improves(x, best.1) || (best.1.is_nan() && !x.is_nan()) {
            best = (i + 1, x);
        }
    }
    Some(best)
}

/// Whether the latest entry is a new best.
pub fn latest_improved(history: &[f64]) -> bool {
    match running_best(history) {
        Some((i, _)) => i + 1 == history.len(),
        None => false,
    }
}

/// Halves `lr` (down to `min_lr`) unless the latest loss improved on every
/// earlier one.
pub fn lr_on_plateau(lr: f64, history: &[f64], min_lr: f64) -> f64 {
    if history.len() < 2 || latest_improved(history) {
        lr
    } else {
        (lr / 2.0).max(min_lr)
    }
}

/// Checkpoints since the running best was set.
pub fn checkpoints_since_best(history: &[f64]) -> usize {
    running_best(history).map_or(0, |(i, _)| history.len() - 1 - i)
}

pub fn early_stop(history: &[f64], patience: usize) -> bool {
    checkpoints_since_best(history) >= patience
}
