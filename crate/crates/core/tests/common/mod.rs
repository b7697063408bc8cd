#![allow(dead_code)]

use dualview::model::{Ablations, Model};
use dualview::text::{Example, TokenizedRecord, Vocabulary, WordCounts};
use dualview::HyperParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn micro_hp(d: usize, de: usize, k: usize) -> HyperParams {
    let mut hp = HyperParams::default().with_dims(de, d);
    hp.num_classes = k;
    hp.init_scale = 0.5;
    hp
}

pub fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

pub fn micro_vocab() -> Vocabulary {
    let mut c = WordCounts::new();
    c.add_tokens(&words(&["good", "bad", "phone", "case", "works", "."]));
    Vocabulary::build(&c, 100).unwrap()
}

/// Review of `lx` tokens (two of them OOV) and a summary of `ly - 1` words
/// (so `ly` targets with EOS), one copied from the OOVs.
pub fn micro_example(lx: usize, ly: usize, label: usize, vocab: &Vocabulary) -> Example {
    let pool = ["good", "bad", "phone", "zork", "case", "works", "qux"];
    let review: Vec<String> = (0..lx).map(|i| pool[i % pool.len()].to_string()).collect();
    let mut summary = vec!["zork".to_string()];
    let fill = ["phone", "works", "good", "."];
    for i in 1..ly.saturating_sub(1) {
        summary.push(fill[i % fill.len()].to_string());
    }
    let rec = TokenizedRecord {
        review,
        summary,
        rating: label + 1,
    };
    Example::encode(0, &rec, vocab)
}

pub fn micro_model(d: usize, de: usize, k: usize, ablations: Ablations, seed: u64) -> (Model, Vocabulary) {
    let vocab = micro_vocab();
    let m = Model::new(micro_hp(d, de, k), ablations, vocab.len(), seed).unwrap();
    (m, vocab)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(3) + 1e-9).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
