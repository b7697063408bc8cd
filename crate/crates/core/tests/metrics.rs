use dualview::eval::{lcs_len, rouge_l, rouge_n, ConfusionMatrix, RougeScore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ngrams(xs: &[u8], n: usize) -> Vec<&[u8]> {
    if xs.len() < n {
        return vec![];
    }
    (0..=xs.len() - n).map(|i| &xs[i..i + n]).collect()
}

/// Clipped overlap by counting every distinct n-gram in both lists.
fn rouge_n_oracle(cand: &[u8], refr: &[u8], n: usize) -> (usize, usize, usize) {
    let (c, r) = (ngrams(cand, n), ngrams(refr, n));
    let mut seen: Vec<&[u8]> = vec![];
    let mut hits = 0;
    for g in &c {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        let in_c = c.iter().filter(|x| *x == g).count();
        let in_r = r.iter().filter(|x| *x == g).count();
        hits += in_c.min(in_r);
    }
    (hits, c.len(), r.len())
}

fn is_subsequence(sub: &[u8], of: &[u8]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Longest common subsequence by trying every subsequence of `a`.
fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn prf(hits: usize, cand: usize, refr: usize) -> (f64, f64, f64) {
    let r = if refr == 0 { 0.0 } else { hits as f64 / refr as f64 };
    let p = if cand == 0 { 0.0 } else { hits as f64 / cand as f64 };
    let f = if hits == 0 { 0.0 } else { 2.0 * hits as f64 / (cand + refr) as f64 };
    (r, p, f)
}

fn close(s: RougeScore, (r, p, f): (f64, f64, f64)) -> bool {
    (s.recall - r).abs() <= 1e-12 && (s.precision - p).abs() <= 1e-12 && (s.f1 - f).abs() <= 1e-12
}

/// Macro precision, recall and F1 plus balanced accuracy from label lists.
fn classification_oracle(gold: &[usize], pred: &[usize], k: usize) -> (f64, f64) {
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for c in 0..k {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count();
        let npred = pred.iter().filter(|p| **p == c).count();
        let ngold = gold.iter().filter(|g| **g == c).count();
        p_sum += if npred == 0 { 0.0 } else { tp as f64 / npred as f64 };
        r_sum += if ngold == 0 { 0.0 } else { tp as f64 / ngold as f64 };
    }
    let (p, r) = (p_sum / k as f64, r_sum / k as f64);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (f1, r)
}

fn tokens(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..5, 0..max)
}

fn labelled(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(move |n| (prop::collection::vec(0..k, n), prop::collection::vec(0..k, n)))
}

proptest! {
    #[test]
    fn rouge_n_matches_counting(cand in tokens(16), refr in tokens(16), n in 1usize..3) {
        let (h, c, r) = rouge_n_oracle(&cand, &refr, n);
        prop_assert!(close(rouge_n(&cand, &refr, n), prf(h, c, r)));
    }

    #[test]
    fn lcs_matches_exhaustive_search(a in tokens(13), b in tokens(13)) {
        let l = lcs_oracle(&a, &b);
        prop_assert_eq!(lcs_len(&a, &b), l);
        prop_assert_eq!(lcs_len(&b, &a), l);
        prop_assert!(close(rouge_l(&a, &b), prf(l, a.len(), b.len())));
    }

    #[test]
    fn rouge_is_bounded_and_swaps_roles(a in tokens(20), b in tokens(20)) {
        for (x, y) in [(rouge_n(&a, &b, 1), rouge_n(&b, &a, 1)), (rouge_n(&a, &b, 2), rouge_n(&b, &a, 2)), (rouge_l(&a, &b), rouge_l(&b, &a))] {
            for v in [x.recall, x.precision, x.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(x.recall, y.precision);
            prop_assert!((x.f1 - y.f1).abs() <= 1e-15);
        }
    }

    #[test]
    fn identical_sequences_score_one(a in prop::collection::vec(0u8..5, 2..20)) {
        for s in [rouge_n(&a, &a, 1), rouge_n(&a, &a, 2), rouge_l(&a, &a)] {
            prop_assert_eq!((s.recall, s.precision, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn corpus_mean_ignores_order(fs in prop::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
        let scores: Vec<RougeScore> = fs.iter().map(|&f| RougeScore { recall: f, precision: 1.0 - f, f1: f * f }).collect();
        let mut shuffled = scores.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(RougeScore::mean(&scores), RougeScore::mean(&shuffled));
    }

    #[test]
    fn classification_matches_counting((gold, pred) in labelled(4)) {
        let cm = ConfusionMatrix::from_labels(&gold, &pred, 4).unwrap();
        let (f1, bacc) = classification_oracle(&gold, &pred, 4);
        prop_assert!((cm.macro_f1().unwrap() - f1).abs() <= 1e-12);
        prop_assert!((cm.balanced_accuracy().unwrap() - bacc).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn classification_ignores_example_order((gold, pred) in labelled(3), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..gold.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let g2: Vec<usize> = idx.iter().map(|&i| gold[i]).collect();
        let p2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        let a = ConfusionMatrix::from_labels(&gold, &pred, 3).unwrap();
        let b = ConfusionMatrix::from_labels(&g2, &p2, 3).unwrap();
        prop_assert_eq!(a.macro_f1().unwrap(), b.macro_f1().unwrap());
        prop_assert_eq!(a.balanced_accuracy().unwrap(), b.balanced_accuracy().unwrap());
    }

    #[test]
    fn perfect_predictions_score_one(gold in prop::collection::vec(0usize..5, 1..50)) {
        let cm = ConfusionMatrix::from_labels(&gold, &gold, 5).unwrap();
        prop_assert_eq!(cm.balanced_accuracy().unwrap() * 5.0, (0..5).filter(|c| gold.contains(c)).count() as f64);
    }
}

#[test]
fn uniform_guessing_has_chance_balanced_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in [2, 3, 5] {
        let gold: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..k)).collect();
        let b = ConfusionMatrix::from_labels(&gold, &pred, k).unwrap().balanced_accuracy().unwrap();
        assert!((b - 1.0 / k as f64).abs() <= 0.02, "k={k}: {b}");
    }
}

#[test]
fn out_of_range_labels_are_rejected() {
    assert!(ConfusionMatrix::from_labels(&[0, 3], &[0, 1], 3).is_err());
    assert!(ConfusionMatrix::from_labels(&[0], &[0, 1], 3).is_err());
    assert!(ConfusionMatrix::new(3).macro_f1().is_err());
}
