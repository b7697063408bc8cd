mod common;

use common::*;
use dualview::autodiff::{argmax, softmax_slice, Graph, ParamStore, Tensor};
use dualview::model::{
    classification_loss, classifier_distribution, classify, disagreement_rate, encode,
    glimpse_aggregate, inconsistency_loss, merged_predict, predict_example, Ablations, AttnParams,
    ClassifierParams, Dropout, PredictOptions,
};
use dualview::HyperParams;
use proptest::prelude::*;

fn attention_oracle(store: &ParamStore, p: &AttnParams, mem: &[Vec<f64>], query: &[f64]) -> Vec<f64> {
    let wm = store.get(p.w_mem);
    let wq = store.get(p.w_query);
    let b = store.get(p.bias).data();
    let v = store.get(p.v).data();
    let (h, dm) = wm.dims2();
    let dq = wq.dims2().1;
    let scores: Vec<f64> = mem
        .iter()
        .map(|m| {
            let mut s = 0.0;
            for j in 0..h {
                let mut pre = b[j];
                for k in 0..dm {
                    pre += wm.data()[j * dm + k] * m[k];
                }
                for k in 0..dq {
                    pre += wq.data()[j * dq + k] * query[k];
                }
                s += v[j] * pre.tanh();
            }
            s
        })
        .collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    let mut out = vec![0.0; dm];
    for (m, e) in mem.iter().zip(&ex) {
        for k in 0..dm {
            out[k] += e / z * m[k];
        }
    }
    out
}

fn odd_dims_model() -> dualview::model::Model {
    let mut hp: HyperParams = micro_hp(6, 4, 3);
    hp.attn_dim = 5;
    hp.query_dim = 3;
    hp.classifier_dim = 7;
    dualview::model::Model::new(hp, Ablations::none(), micro_vocab().len(), 11).unwrap()
}

fn memory_var(g: &mut Graph, rows: &[Vec<f64>]) -> dualview::autodiff::Var {
    let cols = rows[0].len();
    g.constant(Tensor::matrix(rows.len(), cols, rows.concat()).unwrap())
}

#[test]
fn glimpse_matches_scalar_oracle() {
    let m = odd_dims_model();
    let p: ClassifierParams = m.params.source;
    let mut r = rng(3);
    for l in 1..6 {
        let rows: Vec<Vec<f64>> = (0..l).map(|_| random_vec(&mut r, 6, 1.0)).collect();
        let mut g = Graph::inference(&m.store);
        let mem = memory_var(&mut g, &rows);
        let e = glimpse_aggregate(&mut g, mem, None, &p).unwrap();
        let q = m.store.get(p.query).data().to_vec();
        let glimpse = attention_oracle(&m.store, &p.glimpse, &rows, &q);
        let oracle = attention_oracle(&m.store, &p.second, &rows, &glimpse);
        for (a, b) in g.value(e).data().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12, "L={l}: {a} vs {b}");
        }
    }
}

#[test]
fn glimpse_single_row_and_uniform_scores() {
    let mut m = odd_dims_model();
    let p = m.params.source;
    let rows = vec![vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]];
    let mut g = Graph::inference(&m.store);
    let mem = memory_var(&mut g, &rows);
    let e = glimpse_aggregate(&mut g, mem, None, &p).unwrap();
    assert_eq!(g.value(e).data(), &rows[0][..]);

    m.store.get_mut(p.glimpse.v).data_mut().fill(0.0);
    m.store.get_mut(p.second.v).data_mut().fill(0.0);
    let rows = vec![vec![1.0, 0.0, 2.0, 0.0, 3.0, 1.0], vec![3.0, 2.0, 0.0, 1.0, 1.0, 1.0]];
    let mut g = Graph::inference(&m.store);
    let mem = memory_var(&mut g, &rows);
    let e = glimpse_aggregate(&mut g, mem, None, &p).unwrap();
    assert_eq!(g.value(e).data(), &[2.0, 1.0, 1.0, 0.5, 2.0, 1.0]);

    let mut g = Graph::inference(&m.store);
    let mem = memory_var(&mut g, &rows);
    assert!(glimpse_aggregate(&mut g, mem, Some(vec![false, false]), &p).is_err());
}

#[test]
fn zero_classifier_is_uniform_with_lowest_label() {
    let mut m = odd_dims_model();
    let p = m.params.source;
    for id in [p.w_z1, p.b_z1, p.w_z2, p.b_z2] {
        m.store.get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::inference(&m.store);
    let e = g.constant(Tensor::vector(vec![0.3; 6]));
    let d = classify(&mut g, e, &p, None).unwrap();
    assert_eq!(g.value(d).data(), &[1.0 / 3.0; 3]);
    assert_eq!(argmax(g.value(d).data()), 0);
}

#[test]
fn dropout_only_changes_training_mode() {
    let m = odd_dims_model();
    let p = m.params.summary;
    let run = |drop: Option<u64>| {
        let mut g = Graph::inference(&m.store);
        let e = g.constant(Tensor::vector(vec![0.4, -0.1, 0.3, 0.2, 0.9, -0.5]));
        let mut d = drop.map(|s| Dropout::new(s, 0, 0.5));
        let out = classify(&mut g, e, &p, d.as_mut()).unwrap();
        g.value(out).data().to_vec()
    };
    assert_eq!(run(None), run(None));
    assert_eq!(run(Some(1)), run(Some(1)));
    let differs = (0..10).any(|s| run(Some(s)) != run(None));
    assert!(differs);
}

#[test]
fn summary_view_with_source_parameters_on_memory_equals_source_view() {
    let (mut m, vocab) = micro_model(8, 6, 3, Ablations::none(), 12);
    let names: Vec<String> = m.store.iter().map(|(n, _)| n.to_string()).collect();
    for n in names.iter().filter(|n| n.starts_with("cls.source.")) {
        let t = m.store.by_name(n).unwrap().clone();
        let dst = m.store.id(&n.replacen("cls.source.", "cls.summary.", 1)).unwrap();
        *m.store.get_mut(dst) = t;
    }
    let ex = micro_example(6, 4, 2, &vocab);
    let mut g = Graph::inference(&m.store);
    let enc = encode(&mut g, &m, &ex.src_ids).unwrap();
    let p_ec = classifier_distribution(&mut g, &m, enc.memory, &m.params.source, None).unwrap();
    let p_dc = classifier_distribution(&mut g, &m, enc.memory, &m.params.summary, None).unwrap();
    assert_eq!(g.value(p_ec), g.value(p_dc));
    assert_eq!(g.shape(p_ec), &[3]);
}

#[test]
fn source_view_does_not_depend_on_decoding_mode() {
    let (m, vocab) = micro_model(8, 6, 3, Ablations::none(), 13);
    let ex = micro_example(6, 4, 2, &vocab);
    let mut opts = PredictOptions::from_hyper(&m.hp);
    opts.max_depth = 5;
    let tf = predict_example(&m, &ex, &vocab, &opts).unwrap();
    opts.teacher_forced = false;
    let free = predict_example(&m, &ex, &vocab, &opts).unwrap();
    assert_eq!(tf.p_ec, free.p_ec);
    assert!(free.p_dc_tf.is_none());
    assert_eq!(tf.p_dc_free, free.p_dc_free);
}

#[test]
fn classification_loss_closed_forms() {
    let mut g = Graph::standalone();
    let uniform = g.constant(Tensor::vector(vec![0.2; 5]));
    let l = classification_loss(&mut g, uniform, 3).unwrap();
    assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);
    assert!((g.value(l).item() - 1.6094).abs() < 1e-4);
    let half = g.constant(Tensor::vector(vec![0.5, 0.25, 0.25]));
    let l = classification_loss(&mut g, half, 0).unwrap();
    assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-12);
    let sure = g.constant(Tensor::vector(vec![0.0, 1.0]));
    let l = classification_loss(&mut g, sure, 1).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut g = Graph::standalone();
    let a = g.constant(Tensor::vector(p.to_vec()));
    let b = g.constant(Tensor::vector(q.to_vec()));
    let k = inconsistency_loss(&mut g, a, b).unwrap();
    g.value(k).item()
}

#[test]
fn kl_examples() {
    let p = [0.5f64, 0.5];
    let q = [0.25f64, 0.75];
    let direct: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    assert!((kl(&p, &q) - direct).abs() < 1e-15);
    assert!((kl(&p, &q) - 0.14384).abs() < 1e-5);
    assert!((kl(&q, &p) - kl(&p, &q)).abs() > 1e-3);
    assert_eq!(kl(&q, &q), 0.0);
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_equal_inputs(seed in any::<u64>(), k in 2usize..8) {
        let mut r = rng(seed);
        let p = random_dist(&mut r, k);
        let q = random_dist(&mut r, k);
        prop_assert!(kl(&p, &q) >= 0.0);
        prop_assert!(kl(&p, &p).abs() <= 1e-15);
    }

    #[test]
    fn positive_logit_scaling_keeps_the_label(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let logits = random_vec(&mut r, 5, 3.0);
        let scaled: Vec<f64> = logits.iter().map(|v| v * c).collect();
        prop_assert_eq!(argmax(&softmax_slice(&logits)), argmax(&softmax_slice(&scaled)));
    }
}

#[test]
fn merged_and_disagreement_examples() {
    let (p, l) = merged_predict(&[0.2, 0.8], &[0.2, 0.8]).unwrap();
    assert_eq!((p, l), (vec![0.2, 0.8], 1));
    let (p, l) = merged_predict(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert_eq!((p, l), (vec![0.5, 0.5], 0));
    assert!(merged_predict(&[1.0], &[0.5, 0.5]).is_err());

    assert_eq!(disagreement_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    assert!((disagreement_rate(&[1, 2, 3], &[1, 2, 4]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(disagreement_rate(&[1], &[2]).unwrap(), 1.0);
    assert!(disagreement_rate(&[1], &[1, 2]).is_err());
}

#[test]
fn maxpool_ablation_pools_rows() {
    let (m, vocab) = micro_model(8, 6, 3, Ablations { maxpool_classifier: true, ..Ablations::none() }, 14);
    let ex = micro_example(6, 4, 2, &vocab);
    let mut g = Graph::inference(&m.store);
    let enc = encode(&mut g, &m, &ex.src_ids).unwrap();
    let p = classifier_distribution(&mut g, &m, enc.memory, &m.params.source, None).unwrap();
    let pooled = g.max_rows(enc.memory).unwrap();
    let direct = classify(&mut g, pooled, &m.params.source, None).unwrap();
    assert_eq!(g.value(p), g.value(direct));
}
