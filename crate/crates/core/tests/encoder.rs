mod common;

use common::*;
use dualview::autodiff::{sigmoid, Graph, Tensor};
use dualview::model::{bigru_layer, encode, gru_cell, residual_combine, Ablations, GruParams};
use dualview::autodiff::ParamStore;

/// Direct scalar-loop evaluation of one GRU step.
fn gru_oracle(store: &ParamStore, p: &GruParams, x: &[f64], s: &[f64]) -> Vec<f64> {
    let (q, n) = (p.state_dim, p.input_dim);
    let w_in = store.get(p.w_input).data();
    let b = store.get(p.bias).data();
    let w_g = store.get(p.w_gates).data();
    let w_c = store.get(p.w_cand).data();
    let lin = |row: usize| -> f64 {
        let mut acc = b[row];
        for k in 0..n {
            acc += w_in[row * n + k] * x[k];
        }
        acc
    };
    let mut r = vec![0.0; q];
    let mut c = vec![0.0; q];
    for j in 0..q {
        let mut hr = 0.0;
        let mut hc = 0.0;
        for k in 0..q {
            hr += w_g[j * q + k] * s[k];
            hc += w_g[(q + j) * q + k] * s[k];
        }
        r[j] = sigmoid(lin(j) + hr);
        c[j] = sigmoid(lin(q + j) + hc);
    }
    (0..q)
        .map(|j| {
            let mut h = 0.0;
            for k in 0..q {
                h += w_c[j * q + k] * r[k] * s[k];
            }
            let g = (lin(2 * q + j) + h).tanh();
            c[j] * s[j] + (1.0 - c[j]) * g
        })
        .collect()
}

fn zero_store(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().fill(0.0);
    }
}

#[test]
fn gru_cell_zero_params_zero_state() {
    let (mut m, _) = micro_model(8, 6, 3, Ablations::none(), 1);
    zero_store(&mut m.store);
    let p = m.params.encoder.fwd1;
    let mut g = Graph::inference(&m.store);
    let x = g.constant(Tensor::vector(vec![0.3; 6]));
    let s = g.constant(Tensor::zeros(&[4]));
    let out = gru_cell(&mut g, x, s, &p).unwrap();
    assert_eq!(g.value(out).data(), &[0.0; 4]);
}

#[test]
fn gru_cell_update_gate_saturated_carries_state() {
    let (mut m, _) = micro_model(8, 6, 3, Ablations::none(), 2);
    let p = m.params.encoder.fwd1;
    let q = p.state_dim;
    for j in q..2 * q {
        m.store.get_mut(p.bias).data_mut()[j] = 60.0;
    }
    let mut g = Graph::inference(&m.store);
    let prev = vec![0.5, -0.25, 0.75, 0.1];
    let x = g.constant(Tensor::vector(vec![0.2; 6]));
    let s = g.constant(Tensor::vector(prev.clone()));
    let out = gru_cell(&mut g, x, s, &p).unwrap();
    for (a, b) in g.value(out).data().iter().zip(&prev) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn gru_cell_matches_scalar_oracle() {
    let (m, _) = micro_model(10, 7, 3, Ablations::none(), 3);
    let mut r = rng(9);
    for p in [m.params.encoder.fwd1, m.params.encoder.bwd2, m.params.decoder.gru] {
        for _ in 0..20 {
            let x = random_vec(&mut r, p.input_dim, 1.0);
            let s = random_vec(&mut r, p.state_dim, 1.0);
            let mut g = Graph::inference(&m.store);
            let xv = g.constant(Tensor::vector(x.clone()));
            let sv = g.constant(Tensor::vector(s.clone()));
            let out = gru_cell(&mut g, xv, sv, &p).unwrap();
            let oracle = gru_oracle(&m.store, &p, &x, &s);
            for (a, b) in g.value(out).data().iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn gru_cell_shape_mismatch_is_dimension_error() {
    let (m, _) = micro_model(8, 6, 3, Ablations::none(), 1);
    let mut g = Graph::inference(&m.store);
    let x = g.constant(Tensor::vector(vec![0.0; 5]));
    let s = g.constant(Tensor::zeros(&[4]));
    let e = gru_cell(&mut g, x, s, &m.params.encoder.fwd1).unwrap_err();
    assert_eq!(e.category(), "dimension");
}

#[test]
fn bigru_single_position_is_two_cells() {
    let (m, _) = micro_model(8, 6, 3, Ablations::none(), 4);
    let (f, b) = (m.params.encoder.fwd1, m.params.encoder.bwd1);
    let x = vec![0.1, -0.2, 0.3, 0.05, 0.4, -0.6];
    let mut g = Graph::inference(&m.store);
    let inputs = g.constant(Tensor::matrix(1, 6, x.clone()).unwrap());
    let out = bigru_layer(&mut g, inputs, &f, &b).unwrap();
    assert_eq!(g.shape(out), &[1, 8]);
    let mut expect = gru_oracle(&m.store, &f, &x, &[0.0; 4]);
    expect.extend(gru_oracle(&m.store, &b, &x, &[0.0; 4]));
    for (a, e) in g.value(out).data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn bigru_zero_params_and_empty_input() {
    let (mut m, _) = micro_model(8, 6, 3, Ablations::none(), 5);
    zero_store(&mut m.store);
    let mut g = Graph::inference(&m.store);
    let inputs = g.constant(Tensor::matrix(3, 6, vec![0.7; 18]).unwrap());
    let out = bigru_layer(&mut g, inputs, &m.params.encoder.fwd1, &m.params.encoder.bwd1).unwrap();
    assert_eq!(g.shape(out), &[3, 8]);
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    assert!(encode(&mut g, &m, &[]).is_err());
}

#[test]
fn bigru_reversal_swaps_halves_with_tied_directions() {
    let (mut m, _) = micro_model(8, 6, 3, Ablations::none(), 6);
    let (f, b) = (m.params.encoder.fwd1, m.params.encoder.bwd1);
    for (src, dst) in [(f.w_input, b.w_input), (f.bias, b.bias), (f.w_gates, b.w_gates), (f.w_cand, b.w_cand)] {
        let t = m.store.get(src).clone();
        *m.store.get_mut(dst) = t;
    }
    let mut r = rng(1);
    let l = 5;
    let x = random_vec(&mut r, l * 6, 1.0);
    let rev: Vec<f64> = (0..l).rev().flat_map(|i| x[i * 6..(i + 1) * 6].to_vec()).collect();
    let run = |data: Vec<f64>| {
        let mut g = Graph::inference(&m.store);
        let inputs = g.constant(Tensor::matrix(l, 6, data).unwrap());
        let out = bigru_layer(&mut g, inputs, &f, &b).unwrap();
        g.value(out).clone()
    };
    let a = run(x);
    let c = run(rev);
    for i in 0..l {
        let (ra, rc) = (a.row(i), c.row(l - 1 - i));
        assert_eq!(&ra[..4], &rc[4..]);
        assert_eq!(&ra[4..], &rc[..4]);
    }
}

#[test]
fn residual_combine_examples() {
    let mut g = Graph::standalone();
    let h = g.constant(Tensor::vector(vec![2.0, 0.0]));
    let u = g.constant(Tensor::vector(vec![0.0, 2.0]));
    let mix = residual_combine(&mut g, h, u, 0.5).unwrap();
    assert_eq!(g.value(mix).data(), &[1.0, 1.0]);
    let only_h = residual_combine(&mut g, h, u, 1.0).unwrap();
    assert_eq!(g.value(only_h).data(), &[2.0, 0.0]);
    let bad = g.constant(Tensor::vector(vec![1.0]));
    assert!(residual_combine(&mut g, h, bad, 0.5).is_err());
}

#[test]
fn encode_micro_shapes() {
    let (m, _) = micro_model(4, 3, 3, Ablations::none(), 7);
    let mut g = Graph::inference(&m.store);
    let out = encode(&mut g, &m, &[5]).unwrap();
    assert_eq!(g.shape(out.shallow), &[1, 4]);
    assert_eq!(g.shape(out.deep.unwrap()), &[1, 4]);
    assert_eq!(g.shape(out.memory), &[1, 4]);
    assert_eq!(g.shape(out.decoder_init), &[4]);
}

#[test]
fn memory_bank_and_decoder_init_follow_their_formulas() {
    let (m, vocab) = micro_model(8, 6, 3, Ablations::none(), 8);
    let ex = micro_example(6, 4, 1, &vocab);
    let mut g = Graph::inference(&m.store);
    let out = encode(&mut g, &m, &ex.src_ids).unwrap();
    let u = g.value(out.shallow).clone();
    let h = g.value(out.deep.unwrap()).clone();
    let mem = g.value(out.memory).clone();
    let lambda = m.hp.residual_mix;
    for i in 0..u.len() {
        assert_eq!(mem.data()[i], lambda * h.data()[i] + (1.0 - lambda) * u.data()[i]);
    }
    let l = ex.src_ids.len();
    let init = g.value(out.decoder_init).data().to_vec();
    for j in 0..4 {
        let fwd = lambda * h.row(l - 1)[j] + (1.0 - lambda) * u.row(l - 1)[j];
        let bwd = lambda * h.row(0)[4 + j] + (1.0 - lambda) * u.row(0)[4 + j];
        assert_eq!(init[j], fwd);
        assert_eq!(init[4 + j], bwd);
    }
    let mut g2 = Graph::inference(&m.store);
    let again = encode(&mut g2, &m, &ex.src_ids).unwrap();
    assert_eq!(g2.value(again.memory), &mem);
}

#[test]
fn without_residual_the_memory_is_the_first_layer() {
    let (m, vocab) = micro_model(8, 6, 3, Ablations { no_residual: true, ..Ablations::none() }, 8);
    let ex = micro_example(6, 4, 1, &vocab);
    let mut g = Graph::inference(&m.store);
    let out = encode(&mut g, &m, &ex.src_ids).unwrap();
    assert!(out.deep.is_none());
    assert_eq!(out.memory, out.shallow);
}
