use moeqa::autodiff::Tape;
use moeqa::params::ParamStore;
use moeqa::rng::SeededRng;
use moeqa::routing::{
    gate_probs, gate_weights, init_expert, init_gate, load_balance_loss, load_stats,
    moe_combine, moe_head_forward, switch_route, top_k_select, LoadAssignment, MoEConfig,
};
use moeqa::tensor::Tensor;
use proptest::prelude::*;

fn gelu_ref(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn softmax_ref(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn mat_ref(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                out[i * n + j] += a[i * k + l] * b[l * n + j];
            }
        }
    }
    out
}

fn expert_ref(p: &ParamStore, prefix: &str, x: &[f64], d: usize, h: usize) -> Vec<f64> {
    let w1 = p.get(&format!("{prefix}.w1")).unwrap().data();
    let b1 = p.get(&format!("{prefix}.b1")).unwrap().data();
    let w2 = p.get(&format!("{prefix}.w2")).unwrap().data();
    let b2 = p.get(&format!("{prefix}.b2")).unwrap().data();
    let mut hid = mat_ref(x, w1, 1, d, h);
    for (v, b) in hid.iter_mut().zip(b1) {
        *v = gelu_ref(*v + b);
    }
    let mut out = mat_ref(&hid, w2, 1, h, d);
    for (v, b) in out.iter_mut().zip(b2) {
        *v += b;
    }
    out
}

fn moe_params(d: usize, n: usize, hidden: usize, seed: u64) -> ParamStore {
    let mut rng = SeededRng::new(seed);
    let mut p = ParamStore::new();
    init_gate(&mut p, "head", d, n, 0.8, &mut rng);
    for i in 0..n {
        init_expert(&mut p, &format!("head.experts.{i}"), (d, hidden, d), 0.5, &mut rng);
    }
    // non-zero biases so they are exercised
    for i in 0..n {
        for name in ["b1", "b2"] {
            let b = p.get_mut(&format!("head.experts.{i}.{name}")).unwrap();
            for v in b.data_mut() {
                *v = 0.1 * (i as f64 + 1.0);
            }
        }
    }
    p
}

#[test]
fn gate_probs_match_softmax_of_matmul() {
    let mut rng = SeededRng::new(3);
    let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
    let w = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let tape = Tape::new();
    let got = gate_probs(tape.constant(x.clone()), tape.constant(w.clone()))
        .unwrap()
        .value();
    let logits = mat_ref(x.data(), w.data(), 4, 5, 3);
    for (t, row) in logits.chunks(3).enumerate() {
        for (e, want) in softmax_ref(row).iter().enumerate() {
            assert!((got.at(t, e) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn dense_equivalence_when_k_equals_n() {
    let (t, d, n, hidden) = (6, 4, 3, 5);
    let params = moe_params(d, n, hidden, 17);
    let mut rng = SeededRng::new(18);
    let x = Tensor::randn(&[t, d], 1.0, &mut rng);
    let config = MoEConfig {
        n_experts: n,
        k: n,
        expert_hidden: hidden,
        ..MoEConfig::default()
    };
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = moe_head_forward(tape.constant(x.clone()), &config, "head", &bound, None::<&mut SeededRng>)
        .unwrap();
    let y = out.y.value();

    let gate = params.get("head.gate").unwrap().data();
    let logits = mat_ref(x.data(), gate, t, d, n);
    for ti in 0..t {
        let g = softmax_ref(&logits[ti * n..(ti + 1) * n]);
        let xt = x.row(ti);
        let mut want = vec![0.0; d];
        for (i, gi) in g.iter().enumerate() {
            let e = expert_ref(&params, &format!("head.experts.{i}"), xt, d, hidden);
            for (w, v) in want.iter_mut().zip(e) {
                *w += gi * v;
            }
        }
        for (j, w) in want.iter().enumerate() {
            assert!((y.at(ti, j) - w).abs() < 1e-10, "token {ti} dim {j}");
        }
    }
}

#[test]
fn top_k_output_uses_only_selected_experts() {
    let (t, d, n, hidden) = (5, 3, 4, 4);
    let params = moe_params(d, n, hidden, 23);
    let mut rng = SeededRng::new(24);
    let x = Tensor::randn(&[t, d], 1.0, &mut rng);
    let config = MoEConfig {
        n_experts: n,
        k: 2,
        expert_hidden: hidden,
        ..MoEConfig::default()
    };
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = moe_head_forward(tape.constant(x.clone()), &config, "head", &bound, None::<&mut SeededRng>)
        .unwrap();
    let y = out.y.value();
    for (ti, tok) in out.decision.tokens.iter().enumerate() {
        let mut want = vec![0.0; d];
        for &(e, w) in &tok.choices {
            let o = expert_ref(&params, &format!("head.experts.{e}"), x.row(ti), d, hidden);
            for (acc, v) in want.iter_mut().zip(o) {
                *acc += w * v;
            }
        }
        for j in 0..d {
            assert!((y.at(ti, j) - want[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn combine_single_expert_and_degenerate_weights() {
    let mut rng = SeededRng::new(5);
    let tape = Tape::new();
    let e0 = Tensor::randn(&[3, 2], 1.0, &mut rng);
    let e1 = Tensor::randn(&[3, 2], 1.0, &mut rng);

    let probs = Tensor::ones(&[3, 1]);
    let d = top_k_select(&probs, 1).unwrap();
    let w = gate_weights(tape.constant(probs), &d).unwrap();
    let y = moe_combine(&[tape.constant(e0.clone())], &d, w).unwrap();
    assert_eq!(y.value(), e0);

    let probs = Tensor::from_rows(&vec![vec![1.0, 0.0]; 3]).unwrap();
    let d = top_k_select(&probs, 2).unwrap();
    let w = gate_weights(tape.constant(probs), &d).unwrap();
    let y = moe_combine(&[tape.constant(e0.clone()), tape.constant(e1)], &d, w).unwrap();
    assert_eq!(y.value(), e0);
}

#[test]
fn combine_rejects_wrong_expert_count() {
    let tape = Tape::new();
    let probs = Tensor::full(&[2, 2], 0.5);
    let d = top_k_select(&probs, 1).unwrap();
    let w = gate_weights(tape.constant(probs), &d).unwrap();
    let err = moe_combine(&[tape.constant(Tensor::zeros(&[2, 3]))], &d, w).unwrap_err();
    assert!(matches!(err, moeqa::Error::Dimension { .. }));
}

#[test]
fn load_stats_match_counting_oracle() {
    let mut rng = SeededRng::new(99);
    for trial in 0..20 {
        let t = 3 + trial % 9;
        let n = 1 + trial % 5;
        let logits = Tensor::randn(&[t, n], 2.0, &mut rng);
        let rows: Vec<Vec<f64>> = logits.data().chunks(n).map(softmax_ref).collect();
        let probs = Tensor::from_rows(&rows).unwrap();
        let d = switch_route(&probs, 1.0).unwrap();
        let s = load_stats(&probs, &d, LoadAssignment::PreCapacity).unwrap();

        let mut counts = vec![0.0; n];
        let mut mass = vec![0.0; n];
        for row in &rows {
            let mut best = 0;
            for i in 0..n {
                if row[i] > row[best] {
                    best = i;
                }
                mass[i] += row[i];
            }
            counts[best] += 1.0;
        }
        for i in 0..n {
            assert!((s.f[i] - counts[i] / t as f64).abs() < 1e-15);
            assert!((s.p[i] - mass[i] / t as f64).abs() < 1e-14);
        }
        assert!((s.f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let loss = load_balance_loss(&s, 0.01).unwrap().item();
        assert!(loss >= 0.0);
    }
}

#[test]
fn aux_gradient_grows_with_alpha() {
    let (t, d, n, hidden) = (8, 3, 4, 3);
    let params = moe_params(d, n, hidden, 41);
    let mut rng = SeededRng::new(42);
    let x = Tensor::randn(&[t, d], 1.0, &mut rng);
    let mut norms = Vec::new();
    for alpha in [0.01, 0.05, 0.1, 1.0, 2.0] {
        let config = MoEConfig {
            n_experts: n,
            k: 1,
            expert_hidden: hidden,
            alpha,
            ..MoEConfig::default()
        };
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let out = moe_head_forward(tape.constant(x.clone()), &config, "head", &bound, None::<&mut SeededRng>)
            .unwrap();
        let grads = bound.grads(&tape.backward(out.aux_loss).unwrap());
        let g = &grads["head.gate"];
        norms.push(g.data().iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    assert!(norms[0] > 0.0);
    for w in norms.windows(2) {
        assert!(w[1] > w[0]);
    }
    // linear in alpha
    assert!((norms[4] / norms[0] - 200.0).abs() < 1e-9);
}

#[test]
fn config_validation() {
    let bad_k = MoEConfig {
        n_experts: 2,
        k: 3,
        ..MoEConfig::default()
    };
    assert!(matches!(bad_k.validate(), Err(moeqa::Error::Config(_))));
    let bad_cf = MoEConfig {
        capacity_factor: 0.0,
        ..MoEConfig::default()
    };
    assert!(bad_cf.validate().is_err());
    let bad_alpha = MoEConfig {
        alpha: -1.0,
        ..MoEConfig::default()
    };
    assert!(bad_alpha.validate().is_err());
    assert!(MoEConfig::default().validate().is_ok());
}

proptest! {
    #[test]
    fn scaling_logits_keeps_top_k_indices(
        logits in prop::collection::vec(-4.0f64..4.0, 12),
        scale in 0.1f64..10.0,
        k in 1usize..=4,
    ) {
        let rows = |s: f64| -> Tensor {
            let r: Vec<Vec<f64>> = logits
                .chunks(4)
                .map(|row| softmax_ref(&row.iter().map(|v| v * s).collect::<Vec<_>>()))
                .collect();
            Tensor::from_rows(&r).unwrap()
        };
        let a = top_k_select(&rows(1.0), k).unwrap();
        let b = top_k_select(&rows(scale), k).unwrap();
        for (ta, tb) in a.tokens.iter().zip(&b.tokens) {
            let ia: Vec<usize> = ta.choices.iter().map(|c| c.0).collect();
            let ib: Vec<usize> = tb.choices.iter().map(|c| c.0).collect();
            prop_assert_eq!(ia, ib);
        }
    }

    #[test]
    fn routing_decisions_are_well_formed(
        logits in prop::collection::vec(-3.0f64..3.0, 4..40),
        n in 1usize..=4,
        cf in 0.25f64..3.0,
    ) {
        let t = logits.len() / n;
        prop_assume!(t >= 1);
        let r: Vec<Vec<f64>> = logits[..t * n].chunks(n).map(softmax_ref).collect();
        let probs = Tensor::from_rows(&r).unwrap();

        let sw = switch_route(&probs, cf).unwrap();
        let dispatched: usize = sw.dispatched().iter().sum();
        prop_assert_eq!(sw.dropped_count() + dispatched, t);
        let cap = sw.capacity.unwrap();
        prop_assert!(sw.dispatched().iter().all(|&c| c <= cap));

        for k in 1..=n {
            let d = top_k_select(&probs, k).unwrap();
            for tok in &d.tokens {
                prop_assert_eq!(tok.choices.len(), k);
                let mut idx: Vec<usize> = tok.choices.iter().map(|c| c.0).collect();
                idx.sort();
                idx.dedup();
                prop_assert_eq!(idx.len(), k);
                prop_assert!(tok.choices.iter().all(|c| c.0 < n && c.1 >= 0.0));
                let s: f64 = tok.choices.iter().map(|c| c.1).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
