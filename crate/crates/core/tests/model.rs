use moeqa::autodiff::Tape;
use moeqa::data::{synthetic_corpus, Answer, QAExample};
use moeqa::gradcheck;
use moeqa::model::{
    encode, predict_span, qa_loss, span_head, FfnKind, ModelConfig, Positional, QaModel, Vocab,
};
use moeqa::params::ParamStore;
use moeqa::rng::SeededRng;
use moeqa::routing::{HeadOutput, MoEConfig};
use moeqa::tensor::Tensor;
use moeqa::train::{train, TrainConfig};
use moeqa::Error;
use proptest::prelude::*;

fn layer_norm_ref(row: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    row.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
}

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_hidden: 6,
        max_seq_len: 12,
        ..ModelConfig::default()
    }
}

fn switch_cfg(n: usize, hidden: usize, alpha: f64) -> MoEConfig {
    MoEConfig {
        n_experts: n,
        k: 1,
        expert_hidden: hidden,
        alpha,
        ..MoEConfig::default()
    }
}

/// Re-draws every parameter (including the zero-initialised span head) so
/// gradients are non-trivial.
fn randomize(params: &mut ParamStore, std: f64, seed: u64) {
    let mut rng = SeededRng::new(seed);
    for (name, t) in params.iter_mut() {
        if name.ends_with(".gain") {
            continue;
        }
        *t = Tensor::randn(t.shape(), std, &mut rng);
    }
}

#[test]
fn zero_weight_layer_is_layer_normed_embeddings() {
    let config = small(7);
    let model = QaModel::new(config.clone()).unwrap();
    let mut params = model.init_params(&mut SeededRng::new(1));
    let table = params.get("embed.tokens").unwrap().clone();
    for (name, t) in params.iter_mut() {
        if name.starts_with("layers.") && !name.contains(".ln") {
            *t = Tensor::zeros(t.shape());
        }
    }
    let ids = [0, 3, 5, 1];
    let out = encode(&ids, &config, &params).unwrap();
    let pe = moeqa::model::sinusoidal_positions(4, 8);
    for (pos, &id) in ids.iter().enumerate() {
        let x: Vec<f64> = table.row(id).iter().zip(pe.row(pos)).map(|(a, b)| a + b).collect();
        let once = layer_norm_ref(&x);
        // embedding norm, then the two residual norms of a block whose
        // sublayers output zero
        let thrice = layer_norm_ref(&layer_norm_ref(&once));
        for j in 0..8 {
            assert!((out.at(pos, j) - thrice[j]).abs() < 1e-12);
            assert!((out.at(pos, j) - once[j]).abs() < 1e-4);
        }
    }
}

#[test]
fn switch_with_one_expert_matches_dense() {
    let dense_cfg = small(9);
    let dense = QaModel::new(dense_cfg.clone()).unwrap();
    let mut dense_params = dense.init_params(&mut SeededRng::new(2));
    randomize(&mut dense_params, 0.4, 3);

    let sw_cfg = ModelConfig {
        ffn_kinds: vec![FfnKind::Switch],
        switch: Some(switch_cfg(1, 6, 0.01)),
        ..dense_cfg.clone()
    };
    let sw = QaModel::new(sw_cfg.clone()).unwrap();
    let mut sw_params = sw.init_params(&mut SeededRng::new(4));
    for (name, t) in dense_params.iter() {
        let target = name.replace("layers.0.ffn.", "layers.0.ffn.experts.0.");
        *sw_params.get_mut(&target).unwrap() = t.clone();
    }
    let ids = [0, 4, 2, 8, 1, 3, 1];
    let a = encode(&ids, &dense_cfg, &dense_params).unwrap();
    let b = encode(&ids, &sw_cfg, &sw_params).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
}

#[test]
fn relabelling_experts_leaves_outputs_unchanged() {
    let cfg = ModelConfig {
        ffn_kinds: vec![FfnKind::Switch],
        switch: Some(MoEConfig {
            capacity_factor: 2.0,
            ..switch_cfg(2, 5, 0.01)
        }),
        ..small(9)
    };
    let model = QaModel::new(cfg.clone()).unwrap();
    let mut params = model.init_params(&mut SeededRng::new(5));
    randomize(&mut params, 0.5, 6);

    let mut swapped = params.clone();
    for suffix in ["w1", "b1", "w2", "b2"] {
        let a = params.get(&format!("layers.0.ffn.experts.0.{suffix}")).unwrap().clone();
        let b = params.get(&format!("layers.0.ffn.experts.1.{suffix}")).unwrap().clone();
        *swapped.get_mut(&format!("layers.0.ffn.experts.0.{suffix}")).unwrap() = b;
        *swapped.get_mut(&format!("layers.0.ffn.experts.1.{suffix}")).unwrap() = a;
    }
    let gate = params.get("layers.0.ffn.gate").unwrap();
    let flipped: Vec<Vec<f64>> = (0..8).map(|r| vec![gate.at(r, 1), gate.at(r, 0)]).collect();
    *swapped.get_mut("layers.0.ffn.gate").unwrap() = Tensor::from_rows(&flipped).unwrap();

    let ids = [0, 1, 2, 3, 4, 5, 6, 7, 8];
    let a = encode(&ids, &cfg, &params).unwrap();
    let b = encode(&ids, &cfg, &swapped).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
}

#[test]
fn span_head_examples() {
    let tape = Tape::new();
    let mut p = ParamStore::new();
    p.insert("span.w", Tensor::zeros(&[2, 2]));
    p.insert("span.b", Tensor::zeros(&[2]));
    let bound = p.bind(&tape);
    let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
    let (s, e) = span_head(h, &bound, "span").unwrap();
    assert_eq!(s.value().data(), &[0.0; 3]);
    assert_eq!(e.value().data(), &[0.0; 3]);

    let tape = Tape::new();
    p.insert("span.w", Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap());
    p.insert("span.b", Tensor::vector(vec![0.1, -0.2]));
    let bound = p.bind(&tape);
    let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
    let (s, e) = span_head(h, &bound, "span").unwrap();
    // rows: [1 + 1, -1 + 4], [3 + 2, -3 + 8], [5 + 3, -5 + 12], plus bias
    assert_eq!(s.value().data(), &[2.1, 5.1, 8.1]);
    assert_eq!(e.value().data(), &[2.8, 4.8, 6.8]);
}

#[test]
fn qa_loss_examples() {
    let tape = Tape::new();
    let flat = tape.constant(Tensor::zeros(&[4]));
    let ce = qa_loss(flat, flat, 1, 3, &[]).unwrap().item();
    assert!((ce - 2.0 * 4f64.ln()).abs() < 1e-12);
}

fn batch_aux(alpha: f64) -> (f64, f64) {
    let cfg = ModelConfig {
        ffn_kinds: vec![FfnKind::Switch],
        switch: Some(switch_cfg(3, 4, alpha)),
        ..small(9)
    };
    let model = QaModel::new(cfg).unwrap();
    let mut params = model.init_params(&mut SeededRng::new(8));
    randomize(&mut params, 0.5, 9);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let seqs: [&[usize]; 2] = [&[0, 1, 2, 3, 4], &[0, 5, 6, 7, 8, 2]];
    let out = model.forward(&bound, &tape, &seqs, None).unwrap();
    let loss = qa_loss(out.start_logits[0], out.end_logits[0], 2, 3, &out.aux_losses).unwrap();
    let ce = qa_loss(out.start_logits[0], out.end_logits[0], 2, 3, &[]).unwrap();
    (loss.item(), ce.item())
}

#[test]
fn aux_loss_is_linear_in_alpha() {
    let (l0, ce0) = batch_aux(0.0);
    assert_eq!(l0, ce0);
    let (l1, ce1) = batch_aux(0.01);
    let (l2, ce2) = batch_aux(0.02);
    assert_eq!(ce1, ce2);
    let (a1, a2) = (l1 - ce1, l2 - ce2);
    assert!(a1 > 0.0);
    assert!((a2 - 2.0 * a1).abs() < 1e-15);
}

fn check_grads(cfg: ModelConfig, seed: u64) -> f64 {
    let model = QaModel::new(cfg).unwrap();
    let mut params = model.init_params(&mut SeededRng::new(seed));
    randomize(&mut params, 0.3, seed + 1);
    let report = gradcheck::check(
        &params,
        |tape, bound| {
            let seqs: [&[usize]; 2] = [&[0, 3, 1, 4, 5, 6, 1], &[0, 2, 1, 7, 8, 1]];
            let out = model.forward(bound, tape, &seqs, None)?;
            let a = qa_loss(out.start_logits[0], out.end_logits[0], 3, 4, &out.aux_losses)?;
            let b = qa_loss(out.start_logits[1], out.end_logits[1], 4, 4, &[])?;
            a.add(b)
        },
        40,
        1e-5,
        &mut SeededRng::new(seed + 2),
    )
    .unwrap();
    let worst = report.worst().unwrap();
    assert!(report.passes(1e-4), "{worst:?}");
    report.max_rel_err()
}

#[test]
fn gradients_through_encoder_and_heads() {
    check_grads(small(9), 10);
    check_grads(
        ModelConfig {
            positional: Positional::Learned,
            ffn_kinds: vec![FfnKind::Switch],
            switch: Some(switch_cfg(2, 4, 0.05)),
            ..small(9)
        },
        20,
    );
    for k in [1, 2, 3] {
        for head_output in [HeadOutput::Hidden, HeadOutput::SpanLogits] {
            check_grads(
                ModelConfig {
                    moe_head: Some(MoEConfig {
                        n_experts: 3,
                        k,
                        expert_hidden: 4,
                        head_output,
                        ..MoEConfig::default()
                    }),
                    ..small(9)
                },
                30 + k as u64,
            );
        }
    }
}

#[test]
fn training_rejects_empty_data_and_is_deterministic() {
    let corpus = synthetic_corpus(8, 1);
    let vocab = Vocab::build(corpus.iter().flat_map(|e| [e.context.as_str(), e.question.as_str()]));
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_hidden: 16,
        max_seq_len: 40,
        ffn_kinds: vec![FfnKind::Switch],
        switch: Some(switch_cfg(2, 16, 0.01)),
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let model = QaModel::new(cfg).unwrap();
    let params = model.init_params(&mut SeededRng::new(1));
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&model, &vocab, params.clone(), &[], None, &tc, 1),
        Err(Error::Config(_))
    ));
    let a = train(&model, &vocab, params.clone(), &corpus, None, &tc, 1).unwrap();
    let b = train(&model, &vocab, params.clone(), &corpus, None, &tc, 1).unwrap();
    let c = train(&model, &vocab, params, &corpus, None, &tc, 2).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.len(), 4);
    assert_ne!(a.trace, c.trace);
    assert!(a.trace.iter().all(|r| r.aux_loss >= 0.0));
    assert_eq!(a.route_trace.len(), 4);
}

#[test]
fn truncated_answers_are_skipped_in_training() {
    let long = "a b c d e f g h i j k l m n o p q r s t u v w x y z answer";
    let ex = QAExample::answerable("t", long, "q?", Answer::new("answer", long.len() - 6));
    let ok = synthetic_corpus(2, 3);
    let mut data = ok.clone();
    data.push(ex);
    let vocab = Vocab::build(data.iter().flat_map(|e| [e.context.as_str(), e.question.as_str()]));
    let model = QaModel::new(ModelConfig {
        vocab_size: vocab.len(),
        max_seq_len: 20,
        d_model: 8,
        n_heads: 2,
        ffn_hidden: 8,
        n_layers: 1,
        ..ModelConfig::default()
    })
    .unwrap();
    let params = model.init_params(&mut SeededRng::new(1));
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let out = train(&model, &vocab, params, &data, None, &tc, 0).unwrap();
    assert_eq!(out.skipped, vec!["t".to_string()]);
}

fn brute_force(start: &[f64], end: &[f64], max_len: usize) -> (usize, usize, bool) {
    let mut best: Option<(f64, usize, usize)> = None;
    for s in 1..start.len() {
        for e in s..start.len() {
            if e - s > max_len {
                continue;
            }
            let score = start[s] + end[e];
            if best.map_or(true, |(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    match best {
        Some((b, s, e)) if start[0] + end[0] <= b => (s, e, false),
        _ => (0, 0, true),
    }
}

proptest! {
    #[test]
    fn decoding_matches_brute_force(
        logits in prop::collection::vec((-3i32..3, -3i32..3), 1..=8),
        max_len in 0usize..8,
    ) {
        // small integer logits make ties common
        let start: Vec<f64> = logits.iter().map(|l| l.0 as f64).collect();
        let end: Vec<f64> = logits.iter().map(|l| l.1 as f64).collect();
        let p = predict_span(&start, &end, max_len).unwrap();
        prop_assert_eq!((p.start, p.end, p.no_answer), brute_force(&start, &end, max_len));
    }
}
