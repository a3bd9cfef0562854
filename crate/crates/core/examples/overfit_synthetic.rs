//! Trains a two-layer switch encoder on the generated corpus and reports
//! training EM/F1 before and after.
//!
//! cargo run --release --example overfit_synthetic -- [seed]

use moeqa::data::synthetic_corpus;
use moeqa::model::{FfnKind, ModelConfig, QaModel, Vocab};
use moeqa::rng::SeededRng;
use moeqa::routing::MoEConfig;
use moeqa::train::{evaluate_model, train, TrainConfig};

fn main() -> moeqa::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let corpus = synthetic_corpus(64, seed);
    let vocab = Vocab::build(corpus.iter().flat_map(|e| [e.context.as_str(), e.question.as_str()]));
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ffn_kinds: vec![FfnKind::Switch; 2],
        switch: Some(MoEConfig {
            n_experts: 2,
            k: 1,
            expert_hidden: 128,
            capacity_factor: 1.25,
            alpha: 0.01,
            ..MoEConfig::default()
        }),
        ..ModelConfig::default()
    };
    let model = QaModel::new(config)?;
    let params = model.init_params(&mut SeededRng::substream(seed, "init"));
    let before = evaluate_model(&model, &params, &vocab, &corpus, 16)?;
    println!("before training: EM {:.3} F1 {:.3}", before.em, before.f1);

    let out = train(&model, &vocab, params, &corpus, Some(&corpus), &TrainConfig::default(), seed)?;
    for e in &out.epochs {
        println!(
            "epoch {}: loss {:.4}  f-entropy {:.4}  EM {:.3}  F1 {:.3}",
            e.epoch,
            e.mean_loss,
            e.mean_f_entropy.unwrap_or(0.0),
            e.val_em.unwrap_or(0.0),
            e.val_f1.unwrap_or(0.0)
        );
    }
    Ok(())
}
