//! Effect of the load-balancing coefficient on expert usage: trains the
//! synthetic corpus with four switch experts at several values of alpha and
//! prints the mean entropy of the dispatch fractions over the last epoch.
//!
//! cargo run --release --example alpha_imbalance -- [seeds]

use moeqa::data::synthetic_corpus;
use moeqa::model::{FfnKind, ModelConfig, QaModel, Vocab};
use moeqa::rng::SeededRng;
use moeqa::routing::MoEConfig;
use moeqa::train::{train, TrainConfig};

fn final_epoch_entropy(alpha: f64, seed: u64) -> moeqa::Result<f64> {
    let corpus = synthetic_corpus(64, seed);
    let vocab = Vocab::build(corpus.iter().flat_map(|e| [e.context.as_str(), e.question.as_str()]));
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ffn_kinds: vec![FfnKind::Switch; 2],
        switch: Some(MoEConfig {
            n_experts: 4,
            k: 1,
            expert_hidden: 128,
            alpha,
            ..MoEConfig::default()
        }),
        ..ModelConfig::default()
    };
    let model = QaModel::new(config)?;
    let params = model.init_params(&mut SeededRng::substream(seed, "init"));
    let out = train(&model, &vocab, params, &corpus, None, &TrainConfig::default(), seed)?;
    Ok(out.epochs.last().and_then(|e| e.mean_f_entropy).unwrap_or(0.0))
}

fn main() -> moeqa::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    println!("seed  alpha=0   alpha=0.1  alpha=1   (max ln 4 = {:.4})", 4f64.ln());
    for seed in 0..seeds {
        let h0 = final_epoch_entropy(0.0, seed)?;
        let h01 = final_epoch_entropy(0.1, seed)?;
        let h1 = final_epoch_entropy(1.0, seed)?;
        println!("{seed:>4}  {h0:.6}  {h01:.6}   {h1:.6}");
    }
    Ok(())
}
