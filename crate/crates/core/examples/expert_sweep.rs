//! Sweeps the number of switch experts on the generated corpus and prints a
//! table of loss, EM and final-epoch load entropy. The same sweep is
//! available from the CLI as `moeqa sweep --axis n_experts`.
//!
//! cargo run --release --example expert_sweep -- [values...]

use moeqa::harness::{apply_axis, run_experiment, ExperimentConfig, SweepAxis};
use moeqa::model::{FfnKind, ModelConfig};
use moeqa::routing::MoEConfig;

fn main() -> moeqa::Result<()> {
    let values: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let values = if values.is_empty() { vec![1.0, 2.0, 4.0, 8.0] } else { values };

    let mut template = ExperimentConfig {
        seed: 1,
        model: ModelConfig {
            ffn_kinds: vec![FfnKind::Switch; 2],
            switch: Some(MoEConfig {
                k: 1,
                expert_hidden: 128,
                ..MoEConfig::default()
            }),
            ..ModelConfig::default()
        },
        ..ExperimentConfig::default()
    };
    template.data.synthetic = 64;

    println!("n_experts  final_loss  em     f_entropy  ln(N)");
    for v in values {
        let config = apply_axis(&template, SweepAxis::NExperts, v)?;
        let run = run_experiment(&config)?;
        let h = run.output.epochs.last().and_then(|e| e.mean_f_entropy).unwrap_or(0.0);
        println!(
            "{:<9}  {:<10.5}  {:<5.3}  {:<9.4}  {:.4}",
            v,
            run.metrics.final_loss.unwrap_or(f64::NAN),
            run.metrics.em,
            h,
            v.ln()
        );
    }
    Ok(())
}
