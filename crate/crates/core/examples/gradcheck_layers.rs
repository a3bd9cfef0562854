//! Builds a small loss by hand on the autodiff tape and compares its
//! backprop gradients with central differences.
//!
//! cargo run --release --example gradcheck_layers

use moeqa::gradcheck;
use moeqa::params::ParamStore;
use moeqa::rng::SeededRng;
use moeqa::tensor::Tensor;

fn main() -> moeqa::Result<()> {
    let mut rng = SeededRng::new(1);
    let mut params = ParamStore::new();
    params.insert("w1", Tensor::randn(&[4, 6], 0.5, &mut rng));
    params.insert("b1", Tensor::randn(&[6], 0.1, &mut rng));
    params.insert("gain", Tensor::randn(&[6], 0.3, &mut rng).map(|v| 1.0 + v));
    params.insert("bias", Tensor::randn(&[6], 0.1, &mut rng));
    params.insert("w2", Tensor::randn(&[6, 3], 0.5, &mut rng));
    let x = Tensor::randn(&[5, 4], 1.0, &mut rng);

    // two-layer GELU network, layer norm, then cross-entropy on one row
    let report = gradcheck::check(
        &params,
        |tape, p| {
            let h = tape
                .constant(x.clone())
                .matmul(p.get("w1")?)?
                .add_bias(p.get("b1")?)?
                .gelu();
            let logits = h.layer_norm(p.get("gain")?, p.get("bias")?)?.matmul(p.get("w2")?)?;
            logits.mean_rows()?.cross_entropy(2)
        },
        30,
        1e-5,
        &mut SeededRng::new(2),
    )?;

    for probe in &report.probes {
        println!(
            "{:>4}[{:>2}]  analytic {:+.8e}  numeric {:+.8e}  rel {:.1e}",
            probe.param, probe.index, probe.analytic, probe.numeric, probe.rel_err
        );
    }
    println!("max relative error {:.2e} (passes 1e-4: {})", report.max_rel_err(), report.passes(1e-4));
    Ok(())
}
