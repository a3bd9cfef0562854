//! Routes a handful of token vectors through a four-expert layer, first with
//! top-2 gating and then with switch routing at two capacity factors, and
//! prints each token's experts and the load statistics.
//!
//! cargo run --release --example moe_routing

use moeqa::autodiff::Tape;
use moeqa::params::ParamStore;
use moeqa::rng::SeededRng;
use moeqa::routing::{
    init_expert, init_gate, moe_head_forward, switch_ffn_forward, MoEConfig, MoeOutput,
};
use moeqa::tensor::Tensor;

fn show(title: &str, out: &MoeOutput<'_>) {
    println!("{title}");
    if let Some(c) = out.decision.capacity {
        println!("  capacity per expert: {c}");
    }
    for (t, route) in out.decision.tokens.iter().enumerate() {
        let choices: Vec<String> = route
            .choices
            .iter()
            .map(|(e, w)| format!("e{e}:{w:.3}"))
            .collect();
        let note = if route.dropped { "  (dropped)" } else { "" };
        println!("  token {t}: argmax e{}  {}{note}", route.argmax, choices.join(" "));
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    println!("  f = [{}]  P = [{}]", fmt(&out.stats.f), fmt(&out.stats.p));
    println!("  aux loss {:.5}, dropped {}", out.aux_loss.item(), out.stats.dropped);
}

fn main() -> moeqa::Result<()> {
    let (tokens, d, n, hidden) = (8, 6, 4, 12);
    let mut rng = SeededRng::new(5);
    let mut params = ParamStore::new();
    for prefix in ["head", "ffn"] {
        init_gate(&mut params, prefix, d, n, 0.7, &mut rng);
        for i in 0..n {
            init_expert(&mut params, &format!("{prefix}.experts.{i}"), (d, hidden, d), 0.2, &mut rng);
        }
    }
    let x = Tensor::randn(&[tokens, d], 1.0, &mut rng);

    let tape = Tape::new();
    let p = params.bind(&tape);
    let xs = tape.constant(x);
    let top2 = MoEConfig {
        n_experts: n,
        k: 2,
        expert_hidden: hidden,
        ..MoEConfig::default()
    };
    show("top-2 gating", &moe_head_forward(xs, &top2, "head", &p, None::<&mut SeededRng>)?);

    for capacity_factor in [1.0, 2.0] {
        let switch = MoEConfig {
            k: 1,
            capacity_factor,
            ..top2.clone()
        };
        let out = switch_ffn_forward(xs, &switch, "ffn", &p, None::<&mut SeededRng>)?;
        show(&format!("switch routing, capacity factor {capacity_factor}"), &out);
    }
    Ok(())
}
