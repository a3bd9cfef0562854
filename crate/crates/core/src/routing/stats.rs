use serde::{Deserialize, Serialize};

use super::{check_alpha, LoadAssignment, RoutingDecision};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dispatch fractions and mean router probabilities over one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertLoadStats {
    pub n_experts: usize,
    pub tokens: usize,
    /// Fraction of tokens dispatched to each expert.
    pub f: Vec<f64>,
    /// Mean router probability of each expert.
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub dropped: usize,
}

/// One line of the route-trace dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteTraceRecord {
    pub step: usize,
    pub layer: String,
    pub f: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub aux_loss: f64,
    pub dropped_count: usize,
}

/// Computes `f` and `P` for a `[T, N]` probability matrix and its routing.
pub fn load_stats(
    probs: &Tensor,
    decision: &RoutingDecision,
    assignment: LoadAssignment,
) -> Result<ExpertLoadStats> {
    let (t, n) = probs.dims2()?;
    if decision.tokens.is_empty() {
        return Err(Error::contract("load statistics need at least one token"));
    }
    if decision.tokens.len() != t || decision.n_experts != n {
        return Err(Error::Dimension {
            op: "load_stats",
            left: vec![t, n],
            right: vec![decision.tokens.len(), decision.n_experts],
        });
    }
    let mut counts = vec![0usize; n];
    match assignment {
        LoadAssignment::PreCapacity => {
            for tok in &decision.tokens {
                counts[tok.argmax] += 1;
            }
        }
        LoadAssignment::PostCapacity => {
            for tok in decision.tokens.iter().filter(|t| !t.dropped) {
                counts[tok.argmax] += 1;
            }
        }
    }
    let f = counts.iter().map(|&c| c as f64 / t as f64).collect();
    let mut p = vec![0.0; n];
    for row in probs.data().chunks(n) {
        for (acc, v) in p.iter_mut().zip(row) {
            *acc += v;
        }
    }
    p.iter_mut().for_each(|v| *v /= t as f64);
    Ok(ExpertLoadStats {
        n_experts: n,
        tokens: t,
        f,
        p,
        dropped: decision.dropped_count(),
    })
}

fn check_stats(stats: &ExpertLoadStats) -> Result<()> {
    if stats.f.len() != stats.n_experts || stats.p.len() != stats.n_experts {
        return Err(Error::Dimension {
            op: "load_balance_loss",
            left: vec![stats.f.len()],
            right: vec![stats.p.len()],
        });
    }
    Ok(())
}

/// `alpha * N * sum_i f_i * P_i`.
pub fn load_balance_loss(stats: &ExpertLoadStats, alpha: f64) -> Result<Tensor> {
    check_alpha(alpha)?;
    check_stats(stats)?;
    let dot: f64 = stats.f.iter().zip(&stats.p).map(|(f, p)| f * p).sum();
    Ok(Tensor::scalar(alpha * stats.n_experts as f64 * dot))
}

/// The same loss recorded on the tape, differentiable through `P` (the
/// column means of `probs`); `f` enters as a constant.
pub fn load_balance_loss_recorded<'t>(
    probs: Var<'t>,
    stats: &ExpertLoadStats,
    alpha: f64,
) -> Result<Var<'t>> {
    check_alpha(alpha)?;
    check_stats(stats)?;
    let tape = probs.tape();
    let p = probs.mean_rows()?;
    let scaled_f: Vec<f64> = stats
        .f
        .iter()
        .map(|f| f * alpha * stats.n_experts as f64)
        .collect();
    Ok(p.mul(tape.constant(Tensor::vector(scaled_f)))?.sum())
}

/// Shannon entropy (nats) of a distribution, with `0 ln 0 = 0`.
pub fn load_entropy(dist: &[f64]) -> f64 {
    // `0.0 - x` rather than `-x` so a one-hot distribution gives +0
    0.0 - dist
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::{switch_route, top_k_select};

    fn stats(f: Vec<f64>, p: Vec<f64>) -> ExpertLoadStats {
        ExpertLoadStats {
            n_experts: f.len(),
            tokens: 1,
            f,
            p,
            dropped: 0,
        }
    }

    #[test]
    fn uniform_load_costs_alpha() {
        for n in [1usize, 2, 3, 4, 8, 16] {
            let u = vec![1.0 / n as f64; n];
            let loss = load_balance_loss(&stats(u.clone(), u), 0.01).unwrap().item();
            assert!((loss - 0.01).abs() < 1e-12, "N={n}: {loss}");
        }
    }

    #[test]
    fn collapsed_load_costs_alpha_n() {
        let one_hot = vec![1.0, 0.0];
        let loss = load_balance_loss(&stats(one_hot.clone(), one_hot), 0.01)
            .unwrap()
            .item();
        assert!((loss - 0.02).abs() < 1e-12);
    }

    #[test]
    fn hand_dot_product() {
        let s = stats(vec![0.5, 0.25, 0.125, 0.125], vec![0.4, 0.3, 0.2, 0.1]);
        let loss = load_balance_loss(&s, 0.1).unwrap().item();
        assert!((loss - 0.125).abs() < 1e-12);
    }

    #[test]
    fn negative_alpha_rejected() {
        let s = stats(vec![1.0], vec![1.0]);
        assert!(matches!(load_balance_loss(&s, -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn one_hot_routing_stats() {
        let probs = Tensor::from_rows(&vec![vec![0.0, 1.0, 0.0]; 4]).unwrap();
        let d = top_k_select(&probs, 1).unwrap();
        let s = load_stats(&probs, &d, LoadAssignment::PreCapacity).unwrap();
        assert_eq!(s.f, vec![0.0, 1.0, 0.0]);
        assert_eq!(s.p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_probs_tie_break_concentrates_f() {
        let probs = Tensor::full(&[8, 4], 0.25);
        let d = switch_route(&probs, 4.0).unwrap();
        let s = load_stats(&probs, &d, LoadAssignment::PreCapacity).unwrap();
        assert_eq!(s.f, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(s.p.iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn post_capacity_counts_only_dispatched() {
        let probs = Tensor::from_rows(&vec![vec![0.9, 0.1]; 4]).unwrap();
        let d = switch_route(&probs, 1.0).unwrap();
        assert_eq!(d.dropped_count(), 2);
        let pre = load_stats(&probs, &d, LoadAssignment::PreCapacity).unwrap();
        let post = load_stats(&probs, &d, LoadAssignment::PostCapacity).unwrap();
        assert_eq!(pre.f, vec![1.0, 0.0]);
        assert_eq!(post.f, vec![0.5, 0.0]);
        assert_eq!(post.dropped, 2);
    }

    #[test]
    fn entropy_bounds() {
        assert_eq!(load_entropy(&[1.0, 0.0]), 0.0);
        assert!((load_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
    }
}
