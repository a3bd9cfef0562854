use std::cmp::Ordering;

use rand::Rng;

use super::{RoutingDecision, TokenRoute};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Router probabilities `softmax(x W)` over the expert axis.
pub fn gate_probs<'t>(x: Var<'t>, gate_weights: Var<'t>) -> Result<Var<'t>> {
    let shape = gate_weights.shape();
    if shape.len() != 2 || shape[1] == 0 {
        return Err(Error::config("gate needs at least one expert"));
    }
    x.matmul(gate_weights)?.softmax(1)
}

/// As [`gate_probs`], with i.i.d. `N(0, noise_std^2)` noise added to the
/// logits. The noise is a constant on the tape.
pub fn gate_probs_noisy<'t>(
    x: Var<'t>,
    gate_weights: Var<'t>,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<Var<'t>> {
    if noise_std == 0.0 {
        return gate_probs(x, gate_weights);
    }
    let logits = x.matmul(gate_weights)?;
    let noise = Tensor::randn(&logits.shape(), noise_std, rng);
    logits.add(x.tape().constant(noise))?.softmax(1)
}

fn by_prob_then_index(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| match row[b].partial_cmp(&row[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    order
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Picks the `k` most probable experts per row of `probs` (`[T, N]`) and
/// renormalises their probabilities to sum to one.
pub fn top_k_select(probs: &Tensor, k: usize) -> Result<RoutingDecision> {
    let (_, n) = probs.dims2()?;
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "top-k needs 1 <= k <= N, got k = {k} with N = {n}"
        )));
    }
    let tokens = probs
        .data()
        .chunks(n)
        .map(|row| {
            let order = by_prob_then_index(row);
            let chosen = &order[..k];
            let mass: f64 = chosen.iter().map(|&e| row[e]).sum();
            let choices = chosen.iter().map(|&e| (e, row[e] / mass)).collect();
            TokenRoute {
                choices,
                argmax: order[0],
                dropped: false,
            }
        })
        .collect();
    Ok(RoutingDecision {
        n_experts: n,
        k,
        tokens,
        renormalized: true,
        capacity: None,
    })
}

/// `ceil(capacity_factor * tokens / experts)`.
pub fn switch_capacity(capacity_factor: f64, tokens: usize, experts: usize) -> usize {
    (capacity_factor * tokens as f64 / experts as f64).ceil() as usize
}

/// Top-1 routing with a per-expert capacity. Tokens are admitted in batch
/// order; once an expert is full, later tokens that prefer it are dropped.
pub fn switch_route(probs: &Tensor, capacity_factor: f64) -> Result<RoutingDecision> {
    let (t, n) = probs.dims2()?;
    if !(capacity_factor > 0.0 && capacity_factor.is_finite()) {
        return Err(Error::config(format!(
            "capacity_factor must be positive, got {capacity_factor}"
        )));
    }
    let capacity = switch_capacity(capacity_factor, t, n);
    let mut load = vec![0usize; n];
    let tokens = probs
        .data()
        .chunks(n)
        .map(|row| {
            let e = argmax(row);
            if load[e] < capacity {
                load[e] += 1;
                TokenRoute {
                    choices: vec![(e, row[e])],
                    argmax: e,
                    dropped: false,
                }
            } else {
                TokenRoute {
                    choices: Vec::new(),
                    argmax: e,
                    dropped: true,
                }
            }
        })
        .collect();
    Ok(RoutingDecision {
        n_experts: n,
        k: 1,
        tokens,
        renormalized: false,
        capacity: Some(capacity),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn probs(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_expert_gate_is_one() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 5.0]]).unwrap());
        let w = tape.constant(Tensor::from_rows(&[vec![0.7], vec![-0.2]]).unwrap());
        let p = gate_probs(x, w).unwrap().value();
        assert_eq!(p.data(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_gate_weights_give_uniform_rows() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 5.0]]).unwrap());
        let w = tape.constant(Tensor::zeros(&[2, 3]));
        let p = gate_probs(x, w).unwrap().value();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn top_k_examples() {
        let p = probs(&[&[0.5, 0.3, 0.2]]);
        let d1 = top_k_select(&p, 1).unwrap();
        assert_eq!(d1.tokens[0].choices, vec![(0, 1.0)]);

        let d3 = top_k_select(&p, 3).unwrap();
        let w: Vec<f64> = d3.tokens[0].choices.iter().map(|c| c.1).collect();
        let e: Vec<usize> = d3.tokens[0].choices.iter().map(|c| c.0).collect();
        assert_eq!(e, vec![0, 1, 2]);
        for (got, want) in w.iter().zip([0.5, 0.3, 0.2]) {
            assert!((got - want).abs() < 1e-15);
        }

        let d2 = top_k_select(&p, 2).unwrap();
        let c = &d2.tokens[0].choices;
        assert_eq!((c[0].0, c[1].0), (0, 1));
        assert!((c[0].1 - 0.625).abs() < 1e-15);
        assert!((c[1].1 - 0.375).abs() < 1e-15);

        assert!(matches!(top_k_select(&p, 4), Err(Error::Config(_))));
        assert!(matches!(top_k_select(&p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let p = probs(&[&[0.25, 0.25, 0.25, 0.25]]);
        let d = top_k_select(&p, 2).unwrap();
        assert_eq!(d.tokens[0].choices[0].0, 0);
        assert_eq!(d.tokens[0].choices[1].0, 1);
        let s = switch_route(&p, 1.0).unwrap();
        assert_eq!(s.tokens[0].argmax, 0);
    }

    #[test]
    fn switch_balanced_batch_has_no_drops() {
        let p = probs(&[
            &[0.7, 0.1, 0.1, 0.1],
            &[0.1, 0.7, 0.1, 0.1],
            &[0.1, 0.1, 0.7, 0.1],
            &[0.1, 0.1, 0.1, 0.7],
        ]);
        let d = switch_route(&p, 1.0).unwrap();
        assert_eq!(d.capacity, Some(1));
        assert_eq!(d.dropped_count(), 0);
        for (i, t) in d.tokens.iter().enumerate() {
            assert_eq!(t.choices, vec![(i, 0.7)]);
        }
    }

    #[test]
    fn switch_drops_third_token_over_capacity() {
        let hot: &[f64] = &[0.7, 0.1, 0.1, 0.1];
        let p = probs(&[
            hot,
            &[0.1, 0.7, 0.1, 0.1],
            hot,
            &[0.1, 0.1, 0.7, 0.1],
            &[0.1, 0.1, 0.1, 0.7],
            hot,
            &[0.1, 0.7, 0.1, 0.1],
            &[0.1, 0.1, 0.7, 0.1],
        ]);
        let d = switch_route(&p, 1.0).unwrap();
        assert_eq!(d.capacity, Some(2));
        let dropped: Vec<usize> = (0..8).filter(|&i| d.tokens[i].dropped).collect();
        assert_eq!(dropped, vec![5]);
        assert_eq!(d.tokens[5].argmax, 0);
        assert_eq!(d.dispatched(), vec![2, 2, 2, 1]);
    }

    #[test]
    fn switch_single_expert() {
        let p = Tensor::ones(&[5, 1]);
        for cf in [1.0, 1.25, 3.0] {
            let d = switch_route(&p, cf).unwrap();
            assert_eq!(d.capacity, Some(switch_capacity(cf, 5, 1)));
            assert_eq!(d.dropped_count(), 0);
            assert!(d.tokens.iter().all(|t| t.choices == vec![(0, 1.0)]));
        }
        assert!(switch_route(&p, 0.0).is_err());
    }
}
