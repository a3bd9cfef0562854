//! Sparse expert routing.
//!
//! Two routing regimes share the same building blocks:
//!
//! - **top-k gating** for the mixture-of-experts head: a softmax gate picks the
//!   `k` most probable experts per token and mixes their outputs with the
//!   selected gate values renormalised to sum to one;
//! - **switch routing** for the feed-forward sublayers: every token goes to
//!   its single most probable expert, scaled by that router probability,
//!   subject to a per-expert capacity of `ceil(capacity_factor * T / N)`.
//!   Tokens over capacity are dropped and only the residual path carries them.
//!
//! Both regimes report [`ExpertLoadStats`] (dispatch fractions `f` and mean
//! router probabilities `P`) and feed the auxiliary load-balancing loss
//! `alpha * N * sum_i f_i * P_i`.
//!
//! Ties are broken towards the lowest expert index everywhere.

mod layer;
mod select;
mod stats;

pub use layer::{
    dispatch, gate_weights, init_expert, init_gate, moe_combine, moe_head_forward,
    switch_ffn_forward, ExpertFfn, MoeOutput,
};
pub use select::{gate_probs, gate_probs_noisy, switch_capacity, switch_route, top_k_select};
pub use stats::{
    load_balance_loss, load_balance_loss_recorded, load_entropy, load_stats, ExpertLoadStats,
    RouteTraceRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which assignment the dispatch fractions `f` count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadAssignment {
    /// The router's argmax, before capacity drops.
    #[default]
    PreCapacity,
    /// Tokens actually dispatched after capacity drops.
    PostCapacity,
}

/// What the experts of the mixture-of-experts head produce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadOutput {
    /// Hidden states, followed by the shared span head.
    #[default]
    Hidden,
    /// Start/end logits directly.
    SpanLogits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoEConfig {
    pub n_experts: usize,
    /// Experts per token for top-k gating. Switch routing always uses 1.
    pub k: usize,
    pub expert_hidden: usize,
    pub capacity_factor: f64,
    pub alpha: f64,
    /// Standard deviation of Gaussian noise added to gate logits while
    /// training; 0 disables noisy gating.
    pub noise_std: f64,
    pub load_from: LoadAssignment,
    pub head_output: HeadOutput,
}

impl Default for MoEConfig {
    fn default() -> Self {
        MoEConfig {
            n_experts: 4,
            k: 2,
            expert_hidden: 3072,
            capacity_factor: 1.25,
            alpha: 0.01,
            noise_std: 0.0,
            load_from: LoadAssignment::PreCapacity,
            head_output: HeadOutput::Hidden,
        }
    }
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 {
            return Err(Error::config("n_experts must be at least 1"));
        }
        if self.k == 0 || self.k > self.n_experts {
            return Err(Error::config(format!(
                "k must satisfy 1 <= k <= n_experts, got k = {} with n_experts = {}",
                self.k, self.n_experts
            )));
        }
        if self.expert_hidden == 0 {
            return Err(Error::config("expert_hidden must be positive"));
        }
        if !(self.capacity_factor > 0.0 && self.capacity_factor.is_finite()) {
            return Err(Error::config(format!(
                "capacity_factor must be a positive number, got {}",
                self.capacity_factor
            )));
        }
        check_alpha(self.alpha)?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std must be non-negative"));
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!(
            "alpha must be a non-negative number, got {alpha}"
        )));
    }
    Ok(())
}

/// Per-token expert choices.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenRoute {
    /// `(expert, gate weight)` pairs, most probable first. Empty when dropped.
    pub choices: Vec<(usize, f64)>,
    /// The router's most probable expert, regardless of capacity.
    pub argmax: usize,
    pub dropped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDecision {
    pub n_experts: usize,
    pub k: usize,
    pub tokens: Vec<TokenRoute>,
    /// Whether gate weights were renormalised over the selected experts
    /// (top-k) or are raw router probabilities (switch).
    pub renormalized: bool,
    /// Per-expert token budget, for switch routing.
    pub capacity: Option<usize>,
}

impl RoutingDecision {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn dropped_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.dropped).count()
    }

    /// Number of tokens actually sent to each expert.
    pub fn dispatched(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_experts];
        for t in self.tokens.iter().filter(|t| !t.dropped) {
            for &(e, _) in &t.choices {
                counts[e] += 1;
            }
        }
        counts
    }

    /// `(token, slot)` pairs routed to `expert`, in token order.
    pub fn assignments(&self, expert: usize) -> Vec<(usize, usize)> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.dropped)
            .filter_map(|(ti, t)| {
                t.choices
                    .iter()
                    .position(|&(e, _)| e == expert)
                    .map(|slot| (ti, slot))
            })
            .collect()
    }
}
