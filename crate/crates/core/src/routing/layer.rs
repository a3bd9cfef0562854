use rand::Rng;

use super::select::{gate_probs_noisy, switch_route, top_k_select};
use super::stats::{load_balance_loss_recorded, load_stats, ExpertLoadStats};
use super::{MoEConfig, RoutingDecision};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Two-layer feed-forward expert: `gelu(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug)]
pub struct ExpertFfn {
    prefix: String,
}

impl ExpertFfn {
    pub fn new(prefix: impl Into<String>) -> Self {
        ExpertFfn {
            prefix: prefix.into(),
        }
    }

    /// The `i`-th expert under a layer prefix.
    pub fn nth(layer_prefix: &str, i: usize) -> Self {
        ExpertFfn::new(format!("{layer_prefix}.experts.{i}"))
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn param<'t>(&self, p: &Bound<'t>, name: &str) -> Result<Var<'t>> {
        p.get(&format!("{}.{name}", self.prefix))
    }

    pub fn forward<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        let h = x
            .matmul(self.param(p, "w1")?)?
            .add_bias(self.param(p, "b1")?)?
            .gelu();
        h.matmul(self.param(p, "w2")?)?
            .add_bias(self.param(p, "b2")?)
    }

    fn out_dim(&self, p: &Bound<'_>) -> Result<usize> {
        Ok(self.param(p, "b2")?.shape()[0])
    }
}

/// Adds the weights of one expert FFN (`d_in -> hidden -> d_out`).
pub fn init_expert(
    params: &mut ParamStore,
    prefix: &str,
    (d_in, hidden, d_out): (usize, usize, usize),
    std: f64,
    rng: &mut impl Rng,
) {
    params.insert(format!("{prefix}.w1"), Tensor::randn(&[d_in, hidden], std, rng));
    params.insert(format!("{prefix}.b1"), Tensor::zeros(&[hidden]));
    params.insert(format!("{prefix}.w2"), Tensor::randn(&[hidden, d_out], std, rng));
    params.insert(format!("{prefix}.b2"), Tensor::zeros(&[d_out]));
}

/// Adds a router `{prefix}.gate` of shape `[d, n_experts]`.
pub fn init_gate(params: &mut ParamStore, prefix: &str, d: usize, n_experts: usize, std: f64, rng: &mut impl Rng) {
    params.insert(format!("{prefix}.gate"), Tensor::randn(&[d, n_experts], std, rng));
}

/// Differentiable `[T, k]` gate weights for a routing decision: the selected
/// probabilities, renormalised per token when the decision asks for it.
/// Dropped tokens contribute their argmax probability, which is never used.
pub fn gate_weights<'t>(probs: Var<'t>, decision: &RoutingDecision) -> Result<Var<'t>> {
    let k = decision.k;
    let mut positions = Vec::with_capacity(decision.tokens.len() * k);
    for (t, tok) in decision.tokens.iter().enumerate() {
        if tok.dropped {
            positions.extend(std::iter::repeat_n((t, tok.argmax), k));
        } else {
            positions.extend(tok.choices.iter().map(|&(e, _)| (t, e)));
        }
    }
    let picked = probs.pick(&positions, &[decision.tokens.len(), k])?;
    if decision.renormalized {
        picked.row_normalize()
    } else {
        Ok(picked)
    }
}

fn combine_with<'t>(
    decision: &RoutingDecision,
    weights: Var<'t>,
    d_out: usize,
    mut expert_rows: impl FnMut(usize, &[usize]) -> Result<Var<'t>>,
) -> Result<Var<'t>> {
    let total = decision.tokens.len();
    let mut out: Option<Var<'t>> = None;
    for e in 0..decision.n_experts {
        let assigned = decision.assignments(e);
        if assigned.is_empty() {
            continue;
        }
        let rows: Vec<usize> = assigned.iter().map(|&(t, _)| t).collect();
        let w = weights.pick(&assigned, &[assigned.len()])?;
        let contribution = expert_rows(e, &rows)?
            .scale_rows(w)?
            .scatter_rows(&rows, total)?;
        out = Some(match out {
            None => contribution,
            Some(acc) => acc.add(contribution)?,
        });
    }
    match out {
        Some(v) => Ok(v),
        None => Ok(weights.tape().constant(Tensor::zeros(&[total, d_out]))),
    }
}

/// `y_t = sum_j w_tj * E_{e_tj}(x)_t` given every expert's output on every
/// token (`expert_outputs[i]` is `[T, d_out]`). Dropped tokens get zeros.
pub fn moe_combine<'t>(
    expert_outputs: &[Var<'t>],
    decision: &RoutingDecision,
    weights: Var<'t>,
) -> Result<Var<'t>> {
    if expert_outputs.len() != decision.n_experts {
        return Err(Error::Dimension {
            op: "moe_combine",
            left: vec![expert_outputs.len()],
            right: vec![decision.n_experts],
        });
    }
    let shape = expert_outputs[0].shape();
    for out in expert_outputs {
        let s = out.shape();
        if s.len() != 2 || s[0] != decision.tokens.len() || s != shape {
            return Err(Error::Dimension {
                op: "moe_combine",
                left: s,
                right: vec![decision.tokens.len(), shape[1]],
            });
        }
    }
    combine_with(decision, weights, shape[1], |e, rows| {
        expert_outputs[e].gather_rows(rows)
    })
}

/// Sparse version of [`moe_combine`]: each expert only runs on the tokens
/// routed to it.
pub fn dispatch<'t>(
    x: Var<'t>,
    decision: &RoutingDecision,
    weights: Var<'t>,
    experts: &[ExpertFfn],
    p: &Bound<'t>,
) -> Result<Var<'t>> {
    if experts.len() != decision.n_experts {
        return Err(Error::Dimension {
            op: "dispatch",
            left: vec![experts.len()],
            right: vec![decision.n_experts],
        });
    }
    let d_out = experts[0].out_dim(p)?;
    combine_with(decision, weights, d_out, |e, rows| {
        experts[e].forward(x.gather_rows(rows)?, p)
    })
}

/// Result of one routed layer.
#[derive(Debug)]
pub struct MoeOutput<'t> {
    pub y: Var<'t>,
    pub aux_loss: Var<'t>,
    pub stats: ExpertLoadStats,
    pub decision: RoutingDecision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RouteMode {
    TopK,
    Switch,
}

pub(crate) fn routed_forward<'t, R: Rng>(
    x: Var<'t>,
    config: &MoEConfig,
    prefix: &str,
    p: &Bound<'t>,
    mode: RouteMode,
    noise_rng: Option<&mut R>,
) -> Result<MoeOutput<'t>> {
    config.validate()?;
    let gate = p.get(&format!("{prefix}.gate"))?;
    if gate.shape()[1] != config.n_experts {
        return Err(Error::Dimension {
            op: "router",
            left: gate.shape(),
            right: vec![x.shape()[1], config.n_experts],
        });
    }
    let probs = match noise_rng {
        Some(rng) if config.noise_std > 0.0 => gate_probs_noisy(x, gate, config.noise_std, rng)?,
        _ => super::select::gate_probs(x, gate)?,
    };
    let probs_value = probs.value();
    let decision = match mode {
        RouteMode::TopK => top_k_select(&probs_value, config.k)?,
        RouteMode::Switch => switch_route(&probs_value, config.capacity_factor)?,
    };
    let weights = gate_weights(probs, &decision)?;
    let experts: Vec<ExpertFfn> = (0..config.n_experts)
        .map(|i| ExpertFfn::nth(prefix, i))
        .collect();
    let y = dispatch(x, &decision, weights, &experts, p)?;
    let stats = load_stats(&probs_value, &decision, config.load_from)?;
    let aux_loss = load_balance_loss_recorded(probs, &stats, config.alpha)?;
    Ok(MoeOutput {
        y,
        aux_loss,
        stats,
        decision,
    })
}

/// Sparsely-gated mixture-of-experts over the rows of `x` (`[T, d]`):
/// gate, top-k selection, evaluation of the selected experts only, and the
/// weighted combination, plus the load-balancing loss for the batch.
///
/// Parameters live under `{prefix}.gate` and `{prefix}.experts.{i}.*`.
pub fn moe_head_forward<'t>(
    x: Var<'t>,
    config: &MoEConfig,
    prefix: &str,
    p: &Bound<'t>,
    noise_rng: Option<&mut impl Rng>,
) -> Result<MoeOutput<'t>> {
    routed_forward(x, config, prefix, p, RouteMode::TopK, noise_rng)
}

/// Switch feed-forward sublayer: top-1 routing with capacity. Rows of `y`
/// for dropped tokens are zero, so the caller's residual connection carries
/// them through unchanged.
pub fn switch_ffn_forward<'t>(
    x: Var<'t>,
    config: &MoEConfig,
    prefix: &str,
    p: &Bound<'t>,
    noise_rng: Option<&mut impl Rng>,
) -> Result<MoeOutput<'t>> {
    routed_forward(x, config, prefix, p, RouteMode::Switch, noise_rng)
}
