use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::Bound;

pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;

/// Start/end logits from hidden states `[T, d]`: two linear projections,
/// `hidden W + b` with `W: [d, 2]`, `b: [2]` under `{prefix}.w`, `{prefix}.b`.
pub fn span_head<'t>(hidden: Var<'t>, p: &Bound<'t>, prefix: &str) -> Result<(Var<'t>, Var<'t>)> {
    let logits = hidden
        .matmul(p.get(&format!("{prefix}.w"))?)?
        .add_bias(p.get(&format!("{prefix}.b"))?)?;
    split_logits(logits)
}

/// Splits `[T, 2]` logits into start `[T]` and end `[T]` vectors.
pub(crate) fn split_logits(logits: Var<'_>) -> Result<(Var<'_>, Var<'_>)> {
    let t = logits.shape()[0];
    let start = logits.slice_cols(0, 1)?.reshape(&[t])?;
    let end = logits.slice_cols(1, 1)?.reshape(&[t])?;
    Ok((start, end))
}

/// `CE(start, gold_start) + CE(end, gold_end) + sum(aux)`. Unanswerable
/// examples use the sentinel position 0 for both targets.
pub fn qa_loss<'t>(
    start_logits: Var<'t>,
    end_logits: Var<'t>,
    gold_start: usize,
    gold_end: usize,
    aux_losses: &[Var<'t>],
) -> Result<Var<'t>> {
    let mut loss = start_logits
        .cross_entropy(gold_start)?
        .add(end_logits.cross_entropy(gold_end)?)?;
    for aux in aux_losses {
        loss = loss.add(*aux)?;
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub no_answer: bool,
}

/// Best span over all positions after the sentinel.
pub fn predict_span(start: &[f64], end: &[f64], max_answer_len: usize) -> Result<SpanPrediction> {
    predict_span_within(start, end, max_answer_len, 1..start.len())
}

/// Highest-scoring pair `(s, e)` with `s <= e <= s + max_answer_len`, both
/// inside `window`, scored `start[s] + end[e]`. Earlier pairs (by `s`, then
/// `e`) win ties. Position 0 is the no-answer sentinel: it is returned only
/// when `start[0] + end[0]` is strictly greater than every candidate, or
/// when there are no candidates.
pub fn predict_span_within(
    start: &[f64],
    end: &[f64],
    max_answer_len: usize,
    window: Range<usize>,
) -> Result<SpanPrediction> {
    if start.is_empty() {
        return Err(Error::contract("cannot decode a span from an empty sequence"));
    }
    if start.len() != end.len() {
        return Err(Error::Dimension {
            op: "predict_span",
            left: vec![start.len()],
            right: vec![end.len()],
        });
    }
    let lo = window.start.max(1);
    let hi = window.end.min(start.len());
    let mut best: Option<SpanPrediction> = None;
    for s in lo..hi {
        for e in s..hi.min(s + max_answer_len + 1) {
            let score = start[s] + end[e];
            if best.is_none_or(|b| score > b.score) {
                best = Some(SpanPrediction {
                    start: s,
                    end: e,
                    score,
                    no_answer: false,
                });
            }
        }
    }
    let sentinel = SpanPrediction {
        start: 0,
        end: 0,
        score: start[0] + end[0],
        no_answer: true,
    };
    Ok(match best {
        Some(b) if sentinel.score <= b.score => b,
        _ => sentinel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(t: usize, i: usize) -> Vec<f64> {
        (0..t).map(|j| if j == i { 5.0 } else { 0.0 }).collect()
    }

    #[test]
    fn one_hot_logits() {
        let p = predict_span(&one_hot(6, 2), &one_hot(6, 4), 30).unwrap();
        assert_eq!((p.start, p.end, p.no_answer), (2, 4, false));
    }

    #[test]
    fn sentinel_wins_only_strictly() {
        let p = predict_span(&one_hot(5, 0), &one_hot(5, 0), 30).unwrap();
        assert!(p.no_answer);
        let flat = vec![0.0; 5];
        assert!(!predict_span(&flat, &flat, 30).unwrap().no_answer);
        assert!(predict_span(&[1.0], &[1.0], 30).unwrap().no_answer);
    }

    #[test]
    fn respects_length_bound_and_window() {
        let p = predict_span(&one_hot(8, 1), &one_hot(8, 7), 3).unwrap();
        assert!(p.end <= p.start + 3);
        let w = predict_span_within(&one_hot(8, 1), &one_hot(8, 1), 30, 4..8).unwrap();
        assert!(w.start >= 4);
    }

    #[test]
    fn empty_is_contract_error() {
        assert!(matches!(predict_span(&[], &[], 30), Err(Error::Contract(_))));
    }
}
