//! Training loop, batched prediction, and model evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::QAExample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::model::{featurize, predict_span_within, Feature, LayerRouting, QaModel, TrainRngs, Vocab};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::rng::SeededRng;
use crate::routing::{load_entropy, RouteTraceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 3e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One optimiser step of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub ce_loss: f64,
    pub aux_loss: f64,
    /// Mean entropy (nats) of the dispatch fractions over routed layers.
    pub f_entropy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_f_entropy: Option<f64>,
    pub val_em: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParamStore,
    pub trace: Vec<TraceRow>,
    pub epochs: Vec<EpochReport>,
    pub route_trace: Vec<RouteTraceRecord>,
    /// Training examples whose answer fell outside the model window.
    pub skipped: Vec<String>,
}

impl TrainOutput {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Trains `params` on `train_set` with Adam. Each step's loss is the mean
/// start/end cross-entropy over the batch plus the auxiliary loss of every
/// routed layer. Shuffling, dropout and routing noise draw from their own
/// streams of `seed`. When `val_set` is given it is scored after every epoch.
pub fn train(
    model: &QaModel,
    vocab: &Vocab,
    mut params: ParamStore,
    train_set: &[QAExample],
    val_set: Option<&[QAExample]>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let max_len = model.config().max_seq_len;
    let mut features = Vec::with_capacity(train_set.len());
    let mut skipped = Vec::new();
    for ex in train_set {
        let f = featurize(ex, vocab, max_len)?;
        match f.target {
            Some(target) => features.push((f, target)),
            None => skipped.push(ex.id.clone()),
        }
    }
    if !skipped.is_empty() {
        log::warn!("skipping {} examples whose answers were truncated away", skipped.len());
    }
    if features.is_empty() {
        return Err(Error::config("no training example has an answer inside the window"));
    }

    let mut shuffle_rng = SeededRng::substream(seed, "shuffle");
    let mut rngs = TrainRngs::new(seed);
    let mut adam = AdamState::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut trace = Vec::new();
    let mut epochs = Vec::new();
    let mut route_trace = Vec::new();
    let mut tape = Tape::new();
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_start = trace.len();
        for chunk in order.chunks(config.batch_size) {
            tape.reset();
            let bound = params.bind(&tape);
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| features[i].0.ids.as_slice()).collect();
            let out = model.forward(&bound, &tape, &batch, Some(&mut rngs))?;

            let mut ce = None;
            for (j, &i) in chunk.iter().enumerate() {
                let (s, e) = features[i].1;
                let term = out.start_logits[j]
                    .cross_entropy(s)?
                    .add(out.end_logits[j].cross_entropy(e)?)?;
                ce = Some(match ce {
                    None => term,
                    Some(acc) => term.add(acc)?,
                });
            }
            let ce = ce.expect("chunks are non-empty").scale(1.0 / chunk.len() as f64);
            let mut loss = ce;
            for aux in &out.aux_losses {
                loss = loss.add(*aux)?;
            }
            let (loss_value, ce_value) = (loss.item(), ce.item());
            let grads = bound.grads(&tape.backward(loss)?);
            adam_step(&mut params, &grads, &mut adam, config.learning_rate)?;

            trace.push(TraceRow {
                step,
                epoch,
                loss: loss_value,
                ce_loss: ce_value,
                aux_loss: loss_value - ce_value,
                f_entropy: mean(out.routing.iter().map(|r| load_entropy(&r.stats.f))),
            });
            route_trace.extend(out.routing.into_iter().map(|r| RouteTraceRecord {
                step,
                layer: r.layer,
                f: r.stats.f,
                p: r.stats.p,
                aux_loss: r.aux_loss,
                dropped_count: r.stats.dropped,
            }));
            step += 1;
        }

        let rows = &trace[epoch_start..];
        let (val_em, val_f1) = match val_set {
            Some(v) if !v.is_empty() => {
                let r = evaluate_model(model, &params, vocab, v, config.batch_size)?;
                (Some(r.em), Some(r.f1))
            }
            _ => (None, None),
        };
        let report = EpochReport {
            epoch,
            mean_loss: mean(rows.iter().map(|r| r.loss)).unwrap_or(f64::NAN),
            mean_f_entropy: mean(rows.iter().filter_map(|r| r.f_entropy)),
            val_em,
            val_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val_em {:?} val_f1 {:?}",
            report.mean_loss,
            report.val_em,
            report.val_f1
        );
        epochs.push(report);
    }

    Ok(TrainOutput {
        params,
        trace,
        epochs,
        route_trace,
        skipped,
    })
}

#[derive(Clone, Debug, Default)]
pub struct Predictions {
    /// Answer text per example id; empty for predicted no-answer.
    pub texts: BTreeMap<String, String>,
    /// Answerable examples whose gold answer lies outside the model window.
    pub truncated: Vec<String>,
    /// Routing statistics of every routed layer, per batch.
    pub routing: Vec<LayerRouting>,
}

/// Decodes the best span for every example, `batch_size` examples at a time.
pub fn predict(
    model: &QaModel,
    params: &ParamStore,
    vocab: &Vocab,
    examples: &[QAExample],
    batch_size: usize,
) -> Result<Predictions> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let max_len = model.config().max_seq_len;
    let features: Vec<Feature> = examples
        .iter()
        .map(|ex| featurize(ex, vocab, max_len))
        .collect::<Result<_>>()?;
    let mut out = Predictions::default();
    let mut tape = Tape::new();
    for (exs, feats) in examples.chunks(batch_size).zip(features.chunks(batch_size)) {
        tape.reset();
        let bound = params.bind(&tape);
        let batch: Vec<&[usize]> = feats.iter().map(|f| f.ids.as_slice()).collect();
        let fwd = model.forward(&bound, &tape, &batch, None)?;
        for (j, (ex, f)) in exs.iter().zip(feats).enumerate() {
            let start = fwd.start_logits[j].value();
            let end = fwd.end_logits[j].value();
            let span = predict_span_within(
                start.data(),
                end.data(),
                model.config().max_answer_len,
                f.context_range(),
            )?;
            let text = if span.no_answer {
                String::new()
            } else {
                f.span_text(&ex.context, span.start, span.end).to_string()
            };
            if ex.answerable && f.target.is_none() {
                out.truncated.push(ex.id.clone());
            }
            out.texts.insert(ex.id.clone(), text);
        }
        out.routing.extend(fwd.routing);
    }
    Ok(out)
}

/// EM/F1 of the model on `examples`. Examples whose answer was truncated
/// out of the window count as misses.
pub fn evaluate_model(
    model: &QaModel,
    params: &ParamStore,
    vocab: &Vocab,
    examples: &[QAExample],
    batch_size: usize,
) -> Result<EvalResult> {
    let preds = predict(model, params, vocab, examples, batch_size)?;
    Ok(evaluate(&preds.texts, examples).count_as_misses(&preds.truncated))
}
