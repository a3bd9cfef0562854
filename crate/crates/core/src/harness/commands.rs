use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    hash_hex, plot, require_file, to_json, write_file, ExperimentConfig, Provenance,
};
use crate::augment::{augment_dataset, AugmentReport, AugmentationRecipe, MockTranslator, SynonymLexicon};
use crate::checkpoint::Checkpoint;
use crate::data::{load_dataset, sample_and_mix, synthetic_corpus, to_squad_json, QAExample};
use crate::error::{Error, Result};
use crate::metrics::{csv_err, EvalResult};
use crate::model::{LayerRouting, ModelConfig, QaModel, Vocab};
use crate::rng::SeededRng;
use crate::routing::load_entropy;
use crate::train::{evaluate_model, predict, train, EpochReport, TrainConfig, TrainOutput};

/// Final numbers of a training run, written as `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub seed: u64,
    pub train_examples: usize,
    pub augmented_examples: usize,
    pub skipped_examples: usize,
    pub final_loss: Option<f64>,
    /// `"validation"` or `"train"`.
    pub evaluated_on: String,
    pub count: usize,
    pub em: f64,
    pub f1: f64,
    pub epochs: Vec<EpochReport>,
}

pub struct RunArtifacts {
    pub provenance: Provenance,
    pub vocab: Vocab,
    pub model: QaModel,
    pub output: TrainOutput,
    pub eval: EvalResult,
    pub metrics: RunMetrics,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    vocab: Vocab,
    train: TrainConfig,
}

fn lexicon_for(recipe: &AugmentationRecipe) -> Result<SynonymLexicon> {
    match &recipe.lexicon {
        Some(path) => SynonymLexicon::load(path),
        None => Ok(SynonymLexicon::builtin()),
    }
}

/// The offline translator used by the commands: the mock, paraphrasing each
/// lexicon word to its first synonym on the way back to English.
fn translator_for(recipe: &AugmentationRecipe, lexicon: &SynonymLexicon) -> MockTranslator {
    MockTranslator::new(recipe.seed).with_paraphrases(
        lexicon
            .iter()
            .filter_map(|(w, syns)| syns.first().map(|s| (w.to_string(), s.clone()))),
    )
}

fn load_examples(path: &Path) -> Result<Vec<QAExample>> {
    let loaded = load_dataset(path)?;
    if !loaded.rejected.is_empty() {
        log::warn!(
            "{}: dropped {} examples with invalid spans",
            path.display(),
            loaded.rejected.len()
        );
    }
    Ok(loaded.examples)
}

/// Assembles the training set: sampled sources, the generated corpus, and
/// augmentations of the out-of-domain part. Returns the set and the number of
/// augmented examples in it.
fn training_set(config: &ExperimentConfig) -> Result<(Vec<QAExample>, usize)> {
    let mut datasets = Vec::new();
    let mut counts = Vec::new();
    let mut ood_ids = BTreeSet::new();
    for source in &config.data.sources {
        let examples = load_examples(&source.path)?;
        counts.push(source.count.unwrap_or(examples.len()));
        if source.out_of_domain {
            ood_ids.extend(examples.iter().map(|e| e.id.clone()));
        }
        datasets.push(examples);
    }
    let mut set = sample_and_mix(&datasets, &counts, config.seed)?;
    set.extend(synthetic_corpus(config.data.synthetic, config.seed));

    let mut augmented = 0;
    if let Some(recipe) = &config.recipe {
        let ood: Vec<QAExample> = set.iter().filter(|e| ood_ids.contains(&e.id)).cloned().collect();
        if !ood.is_empty() {
            let lexicon = lexicon_for(recipe)?;
            let (extra, report) = augment_dataset(&ood, recipe, &lexicon, &translator_for(recipe, &lexicon))?;
            log::info!(
                "augmented {} out-of-domain examples into {} more",
                report.input_count,
                report.emitted
            );
            augmented = extra.len();
            set.extend(extra);
        }
    }
    Ok((set, augmented))
}

/// Trains and scores one experiment without touching the filesystem beyond
/// reading its inputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let provenance = config.provenance();
    let (train_set, augmented) = training_set(config)?;
    let validation = config.data.validation.as_deref().map(load_examples).transpose()?;

    let vocab = Vocab::build(
        train_set
            .iter()
            .flat_map(|e| [e.question.as_str(), e.context.as_str()]),
    );
    let mut model_config = config.model.clone();
    if model_config.vocab_size == 0 {
        model_config.vocab_size = vocab.len();
    } else if model_config.vocab_size < vocab.len() {
        return Err(Error::config(format!(
            "model.vocab_size is {} but the training data has {} distinct tokens",
            model_config.vocab_size,
            vocab.len()
        )));
    }
    let model = QaModel::new(model_config)?;
    let params = model.init_params(&mut SeededRng::substream(config.seed, "init"));
    let output = train(
        &model,
        &vocab,
        params,
        &train_set,
        validation.as_deref(),
        &config.train,
        config.seed,
    )?;

    let (eval_set, evaluated_on) = match &validation {
        Some(v) => (v.as_slice(), "validation"),
        None => (train_set.as_slice(), "train"),
    };
    let eval = evaluate_model(&model, &output.params, &vocab, eval_set, config.train.batch_size)?;
    let metrics = RunMetrics {
        config_hash: provenance.config_hash.clone(),
        seed: provenance.seed,
        train_examples: train_set.len(),
        augmented_examples: augmented,
        skipped_examples: output.skipped.len(),
        final_loss: output.final_loss(),
        evaluated_on: evaluated_on.to_string(),
        count: eval.count,
        em: eval.em,
        f1: eval.f1,
        epochs: output.epochs.clone(),
    };
    Ok(RunArtifacts {
        provenance,
        vocab,
        model,
        output,
        eval,
        metrics,
    })
}

fn trace_csv(run: &RunArtifacts) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "epoch", "loss", "ce_loss", "aux_loss", "f_entropy"])
        .map_err(csv_err)?;
    for r in &run.output.trace {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.loss.to_string(),
            r.ce_loss.to_string(),
            r.aux_loss.to_string(),
            r.f_entropy.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
    Ok(run.provenance.comment_line() + &String::from_utf8(body).expect("csv output is utf-8"))
}

fn route_trace_jsonl(run: &RunArtifacts) -> Result<String> {
    let mut out = serde_json::to_string(&run.provenance)?;
    out.push('\n');
    for r in &run.output.route_trace {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `checkpoint.json`, `trace.csv`, `route_trace.jsonl`, `metrics.json`
/// and `scores.csv` into `dir`.
pub fn write_run(run: &RunArtifacts, train: &TrainConfig, dir: &Path) -> Result<()> {
    let meta = serde_json::to_value(CheckpointMeta {
        model: run.model.config().clone(),
        vocab: run.vocab.clone(),
        train: train.clone(),
    })?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let ckpt = Checkpoint::new(&run.output.params, &run.provenance.config_hash, run.provenance.seed, meta);
    ckpt.save(&dir.join("checkpoint.json"))?;
    write_file(&dir.join("trace.csv"), trace_csv(run)?)?;
    write_file(&dir.join("route_trace.jsonl"), route_trace_jsonl(run)?)?;
    write_file(&dir.join("metrics.json"), to_json(&run.metrics)?)?;
    write_file(
        &dir.join("scores.csv"),
        run.provenance.comment_line() + &run.eval.to_csv()?,
    )?;
    Ok(())
}

/// `train --config PATH [--seed N] [--out DIR]`.
pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunMetrics> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.output_dir = o;
    }
    let run = run_experiment(&config)?;
    write_run(&run, &config.train, &config.output_dir)?;
    log::info!(
        "wrote run to {} (em {:.4}, f1 {:.4})",
        config.output_dir.display(),
        run.metrics.em,
        run.metrics.f1
    );
    Ok(run.metrics)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, QaModel, Vocab, TrainConfig)> {
    require_file(path, "checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone()).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("checkpoint metadata: {e}"),
    })?;
    let model = QaModel::new(meta.model)?;
    Ok((ckpt, model, meta.vocab, meta.train))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub count: usize,
    pub em: f64,
    pub f1: f64,
    pub missing: usize,
}

/// `evaluate --checkpoint PATH --data PATH [--out DIR]`. With `out`, writes
/// `metrics.json` and per-example `scores.csv` there.
pub fn cmd_evaluate(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let (ckpt, model, vocab, train) = load_checkpoint(checkpoint)?;
    require_file(data, "dataset")?;
    let examples = load_examples(data)?;
    let params = ckpt.to_params()?;
    let eval = evaluate_model(&model, &params, &vocab, &examples, train.batch_size)?;
    let report = EvalReport {
        config_hash: ckpt.config_hash.clone(),
        seed: ckpt.seed,
        dataset: data.display().to_string(),
        count: eval.count,
        em: eval.em,
        f1: eval.f1,
        missing: eval.missing.len(),
    };
    if let Some(dir) = out {
        let prov = Provenance {
            config_hash: ckpt.config_hash,
            seed: ckpt.seed,
        };
        write_file(&dir.join("metrics.json"), to_json(&report)?)?;
        write_file(&dir.join("scores.csv"), prov.comment_line() + &eval.to_csv()?)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct AugmentFileReport {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    report: AugmentReport,
}

/// `augment --data PATH --recipe PATH --out PATH`. The output holds the
/// original examples followed by their augmentations; the report goes next to
/// it as `<stem>.report.json`.
pub fn cmd_augment(data: &Path, recipe_path: &Path, out: &Path) -> Result<AugmentReport> {
    require_file(data, "dataset")?;
    require_file(recipe_path, "recipe")?;
    let text = std::fs::read_to_string(recipe_path)
        .map_err(|e| Error::io(format!("reading recipe {}", recipe_path.display()), e))?;
    let mut recipe: AugmentationRecipe = toml::from_str(&text).map_err(|e| Error::Parse {
        path: recipe_path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if let Some(l) = recipe.lexicon.as_mut().filter(|l| l.is_relative()) {
        *l = recipe_path.parent().unwrap_or(Path::new("")).join(&*l);
    }
    recipe.validate()?;
    let examples = load_examples(data)?;
    let lexicon = lexicon_for(&recipe)?;
    let (extra, report) = augment_dataset(&examples, &recipe, &lexicon, &translator_for(&recipe, &lexicon))?;

    let prov = Provenance {
        config_hash: hash_hex(serde_json::to_string(&recipe)?.as_bytes()),
        seed: recipe.seed,
    };
    let mut all = examples;
    all.extend(extra);
    let mut json: serde_json::Value = serde_json::from_str(&to_squad_json(&all)?)?;
    json["config_hash"] = prov.config_hash.clone().into();
    json["seed"] = prov.seed.into();
    write_file(out, to_json(&json)?)?;

    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("augmented");
    let report_path = out.with_file_name(format!("{stem}.report.json"));
    write_file(
        &report_path,
        to_json(&AugmentFileReport {
            config_hash: prov.config_hash,
            seed: prov.seed,
            report: report.clone(),
        })?,
    )?;
    Ok(report)
}

/// Routing statistics of one layer over a whole dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRouteSummary {
    pub layer: String,
    pub n_experts: usize,
    pub tokens: usize,
    /// Token-weighted mean dispatch fractions over batches.
    pub f: Vec<f64>,
    /// Token-weighted mean router probabilities over batches.
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub dropped: usize,
    pub drop_rate: f64,
    /// Entropy of `f` in nats, and its maximum `ln N`.
    pub f_entropy: f64,
    pub max_entropy: f64,
}

/// Pools per-batch statistics by layer, in order of first appearance.
pub fn summarize_routing(batches: &[LayerRouting]) -> Vec<LayerRouteSummary> {
    let mut out: Vec<LayerRouteSummary> = Vec::new();
    for b in batches {
        let n = b.stats.n_experts;
        let idx = match out.iter().position(|s| s.layer == b.layer) {
            Some(i) => i,
            None => {
                out.push(LayerRouteSummary {
                    layer: b.layer.clone(),
                    n_experts: n,
                    tokens: 0,
                    f: vec![0.0; n],
                    p: vec![0.0; n],
                    dropped: 0,
                    drop_rate: 0.0,
                    f_entropy: 0.0,
                    max_entropy: (n as f64).ln(),
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        let t = b.stats.tokens as f64;
        for i in 0..n {
            s.f[i] += b.stats.f[i] * t;
            s.p[i] += b.stats.p[i] * t;
        }
        s.tokens += b.stats.tokens;
        s.dropped += b.stats.dropped;
    }
    for s in &mut out {
        let t = s.tokens.max(1) as f64;
        s.f.iter_mut().for_each(|v| *v /= t);
        s.p.iter_mut().for_each(|v| *v /= t);
        s.drop_rate = s.dropped as f64 / t;
        s.f_entropy = load_entropy(&s.f);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RouteStatsReport {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub layers: Vec<LayerRouteSummary>,
}

/// `route-stats --checkpoint PATH --data PATH --out DIR`. Writes
/// `route_stats.json` and one SVG bar chart of `f` and `P` per routed layer.
pub fn cmd_route_stats(checkpoint: &Path, data: &Path, out: &Path) -> Result<RouteStatsReport> {
    let (ckpt, model, vocab, train) = load_checkpoint(checkpoint)?;
    require_file(data, "dataset")?;
    let examples = load_examples(data)?;
    let preds = predict(&model, &ckpt.to_params()?, &vocab, &examples, train.batch_size)?;
    let report = RouteStatsReport {
        config_hash: ckpt.config_hash.clone(),
        seed: ckpt.seed,
        dataset: data.display().to_string(),
        layers: summarize_routing(&preds.routing),
    };
    if report.layers.is_empty() {
        log::warn!("the checkpoint has no routed layers");
    }
    write_file(&out.join("route_stats.json"), to_json(&report)?)?;
    let prov = Provenance {
        config_hash: ckpt.config_hash,
        seed: ckpt.seed,
    };
    for layer in &report.layers {
        let name = layer.layer.replace('.', "_");
        write_file(&out.join(format!("{name}.svg")), plot::routing_svg(layer, &prov))?;
    }
    Ok(report)
}
