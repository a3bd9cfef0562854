//! SQuAD-style answer normalisation, exact match and token F1.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::data::QAExample;
use crate::error::{Error, Result};

/// Lowercases, strips ASCII punctuation, drops the articles `a`, `an`,
/// `the`, and splits on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Token-level F1 over multisets of normalised tokens.
pub fn f1_score(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &g {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0usize;
    for w in &p {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn best_of(metric: fn(&str, &str) -> f64, pred: &str, golds: &[&str]) -> f64 {
    if golds.is_empty() {
        return metric(pred, "");
    }
    golds.iter().map(|g| metric(pred, g)).fold(0.0, f64::max)
}

/// Exact match against the best of several references.
pub fn exact_match_multi(pred: &str, golds: &[&str]) -> f64 {
    best_of(exact_match, pred, golds)
}

/// F1 against the best of several references.
pub fn f1_score_multi(pred: &str, golds: &[&str]) -> f64 {
    best_of(f1_score, pred, golds)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleScore {
    pub id: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub count: usize,
    pub em: f64,
    pub f1: f64,
    /// Ids with no prediction; they score zero.
    pub missing: Vec<String>,
    pub per_example: Vec<ExampleScore>,
}

impl EvalResult {
    fn from_scores(per_example: Vec<ExampleScore>, missing: Vec<String>) -> Self {
        let count = per_example.len();
        let mean = |f: fn(&ExampleScore) -> f64| {
            if count == 0 {
                0.0
            } else {
                per_example.iter().map(f).sum::<f64>() / count as f64
            }
        };
        EvalResult {
            count,
            em: mean(|s| s.em),
            f1: mean(|s| s.f1),
            missing,
            per_example,
        }
    }

    /// Zeroes the scores of `ids` (e.g. answers truncated out of the model's
    /// window) and recomputes the means.
    pub fn count_as_misses(self, ids: &[String]) -> Self {
        let per_example = self
            .per_example
            .into_iter()
            .map(|mut s| {
                if ids.contains(&s.id) {
                    s.em = 0.0;
                    s.f1 = 0.0;
                }
                s
            })
            .collect();
        EvalResult::from_scores(per_example, self.missing)
    }

    /// Per-example rows followed by a `mean` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "em", "f1", "prediction"]).map_err(csv_err)?;
        for s in &self.per_example {
            w.write_record([s.id.as_str(), &s.em.to_string(), &s.f1.to_string(), &s.prediction])
                .map_err(csv_err)?;
        }
        w.write_record(["mean", &self.em.to_string(), &self.f1.to_string(), ""])
            .map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::contract(format!("csv encoding failed: {e}"))
}

/// Scores `predictions` (id to answer text) against every example in
/// `dataset`. Missing ids score zero and are listed.
pub fn evaluate(predictions: &BTreeMap<String, String>, dataset: &[QAExample]) -> EvalResult {
    let mut missing = Vec::new();
    let per_example = dataset
        .iter()
        .map(|ex| {
            let golds = ex.gold_texts();
            match predictions.get(&ex.id) {
                Some(pred) => ExampleScore {
                    id: ex.id.clone(),
                    prediction: pred.clone(),
                    em: exact_match_multi(pred, &golds),
                    f1: f1_score_multi(pred, &golds),
                },
                None => {
                    missing.push(ex.id.clone());
                    ExampleScore {
                        id: ex.id.clone(),
                        prediction: String::new(),
                        em: 0.0,
                        f1: 0.0,
                    }
                }
            }
        })
        .collect();
    if !missing.is_empty() {
        log::warn!("{} examples have no prediction", missing.len());
    }
    EvalResult::from_scores(per_example, missing)
}

/// Reads a JSON object mapping example ids to predicted answer strings.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading predictions {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation_rules() {
        assert_eq!(normalize_answer("The Email Address."), vec!["email", "address"]);
        assert!(normalize_answer("").is_empty());
        assert!(normalize_answer("  the  ").is_empty());
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(exact_match("", ""), 1.0);
        assert_eq!(f1_score("", ""), 1.0);
        assert_eq!(f1_score("x", ""), 0.0);
        assert_eq!(f1_score("", "x"), 0.0);
    }

    #[test]
    fn multi_reference_takes_best() {
        assert_eq!(exact_match_multi("cat", &["dog", "the cat"]), 1.0);
        assert_eq!(f1_score_multi("black cat", &["cat", "dog"]), 2.0 / 3.0);
    }

    #[test]
    fn csv_has_mean_row() {
        let r = EvalResult::from_scores(
            vec![ExampleScore {
                id: "a,b".into(),
                prediction: "x".into(),
                em: 1.0,
                f1: 1.0,
            }],
            vec![],
        );
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("id,em,f1,prediction\n\"a,b\",1,1,x\n"));
        assert!(csv.ends_with("mean,1,1,\n"));
    }
}
