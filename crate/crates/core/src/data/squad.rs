use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Answer, QAExample};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct SquadFile {
    #[serde(default = "default_version")]
    version: String,
    data: Vec<SquadArticle>,
}

fn default_version() -> String {
    "v2.0".to_string()
}

#[derive(Serialize, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Serialize, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Serialize, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Serialize, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// An example dropped while loading, and why.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rejected {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub examples: Vec<QAExample>,
    pub rejected: Vec<Rejected>,
}

fn byte_offset(context: &str, char_offset: usize) -> Option<usize> {
    if char_offset == context.chars().count() {
        return Some(context.len());
    }
    context.char_indices().nth(char_offset).map(|(b, _)| b)
}

/// Parses SQuAD v2 JSON. Examples whose spans do not match their context
/// are dropped and listed in [`LoadedDataset::rejected`].
pub fn parse_dataset(text: &str, path: &Path) -> Result<LoadedDataset> {
    let file: SquadFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut out = LoadedDataset::default();
    for article in file.data {
        for para in article.paragraphs {
            for qa in para.qas {
                let mut answers = Vec::new();
                let mut problem = None;
                if !qa.is_impossible {
                    for a in &qa.answers {
                        match byte_offset(&para.context, a.answer_start) {
                            Some(start) if Answer::new(a.text.clone(), start).matches(&para.context) => {
                                answers.push(Answer::new(a.text.clone(), start))
                            }
                            _ => {
                                problem = Some(format!(
                                    "answer {:?} not found at character {}",
                                    a.text, a.answer_start
                                ));
                                break;
                            }
                        }
                    }
                }
                if let Some(reason) = problem {
                    log::warn!("dropping example `{}`: {reason}", qa.id);
                    out.rejected.push(Rejected { id: qa.id, reason });
                    continue;
                }
                out.examples.push(QAExample {
                    id: qa.id,
                    context: para.context.clone(),
                    question: qa.question,
                    answerable: !answers.is_empty(),
                    answers,
                });
            }
        }
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading dataset {}", path.display()), e))?;
    parse_dataset(&text, path)
}

/// SQuAD v2 JSON for `examples`. Consecutive examples sharing a context are
/// grouped into one paragraph.
pub fn to_squad_json(examples: &[QAExample]) -> Result<String> {
    let mut paragraphs: Vec<SquadParagraph> = Vec::new();
    for ex in examples {
        let qa = SquadQa {
            id: ex.id.clone(),
            question: ex.question.clone(),
            answers: ex
                .answers
                .iter()
                .map(|a| SquadAnswer {
                    text: a.text.clone(),
                    answer_start: a.char_start(&ex.context),
                })
                .collect(),
            is_impossible: !ex.answerable,
        };
        match paragraphs.last_mut() {
            Some(p) if p.context == ex.context => p.qas.push(qa),
            _ => paragraphs.push(SquadParagraph {
                context: ex.context.clone(),
                qas: vec![qa],
            }),
        }
    }
    let file = SquadFile {
        version: default_version(),
        data: vec![SquadArticle {
            title: "moeqa".to_string(),
            paragraphs,
        }],
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn save_dataset(path: impl AsRef<Path>, examples: &[QAExample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_squad_json(examples)?)
        .map_err(|e| Error::io(format!("writing dataset {}", path.display()), e))
}
