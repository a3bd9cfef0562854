//! Question-answering examples, SQuAD-style ingestion, sampling, and the
//! synthetic training corpus.
//!
//! Answer offsets are byte offsets into the UTF-8 context. The SQuAD JSON
//! format counts characters; [`load_dataset`] and [`save_dataset`] convert.

mod sample;
mod squad;
mod synthetic;

pub use sample::sample_and_mix;
pub use squad::{load_dataset, parse_dataset, save_dataset, to_squad_json, LoadedDataset, Rejected};
pub use synthetic::{fixture_corpus, synthetic_corpus, SYNTHETIC_QUESTION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Byte offset of the answer in the context.
    pub start: usize,
}

impl Answer {
    pub fn new(text: impl Into<String>, start: usize) -> Self {
        Answer {
            text: text.into(),
            start,
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.text.len()
    }

    /// Character (not byte) offset of the answer, as SQuAD files store it.
    pub fn char_start(&self, context: &str) -> usize {
        context[..self.start.min(context.len())].chars().count()
    }

    /// Whether the answer slices out of `context` exactly.
    pub fn matches(&self, context: &str) -> bool {
        context.get(self.start..self.end()) == Some(self.text.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<Answer>,
    pub answerable: bool,
}

impl QAExample {
    pub fn answerable(
        id: impl Into<String>,
        context: impl Into<String>,
        question: impl Into<String>,
        answer: Answer,
    ) -> Self {
        QAExample {
            id: id.into(),
            context: context.into(),
            question: question.into(),
            answers: vec![answer],
            answerable: true,
        }
    }

    pub fn unanswerable(
        id: impl Into<String>,
        context: impl Into<String>,
        question: impl Into<String>,
    ) -> Self {
        QAExample {
            id: id.into(),
            context: context.into(),
            question: question.into(),
            answers: Vec::new(),
            answerable: false,
        }
    }

    /// Checks the span invariant for every answer.
    pub fn validate(&self) -> Result<()> {
        if self.answerable && self.answers.is_empty() {
            return Err(Error::contract(format!(
                "example `{}` is answerable but has no answers",
                self.id
            )));
        }
        if !self.answerable && !self.answers.is_empty() {
            return Err(Error::contract(format!(
                "example `{}` is unanswerable but carries answers",
                self.id
            )));
        }
        for a in &self.answers {
            if !a.matches(&self.context) {
                return Err(Error::contract(format!(
                    "example `{}`: answer {:?} does not occur at byte {}",
                    self.id, a.text, a.start
                )));
            }
        }
        Ok(())
    }

    /// Reference strings for scoring; `[""]` for unanswerable examples.
    pub fn gold_texts(&self) -> Vec<&str> {
        if self.answers.is_empty() {
            vec![""]
        } else {
            self.answers.iter().map(|a| a.text.as_str()).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_validation() {
        let ok = QAExample::answerable("a", "héllo world", "q", Answer::new("world", 7));
        assert!(ok.validate().is_ok());
        assert_eq!(ok.answers[0].char_start(&ok.context), 6);
        let bad = QAExample::answerable("b", "hello world", "q", Answer::new("world", 5));
        assert!(bad.validate().is_err());
        let mut odd = QAExample::unanswerable("c", "x", "q");
        odd.answers.push(Answer::new("x", 0));
        assert!(odd.validate().is_err());
    }

    #[test]
    fn unanswerable_gold_is_empty_string() {
        assert_eq!(QAExample::unanswerable("u", "c", "q").gold_texts(), vec![""]);
    }
}
