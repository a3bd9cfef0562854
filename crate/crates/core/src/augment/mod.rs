//! Span-preserving data augmentation.
//!
//! EDA (synonym replacement, random insertion, random swap, random deletion)
//! edits contexts sentence by sentence while leaving answer words alone, then
//! re-locates each answer in the edited text. Back translation round-trips
//! the text before and after the answer through intermediate languages and
//! keeps the answer bytes untouched.

mod eda;
mod lexicon;
mod translate;

pub use eda::{
    eda_augment, eda_random_delete, eda_random_insert, eda_random_swap, eda_synonym_replace,
    round_half_up, EdaOutcome, Word,
};
pub use lexicon::SynonymLexicon;
pub use translate::{
    back_translate, fallback_segment_translate, round_trip, BackTranslation, FailurePolicy,
    IdentityTranslator, MockTranslator, SegmentedTranslation, Translator,
};

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::QAExample;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationRecipe {
    /// Synonym replacement rate.
    pub sr: f64,
    /// Random swap rate.
    pub rs: f64,
    /// Random insertion rate.
    pub ri: f64,
    /// Random deletion probability per word.
    pub rd: f64,
    /// EDA variants per input.
    pub n_aug: usize,
    /// Intermediate languages for back translation, one variant each.
    pub languages: Vec<String>,
    pub seed: u64,
    /// Synonym file (`word<TAB>syn1,syn2`); the built-in list when absent.
    pub lexicon: Option<PathBuf>,
}

impl Default for AugmentationRecipe {
    fn default() -> Self {
        AugmentationRecipe {
            sr: 0.1,
            rs: 0.1,
            ri: 0.1,
            rd: 0.1,
            n_aug: 4,
            languages: vec!["es".into(), "fr".into(), "de".into()],
            seed: 0,
            lexicon: None,
        }
    }
}

impl AugmentationRecipe {
    /// No edits and no back translation.
    pub fn zero() -> Self {
        AugmentationRecipe {
            sr: 0.0,
            rs: 0.0,
            ri: 0.0,
            rd: 0.0,
            languages: Vec::new(),
            ..AugmentationRecipe::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sr", self.sr), ("rs", self.rs), ("ri", self.ri), ("rd", self.rd)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if let Some(path) = &self.lexicon {
            if !path.is_file() {
                return Err(Error::config(format!(
                    "lexicon file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub input_count: usize,
    pub emitted: usize,
    pub dropped_rematch: usize,
    pub dropped_translation: usize,
}

/// Lowercase with punctuation removed; the form used to compare words with
/// answers.
pub(crate) fn word_key(word: &str) -> String {
    word.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Swaps the alphanumeric core of `word` for `synonym`, keeping surrounding
/// punctuation and an initial capital.
pub(crate) fn replace_core(word: &str, synonym: &str) -> String {
    let start = word.find(|c: char| c.is_alphanumeric()).unwrap_or(0);
    let end = word
        .rfind(|c: char| c.is_alphanumeric())
        .map_or(word.len(), |i| i + word[i..].chars().next().map_or(1, char::len_utf8));
    let mut syn = synonym.to_string();
    if word[start..].starts_with(|c: char| c.is_uppercase()) {
        let mut chars = synonym.chars();
        if let Some(first) = chars.next() {
            syn = first.to_uppercase().chain(chars).collect();
        }
    }
    format!("{}{syn}{}", &word[..start], &word[end..])
}

/// Byte ranges of the whitespace-separated words of `text`.
pub(crate) fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Indices of the whitespace-separated context words that must not be
/// edited: words whose lowercased, punctuation-free form occurs among the
/// answer words, and words overlapping an answer span.
pub fn protected_tokens(example: &QAExample) -> BTreeSet<usize> {
    let keys: BTreeSet<String> = example
        .answers
        .iter()
        .flat_map(|a| a.text.split_whitespace().map(word_key).collect::<Vec<_>>())
        .filter(|k| !k.is_empty())
        .collect();
    word_spans(&example.context)
        .into_iter()
        .enumerate()
        .filter(|(_, (s, e))| {
            keys.contains(&word_key(&example.context[*s..*e]))
                || example.answers.iter().any(|a| *s < a.end() && a.start < *e)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Splits after `.`, `!` or `?` followed by whitespace. Each piece keeps its
/// trailing whitespace, so concatenating the pieces gives back `text`.
pub(crate) fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_some_and(|(_, n)| n.is_whitespace()) {
            let mut end = i + c.len_utf8();
            while let Some(&(j, n)) = chars.peek() {
                if !n.is_whitespace() {
                    break;
                }
                end = j + n.len_utf8();
                chars.next();
            }
            out.push(&text[start..end]);
            start = end;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// EDA variants and back translations of every example, each drawing from
/// its own random stream keyed by the example id. Originals are not
/// included in the output.
pub fn augment_dataset(
    examples: &[QAExample],
    recipe: &AugmentationRecipe,
    lexicon: &SynonymLexicon,
    translator: &dyn Translator,
) -> Result<(Vec<QAExample>, AugmentReport)> {
    recipe.validate()?;
    let mut report = AugmentReport {
        input_count: examples.len(),
        ..AugmentReport::default()
    };
    let mut out = Vec::new();
    for ex in examples {
        let mut rng = SeededRng::keyed(recipe.seed, "eda", &ex.id);
        let eda = eda_augment(ex, recipe, lexicon, &mut rng)?;
        report.dropped_rematch += eda.dropped_rematch;
        out.extend(eda.examples);
        if !recipe.languages.is_empty() {
            let bt = back_translate(ex, &recipe.languages, translator)?;
            report.dropped_translation += bt.skipped.len();
            out.extend(bt.examples);
        }
    }
    report.emitted = out.len();
    Ok((out, report))
}
