use rand::Rng;

use super::{
    protected_tokens, replace_core, split_sentences, word_key, word_spans, AugmentationRecipe,
    SynonymLexicon,
};
use crate::data::{Answer, QAExample};
use crate::error::Result;

/// A word and whether edits must leave it alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub protected: bool,
}

impl Word {
    pub fn new(text: impl Into<String>, protected: bool) -> Self {
        Word {
            text: text.into(),
            protected,
        }
    }
}

/// `floor(rate * n + 0.5)`.
pub fn round_half_up(rate: f64, n: usize) -> usize {
    (rate * n as f64 + 0.5).floor() as usize
}

fn synonyms_of<'l>(word: &Word, lexicon: &'l SynonymLexicon) -> Option<&'l [String]> {
    if word.protected {
        return None;
    }
    lexicon.synonyms(&word_key(&word.text))
}

/// Replaces `round_half_up(sr, eligible)` distinct unprotected words that
/// have lexicon entries. Draws: a partial Fisher-Yates over the eligible
/// positions (`random_range(i..m)`), then one `random_range` per chosen word
/// to pick its synonym.
pub fn eda_synonym_replace(
    words: &[Word],
    sr: f64,
    lexicon: &SynonymLexicon,
    rng: &mut impl Rng,
) -> Vec<Word> {
    let mut out = words.to_vec();
    if sr <= 0.0 {
        return out;
    }
    let mut eligible: Vec<usize> = (0..words.len())
        .filter(|&i| synonyms_of(&words[i], lexicon).is_some())
        .collect();
    let count = round_half_up(sr, eligible.len()).min(eligible.len());
    for i in 0..count {
        let j = rng.random_range(i..eligible.len());
        eligible.swap(i, j);
        let pos = eligible[i];
        let syns = synonyms_of(&words[pos], lexicon).expect("eligible words have synonyms");
        let syn = &syns[rng.random_range(0..syns.len())];
        out[pos].text = replace_core(&words[pos].text, syn);
    }
    out
}

/// Inserts `round_half_up(ri, n)` synonyms of random unprotected words at
/// random positions. A position between two protected words is never used,
/// so multi-word answers stay contiguous.
pub fn eda_random_insert(
    words: &[Word],
    ri: f64,
    lexicon: &SynonymLexicon,
    rng: &mut impl Rng,
) -> Vec<Word> {
    let mut out = words.to_vec();
    if ri <= 0.0 {
        return out;
    }
    for _ in 0..round_half_up(ri, words.len()) {
        let sources: Vec<usize> = (0..out.len())
            .filter(|&i| synonyms_of(&out[i], lexicon).is_some())
            .collect();
        if sources.is_empty() {
            break;
        }
        let src = sources[rng.random_range(0..sources.len())];
        let syns = synonyms_of(&out[src], lexicon).expect("sources have synonyms");
        let syn = syns[rng.random_range(0..syns.len())].clone();
        let slots: Vec<usize> = (0..=out.len())
            .filter(|&p| p == 0 || p == out.len() || !(out[p - 1].protected && out[p].protected))
            .collect();
        let at = slots[rng.random_range(0..slots.len())];
        out.insert(at, Word::new(syn, false));
    }
    out
}

/// Performs `round_half_up(rs, n)` swaps of two distinct unprotected words.
/// Protected words never move.
pub fn eda_random_swap(words: &[Word], rs: f64, rng: &mut impl Rng) -> Vec<Word> {
    let mut out = words.to_vec();
    let free: Vec<usize> = (0..words.len()).filter(|&i| !words[i].protected).collect();
    if rs <= 0.0 || free.len() < 2 {
        return out;
    }
    for _ in 0..round_half_up(rs, words.len()) {
        let a = rng.random_range(0..free.len());
        let mut b = rng.random_range(0..free.len() - 1);
        if b >= a {
            b += 1;
        }
        out.swap(free[a], free[b]);
    }
    out
}

/// Deletes each unprotected word with probability `rd` (one `random::<f64>`
/// per unprotected word, in order). If every word would go, one random
/// original word is kept.
pub fn eda_random_delete(words: &[Word], rd: f64, rng: &mut impl Rng) -> Vec<Word> {
    if rd <= 0.0 || words.is_empty() {
        return words.to_vec();
    }
    let out: Vec<Word> = words
        .iter()
        .filter(|w| w.protected || rng.random::<f64>() >= rd)
        .cloned()
        .collect();
    if out.is_empty() {
        return vec![words[rng.random_range(0..words.len())].clone()];
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct EdaOutcome {
    pub examples: Vec<QAExample>,
    /// Variants dropped because an answer could not be found again.
    pub dropped_rematch: usize,
}

/// Position of `text` in `context`: the first occurrence at or after byte
/// `hint`, else the first anywhere.
fn rematch(context: &str, text: &str, hint: usize) -> Option<usize> {
    if text.is_empty() {
        return None;
    }
    let hits: Vec<usize> = context.match_indices(text).map(|(i, _)| i).collect();
    hits.iter().copied().find(|&i| i >= hint).or(hits.first().copied())
}

/// Produces `recipe.n_aug` EDA variants of `example`. Each sentence goes
/// through synonym replacement, insertion, swap and deletion, in that order;
/// sentences left unchanged keep their original bytes, edited ones are
/// re-joined with single spaces. Answers are then re-located in the new
/// context and variants where that fails are dropped.
pub fn eda_augment(
    example: &QAExample,
    recipe: &AugmentationRecipe,
    lexicon: &SynonymLexicon,
    rng: &mut impl Rng,
) -> Result<EdaOutcome> {
    recipe.validate()?;
    example.validate()?;
    let protected = protected_tokens(example);
    let mut outcome = EdaOutcome::default();
    for k in 0..recipe.n_aug {
        let mut context = String::with_capacity(example.context.len());
        let mut index = 0;
        for sentence in split_sentences(&example.context) {
            let spans = word_spans(sentence);
            let words: Vec<Word> = spans
                .iter()
                .map(|&(s, e)| {
                    let w = Word::new(&sentence[s..e], protected.contains(&index));
                    index += 1;
                    w
                })
                .collect();
            let mut edited = eda_synonym_replace(&words, recipe.sr, lexicon, rng);
            edited = eda_random_insert(&edited, recipe.ri, lexicon, rng);
            edited = eda_random_swap(&edited, recipe.rs, rng);
            edited = eda_random_delete(&edited, recipe.rd, rng);
            if edited == words {
                context.push_str(sentence);
            } else {
                let lead = spans.first().map_or(sentence.len(), |s| s.0);
                let trail = spans.last().map_or(sentence.len(), |s| s.1);
                context.push_str(&sentence[..lead]);
                let texts: Vec<&str> = edited.iter().map(|w| w.text.as_str()).collect();
                context.push_str(&texts.join(" "));
                context.push_str(&sentence[trail..]);
            }
        }

        let scale = context.len() as f64 / example.context.len().max(1) as f64;
        let answers: Option<Vec<Answer>> = example
            .answers
            .iter()
            .map(|a| {
                let hint = (a.start as f64 * scale).floor() as usize;
                rematch(&context, &a.text, hint).map(|start| Answer::new(a.text.clone(), start))
            })
            .collect();
        match answers {
            Some(answers) => outcome.examples.push(QAExample {
                id: format!("{}-eda{k}", example.id),
                context,
                question: example.question.clone(),
                answers,
                answerable: example.answerable,
            }),
            None => outcome.dropped_rematch += 1,
        }
    }
    Ok(outcome)
}
