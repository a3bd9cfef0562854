use std::collections::BTreeMap;

use super::{replace_core, split_sentences, word_key};
use crate::data::{Answer, QAExample};
use crate::error::{Error, Result};
use crate::rng::fnv1a;

/// Machine translation between language codes such as `en`, `es`.
pub trait Translator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String>;
}

/// Returns its input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _source: &str, _target: &str) -> Result<String> {
        Ok(text.to_string())
    }
}

/// When [`MockTranslator`] refuses a request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FailurePolicy {
    Never,
    Always,
    /// Inputs of more than this many characters.
    LongerThan(usize),
    /// Inputs containing this substring.
    Containing(String),
}

impl FailurePolicy {
    fn fails(&self, text: &str) -> bool {
        match self {
            FailurePolicy::Never => false,
            FailurePolicy::Always => true,
            FailurePolicy::LongerThan(n) => text.chars().count() > *n,
            FailurePolicy::Containing(s) => text.contains(s.as_str()),
        }
    }
}

/// Offline stand-in for a translation service.
///
/// English to language `L`: every ASCII letter is shifted by a per-language
/// amount and the word order is rotated left by that amount modulo the word
/// count. `L` to English undoes both, then rewrites words found in the
/// paraphrase table, which is what makes round trips differ from the input.
/// Words are re-joined with single spaces. Only pairs involving `en` are
/// supported.
#[derive(Clone, Debug, Default)]
pub struct MockTranslator {
    seed: u64,
    paraphrases: BTreeMap<String, String>,
    failure: Vec<FailurePolicy>,
}

impl MockTranslator {
    pub fn new(seed: u64) -> Self {
        MockTranslator {
            seed,
            ..MockTranslator::default()
        }
    }

    /// Words (lowercase, punctuation-free) rewritten on the way back to
    /// English.
    pub fn with_paraphrases<K: Into<String>, V: Into<String>>(
        mut self,
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        self.paraphrases
            .extend(pairs.into_iter().map(|(k, v)| (k.into(), v.into())));
        self
    }

    pub fn failing(mut self, policy: FailurePolicy) -> Self {
        self.failure.push(policy);
        self
    }

    /// Letter shift for `lang`, in `1..=25`.
    pub fn shift(&self, lang: &str) -> u8 {
        ((fnv1a(lang.as_bytes()) ^ self.seed) % 25 + 1) as u8
    }

    fn cipher(word: &str, shift: u8) -> String {
        word.chars()
            .map(|c| match c {
                'a'..='z' => ((c as u8 - b'a' + shift) % 26 + b'a') as char,
                'A'..='Z' => ((c as u8 - b'A' + shift) % 26 + b'A') as char,
                _ => c,
            })
            .collect()
    }

    fn to_foreign(&self, text: &str, lang: &str) -> String {
        let shift = self.shift(lang);
        let mut words: Vec<String> = text.split_whitespace().map(|w| Self::cipher(w, shift)).collect();
        if !words.is_empty() {
            let r = shift as usize % words.len();
            words.rotate_left(r);
        }
        words.join(" ")
    }

    fn from_foreign(&self, text: &str, lang: &str) -> String {
        let shift = self.shift(lang);
        let mut words: Vec<String> = text
            .split_whitespace()
            .map(|w| Self::cipher(w, 26 - shift))
            .collect();
        if !words.is_empty() {
            let r = shift as usize % words.len();
            words.rotate_right(r);
        }
        for w in &mut words {
            if let Some(p) = self.paraphrases.get(&word_key(w)) {
                *w = replace_core(w, p);
            }
        }
        words.join(" ")
    }
}

impl Translator for MockTranslator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String> {
        let fail = |detail: String| Error::Translation {
            source_lang: source.to_string(),
            target_lang: target.to_string(),
            detail,
        };
        if self.failure.iter().any(|f| f.fails(text)) {
            return Err(fail("rejected by the failure policy".into()));
        }
        match (source, target) {
            (s, t) if s == t => Ok(text.to_string()),
            ("en", t) => Ok(self.to_foreign(text, t)),
            (s, "en") => Ok(self.from_foreign(text, s)),
            _ => Err(fail("the mock only translates to or from en".into())),
        }
    }
}

/// English to `lang` and back.
pub fn round_trip(text: &str, lang: &str, translator: &dyn Translator) -> Result<String> {
    let foreign = translator.translate(text, "en", lang)?;
    translator.translate(&foreign, lang, "en")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentedTranslation {
    pub text: String,
    /// Pieces that made the round trip (1 when the whole text did).
    pub translated: usize,
    /// Pieces passed through untranslated.
    pub failed: usize,
}

/// Round-trips `text` through `lang`. If the whole text fails, each sentence
/// is tried on its own and the results are joined with single spaces;
/// sentences that still fail are kept as they were.
pub fn fallback_segment_translate(
    text: &str,
    lang: &str,
    translator: &dyn Translator,
) -> SegmentedTranslation {
    if text.trim().is_empty() {
        return SegmentedTranslation {
            text: text.to_string(),
            translated: 0,
            failed: 0,
        };
    }
    match round_trip(text, lang, translator) {
        Ok(t) => SegmentedTranslation {
            text: t,
            translated: 1,
            failed: 0,
        },
        Err(e) => {
            log::warn!("{e}; retrying sentence by sentence");
            let mut pieces = Vec::new();
            let (mut translated, mut failed) = (0, 0);
            for sentence in split_sentences(text) {
                let sentence = sentence.trim();
                if sentence.is_empty() {
                    continue;
                }
                match round_trip(sentence, lang, translator) {
                    Ok(t) => {
                        translated += 1;
                        pieces.push(t);
                    }
                    Err(e) => {
                        log::warn!("{e}; keeping the sentence untranslated");
                        failed += 1;
                        pieces.push(sentence.to_string());
                    }
                }
            }
            SegmentedTranslation {
                text: pieces.join(" "),
                translated,
                failed,
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BackTranslation {
    pub examples: Vec<QAExample>,
    /// Languages whose variant was not produced, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Round-trips the part of a segment between its leading and trailing
/// whitespace. `None` when nothing in a non-blank segment could be
/// translated.
fn translate_segment(segment: &str, lang: &str, translator: &dyn Translator) -> Option<String> {
    let core = segment.trim();
    if core.is_empty() {
        return Some(segment.to_string());
    }
    let lead = segment.len() - segment.trim_start().len();
    let trail = segment.trim_end().len();
    let t = fallback_segment_translate(core, lang, translator);
    (t.translated > 0).then(|| format!("{}{}{}", &segment[..lead], t.text, &segment[trail..]))
}

/// One variant per language: the context before and after the answers is
/// round-tripped, the stretch covering the answers is copied byte for byte,
/// and answer offsets move with the new prefix. A language is skipped when
/// some part of the context could not be translated at all.
pub fn back_translate(
    example: &QAExample,
    languages: &[String],
    translator: &dyn Translator,
) -> Result<BackTranslation> {
    example.validate()?;
    let ctx = &example.context;
    let (lo, hi) = if example.answers.is_empty() {
        (ctx.len(), ctx.len())
    } else {
        (
            example.answers.iter().map(|a| a.start).min().unwrap_or(0),
            example.answers.iter().map(Answer::end).max().unwrap_or(0),
        )
    };
    let mut out = BackTranslation::default();
    for lang in languages {
        let prefix = translate_segment(&ctx[..lo], lang, translator);
        let suffix = translate_segment(&ctx[hi..], lang, translator);
        let (Some(prefix), Some(suffix)) = (prefix, suffix) else {
            log::warn!("skipping {lang} back translation of `{}`", example.id);
            out.skipped.push((lang.clone(), "translation failed".to_string()));
            continue;
        };
        let variant = QAExample {
            id: format!("{}-bt-{lang}", example.id),
            context: format!("{prefix}{}{suffix}", &ctx[lo..hi]),
            question: example.question.clone(),
            answers: example
                .answers
                .iter()
                .map(|a| Answer::new(a.text.clone(), a.start - lo + prefix.len()))
                .collect(),
            answerable: example.answerable,
        };
        variant.validate()?;
        out.examples.push(variant);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_round_trip_with_known_mapping() {
        let m = MockTranslator::new(0).with_paraphrases([("big", "large")]);
        let s = m.shift("es");
        let foreign = m.translate("The big dog.", "en", "es").unwrap();
        assert_ne!(foreign, "The big dog.");
        assert_eq!(foreign.split(' ').count(), 3);
        let expected_first = MockTranslator::cipher("The", s);
        assert!(foreign.split(' ').any(|w| w == expected_first));
        assert_eq!(round_trip("The  big dog.", "es", &m).unwrap(), "The large dog.");
        assert_eq!(round_trip("Big news", "fr", &m).unwrap(), "Large news");
    }

    #[test]
    fn mock_rejects_non_english_pairs_and_policies() {
        let m = MockTranslator::new(1);
        assert!(m.translate("x", "es", "fr").is_err());
        let f = MockTranslator::new(1).failing(FailurePolicy::Containing("bad".into()));
        assert!(f.translate("a bad day", "en", "es").is_err());
        assert!(f.translate("a good day", "en", "es").is_ok());
    }

    #[test]
    fn fallback_paths() {
        let per_sentence = MockTranslator::new(2)
            .with_paraphrases([("big", "large")])
            .failing(FailurePolicy::LongerThan(15));
        let t = fallback_segment_translate("A big cat. A big dog.", "es", &per_sentence);
        assert_eq!(t.text, "A large cat. A large dog.");
        assert_eq!((t.translated, t.failed), (2, 0));

        let never = MockTranslator::new(2).failing(FailurePolicy::Always);
        let t = fallback_segment_translate("A big cat. A big dog.", "es", &never);
        assert_eq!(t.text, "A big cat. A big dog.");
        assert_eq!((t.translated, t.failed), (0, 2));

        let empty = fallback_segment_translate("", "es", &never);
        assert_eq!(empty.text, "");
    }

    #[test]
    fn back_translation_preserves_answer_bytes() {
        let ctx = "Prices rose.  The big  answer HERE, then  more big words.";
        let ex = QAExample::answerable("b", ctx, "q", Answer::new("answer HERE", 23));
        assert!(ex.validate().is_ok());
        let m = MockTranslator::new(3).with_paraphrases([("big", "large")]);
        let langs = vec!["es".to_string(), "fr".to_string()];
        let bt = back_translate(&ex, &langs, &m).unwrap();
        assert_eq!(bt.examples.len(), 2);
        for v in &bt.examples {
            assert!(v.validate().is_ok());
            assert!(v.context.starts_with("Prices rose. The large  answer HERE, then"), "{}", v.context);
            assert!(v.context.ends_with("more large words."), "{}", v.context);
        }
        let same = back_translate(&ex, &langs, &IdentityTranslator).unwrap();
        assert!(same.examples.iter().all(|v| v.context == ctx && v.answers == ex.answers));

        let broken = MockTranslator::new(3).failing(FailurePolicy::Always);
        let none = back_translate(&ex, &langs, &broken).unwrap();
        assert!(none.examples.is_empty());
        assert_eq!(none.skipped.len(), 2);
    }
}
