use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const UNK: usize = 2;
const SPECIALS: [&str; 3] = ["[CLS]", "[SEP]", "[UNK]"];

/// A lowercased token and its byte range in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace; every other non-alphanumeric character is a token
/// of its own.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |out: &mut Vec<Token>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            out.push(Token {
                text: text[s..end].to_lowercase(),
                start: s,
                end,
            });
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
        } else {
            flush(&mut out, &mut word_start, i);
            if !c.is_whitespace() {
                let end = i + c.len_utf8();
                out.push(Token {
                    text: text[i..end].to_lowercase(),
                    start: i,
                    end,
                });
            }
        }
    }
    flush(&mut out, &mut word_start, text.len());
    out
}

/// Corpus-built vocabulary. Ids 0..3 are `[CLS]`, `[SEP]`, `[UNK]`; the rest
/// are sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(tokenize)
            .map(|t| t.text)
            .filter(|w| !SPECIALS.contains(&w.as_str()))
            .collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Vocab::from_tokens(tokens).expect("specials are present")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..3] != SPECIALS {
            return Err(Error::config("vocabulary must start with [CLS], [SEP], [UNK]"));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a (lowercased) token, or `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_tracks_offsets() {
        let toks = tokenize("Héllo, World!  x");
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["héllo", ",", "world", "!", "x"]);
        assert_eq!((toks[0].start, toks[0].end), (0, 6));
        assert_eq!((toks[2].start, toks[2].end), (8, 13));
        assert_eq!(toks[4].start, 16);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn vocab_specials_and_unknowns() {
        let v = Vocab::build(["b a", "a c"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("zzz"), UNK);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocab>("[\"a\"]").is_err());
    }
}
