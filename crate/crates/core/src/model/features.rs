use super::tokenizer::{tokenize, Vocab, CLS, SEP};
use crate::data::QAExample;
use crate::error::{Error, Result};

/// Model input for one example: `[CLS] question [SEP] context [SEP]`,
/// truncated from the end of the context to fit the sequence budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub id: String,
    pub ids: Vec<usize>,
    /// Position of the first context token in `ids`.
    pub context_start: usize,
    /// Byte ranges of the context tokens kept in the window.
    pub context_spans: Vec<(usize, usize)>,
    /// Gold `(start, end)` token positions; `(0, 0)` for unanswerable
    /// examples, `None` when the answer was truncated away.
    pub target: Option<(usize, usize)>,
}

impl Feature {
    /// Positions that may start or end a predicted span.
    pub fn context_range(&self) -> std::ops::Range<usize> {
        self.context_start..self.context_start + self.context_spans.len()
    }

    /// Context text covered by token positions `start..=end`.
    pub fn span_text<'a>(&self, context: &'a str, start: usize, end: usize) -> &'a str {
        let range = self.context_range();
        if start > end || !range.contains(&start) || !range.contains(&end) {
            return "";
        }
        let s = self.context_spans[start - self.context_start].0;
        let e = self.context_spans[end - self.context_start].1;
        &context[s..e]
    }
}

/// Builds the model input for `example`. The question keeps at most
/// `max_seq_len - 4` tokens so at least one context token always fits.
pub fn featurize(example: &QAExample, vocab: &Vocab, max_seq_len: usize) -> Result<Feature> {
    if max_seq_len < 4 {
        return Err(Error::config(format!(
            "max_seq_len must be at least 4, got {max_seq_len}"
        )));
    }
    let question = tokenize(&example.question);
    let context = tokenize(&example.context);
    let q_len = question.len().min(max_seq_len - 4);
    let c_budget = max_seq_len - q_len - 3;
    let kept = &context[..context.len().min(c_budget)];

    let mut ids = Vec::with_capacity(q_len + kept.len() + 3);
    ids.push(CLS);
    ids.extend(question[..q_len].iter().map(|t| vocab.id(&t.text)));
    ids.push(SEP);
    let context_start = ids.len();
    ids.extend(kept.iter().map(|t| vocab.id(&t.text)));
    ids.push(SEP);

    let window_end = kept.last().map_or(0, |t| t.end);
    let truncated = kept.len() < context.len();
    let target = match example.answers.first() {
        None => Some((0, 0)),
        Some(a) if truncated && a.end() > window_end => None,
        Some(a) => {
            let first = kept.iter().position(|t| t.end > a.start);
            let last = kept.iter().rposition(|t| t.start < a.end());
            match (first, last) {
                (Some(s), Some(e)) if s <= e => Some((context_start + s, context_start + e)),
                _ => None,
            }
        }
    };

    Ok(Feature {
        id: example.id.clone(),
        ids,
        context_start,
        context_spans: kept.iter().map(|t| (t.start, t.end)).collect(),
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Answer;

    fn ex(context: &str, answer: &str) -> QAExample {
        let start = context.find(answer).unwrap();
        QAExample::answerable("x", context, "what is it?", Answer::new(answer, start))
    }

    #[test]
    fn layout_and_target() {
        let e = ex("The sky is very blue today.", "very blue");
        let v = Vocab::build([e.context.as_str(), e.question.as_str()]);
        let f = featurize(&e, &v, 64).unwrap();
        assert_eq!(f.ids[0], CLS);
        assert_eq!(f.ids[5], SEP);
        assert_eq!(f.context_start, 6);
        assert_eq!(*f.ids.last().unwrap(), SEP);
        let (s, t) = f.target.unwrap();
        assert_eq!((s, t), (9, 10));
        assert_eq!(f.span_text(&e.context, s, t), "very blue");
    }

    #[test]
    fn truncation_drops_answer_past_window() {
        let e = ex("a b c d e f g h target", "target");
        let v = Vocab::build([e.context.as_str()]);
        let f = featurize(&e, &v, 10).unwrap();
        assert_eq!(f.ids.len(), 10);
        assert_eq!(f.target, None);
        let inside = ex("target a b c d e f g h", "target");
        assert!(featurize(&inside, &v, 10).unwrap().target.is_some());
    }

    #[test]
    fn unanswerable_targets_sentinel() {
        let e = QAExample::unanswerable("u", "nothing here", "why?");
        let v = Vocab::build([e.context.as_str()]);
        assert_eq!(featurize(&e, &v, 16).unwrap().target, Some((0, 0)));
    }
}
