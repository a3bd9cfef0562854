use rand::seq::IndexedRandom;
use rand::Rng;

use super::{Answer, QAExample};
use crate::rng::SeededRng;

pub const SYNTHETIC_QUESTION: &str = "what is the code word?";

const ANSWERS: &[&str] = &[
    "amber", "basil", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper",
    "kestrel", "lagoon", "marble", "nectar", "onyx", "pepper", "quartz", "raven", "saffron",
    "tundra", "umber", "violet", "willow", "xenon", "yarrow", "zephyr", "acorn", "birch",
    "copper", "dune", "falcon", "glacier",
];

const FILLER: &[&str] = &[
    "river", "stone", "quiet", "morning", "city", "lamp", "paper", "window", "garden", "bridge",
    "cloud", "table", "music", "winter", "road", "forest", "letter", "candle", "market", "island",
    "silver", "engine", "harvest", "signal", "meadow", "tower", "echo", "valley",
];

/// A small generated corpus for smoke and overfitting runs.
///
/// Every context reads `"the code word is <answer>. <filler>."`, so the
/// answer always sits at the same token position and a small model can fit
/// the corpus in a handful of optimiser steps. Answers and filler vary per
/// example.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<QAExample> {
    let mut rng = SeededRng::substream(seed, "synthetic");
    (0..n)
        .map(|i| {
            let answer = *ANSWERS.choose(&mut rng).unwrap();
            let prefix = "the code word is ";
            let n_filler = rng.random_range(6..=14);
            let filler: Vec<&str> = (0..n_filler)
                .map(|_| *FILLER.choose(&mut rng).unwrap())
                .collect();
            let context = format!("{prefix}{answer}. {}.", filler.join(" "));
            QAExample::answerable(
                format!("syn-{i:04}"),
                context,
                SYNTHETIC_QUESTION,
                Answer::new(answer, prefix.len()),
            )
        })
        .collect()
}

const ADJ: &[&str] = &[
    "big", "small", "old", "new", "quiet", "important", "large", "fast", "slow", "good",
];
const NOUNS: &[&str] = &[
    "city", "river", "road", "house", "building", "ship", "bridge", "market", "tower", "garden",
    "school", "company", "island", "valley", "forest", "area",
];
const VERBS: &[&str] = &["built", "made", "used", "known", "started", "ended", "said"];
const FIRST: &[&str] = &["Ada", "Bruno", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hugo"];
const LAST: &[&str] = &["Okafor", "Lindqvist", "Moreau", "Tanaka", "Castillo", "Novak"];

fn pick(rng: &mut SeededRng, pool: &[&'static str]) -> &'static str {
    pool.choose(rng).unwrap()
}

fn filler_sentence(rng: &mut SeededRng) -> String {
    let kind = rng.random_range(0..4);
    let (a, n, m, v) = (pick(rng, ADJ), pick(rng, NOUNS), pick(rng, NOUNS), pick(rng, VERBS));
    match kind {
        0 => format!("The {a} {n} was {v} in winter."),
        1 => format!("Many people {v} the {a} {n} often!"),
        2 => format!("Later, a {a} {n} near the {m} was also {v}."),
        _ => format!("Was the {n} {a}, or the {m}?"),
    }
}

/// Multi-sentence contexts built mostly from words the built-in synonym
/// lexicon knows, for exercising augmentation. About one example in ten is
/// unanswerable; the rest ask who built a two-word named place, answered by a
/// person's name. Answers sit at a random sentence position.
pub fn fixture_corpus(n: usize, seed: u64) -> Vec<QAExample> {
    let mut rng = SeededRng::substream(seed, "fixture");
    (0..n)
        .map(|i| {
            let id = format!("fix-{i:04}");
            let mut sentences: Vec<String> = (0..rng.random_range(2..=5))
                .map(|_| filler_sentence(&mut rng))
                .collect();
            let place = format!("{} Bridge", pick(&mut rng, FIRST));
            let question = format!("Who built the {place}?");
            if rng.random_range(0..10) == 0 {
                return QAExample::unanswerable(id, sentences.join(" "), question);
            }
            let name = format!("{} {}", pick(&mut rng, FIRST), pick(&mut rng, LAST));
            let at = rng.random_range(0..=sentences.len());
            let adj = pick(&mut rng, ADJ);
            sentences.insert(at, format!("The {adj} {place} was built by {name}."));
            let context = sentences.join(" ");
            let start = sentences[..at].iter().map(|s| s.len() + 1).sum::<usize>()
                + format!("The {adj} {place} was built by ").len();
            QAExample::answerable(id, context, question, Answer::new(name, start))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_are_valid_and_seeded() {
        let a = synthetic_corpus(64, 3);
        assert_eq!(a.len(), 64);
        assert!(a.iter().all(|e| e.validate().is_ok()));
        assert_eq!(a, synthetic_corpus(64, 3));
        assert_ne!(a, synthetic_corpus(64, 4));
    }

    #[test]
    fn fixture_spans_are_valid() {
        let a = fixture_corpus(200, 0);
        assert!(a.iter().all(|e| e.validate().is_ok()));
        let unanswerable = a.iter().filter(|e| !e.answerable).count();
        assert!(unanswerable > 0 && unanswerable < 50);
        assert_eq!(a, fixture_corpus(200, 0));
    }
}
