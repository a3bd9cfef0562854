//! Runs EDA and mock back translation over a few generated examples and
//! prints every variant with its answer span.
//!
//! cargo run --release --example augment_fixture

use moeqa::augment::{augment_dataset, AugmentationRecipe, FailurePolicy, MockTranslator, SynonymLexicon};
use moeqa::data::fixture_corpus;

fn main() -> moeqa::Result<()> {
    let corpus = fixture_corpus(3, 11);
    let lexicon = SynonymLexicon::builtin();
    // long texts fail as a whole and fall back to sentence-by-sentence
    let translator = MockTranslator::new(0)
        .with_paraphrases([("built", "constructed"), ("people", "folks"), ("old", "ancient")])
        .failing(FailurePolicy::LongerThan(60));
    let recipe = AugmentationRecipe {
        n_aug: 2,
        languages: vec!["es".into(), "de".into()],
        ..AugmentationRecipe::default()
    };
    let (variants, report) = augment_dataset(&corpus, &recipe, &lexicon, &translator)?;

    for ex in &corpus {
        println!("== {}  ({})", ex.id, ex.question);
        println!("   {}", ex.context);
        for v in variants.iter().filter(|v| v.id.starts_with(&ex.id)) {
            let answer = v
                .answers
                .first()
                .map(|a| format!("[{}..{}] {:?}", a.start, a.end(), &v.context[a.start..a.end()]))
                .unwrap_or_else(|| "no answer".into());
            println!("-- {}: {answer}", v.id);
            println!("   {}", v.context);
        }
    }
    println!("\n{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
