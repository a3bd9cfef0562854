//! Scores a few predictions against gold answers, including near misses
//! that the metrics penalise, and prints the per-example CSV.
//!
//! cargo run --release --example score_predictions

use std::collections::BTreeMap;

use moeqa::data::{Answer, QAExample};
use moeqa::metrics::{evaluate, normalize_answer};

fn example(id: &str, context: &str, answer: &str) -> QAExample {
    let start = context.find(answer).expect("answer occurs in context");
    QAExample::answerable(id, context, "q", Answer::new(answer, start))
}

fn main() -> moeqa::Result<()> {
    let dataset = vec![
        example("a", "New users need an email address to sign up.", "email address"),
        example("b", "The project sits in the Arizona desert.", "Arizona desert"),
        example("c", "Recovery enters the withdrawal stage, the third stage.", "withdrawal stage"),
        example("d", "A gray haze, or smog, covered the city.", "smog"),
        QAExample::unanswerable("e", "Nothing here answers it.", "q"),
        example("f", "Constantine II and Constantius II split the empire.", "Constantius II"),
    ];
    let predictions: BTreeMap<String, String> = [
        ("a", "email address"),
        ("b", "the Arizona desert."),
        ("c", "third stage"),
        ("d", "gray haze"),
        ("e", ""),
        ("f", "Constantine II and Constantius II"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();

    println!("normalized: {:?}", normalize_answer("The Email Address."));
    let result = evaluate(&predictions, &dataset);
    print!("{}", result.to_csv()?);
    println!("EM {:.4}  F1 {:.4}  over {} examples", result.em, result.f1, result.count);
    Ok(())
}
