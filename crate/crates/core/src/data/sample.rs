use rand::seq::index;

use super::QAExample;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Draws `counts[i]` examples without replacement from `datasets[i]` and
/// concatenates the draws in dataset order. Each dataset uses its own random
/// stream. Counts larger than a dataset are capped with a warning.
pub fn sample_and_mix(
    datasets: &[Vec<QAExample>],
    counts: &[usize],
    seed: u64,
) -> Result<Vec<QAExample>> {
    if datasets.len() != counts.len() {
        return Err(Error::config(format!(
            "{} datasets but {} sample counts",
            datasets.len(),
            counts.len()
        )));
    }
    let mut out = Vec::new();
    for (i, (data, &want)) in datasets.iter().zip(counts).enumerate() {
        let n = if want > data.len() {
            log::warn!(
                "dataset {i} has {} examples, fewer than the {want} requested; using all",
                data.len()
            );
            data.len()
        } else {
            want
        };
        let mut rng = SeededRng::keyed(seed, "sampling", &i.to_string());
        let mut picked = index::sample(&mut rng, data.len(), n).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|j| data[j].clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Answer;

    fn corpus(prefix: &str, n: usize) -> Vec<QAExample> {
        (0..n)
            .map(|i| QAExample::answerable(format!("{prefix}{i}"), "a b", "q", Answer::new("a", 0)))
            .collect()
    }

    fn ids(d: &[QAExample]) -> Vec<String> {
        d.iter().map(|e| e.id.clone()).collect()
    }

    #[test]
    fn counts_and_caps() {
        let sets = vec![corpus("in", 20), corpus("ood", 3)];
        let mixed = sample_and_mix(&sets, &[5, 10], 1).unwrap();
        assert_eq!(mixed.len(), 8);
        assert_eq!(mixed.iter().filter(|e| e.id.starts_with("ood")).count(), 3);
        assert!(sample_and_mix(&sets, &[0, 0], 1).unwrap().is_empty());
        assert!(sample_and_mix(&sets, &[1], 1).is_err());
    }

    #[test]
    fn seeded_and_without_replacement() {
        let sets = vec![corpus("x", 50)];
        let a = ids(&sample_and_mix(&sets, &[20], 9).unwrap());
        let b = ids(&sample_and_mix(&sets, &[20], 9).unwrap());
        let c = ids(&sample_and_mix(&sets, &[20], 10).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut uniq = a.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 20);
    }
}
