//! Balanced bilingual resampling for the task-fitting corpus mix.

use rand::seq::SliceRandom;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Draws an equal number of documents per language and shuffles the union.
///
/// `k = min(|src|, |tgt|)` documents are taken from each side; the larger
/// side is downsampled without replacement. Callers reshuffle per epoch by
/// passing an epoch-derived seed, which restores coverage of the larger side
/// over the course of training.
pub fn balanced_resample(src: &[Document], tgt: &[Document], seed: u64) -> Result<Vec<Document>> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidData(
            "balanced resample requires non-empty corpora on both sides".into(),
        ));
    }
    let k = src.len().min(tgt.len());
    let mut rng = seeded_rng(seed);
    let mut mixed: Vec<Document> = Vec::with_capacity(2 * k);
    for side in [src, tgt] {
        let mut indices: Vec<usize> = (0..side.len()).collect();
        indices.shuffle(&mut rng);
        mixed.extend(indices[..k].iter().map(|&i| side[i].clone()));
    }
    mixed.shuffle(&mut rng);
    Ok(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(lang: &str, n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("{lang}{i}"), lang, vec![format!("w{i}")]).unwrap())
            .collect()
    }

    fn count_lang(mix: &[Document], lang: &str) -> usize {
        mix.iter().filter(|d| d.lang == lang).count()
    }

    #[test]
    fn larger_side_is_downsampled_to_min() {
        let mix = balanced_resample(&docs("src", 100), &docs("tgt", 40), 1).unwrap();
        assert_eq!(mix.len(), 80);
        assert_eq!(count_lang(&mix, "src"), 40);
        assert_eq!(count_lang(&mix, "tgt"), 40);
    }

    #[test]
    fn equal_sides_keep_everything() {
        let mix = balanced_resample(&docs("src", 10), &docs("tgt", 10), 1).unwrap();
        assert_eq!(mix.len(), 20);
        assert_eq!(count_lang(&mix, "src"), 10);
    }

    #[test]
    fn same_seed_reproduces_the_sequence() {
        let src = docs("src", 30);
        let tgt = docs("tgt", 12);
        let a = balanced_resample(&src, &tgt, 7).unwrap();
        let b = balanced_resample(&src, &tgt, 7).unwrap();
        assert_eq!(a, b);
        let c = balanced_resample(&src, &tgt, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_side_errors() {
        assert!(balanced_resample(&[], &docs("tgt", 3), 1).is_err());
        assert!(balanced_resample(&docs("src", 3), &[], 1).is_err());
    }

    #[test]
    fn downsampling_has_no_repeats() {
        let src = docs("src", 50);
        let mix = balanced_resample(&src, &docs("tgt", 20), 3).unwrap();
        let mut src_ids: Vec<&str> = mix
            .iter()
            .filter(|d| d.lang == "src")
            .map(|d| d.id.as_str())
            .collect();
        src_ids.sort_unstable();
        src_ids.dedup();
        assert_eq!(src_ids.len(), 20);
    }

    #[test]
    fn counts_balanced_over_random_sizes() {
        let mut rng_sizes = [(3usize, 9usize), (17, 5), (64, 64), (1, 13), (200, 40)];
        rng_sizes.sort_unstable();
        for (seed, (a, b)) in rng_sizes.into_iter().enumerate() {
            let mix = balanced_resample(&docs("src", a), &docs("tgt", b), seed as u64).unwrap();
            let k = a.min(b);
            assert_eq!(count_lang(&mix, "src"), k);
            assert_eq!(count_lang(&mix, "tgt"), k);
        }
    }
}
