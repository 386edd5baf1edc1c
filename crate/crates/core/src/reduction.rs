//! Set diversity from a symmetric pairwise similarity: the negated mean
//! similarity over all unordered response pairs.

use rayon::prelude::*;

use crate::corpus::ResponseSet;
use crate::error::{DivError, Result};

/// A symmetric similarity between two responses.
pub trait SimilarityMetric: Sync {
    fn name(&self) -> &str;
    fn similarity(&self, a: &str, b: &str) -> Result<f64>;
}

/// All unordered index pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn unordered_pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| (i + 1..k).map(move |j| (i, j)))
}

/// Negated arithmetic mean, summed left to right.
pub fn negated_mean(values: &[f64]) -> f64 {
    -(values.iter().sum::<f64>() / values.len() as f64)
}

/// Reduce similarities listed in [`unordered_pairs`] order to a diversity
/// score. Shared by the in-process and plugin routes so both sum in the
/// same order.
pub fn reduce_pair_scores(k: usize, pair_scores: &[f64]) -> Result<f64> {
    if k < 2 {
        return Err(DivError::ReductionTooSmall(k));
    }
    let expected = k * (k - 1) / 2;
    if pair_scores.len() != expected {
        return Err(DivError::InvalidInput(format!(
            "expected {expected} pair scores for {k} responses, got {}",
            pair_scores.len()
        )));
    }
    Ok(negated_mean(pair_scores))
}

pub fn reduce_to_diversity<S: SimilarityMetric + ?Sized>(sim: &S, set: &ResponseSet) -> Result<f64> {
    let k = set.len();
    if k < 2 {
        return Err(DivError::ReductionTooSmall(k));
    }
    let pairs: Vec<(usize, usize)> = unordered_pairs(k).collect();
    // Evaluated in parallel, collected back in pair order.
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| sim.similarity(&set.responses[i], &set.responses[j]))
        .collect::<Result<Vec<f64>>>()?;
    reduce_pair_scores(k, &scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::{NGramCosine, NGramConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    struct LengthGap;

    impl SimilarityMetric for LengthGap {
        fn name(&self) -> &str {
            "length-gap"
        }
        fn similarity(&self, a: &str, b: &str) -> Result<f64> {
            Ok(-(a.len() as f64 - b.len() as f64).abs())
        }
    }

    #[test]
    fn two_responses_is_negated_similarity() {
        let cos = NGramCosine::default();
        let set = ResponseSet::new("s", "c", ["a b c", "a b d"]);
        let direct = cos.similarity("a b c", "a b d").unwrap();
        assert_eq!(reduce_to_diversity(&cos, &set).unwrap(), -direct);
    }

    #[test]
    fn identical_responses_give_minus_one() {
        let set = ResponseSet::new("s", "c", vec!["the same words"; 6]);
        assert_eq!(reduce_to_diversity(&NGramCosine::default(), &set).unwrap(), -1.0);
    }

    #[test]
    fn needs_two_responses() {
        let set = ResponseSet::new("s", "c", ["only one"]);
        assert!(matches!(
            reduce_to_diversity(&NGramCosine::default(), &set),
            Err(DivError::ReductionTooSmall(1))
        ));
    }

    #[test]
    fn five_response_fixture_matches_double_loop() {
        let set = ResponseSet::new(
            "s",
            "So what did I miss in the first 20 minutes?",
            [
                "Not much.",
                "It was pretty dull.",
                "Blah, you didn't miss anything.",
                "Not anything that important.",
                "Very little, it was uneventful.",
            ],
        );
        let cos = NGramCosine::new(NGramConfig::default());
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..set.len() {
            for j in 0..i {
                total += cos.similarity(&set.responses[i], &set.responses[j]).unwrap();
                pairs += 1;
            }
        }
        assert_eq!(pairs, 10);
        assert_abs_diff_eq!(
            reduce_to_diversity(&cos, &set).unwrap(),
            -total / pairs as f64,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pair_count_matches_enumeration() {
        for k in 0..=8usize {
            let mut brute = 0;
            for i in 0..k {
                for j in 0..k {
                    if i < j {
                        brute += 1;
                    }
                }
            }
            assert_eq!(unordered_pairs(k).count(), brute);
            assert_eq!(brute, k * k.saturating_sub(1) / 2);
        }
    }

    #[test]
    fn works_with_unbounded_similarity() {
        let set = ResponseSet::new("s", "c", ["a", "abc", "abcdef"]);
        // gaps 2, 5, 3
        assert_abs_diff_eq!(reduce_to_diversity(&LengthGap, &set).unwrap(), 10.0 / 3.0);
    }

    #[test]
    fn duplicating_an_outlier_can_raise_diversity() {
        let cos = NGramCosine::default();
        let base = ResponseSet::new("s", "c", ["a b", "a b", "a b", "x y"]);
        let with_dup = ResponseSet::new("s", "c", ["a b", "a b", "a b", "x y", "x y"]);
        // 3 of 6 pairs identical -> -0.5; 4 of 10 pairs identical -> -0.4
        assert_abs_diff_eq!(reduce_to_diversity(&cos, &base).unwrap(), -0.5);
        assert_abs_diff_eq!(reduce_to_diversity(&cos, &with_dup).unwrap(), -0.4);
    }

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "dog", "ran"]), 1..6)
            .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn bounded_and_permutation_invariant(responses in prop::collection::vec(sentence(), 2..7)) {
            let cos = NGramCosine::default();
            let d = reduce_to_diversity(&cos, &ResponseSet::new("s", "c", responses.clone())).unwrap();
            prop_assert!((-1.0..=0.0).contains(&d));
            let mut rev = responses.clone();
            rev.reverse();
            let dr = reduce_to_diversity(&cos, &ResponseSet::new("s", "c", rev)).unwrap();
            prop_assert!((d - dr).abs() < 1e-12);
        }

        // Only holds for the response most similar to the rest; see
        // `duplicating_an_outlier_can_raise_diversity`.
        #[test]
        fn appending_duplicate_of_most_central_never_increases(
            responses in prop::collection::vec(sentence(), 2..6),
        ) {
            let cos = NGramCosine::default();
            let before = reduce_to_diversity(&cos, &ResponseSet::new("s", "c", responses.clone())).unwrap();
            let row_sum = |p: usize| -> f64 {
                (0..responses.len())
                    .filter(|&j| j != p)
                    .map(|j| cos.similarity(&responses[p], &responses[j]).unwrap())
                    .sum()
            };
            let central = (0..responses.len())
                .max_by(|&a, &b| row_sum(a).total_cmp(&row_sum(b)))
                .unwrap();
            let mut more = responses.clone();
            more.push(responses[central].clone());
            let after = reduce_to_diversity(&cos, &ResponseSet::new("s", "c", more)).unwrap();
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn duplicating_whole_set_never_increases(responses in prop::collection::vec(sentence(), 2..6)) {
            let cos = NGramCosine::default();
            let before = reduce_to_diversity(&cos, &ResponseSet::new("s", "c", responses.clone())).unwrap();
            let doubled: Vec<String> = responses.iter().chain(responses.iter()).cloned().collect();
            let after = reduce_to_diversity(&cos, &ResponseSet::new("s", "c", doubled)).unwrap();
            prop_assert!(after <= before + 1e-12);
        }
    }
}
