//! Area under the ROC curve via the rank-sum identity, computed in exact
//! integer arithmetic so it agrees bit for bit with the brute-force count of
//! concordant pairs (ties worth one half).

use super::{EvalError, EvalResult};

/// AUC = (#{(pos, neg) : s_pos > s_neg} + 0.5 * #ties) / (P * N).
///
/// Uses midranks: AUC = (sum of positive ranks - P(P+1)/2) / (P * N), with
/// all counting done on integers (doubled to keep half-ranks exact).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> EvalResult<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::UndefinedMetric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let p = labels.iter().filter(|&&l| l).count() as u128;
    let n = labels.len() as u128 - p;
    if p == 0 || n == 0 {
        return Err(EvalError::UndefinedMetric(format!(
            "need both classes, got {p} positives and {n} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk tie groups; each positive in a group spanning 1-based ranks
    // [a, b] contributes the midrank (a + b) / 2, tracked doubled.
    let mut twice_pos_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        let twice_midrank = (start as u128 + 1) + end as u128; // (a + b) with b = end
        twice_pos_rank_sum += pos_in_group * twice_midrank;
        start = end;
    }
    let twice_u = twice_pos_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(P*N) reference: counts concordant pairs directly.
    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l)
            .map(|(s, _)| *s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| !l)
            .map(|(s, _)| *s)
            .collect();
        let mut twice_wins: u128 = 0;
        for &sp in &pos {
            for &sn in &neg {
                if sp > sn {
                    twice_wins += 2;
                } else if sp == sn {
                    twice_wins += 1;
                }
            }
        }
        twice_wins as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64
    }

    #[test]
    fn perfect_separation_is_one() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_give_half() {
        let scores = [0.42; 7];
        let labels = [true, false, true, false, false, true, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn four_sample_pairwise_oracle() {
        // Positives 0.8 and 0.7 beat negatives 0.6 and 0.2 in all 4 pairs.
        let auc = roc_auc(&[0.8, 0.6, 0.7, 0.2], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 1.0);
        // Downgrading 0.7 to 0.4 loses exactly one pair: 3/4.
        let auc = roc_auc(&[0.8, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn half_tie_counts_half() {
        // Pairs: (0.8 > 0.3) concordant, (0.3 == 0.3) tie -> (1 + 0.5)/2.
        let auc = roc_auc(&[0.8, 0.3, 0.3], &[true, true, false]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn rejects_single_class_and_nan() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(roc_auc(&[0.1, f64::NAN], &[true, false]).is_err());
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn matches_brute_force_on_fixed_instances() {
        let scores = [1.0, 2.0, 2.0, 3.0, 0.5, 2.0, 4.0, 4.0];
        let labels = [false, true, false, true, false, true, false, true];
        let fast = roc_auc(&scores, &labels).unwrap();
        let slow = brute_force_auc(&scores, &labels);
        assert_eq!(fast.to_bits(), slow.to_bits());
    }

    proptest! {
        #[test]
        fn equals_brute_force_everywhere(
            raw in proptest::collection::vec((0i32..40, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(q, _)| *q as f64 / 4.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = brute_force_auc(&scores, &labels);
            prop_assert_eq!(fast.to_bits(), slow.to_bits());
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn invariant_under_increasing_affine_transform(
            raw in proptest::collection::vec((-50i32..50, any::<bool>()), 2..100)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(q, _)| *q as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let transformed: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc(&transformed, &labels).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn label_flip_mirrors_auc(
            raw in proptest::collection::vec((0i32..30, any::<bool>()), 2..100)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(q, _)| *q as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc(&scores, &flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
