//! Ranking and correlation metrics: AUC (Mann–Whitney form), Precision@k
//! over deterministic ranked lists, and Spearman rank correlation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Area under the ROC curve in its Mann–Whitney form: the probability that a
/// uniformly drawn positive outscores a uniformly drawn negative, counting
/// ties as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Contract(String::from(
            "auc requires aligned, non-empty scores and labels",
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract(String::from("auc scores must be finite")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract(format!(
            "auc needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut wins = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (n_pos * n_neg) as f64)
}

/// Candidate indices ordered by descending score; equal scores keep
/// ascending index order, making rankings fully deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    indices: Vec<usize>,
}

impl RankedList {
    /// Ranks `scores` (index `i` scores candidate `i`).
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Contract(String::from("cannot rank zero candidates")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract(String::from(
                "ranking scores must be finite",
            )));
        }
        let mut indices: Vec<usize> = (0..scores.len()).collect();
        indices.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("finite scores compare")
                .then(a.cmp(&b))
        });
        Ok(RankedList { indices })
    }

    /// Ranked candidate indices, best first.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of candidates.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// Never true: construction requires at least one candidate.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Fraction of the top `k` ranked candidates that are relevant.
pub fn precision_at_k(ranked: &RankedList, relevant: &BTreeSet<usize>, k: usize) -> Result<f64> {
    if k == 0 || k > ranked.len() {
        return Err(Error::Contract(format!(
            "k must be in 1..={}, got {k}",
            ranked.len()
        )));
    }
    let hits = ranked.indices[..k]
        .iter()
        .filter(|i| relevant.contains(i))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Ranks with ties averaged (1-based), the standard treatment for Spearman.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = alloc::vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share the same value; all get the mean rank.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with averaged tie ranks (Pearson correlation
/// of the rank vectors). Constant inputs have no defined correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(String::from(
            "spearman requires two aligned samples of length >= 2",
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Contract(String::from(
            "spearman inputs must be finite",
        )));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for i in 0..x.len() {
        let (dx, dy) = (rx[i] - mx, ry[i] - my);
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::Contract(String::from(
            "spearman undefined for constant input",
        )));
    }
    Ok(cov / libm::sqrt(var_x * var_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn auc_oracles() {
        assert_eq!(
            auc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        assert_eq!(
            auc(&[0.9, 0.2, 0.8, 0.3], &[true, false, false, true]).unwrap(),
            0.75
        );
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_is_invariant_under_increasing_transforms() {
        let scores = vec![0.3, -0.7, 1.2, 0.3, 0.0, 2.5, -1.1];
        let labels = vec![true, false, true, false, true, false, false];
        let base = auc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
        let cubic: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        let expo: Vec<f64> = scores.iter().map(|s| libm::exp(*s)).collect();
        for t in [&affine, &cubic, &expo] {
            assert_eq!(auc(t, &labels).unwrap(), base);
        }
    }

    #[test]
    fn ranking_breaks_ties_by_ascending_index() {
        let ranked = RankedList::from_scores(&[0.5, 0.9, 0.5, 0.1]).unwrap();
        assert_eq!(ranked.indices(), &[1, 0, 2, 3]);
        // Permutation invariant.
        let mut sorted = ranked.indices().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn precision_oracles_and_monotone_identity() {
        let ranked = RankedList::from_scores(&[0.1, 0.9, 0.2, 0.8]).unwrap();
        // Order: [1, 3, 2, 0].
        let relevant: BTreeSet<usize> = [1, 0].into_iter().collect();
        assert_eq!(precision_at_k(&ranked, &relevant, 1).unwrap(), 1.0);
        assert_eq!(precision_at_k(&ranked, &relevant, 2).unwrap(), 0.5);
        assert_eq!(precision_at_k(&ranked, &relevant, 4).unwrap(), 0.5);
        assert!(precision_at_k(&ranked, &relevant, 0).is_err());
        assert!(precision_at_k(&ranked, &relevant, 5).is_err());

        // k * Prec@k (the running hit count) never decreases in k.
        let mut prev = 0.0;
        for k in 1..=4 {
            let hits = precision_at_k(&ranked, &relevant, k).unwrap() * k as f64;
            assert!(hits + 1e-12 >= prev);
            prev = hits;
        }
    }

    #[test]
    fn ranked_example_from_direct_count() {
        // Candidates ranked [3,1,4,2] by score (using 1-based ids mapped to
        // 0-based indices 2,0,3,1), relevant {1,2} -> {0,1}: top-2 of the
        // ranking holds exactly one relevant candidate.
        let ranked = RankedList::from_scores(&[0.8, 0.2, 0.9, 0.5]).unwrap();
        assert_eq!(ranked.indices(), &[2, 0, 3, 1]);
        let relevant: BTreeSet<usize> = [0, 1].into_iter().collect();
        assert_eq!(precision_at_k(&ranked, &relevant, 2).unwrap(), 0.5);
    }

    #[test]
    fn spearman_oracles() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [10.0, 20.0, 25.0, 40.0, 100.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &down).unwrap() + 1.0).abs() < 1e-12);
        // Tied pair: y ranks are [1, 2, 3, 4.5, 4.5]; Pearson of the rank
        // vectors is sqrt(9.5/10).
        let tied = [5.0, 6.0, 7.0, 8.0, 8.0];
        let expected = libm::sqrt(9.5 / 10.0);
        assert!((spearman(&x, &tied).unwrap() - expected).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 5]).is_err());
    }

    #[test]
    fn spearman_depends_only_on_order() {
        let x = [0.1, 0.5, 0.2, 0.9, 0.4];
        let y = [3.0, -1.0, 7.0, 2.0, 0.0];
        let squash: Vec<f64> = x.iter().map(|v| libm::atan(10.0 * v)).collect();
        assert_eq!(spearman(&x, &y).unwrap(), spearman(&squash, &y).unwrap());
    }
}
