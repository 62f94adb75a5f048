//! Ranking metrics: AUC and relative improvement.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("AUC undefined: needs at least one positive and one negative label")]
    UndefinedAuc,
    #[error("relative improvement undefined for baseline AUC 0")]
    ZeroBaseline,
    #[error("scores and labels lengths differ ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
}

/// Probability that a random positive outranks a random negative, ties
/// at half credit. Computed by rank sum in O(n log n); exactly equal to
/// pair counting.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average rank within each tie group (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Relative AUC improvement in percent: `100 * (auc / auc_base - 1)`.
pub fn rel_impr(auc_model: f64, auc_base: f64) -> Result<f64, MetricsError> {
    if auc_base == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(100.0 * (auc_model / auc_base - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    /// O(n^2) pair counting, the independent oracle for `auc`.
    pub(crate) fn auc_brute_force(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| !l)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    total += 1.0;
                } else if p == n {
                    total += 0.5;
                }
            }
        }
        Some(total / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn worked_four_point_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        let expected = auc_brute_force(&scores, &labels).unwrap();
        assert_eq!(expected, 0.75);
        assert!((auc(&scores, &labels).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation_is_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_class_is_an_error() {
        assert_eq!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::UndefinedAuc)
        );
        assert_eq!(
            auc(&[0.1, 0.2], &[false, false]),
            Err(MetricsError::UndefinedAuc)
        );
    }

    #[test]
    fn rank_sum_equals_brute_force_with_ties() {
        let mut rng = Prng::new(77);
        for _ in 0..300 {
            let n = 2 + rng.index(60);
            // Coarse score grid to force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.index(7) as f64) / 4.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            match auc_brute_force(&scores, &labels) {
                None => assert!(auc(&scores, &labels).is_err()),
                Some(expected) => {
                    let got = auc(&scores, &labels).unwrap();
                    assert!(
                        (got - expected).abs() < 1e-12,
                        "rank-sum {got} vs brute force {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn invariant_under_monotone_transforms() {
        let mut rng = Prng::new(13);
        for _ in 0..50 {
            let n = 2 + rng.index(50);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            labels[0] = true;
            labels[n.min(2) - 1] = false;
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let base = auc(&scores, &labels).unwrap();
            let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 10.0).collect();
            let cubic: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            assert!((auc(&affine, &labels).unwrap() - base).abs() < 1e-12);
            assert!((auc(&cubic, &labels).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn rel_impr_identity_and_zero_baseline() {
        assert_eq!(rel_impr(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(rel_impr(0.5, 0.0), Err(MetricsError::ZeroBaseline));
    }

    #[test]
    fn rel_impr_reproduces_published_improvement_columns() {
        // (baseline AUC, [(model AUC, printed improvement %)]) pairs
        // from a published comparison table. Two cells of the original
        // table are internally inconsistent (their printed percentages
        // do not match their own AUC pair under any rounding) and are
        // omitted.
        let blocks: [(f64, &[(f64, f64)]); 8] = [
            (0.6557, &[
                (0.6634, 1.17), (0.6667, 1.68), (0.6606, 0.75), (0.6672, 1.75),
                (0.6644, 1.33), (0.6523, -0.52), (0.6782, 3.43),
            ]),
            (0.6514, &[
                (0.6575, 0.94), (0.6589, 1.15), (0.6647, 2.04), (0.6550, 0.55),
                (0.6633, 1.83), (0.6385, -1.98), (0.6430, -1.29), (0.6685, 2.63),
            ]),
            (0.6061, &[
                (0.6361, 4.95), (0.6313, 4.16), (0.6321, 4.29), (0.6304, 4.01),
                (0.6405, 5.68), (0.6216, 2.56), (0.6226, 2.72), (0.6513, 7.46),
            ]),
            (0.6574, &[
                (0.6573, -0.02), (0.6543, -0.47), (0.6621, 0.71), (0.6420, -2.34),
                (0.6441, -2.02), (0.6714, 2.13),
            ]),
            (0.7769, &[
                (0.8037, 3.45), (0.8070, 3.87), (0.8099, 4.25), (0.8099, 4.25),
                (0.8117, 4.48), (0.8063, 3.78), (0.8063, 3.78), (0.8120, 4.52),
            ]),
            (0.7611, &[
                (0.8006, 5.19), (0.8032, 5.53), (0.8013, 5.28), (0.8031, 5.52),
                (0.8010, 5.24), (0.8010, 5.24), (0.8070, 6.03),
            ]),
            (0.7287, &[
                (0.7738, 6.19), (0.7721, 5.96), (0.7754, 6.41), (0.7728, 6.05),
                (0.7756, 6.43), (0.7746, 6.30), (0.7744, 6.27), (0.7757, 6.45),
            ]),
            (0.7536, &[
                (0.7543, 0.09), (0.7553, 0.23), (0.7563, 0.36), (0.7551, 0.20),
                (0.7570, 0.45), (0.7608, 0.96),
            ]),
        ];
        for (base, cells) in blocks {
            for &(model, printed) in cells {
                let got = rel_impr(model, base).unwrap();
                assert!(
                    (got - printed).abs() <= 0.01,
                    "{model}/{base}: {got:.4} vs printed {printed}"
                );
            }
        }
    }
}
