//! Evaluation metrics: AUC, Logloss and RMSE.

use crate::error::{Error, Result};

fn check_batch(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "metric batch: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Area under the ROC curve by the Mann-Whitney rank formulation.
///
/// Ties receive their average rank. Requires at least one positive and one
/// negative label.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_batch(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present in the batch".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    // Average ranks over tie groups, then sum positive ranks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based: group spans ranks i+1 ..= j+1.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean negative log-likelihood of probability predictions.
///
/// Probabilities are clamped to [1e-12, 1 - 1e-12]; this clamp exists only
/// on the metric side, never inside the training loss.
pub fn logloss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_batch(probs, labels)?;
    if let Some(&bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract(format!("logloss label {bad} not in {{0,1}}")));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        total -= if y == 1.0 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// Root mean squared error.
pub fn rmse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_batch(preds, labels)?;
    let mse = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - y) * (p - y))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    /// O(P*N) pair-counting oracle with half credit for ties.
    pub(crate) fn auc_brute_force(scores: &[f64], labels: &[f64]) -> f64 {
        let mut correct = 0.0;
        let mut pairs = 0.0;
        for (i, (&si, &yi)) in scores.iter().zip(labels).enumerate() {
            if yi != 1.0 {
                continue;
            }
            for (j, (&sj, &yj)) in scores.iter().zip(labels).enumerate() {
                if i == j || yj != 0.0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    correct += 1.0;
                } else if si == sj {
                    correct += 0.5;
                }
            }
        }
        correct / pairs
    }

    #[test]
    fn auc_examples() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0.0, 0.0, 1.0, 1.0];
        assert!((auc(&scores, &labels).unwrap() - 0.75).abs() < 1e-15);

        // Perfect separation.
        let scores = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);

        // All ties: half credit everywhere.
        let scores = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.5);

        // Single-class batch is undefined.
        assert!(matches!(
            auc(&[0.1, 0.2], &[1.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_matches_pair_counting_with_ties() {
        let mut rng = SeededRng::new(50, 0);
        for _ in 0..100 {
            let n = 5 + rng.next_below(60) as usize;
            // Coarse grid scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.next_below(8) as f64 / 8.0).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| rng.next_below(2) as f64).collect();
            labels[0] = 0.0;
            labels[1] = 1.0;
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_brute_force(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transforms() {
        let mut rng = SeededRng::new(51, 0);
        let scores: Vec<f64> = (0..40).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let mut labels: Vec<f64> = (0..40).map(|_| rng.next_below(2) as f64).collect();
        labels[0] = 0.0;
        labels[1] = 1.0;
        let base = auc(&scores, &labels).unwrap();

        let exp_scores: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        assert_eq!(auc(&exp_scores, &labels).unwrap(), base);
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
        assert_eq!(auc(&affine, &labels).unwrap(), base);

        // Negated scores complement the AUC when there are no ties.
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        assert!((auc(&neg, &labels).unwrap() + base - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logloss_examples() {
        let half = [0.5, 0.5];
        let labels = [1.0, 0.0];
        assert!((logloss(&half, &labels).unwrap() - 2f64.ln()).abs() < 1e-15);

        let exact = [1.0, 0.0];
        assert!(logloss(&exact, &labels).unwrap() <= 1e-11);

        let p = [0.9, 0.1];
        let expect = -0.5 * (0.9f64.ln() + 0.9f64.ln());
        assert!((logloss(&p, &labels).unwrap() - expect).abs() < 1e-12);
        assert!((logloss(&p, &labels).unwrap() - 0.10536).abs() < 1e-5);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        // Constant shift.
        let labels = [1.0, -2.0, 0.5];
        let preds: Vec<f64> = labels.iter().map(|y| y + 0.75).collect();
        assert!((rmse(&preds, &labels).unwrap() - 0.75).abs() < 1e-12);
    }
}
