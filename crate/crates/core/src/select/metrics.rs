//! One-against-all classification metrics with support-weighted averaging.

use serde::{Deserialize, Serialize};

use super::SelectError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class is absent from, or is all of, `y_true`.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

/// Area under the ROC curve of `scores` for separating positives from
/// negatives, via the Mann-Whitney rank statistic with average ranks for ties.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    y_proba: &[Vec<f64>],
    n_classes: usize,
) -> Result<MetricSet, SelectError> {
    let n = y_true.len();
    if n == 0 || y_pred.len() != n || y_proba.len() != n {
        return Err(SelectError::InvalidInput(format!(
            "metric inputs of lengths {}, {}, {}",
            n,
            y_pred.len(),
            y_proba.len()
        )));
    }
    if y_true.iter().chain(y_pred).any(|c| *c >= n_classes) || y_proba.iter().any(|p| p.len() != n_classes) {
        return Err(SelectError::InvalidInput("class index out of range".into()));
    }

    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let support = y_true.iter().filter(|y| **y == c).count();
        let predicted = y_pred.iter().filter(|y| **y == c).count();
        let tp = y_true.iter().zip(y_pred).filter(|(t, p)| **t == c && **p == c).count();
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let scores: Vec<f64> = y_proba.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = y_true.iter().map(|y| *y == c).collect();
        let auc = roc_auc(&scores, &positive);
        if auc.is_none() && support > 0 {
            log::warn!("AUC undefined for class {c}: no negative samples");
        } else if auc.is_none() {
            log::warn!("AUC undefined for class {c}: class absent from y_true");
        }
        per_class.push(ClassMetrics {
            support,
            precision,
            recall,
            f1,
            auc,
        });
    }

    let weighted = |f: &dyn Fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / n as f64
    };
    let auc_weight: usize = per_class.iter().filter(|m| m.auc.is_some()).map(|m| m.support).sum();
    let auc = (auc_weight > 0).then(|| {
        per_class
            .iter()
            .filter_map(|m| m.auc.map(|a| a * m.support as f64))
            .sum::<f64>()
            / auc_weight as f64
    });
    Ok(MetricSet {
        accuracy: y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count() as f64 / n as f64,
        precision: weighted(&|m| m.precision),
        recall: weighted(&|m| m.recall),
        f1: weighted(&|m| m.f1),
        auc,
        per_class,
    })
}

/// Fold means and population standard deviations of the headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvMetrics {
    pub mean: MetricSummary,
    pub std: MetricSummary,
    pub folds: Vec<MetricSet>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CvMetrics {
    pub fn from_folds(folds: Vec<MetricSet>) -> Self {
        let stat = |f: fn(&MetricSet) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
        let (acc, acc_s) = stat(|m| m.accuracy);
        let (pre, pre_s) = stat(|m| m.precision);
        let (rec, rec_s) = stat(|m| m.recall);
        let (f1, f1_s) = stat(|m| m.f1);
        let aucs: Vec<f64> = folds.iter().filter_map(|m| m.auc).collect();
        let (auc, auc_s) = if aucs.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&aucs);
            (Some(m), Some(s))
        };
        CvMetrics {
            mean: MetricSummary {
                accuracy: acc,
                precision: pre,
                recall: rec,
                f1,
                auc,
            },
            std: MetricSummary {
                accuracy: acc_s,
                precision: pre_s,
                recall: rec_s,
                f1: f1_s,
                auc: auc_s,
            },
            folds,
        }
    }

    /// Selection key: weighted F1, then AUC.
    pub fn criterion(&self) -> (f64, f64) {
        (self.mean.f1, self.mean.auc.unwrap_or(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(y: &[usize], k: usize) -> Vec<Vec<f64>> {
        y.iter()
            .map(|c| (0..k).map(|j| if j == *c { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let m = compute_metrics(&y, &y, &onehot(&y, 3), 3).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1, m.auc), (1.0, 1.0, 1.0, 1.0, Some(1.0)));
    }

    #[test]
    fn hand_confusion_matrix() {
        let t = [0, 0, 1, 1, 2];
        let p = [0, 1, 1, 1, 2];
        let m = compute_metrics(&t, &p, &onehot(&p, 3), 3).unwrap();
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert!((m.precision - 13.0 / 15.0).abs() < 1e-15);
        assert!((m.recall - 0.8).abs() < 1e-15);
        // per-class F1: 2/3, 0.8, 1
        let f1 = (2.0 * 2.0 / 3.0 + 2.0 * 0.8 + 1.0) / 5.0;
        assert!((m.f1 - f1).abs() < 1e-15);
        let lo = m.per_class.iter().map(|c| c.f1).fold(f64::INFINITY, f64::min);
        let hi = m.per_class.iter().map(|c| c.f1).fold(0.0, f64::max);
        assert!(lo <= m.f1 && m.f1 <= hi);
    }

    #[test]
    fn auc_with_ties_matches_pair_count() {
        let scores = [0.1, 0.4, 0.4, 0.8, 0.4, 0.9];
        let pos = [false, true, false, true, false, true];
        // pairs (pos, neg): 9; wins: 0.4 beats 0.1, ties 0.4 x2 -> 1 + 0.5 + 0.5,
        // 0.8 beats three, 0.9 beats three
        let expected = (1.0 + 0.5 + 0.5 + 3.0 + 3.0) / 9.0;
        assert!((roc_auc(&scores, &pos).unwrap() - expected).abs() < 1e-15);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, true]), None);
    }

    #[test]
    fn single_class_truth_has_undefined_auc() {
        let t = [1, 1, 1];
        let p = [1, 0, 1];
        let m = compute_metrics(&t, &p, &onehot(&p, 2), 2).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.auc, None);
    }

    #[test]
    fn fold_summary() {
        let y = [0, 1];
        let good = compute_metrics(&y, &y, &onehot(&y, 2), 2).unwrap();
        let bad = compute_metrics(&y, &[1, 0], &onehot(&[1, 0], 2), 2).unwrap();
        let cv = CvMetrics::from_folds(vec![good, bad]);
        assert_eq!(cv.mean.accuracy, 0.5);
        assert_eq!(cv.std.accuracy, 0.5);
        assert_eq!(cv.mean.auc, Some(0.5));
    }
}
