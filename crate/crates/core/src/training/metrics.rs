use std::collections::BTreeMap;

use serde::Serialize;

use super::TrainError;
use crate::signal_io::StageLabel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    /// Row-major 5x5 counts; rows are true labels, columns predictions.
    pub confusion: Vec<usize>,
    pub n_test: usize,
}

impl MetricsReport {
    pub fn confusion_at(&self, truth: usize, predicted: usize) -> usize {
        self.confusion[truth * StageLabel::COUNT + predicted]
    }

    pub fn f1(&self, label: StageLabel) -> f64 {
        self.per_class_f1[label.name()]
    }
}

/// Accuracy, per-class F1 (0 when precision + recall is 0) and their
/// unweighted mean over all five stages.
pub fn compute_metrics(predictions: &[usize], labels: &[usize]) -> Result<MetricsReport, TrainError> {
    if predictions.len() != labels.len() {
        return Err(TrainError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let k = StageLabel::COUNT;
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&v| v >= k) {
        return Err(TrainError::BadLabel(bad));
    }
    let mut confusion = vec![0usize; k * k];
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t * k + p] += 1;
    }
    let n = labels.len();
    let correct: usize = (0..k).map(|c| confusion[c * k + c]).sum();
    let mut per_class_f1 = BTreeMap::new();
    let mut f1_sum = 0.0;
    for label in StageLabel::ALL {
        let c = label.index();
        let tp = confusion[c * k + c] as f64;
        let predicted: usize = (0..k).map(|t| confusion[t * k + c]).sum();
        let actual: usize = confusion[c * k..(c + 1) * k].iter().sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        f1_sum += f1;
        per_class_f1.insert(label.name().to_string(), f1);
    }
    Ok(MetricsReport {
        accuracy: correct as f64 / n as f64,
        macro_f1: f1_sum / k as f64,
        per_class_f1,
        confusion,
        n_test: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let labels: Vec<usize> = (0..20).map(|i| i % 5).collect();
        let m = compute_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        for t in 0..5 {
            for p in 0..5 {
                assert_eq!(m.confusion_at(t, p), if t == p { 4 } else { 0 });
            }
        }
    }

    #[test]
    fn all_wake_on_balanced_set() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let m = compute_metrics(&vec![0; 50], &labels).unwrap();
        assert!((m.accuracy - 0.2).abs() < 1e-12);
        assert!((m.f1(StageLabel::W) - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.macro_f1 - 1.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = compute_metrics(&[0, 1, 1], &[0, 1, 0]).unwrap();
        assert_eq!(m.f1(StageLabel::N3), 0.0);
        assert_eq!(m.confusion.iter().sum::<usize>(), 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&[0], &[0, 1]), Err(TrainError::LengthMismatch { .. })));
        assert!(matches!(compute_metrics(&[], &[]), Err(TrainError::EmptyInput)));
        assert!(matches!(compute_metrics(&[7], &[0]), Err(TrainError::BadLabel(7))));
    }

    #[test]
    fn json_keys() {
        let m = compute_metrics(&[0, 1], &[0, 1]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["accuracy", "macro_f1", "per_class_f1", "confusion", "n_test"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for stage in ["W", "N1", "N2", "N3", "REM"] {
            assert!(v["per_class_f1"].get(stage).is_some());
        }
        assert_eq!(v["confusion"].as_array().unwrap().len(), 25);
    }

    proptest! {
        #[test]
        fn accuracy_is_trace_and_f1_ignores_relabeling(
            pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200),
            perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = compute_metrics(&pred, &truth).unwrap();
            let trace: usize = (0..5).map(|c| m.confusion_at(c, c)).sum();
            prop_assert_eq!(m.confusion.iter().sum::<usize>(), truth.len());
            prop_assert!((m.accuracy - trace as f64 / truth.len() as f64).abs() < 1e-15);
            let relabel = |v: &[usize]| v.iter().map(|&c| perm[c]).collect::<Vec<usize>>();
            let r = compute_metrics(&relabel(&pred), &relabel(&truth)).unwrap();
            prop_assert!((m.macro_f1 - r.macro_f1).abs() < 1e-12);
        }
    }
}
