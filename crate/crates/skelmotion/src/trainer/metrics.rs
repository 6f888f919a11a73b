//! Classification metrics: one-vs-rest confusions, precision/recall/F1,
//! per-class accuracy, and the serialized report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-vs-rest confusion counts for a single class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassConfusion {
    pub label: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Evaluation report with the fixed serialized field names. Precision,
/// recall and F1 are macro-averaged one-vs-rest; accuracy is the overall
/// percentage of correct predictions; per-class accuracy is each class's
/// recall, keyed by its label value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub confusion: Vec<ClassConfusion>,
    pub fold_id: Option<usize>,
    pub variant: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("metrics report", e.to_string()))
    }
}

/// Precision, recall, accuracy (percent) and F1 from one binary confusion.
/// F1 is zero when precision + recall is zero.
pub fn metrics_from_confusion(tp: u64, fp: u64, fn_: u64, tn: u64) -> (f64, f64, f64, f64) {
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let total = tp + tn + fp + fn_;
    let accuracy = if total > 0 {
        100.0 * (tp + tn) as f64 / total as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, accuracy, f1)
}

/// Build the report from per-sample truths and predictions (class indices
/// in [0, k)). `label_values` maps each class index to its display label.
pub fn compute_report(
    truth: &[usize],
    pred: &[usize],
    label_values: &[i64],
    fold_id: Option<usize>,
    variant: &str,
    seed: u64,
) -> Result<MetricsReport> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truths vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    let k = label_values.len();
    for &t in truth.iter().chain(pred) {
        if t >= k {
            return Err(Error::InvalidArgument(format!("class index {t} outside [0, {k})")));
        }
    }

    let mut confusion = Vec::with_capacity(k);
    let mut per_class_accuracy = BTreeMap::new();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for class in 0..k {
        let mut c = ClassConfusion {
            label: label_values[class].to_string(),
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
        };
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == class, p == class) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        let (precision, recall, _, f1) = metrics_from_confusion(c.tp, c.fp, c.fn_, c.tn);
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
        per_class_accuracy.insert(c.label.clone(), recall);
        confusion.push(c);
    }
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(MetricsReport {
        precision: p_sum / k as f64,
        recall: r_sum / k as f64,
        accuracy: 100.0 * correct as f64 / truth.len() as f64,
        f1: f_sum / k as f64,
        per_class_accuracy,
        confusion,
        fold_id,
        variant: variant.to_string(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn worked_binary_example() {
        let (p, r, a, f1) = metrics_from_confusion(96, 4, 5, 95);
        assert!((p - 0.96).abs() < 1e-12);
        assert!((r - 0.9505).abs() < 1e-4);
        assert!((a - 95.5).abs() < 1e-12);
        assert!((f1 - 0.9552).abs() < 1e-4);
    }

    #[test]
    fn perfect_predictions_max_out_every_metric() {
        let truth = vec![0, 1, 2, 0, 1, 2];
        let report = compute_report(&truth, &truth, &[6, 7, 8], None, "full", 0).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.accuracy, 100.0);
        assert_eq!(report.f1, 1.0);
        for v in report.per_class_accuracy.values() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn constant_predictor_on_balanced_binary_data_scores_fifty() {
        let truth: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let pred = vec![0; 100];
        let report = compute_report(&truth, &pred, &[0, 1], None, "full", 0).unwrap();
        assert_eq!(report.accuracy, 50.0);
        // F1 of the never-predicted class is 0 by convention.
        assert_eq!(report.per_class_accuracy["1"], 0.0);
    }

    #[test]
    fn matches_brute_force_confusions_on_random_data() {
        let mut rng = crate::init::seeded_rng(99);
        for _ in 0..1000 {
            let k = rng.gen_range(2..6usize);
            let n = rng.gen_range(1..40usize);
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let labels: Vec<i64> = (0..k as i64).collect();
            let report = compute_report(&truth, &pred, &labels, None, "full", 0).unwrap();
            // Brute-force oracle: recount every cell and re-derive the
            // macro averages with the same formulas.
            let mut p_sum = 0.0;
            let mut r_sum = 0.0;
            let mut f_sum = 0.0;
            for class in 0..k {
                let mut tp = 0u64;
                let mut fp = 0u64;
                let mut fn_ = 0u64;
                let mut tn = 0u64;
                for i in 0..n {
                    if truth[i] == class && pred[i] == class {
                        tp += 1;
                    } else if truth[i] != class && pred[i] == class {
                        fp += 1;
                    } else if truth[i] == class && pred[i] != class {
                        fn_ += 1;
                    } else {
                        tn += 1;
                    }
                }
                let c = &report.confusion[class];
                assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
                let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
                let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                p_sum += precision;
                r_sum += recall;
                f_sum += f1;
            }
            assert_eq!(report.precision, p_sum / k as f64);
            assert_eq!(report.recall, r_sum / k as f64);
            assert_eq!(report.f1, f_sum / k as f64);
            let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
            assert_eq!(report.accuracy, 100.0 * correct as f64 / n as f64);
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let truth = vec![0, 1, 1, 0];
        let pred = vec![0, 1, 0, 0];
        let report = compute_report(&truth, &pred, &[6, 10], Some(3), "enc-only", 7).unwrap();
        let text = report.to_json();
        for field in [
            "precision",
            "recall",
            "accuracy",
            "f1",
            "per_class_accuracy",
            "confusion",
            "fold_id",
            "variant",
            "seed",
        ] {
            assert!(text.contains(field), "missing field {field}");
        }
        let back = MetricsReport::from_json(&text).unwrap();
        assert_eq!(back.confusion, report.confusion);
        assert_eq!(back.accuracy, report.accuracy);
    }

    #[test]
    fn out_of_range_labels_rejected() {
        assert!(compute_report(&[0, 2], &[0, 1], &[0, 1], None, "full", 0).is_err());
        assert!(compute_report(&[], &[], &[0, 1], None, "full", 0).is_err());
    }
}
