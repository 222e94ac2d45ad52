//! Binary classification metrics. Class 1 (attack) is the positive class.
//!
//! Ratios with a zero denominator are reported as `None` and serialize as
//! `null`; an undefined precision or recall makes F1 undefined as well.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {predictions} predictions vs {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("non-binary value {0}")]
    NonBinary(u8),
    #[error("empty confusion matrix")]
    Empty,
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error("non-finite score")]
    NonFiniteScore,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: u8, actual: u8) {
        match (predicted, actual) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        if p > 1 {
            return Err(MetricsError::NonBinary(p));
        }
        if l > 1 {
            return Err(MetricsError::NonBinary(l));
        }
        cm.record(p, l);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub threshold: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy, precision, false-positive rate, recall and F1 from the counts.
/// `auc` is left unset; `threshold` defaults to 0.5.
pub fn scores(cm: &ConfusionMatrix) -> Result<EvalReport, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let fpr = ratio(cm.fp, cm.fp + cm.tn);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(EvalReport {
        confusion: *cm,
        accuracy,
        precision,
        recall,
        fpr,
        f1,
        auc: None,
        threshold: 0.5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        out
    }
}

/// ROC curve from a sweep over the distinct scores, trapezoidal AUC.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::NonBinary(bad));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let prev = *points.last().expect("seeded with origin");
        let point = RocPoint {
            threshold: s,
            fpr: fp / neg,
            tpr: tp / pos,
        };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
    }
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (5, 5, 0, 0));
        let r = scores(&ConfusionMatrix {
            tp: 10,
            tn: 10,
            fp: 0,
            fn_: 0,
        })
        .unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.recall, Some(1.0));
        assert_eq!(r.f1, Some(1.0));
        assert_eq!(r.fpr, Some(0.0));
    }

    #[test]
    fn all_false_alarms() {
        let cm = confusion(&[1; 7], &[0; 7]).unwrap();
        assert_eq!(cm.fp, 7);
        assert_eq!(cm.total(), 7);
    }

    #[test]
    fn undefined_precision_propagates_to_f1() {
        let r = scores(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 4,
            fn_: 2,
        })
        .unwrap();
        assert_eq!(r.precision, None);
        assert_eq!(r.f1, None);
        assert_eq!(r.recall, Some(0.0));
        assert!(scores(&ConfusionMatrix::default()).is_err());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"precision\":null"));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            confusion(&[1, 0], &[1]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(confusion(&[2], &[1]), Err(MetricsError::NonBinary(2)));
        assert_eq!(
            roc_auc(&[0.1, 0.2], &[1, 1]).unwrap_err(),
            MetricsError::SingleClass
        );
    }

    #[test]
    fn separated_scores_auc_one() {
        let r = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.last().unwrap().fpr, 1.0);
    }

    #[test]
    fn ties_give_half_credit() {
        let r = roc_auc(&[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(r.auc, 0.5);
    }
}
