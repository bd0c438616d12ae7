use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Confusion counts with class 1 (dementia) as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    pub confusion: Confusion,
    /// Metrics whose denominator was zero; they are reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl Metrics {
    /// Value by name, as listed in [`super::METRIC_NAMES`].
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "accuracy" => self.accuracy,
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "specificity" => self.specificity,
            _ => return None,
        })
    }
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall, F1 and specificity with label 1 positive.
pub fn evaluate_metrics(predictions: &[u8], truth: &[u8]) -> Result<Metrics> {
    if predictions.len() != truth.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(invalid("no predictions to score"));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(invalid(format!("label {} is not 0 or 1", p.max(t))));
        }
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    let mut undefined = Vec::new();
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
    let specificity = ratio(c.tn, c.tn + c.fp, "specificity", &mut undefined);
    // Harmonic mean of precision and recall, in count form.
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, "f1", &mut undefined);
    Ok(Metrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        f1,
        specificity,
        confusion: c,
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0, 1];
        let m = evaluate_metrics(&y, &y).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.specificity] {
            assert_eq!(v, 1.0);
        }
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn hand_confusion_matrix() {
        // TP=3, FN=1, FP=1, TN=3
        let truth = [1, 1, 1, 1, 0, 0, 0, 0];
        let pred = [1, 1, 1, 0, 1, 0, 0, 0];
        let m = evaluate_metrics(&pred, &truth).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.specificity] {
            assert_eq!(v, 0.75);
        }
    }

    #[test]
    fn all_negative_predictor_flags_precision() {
        let m = evaluate_metrics(&[0, 0, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((m.recall, m.specificity, m.precision), (0.0, 1.0, 0.0));
        assert!(m.undefined.contains(&"precision".to_string()));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(evaluate_metrics(&[0, 1], &[1]).is_err());
        assert!(evaluate_metrics(&[], &[]).is_err());
        assert!(evaluate_metrics(&[2], &[1]).is_err());
    }
}
