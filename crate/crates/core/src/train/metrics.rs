use serde::{Deserialize, Serialize};

use crate::data::{Dataset, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::layers::ForwardCtx;
use crate::models::Model;
use crate::tensor::Tensor;

use super::loss::PROB_FLOOR;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// 2×2 counts, row = true class, column = predicted class.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize]) -> Result<[[u64; 2]; 2]> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::data("confusion matrix of zero samples"));
    }
    let mut m = [[0u64; 2]; 2];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::Label(format!("class index out of range (prediction {p}, label {y})")));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// A 0/0 ratio occurred and was reported as 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: u64,
    pub accuracy: f64,
    pub classes: Vec<ClassScores>,
    /// Row = true class, column = predicted class.
    pub confusion: [[u64; 2]; 2],
    pub loss: Option<f64>,
}

impl Metrics {
    pub fn from_confusion(confusion: [[u64; 2]; 2], loss: Option<f64>) -> Self {
        let samples: u64 = confusion.iter().flatten().sum();
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let classes = (0..2)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted = confusion[0][c] + confusion[1][c];
                let actual = confusion[c][0] + confusion[c][1];
                let (precision, p0) = ratio(tp, predicted);
                let (recall, r0) = ratio(tp, actual);
                ClassScores {
                    class: CLASS_NAMES[c].to_string(),
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    support: actual,
                    zero_division: p0 || r0 || precision + recall == 0.0,
                }
            })
            .collect();
        let correct = confusion[0][0] + confusion[1][1];
        Metrics {
            samples,
            accuracy: if samples == 0 { 0.0 } else { correct as f64 / samples as f64 },
            classes,
            confusion,
            loss,
        }
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], loss: Option<f64>) -> Result<Self> {
        Ok(Metrics::from_confusion(confusion_matrix(predictions, labels)?, loss))
    }
}

/// Eval-mode predictions (argmax) and the mean cross-entropy.
pub fn predict_dataset(model: &Model<f32>, data: &Dataset) -> Result<(Vec<usize>, Vec<Tensor<f32>>, f64)> {
    let mut preds = Vec::with_capacity(data.len());
    let mut probs = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for s in &data.samples {
        let (logits, _) = model.forward_logits(&s.clip, &mut ForwardCtx::inference())?;
        let p = logits.softmax()?;
        loss -= (p.data()[s.label] as f64).max(PROB_FLOOR).ln();
        preds.push(argmax(p.data()));
        probs.push(p);
    }
    Ok((preds, probs, loss / data.len().max(1) as f64))
}

pub fn evaluate(model: &Model<f32>, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::data("cannot evaluate on an empty test set"));
    }
    let (preds, _, loss) = predict_dataset(model, data)?;
    Metrics::from_predictions(&preds, &data.labels(), Some(loss))
}
