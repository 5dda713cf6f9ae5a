//! Accuracy and macro-averaged F1.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, LayeredModel};

/// Accuracy and macro-F1 of predictions against labels. Macro-F1 averages
/// per-class F1 over all `classes` slots, counting classes absent from
/// both predictions and labels as 0, so scores stay comparable across
/// splits of the same task.
pub fn accuracy_and_macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> Result<(f64, f64)> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("cannot score an empty evaluation set".into()));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&v| v >= classes) {
        return Err(Error::Data(format!("class {bad} out of range for {classes} classes")));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fnn = vec![0usize; classes];
    let mut correct = 0usize;
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fnn[y] += 1;
        }
    }
    let mut f1_sum = 0.0;
    for c in 0..classes {
        let denom = 2 * tp[c] + fp[c] + fnn[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok((correct as f64 / preds.len() as f64, f1_sum / classes as f64))
}

/// Predicted class per row: argmax of the logits, first index on ties.
pub fn predict(model: &LayeredModel, dataset: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(indices.len());
    // Chunked so evaluation never materializes a huge activation stack.
    for chunk in indices.chunks(512) {
        let (x, _) = dataset.gather(chunk)?;
        let (logits, _) = forward(model, &x)?;
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            preds.push(best);
        }
    }
    Ok(preds)
}

/// Evaluate a model on the given samples: (accuracy, macro-F1).
pub fn evaluate(model: &LayeredModel, dataset: &Dataset, indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::Data("cannot score an empty evaluation set".into()));
    }
    let preds = predict(model, dataset, indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
    accuracy_and_macro_f1(&preds, &labels, dataset.classes)
}
