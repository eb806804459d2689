use super::MisError;
use crate::data::Dataset;
use crate::model::ModelGraph;
use crate::train::predict;

/// Accuracy restricted to each class, indexed by label.
pub fn classwise_accuracy(model: &ModelGraph, dataset: &Dataset) -> Result<Vec<f64>, MisError> {
    let missing = dataset.missing_classes();
    if !missing.is_empty() {
        return Err(MisError::MissingClasses(missing));
    }
    let preds = predict(model, dataset)?;
    classwise_from_predictions(&preds, dataset.labels(), dataset.num_classes())
}

pub fn classwise_from_predictions(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<f64>, MisError> {
    if preds.len() != labels.len() {
        return Err(MisError::Stats(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= classes {
            return Err(MisError::Stats(format!("label {l} out of range for {classes} classes")));
        }
        counts[l] += 1;
        hits[l] += (p == l) as usize;
    }
    let missing: Vec<usize> = (0..classes).filter(|&c| counts[c] == 0).collect();
    if !missing.is_empty() {
        return Err(MisError::MissingClasses(missing));
    }
    Ok(hits.iter().zip(&counts).map(|(&h, &c)| h as f64 / c as f64).collect())
}

/// Pearson correlation coefficient. Constant inputs are an error rather
/// than a silent zero.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64, MisError> {
    if x.len() != y.len() {
        return Err(MisError::Stats(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(MisError::Stats(format!("need at least 2 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MisError::Stats("non-finite input".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MisError::Stats("zero variance input, correlation undefined".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
