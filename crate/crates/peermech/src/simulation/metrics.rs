//! Accuracy metrics: root-mean-square error and the fraction of papers
//! whose assigned score would trigger a regrading request.

use std::collections::BTreeMap;

use super::SimulationError;
use crate::model::{PaperId, TrueScores};

/// Metrics of a single run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub regrade_fraction: f64,
}

/// RMSE and regrade fraction over the scored papers; a paper is regraded
/// when its score misses the truth by at least `threshold`.
pub fn compute_metrics(
    scores: &BTreeMap<PaperId, f64>,
    truths: &TrueScores,
    threshold: f64,
) -> Result<Metrics, SimulationError> {
    if scores.is_empty() {
        return Err(SimulationError::EmptyScores);
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(SimulationError::InvalidConfig(format!(
            "regrade threshold must be > 0, got {threshold}"
        )));
    }
    let mut sq_sum = 0.0;
    let mut regrades = 0usize;
    for (&paper, &score) in scores {
        let truth = truths
            .get(paper)
            .ok_or(SimulationError::MissingTruth(paper))?;
        let diff = score - truth;
        sq_sum += diff * diff;
        if diff.abs() >= threshold {
            regrades += 1;
        }
    }
    let n = scores.len() as f64;
    Ok(Metrics {
        rmse: (sq_sum / n).sqrt(),
        regrade_fraction: regrades as f64 / n,
    })
}

/// Discrete-domain variant: RMSE keeps fractional scores, while the regrade
/// rule first rounds to the nearest integer (halves round up) and regrades
/// on any mismatch with the integer truth.
pub fn compute_metrics_discrete(
    scores: &BTreeMap<PaperId, f64>,
    truths: &TrueScores,
) -> Result<Metrics, SimulationError> {
    if scores.is_empty() {
        return Err(SimulationError::EmptyScores);
    }
    let mut sq_sum = 0.0;
    let mut regrades = 0usize;
    for (&paper, &score) in scores {
        let truth = truths
            .get(paper)
            .ok_or(SimulationError::MissingTruth(paper))?;
        let diff = score - truth;
        sq_sum += diff * diff;
        if (score + 0.5).floor() != truth {
            regrades += 1;
        }
    }
    let n = scores.len() as f64;
    Ok(Metrics {
        rmse: (sq_sum / n).sqrt(),
        regrade_fraction: regrades as f64 / n,
    })
}

/// Mean and 95% normal-approximation half-width over replication values.
pub fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Mean and standard error over replication values.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
