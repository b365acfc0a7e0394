//! Grader accuracy estimation from probe-paper reports.
//!
//! Continuous: closed-form maximum likelihood for (bias, reliability).
//! Discrete: exhaustive maximum likelihood over the accuracy grid.

use thiserror::Error;

use crate::model::{
    discrete_error_pmf, ContinuousAccuracy, DiscreteModelParams, ModelError, TAU_CAP,
};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("need at least {need} probe pairs, got {got}")]
    TooFewProbes { need: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Maximum-likelihood (bias, reliability) from `(reported, true)` probe
/// pairs: bias is the mean difference, reliability the inverse mean squared
/// residual, capped at [`TAU_CAP`].
///
/// At least two pairs are required; a single residual-free pair leaves the
/// reliability undefined.
pub fn estimate_continuous(pairs: &[(f64, f64)]) -> Result<ContinuousAccuracy, EstimationError> {
    if pairs.len() < 2 {
        return Err(EstimationError::TooFewProbes {
            need: 2,
            got: pairs.len(),
        });
    }
    for &(reported, truth) in pairs {
        if !reported.is_finite() {
            return Err(ModelError::NonFiniteScore(reported).into());
        }
        if !truth.is_finite() {
            return Err(ModelError::NonFiniteScore(truth).into());
        }
    }
    let n = pairs.len() as f64;
    let bias = pairs.iter().map(|&(r, t)| r - t).sum::<f64>() / n;
    let ss: f64 = pairs
        .iter()
        .map(|&(r, t)| {
            let resid = r - t - bias;
            resid * resid
        })
        .sum();
    let reliability = if ss > 0.0 {
        (n / ss).min(TAU_CAP)
    } else {
        TAU_CAP
    };
    Ok(ContinuousAccuracy { bias, reliability })
}

/// Maximum-likelihood accuracy over the grid: the `q` maximizing the product
/// of error PMFs across `(reported, true)` probe pairs. Ties break toward
/// the smaller grid value.
pub fn estimate_discrete(
    pairs: &[(u32, u32)],
    params: &DiscreteModelParams,
) -> Result<f64, EstimationError> {
    if pairs.is_empty() {
        return Err(EstimationError::TooFewProbes { need: 1, got: 0 });
    }
    let m = params.max_score();
    let mut best_q = params.q_grid()[0];
    let mut best_ll = f64::NEG_INFINITY;
    for &q in params.q_grid() {
        let mut ll = 0.0;
        for &(reported, truth) in pairs {
            ll += discrete_error_pmf(reported, truth, q, m)
                .map_err(EstimationError::from)?
                .ln();
        }
        if ll > best_ll {
            best_ll = ll;
            best_q = q;
        }
    }
    Ok(best_q)
}
