//! Comparison mechanisms: per-paper mean, per-paper median, and Gibbs
//! sampling under either score model.
//!
//! Baselines have no accuracy-estimation step, so probe reports are ignored
//! entirely: every mechanism here consumes only the non-probe block of the
//! grade matrix.

mod gibbs;

pub use gibbs::{gibbs_continuous, gibbs_discrete, gibbs_discrete_with_trace, DiscreteGibbsTrace};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{GradeMatrix, ModelError, PaperId};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("grade matrix has no non-probe reports")]
    NoReports,
    #[error("invalid Gibbs configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Gibbs chain length, burn-in, and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl GibbsConfig {
    pub const DEFAULT_ITERATIONS: usize = 1000;
    pub const DEFAULT_BURN_IN: usize = 200;

    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Result<Self, BaselineError> {
        if iterations < 1 {
            return Err(BaselineError::InvalidConfig(format!(
                "need at least 1 iteration, got {iterations}"
            )));
        }
        if burn_in >= iterations {
            return Err(BaselineError::InvalidConfig(format!(
                "burn-in {burn_in} must be smaller than total iterations {iterations}"
            )));
        }
        Ok(Self {
            iterations,
            burn_in,
            seed,
        })
    }

    pub fn with_seed(seed: u64) -> Self {
        Self {
            iterations: Self::DEFAULT_ITERATIONS,
            burn_in: Self::DEFAULT_BURN_IN,
            seed,
        }
    }
}

/// Arithmetic mean of the non-probe reports of each paper.
pub fn mean_scores(grades: &GradeMatrix) -> Result<BTreeMap<PaperId, f64>, BaselineError> {
    let by_paper = grades.nonprobe_by_paper();
    if by_paper.is_empty() {
        return Err(BaselineError::NoReports);
    }
    Ok(by_paper
        .into_iter()
        .map(|(paper, reports)| {
            let total: f64 = reports.iter().map(|&(_, s)| s).sum();
            (paper, total / reports.len() as f64)
        })
        .collect())
}

/// Median of the non-probe reports of each paper; an even count averages
/// the two middle values.
pub fn median_scores(grades: &GradeMatrix) -> Result<BTreeMap<PaperId, f64>, BaselineError> {
    let by_paper = grades.nonprobe_by_paper();
    if by_paper.is_empty() {
        return Err(BaselineError::NoReports);
    }
    Ok(by_paper
        .into_iter()
        .map(|(paper, reports)| {
            let mut values: Vec<f64> = reports.iter().map(|&(_, s)| s).collect();
            values.sort_by(f64::total_cmp);
            let mid = values.len() / 2;
            let median = if values.len() % 2 == 1 {
                values[mid]
            } else {
                (values[mid - 1] + values[mid]) / 2.0
            };
            (paper, median)
        })
        .collect())
}
