//! Shared domain types, priors, and the two grader error models.
//!
//! The continuous model treats an observed score as Normal around the true
//! score plus a per-grader bias, with per-grader precision (reliability).
//! The discrete model puts scores on `{0, ..., m}` and uses an
//! exponential-distance PMF controlled by a scalar accuracy `q`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

/// Reliability cap applied to all continuous accuracy estimates.
///
/// The MLE reliability diverges when a grader's probe reports match
/// `y + b` exactly; the cap keeps downstream posteriors finite while still
/// letting the grader's reports dominate any realistic prior precision.
pub const TAU_CAP: f64 = 1e8;

/// Identifier of a grader (students and papers share the index set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GraderId(pub usize);

/// Identifier of a paper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PaperId(pub usize);

impl fmt::Display for GraderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for PaperId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Errors from model-level validation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite score value {0}")]
    NonFiniteScore(f64),
    #[error("score {score} outside the discrete domain 0..={max}")]
    ScoreOutOfRange { score: u32, max: u32 },
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
}

fn require_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            message: format!("must be finite and > 0, got {value}"),
        })
    }
}

fn require_finite(value: f64) -> Result<(), ModelError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFiniteScore(value))
    }
}

/// Parameters of the continuous generative model.
///
/// True scores are Normal(`mu`, 1/`gamma`), biases Normal(0, 1/`eta`),
/// reliabilities Gamma(`alpha`, rate `beta`), and an observation is Normal
/// around the true score plus the grader's bias with the grader's precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousModelParams {
    /// Prior mean of true scores.
    pub mu: f64,
    /// Prior precision of true scores.
    pub gamma: f64,
    /// Prior precision of grader biases.
    pub eta: f64,
    /// Shape of the reliability Gamma prior.
    pub alpha: f64,
    /// Rate of the reliability Gamma prior.
    pub beta: f64,
}

impl ContinuousModelParams {
    pub fn new(mu: f64, gamma: f64, eta: f64, alpha: f64, beta: f64) -> Result<Self, ModelError> {
        require_finite(mu)?;
        require_positive("gamma", gamma)?;
        require_positive("eta", eta)?;
        require_positive("alpha", alpha)?;
        require_positive("beta", beta)?;
        Ok(Self {
            mu,
            gamma,
            eta,
            alpha,
            beta,
        })
    }

    /// Mean of the reliability prior, `alpha / beta`.
    pub fn mean_reliability(&self) -> f64 {
        self.alpha / self.beta
    }
}

/// Parameters of the discrete model: scores in `{0, ..., m}`, an accuracy
/// grid `Q`, and a prior PMF over scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModelParams {
    m: u32,
    q_grid: Vec<f64>,
    score_prior: Vec<f64>,
}

impl DiscreteModelParams {
    pub fn new(m: u32, q_grid: Vec<f64>, score_prior: Vec<f64>) -> Result<Self, ModelError> {
        if m < 1 {
            return Err(ModelError::InvalidParameter {
                name: "m",
                message: "maximum score must be >= 1".to_string(),
            });
        }
        if q_grid.is_empty() {
            return Err(ModelError::InvalidParameter {
                name: "q_grid",
                message: "accuracy grid must be non-empty".to_string(),
            });
        }
        if !q_grid.iter().all(|q| q.is_finite() && *q >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "q_grid",
                message: "grid values must be finite and >= 0".to_string(),
            });
        }
        for pair in q_grid.windows(2) {
            if pair[1] <= pair[0] {
                return Err(ModelError::InvalidParameter {
                    name: "q_grid",
                    message: format!(
                        "grid must be strictly increasing, got {} then {}",
                        pair[0], pair[1]
                    ),
                });
            }
        }
        if score_prior.len() != (m as usize) + 1 {
            return Err(ModelError::InvalidParameter {
                name: "score_prior",
                message: format!("expected {} entries, got {}", m + 1, score_prior.len()),
            });
        }
        if !score_prior.iter().all(|p| p.is_finite() && *p >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "score_prior",
                message: "probabilities must be finite and >= 0".to_string(),
            });
        }
        let total: f64 = score_prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidParameter {
                name: "score_prior",
                message: format!("probabilities must sum to 1, got {total}"),
            });
        }
        Ok(Self {
            m,
            q_grid,
            score_prior,
        })
    }

    /// Standard setup: uniform score prior and a 100-point grid on [0, 16].
    pub fn uniform(m: u32) -> Result<Self, ModelError> {
        let prior = vec![1.0 / f64::from(m + 1); (m as usize) + 1];
        Self::new(m, Self::standard_q_grid(), prior)
    }

    /// Same grid as [`DiscreteModelParams::uniform`] with a caller-supplied prior.
    pub fn with_prior(m: u32, score_prior: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(m, Self::standard_q_grid(), score_prior)
    }

    /// 100 evenly spaced accuracy values spanning [0, 16] inclusive.
    pub fn standard_q_grid() -> Vec<f64> {
        let points = 100usize;
        (0..points)
            .map(|i| 16.0 * i as f64 / (points - 1) as f64)
            .collect()
    }

    pub fn max_score(&self) -> u32 {
        self.m
    }

    pub fn q_grid(&self) -> &[f64] {
        &self.q_grid
    }

    pub fn score_prior(&self) -> &[f64] {
        &self.score_prior
    }

    /// All scores of the domain, `0..=m`.
    pub fn scores(&self) -> impl Iterator<Item = u32> {
        0..=self.m
    }
}

/// Continuous accuracy: an additive bias and a reliability (precision).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousAccuracy {
    pub bias: f64,
    pub reliability: f64,
}

impl ContinuousAccuracy {
    pub fn new(bias: f64, reliability: f64) -> Result<Self, ModelError> {
        require_finite(bias)?;
        require_positive("reliability", reliability)?;
        if reliability > TAU_CAP {
            return Err(ModelError::InvalidParameter {
                name: "reliability",
                message: format!("must be <= {TAU_CAP}, got {reliability}"),
            });
        }
        Ok(Self { bias, reliability })
    }
}

/// A grader's estimated accuracy in either score model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccuracyEstimate {
    Continuous(ContinuousAccuracy),
    Discrete { q: f64 },
}

/// One reported grade, tagged with whether the paper was a probe
/// *for the reporting grader*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradeEntry {
    pub score: f64,
    pub probe: bool,
}

/// Sparse map of reported grades keyed by (grader, paper).
///
/// Probe status is carried per edge: in the synthetic experiments it is
/// induced by a global probe set, while real datasets may mark the same
/// paper as probe for one grader and non-probe for another.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradeMatrix {
    entries: BTreeMap<(GraderId, PaperId), GradeEntry>,
}

impl GradeMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a report, replacing any previous report on the same edge.
    pub fn insert(&mut self, grader: GraderId, paper: PaperId, score: f64, probe: bool) {
        self.entries
            .insert((grader, paper), GradeEntry { score, probe });
    }

    pub fn get(&self, grader: GraderId, paper: PaperId) -> Option<&GradeEntry> {
        self.entries.get(&(grader, paper))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (GraderId, PaperId, &GradeEntry)> {
        self.entries.iter().map(|(&(g, p), e)| (g, p, e))
    }

    /// Probe reports of one grader, sorted by paper id.
    pub fn probe_reports(&self, grader: GraderId) -> Vec<(PaperId, f64)> {
        self.entries
            .range((grader, PaperId(0))..=(grader, PaperId(usize::MAX)))
            .filter(|(_, e)| e.probe)
            .map(|(&(_, p), e)| (p, e.score))
            .collect()
    }

    /// Non-probe reports grouped per paper, graders sorted within each paper.
    pub fn nonprobe_by_paper(&self) -> BTreeMap<PaperId, Vec<(GraderId, f64)>> {
        let mut out: BTreeMap<PaperId, Vec<(GraderId, f64)>> = BTreeMap::new();
        for (&(g, p), e) in &self.entries {
            if !e.probe {
                out.entry(p).or_default().push((g, e.score));
            }
        }
        out
    }

    /// Non-probe reports grouped per grader, papers sorted within each grader.
    pub fn nonprobe_by_grader(&self) -> BTreeMap<GraderId, Vec<(PaperId, f64)>> {
        let mut out: BTreeMap<GraderId, Vec<(PaperId, f64)>> = BTreeMap::new();
        for (&(g, p), e) in &self.entries {
            if !e.probe {
                out.entry(g).or_default().push((p, e.score));
            }
        }
        out
    }

    /// All graders that appear in the matrix, sorted.
    pub fn graders(&self) -> Vec<GraderId> {
        let mut ids: Vec<GraderId> = self.entries.keys().map(|&(g, _)| g).collect();
        ids.dedup();
        ids
    }

    /// Checks that every score is an integer inside `0..=m`.
    pub fn validate_discrete(&self, m: u32) -> Result<(), ModelError> {
        for (_, _, e) in self.iter() {
            require_finite(e.score)?;
            if e.score.fract() != 0.0 || e.score < 0.0 || e.score > f64::from(m) {
                return Err(ModelError::ScoreOutOfRange {
                    score: e.score as u32,
                    max: m,
                });
            }
        }
        Ok(())
    }
}

/// True scores per paper.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrueScores {
    scores: BTreeMap<PaperId, f64>,
}

impl TrueScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(scores: BTreeMap<PaperId, f64>) -> Self {
        Self { scores }
    }

    pub fn insert(&mut self, paper: PaperId, score: f64) {
        self.scores.insert(paper, score);
    }

    pub fn get(&self, paper: PaperId) -> Option<f64> {
        self.scores.get(&paper).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PaperId, f64)> + '_ {
        self.scores.iter().map(|(&p, &s)| (p, s))
    }
}

/// Density of observing `y_tilde` when the true score is `y` and the grader
/// has the given bias and reliability: Normal with mean `y + bias` and
/// variance `1 / reliability`.
pub fn continuous_error_density(
    y_tilde: f64,
    y: f64,
    acc: &ContinuousAccuracy,
) -> Result<f64, ModelError> {
    require_finite(y_tilde)?;
    require_finite(y)?;
    let residual = y_tilde - (y + acc.bias);
    Ok(
        (acc.reliability / (2.0 * PI)).sqrt()
            * (-0.5 * acc.reliability * residual * residual).exp(),
    )
}

/// PMF of observing `y_tilde` when the true score is `y` under accuracy `q`:
/// `exp(-q|y_tilde - y|/m)` normalized over the score domain.
pub fn discrete_error_pmf(y_tilde: u32, y: u32, q: f64, m: u32) -> Result<f64, ModelError> {
    if y_tilde > m {
        return Err(ModelError::ScoreOutOfRange {
            score: y_tilde,
            max: m,
        });
    }
    if y > m {
        return Err(ModelError::ScoreOutOfRange { score: y, max: m });
    }
    if !q.is_finite() || q < 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "q",
            message: format!("accuracy must be finite and >= 0, got {q}"),
        });
    }
    let kernel = |z: u32| {
        let dist = f64::from(z.abs_diff(y));
        (-q * dist / f64::from(m)).exp()
    };
    let normalizer: f64 = (0..=m).map(kernel).sum();
    Ok(kernel(y_tilde) / normalizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn acc(bias: f64, reliability: f64) -> ContinuousAccuracy {
        ContinuousAccuracy::new(bias, reliability).unwrap()
    }

    #[test]
    fn density_at_zero_residual_matches_normal_mode() {
        // sqrt(tau / 2pi) at the mean
        let d = continuous_error_density(1.0, 1.0, &acc(0.0, 16.0)).unwrap();
        assert!((d - (16.0 / (2.0 * PI)).sqrt()).abs() < 1e-12);
        assert!((d - 1.5957691216057308).abs() < 1e-12);

        let d = continuous_error_density(1.1, 1.0, &acc(0.1, 100.0)).unwrap();
        assert!((d - (100.0 / (2.0 * PI)).sqrt()).abs() < 1e-12);
        assert!((d - 3.989422804014327).abs() < 1e-12);
    }

    #[test]
    fn density_is_maximized_at_shifted_mean() {
        let a = acc(0.3, 40.0);
        let peak = continuous_error_density(1.3, 1.0, &a).unwrap();
        for delta in [-0.5, -0.01, 0.01, 0.5] {
            let off = continuous_error_density(1.3 + delta, 1.0, &a).unwrap();
            assert!(off < peak);
        }
    }

    #[test]
    fn density_integrates_to_one_over_wide_window() {
        let a = acc(-0.2, 25.0);
        let sigma = (1.0 / a.reliability).sqrt();
        let mean = 1.0 + a.bias;
        let (lo, hi) = (mean - 8.0 * sigma, mean + 8.0 * sigma);
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            total += w * continuous_error_density(x, 1.0, &a).unwrap();
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn density_rejects_non_finite_scores() {
        let a = acc(0.0, 4.0);
        assert!(continuous_error_density(f64::NAN, 1.0, &a).is_err());
        assert!(continuous_error_density(1.0, f64::INFINITY, &a).is_err());
    }

    #[test]
    fn accuracy_requires_positive_capped_reliability() {
        assert!(ContinuousAccuracy::new(0.0, 0.0).is_err());
        assert!(ContinuousAccuracy::new(0.0, -3.0).is_err());
        assert!(ContinuousAccuracy::new(0.0, TAU_CAP * 10.0).is_err());
        assert!(ContinuousAccuracy::new(f64::NAN, 1.0).is_err());
        assert!(ContinuousAccuracy::new(0.0, TAU_CAP).is_ok());
    }

    #[test]
    fn pmf_with_zero_accuracy_is_uniform() {
        for y in 0..=4 {
            for y_tilde in 0..=4 {
                let p = discrete_error_pmf(y_tilde, y, 0.0, 4).unwrap();
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pmf_at_true_score_matches_hand_normalizer() {
        // y = 3, m = 4, q = 16: distances over z in 0..=4 are 3,2,1,0,1.
        let expected =
            1.0 / ((-12.0f64).exp() + (-8.0f64).exp() + (-4.0f64).exp() + 1.0 + (-4.0f64).exp());
        let p = discrete_error_pmf(3, 3, 16.0, 4).unwrap();
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.96434).abs() < 1e-4);
    }

    #[test]
    fn pmf_normalizes_exactly() {
        let total: f64 = (0..=4)
            .map(|y_tilde| discrete_error_pmf(y_tilde, 2, 4.0, 4).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pmf_rejects_out_of_range_scores() {
        assert!(discrete_error_pmf(5, 2, 4.0, 4).is_err());
        assert!(discrete_error_pmf(2, 7, 4.0, 4).is_err());
        assert!(discrete_error_pmf(2, 2, -1.0, 4).is_err());
    }

    #[test]
    fn discrete_params_validation() {
        assert!(DiscreteModelParams::uniform(4).is_ok());
        assert!(DiscreteModelParams::new(0, vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(DiscreteModelParams::new(1, vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscreteModelParams::new(1, vec![0.0, 1.0], vec![0.7, 0.7]).is_err());
        let grid = DiscreteModelParams::standard_q_grid();
        assert_eq!(grid.len(), 100);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[99], 16.0);
    }

    #[test]
    fn grade_matrix_splits_probe_and_nonprobe() {
        let mut m = GradeMatrix::new();
        m.insert(GraderId(1), PaperId(10), 0.9, true);
        m.insert(GraderId(1), PaperId(11), 1.1, false);
        m.insert(GraderId(2), PaperId(11), 1.0, false);
        assert_eq!(m.probe_reports(GraderId(1)), vec![(PaperId(10), 0.9)]);
        let by_paper = m.nonprobe_by_paper();
        assert_eq!(
            by_paper[&PaperId(11)],
            vec![(GraderId(1), 1.1), (GraderId(2), 1.0)]
        );
        assert_eq!(m.graders(), vec![GraderId(1), GraderId(2)]);
    }

    proptest! {
        #[test]
        fn pmf_sums_to_one(m in 1u32..10, y in 0u32..10, q in 0.0f64..16.0) {
            let y = y.min(m);
            let total: f64 = (0..=m)
                .map(|y_tilde| discrete_error_pmf(y_tilde, y, q, m).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pmf_symmetric_and_monotone_in_distance(m in 2u32..10, q in 0.01f64..16.0) {
            let y = m / 2;
            // symmetric in |y_tilde - y| wherever both sides are in range
            for d in 1..=y.min(m - y) {
                let lo = discrete_error_pmf(y - d, y, q, m).unwrap();
                let hi = discrete_error_pmf(y + d, y, q, m).unwrap();
                prop_assert!((lo - hi).abs() < 1e-15);
            }
            // non-increasing in distance
            let mut prev = discrete_error_pmf(y, y, q, m).unwrap();
            for d in 1..=(m - y) {
                let next = discrete_error_pmf(y + d, y, q, m).unwrap();
                prop_assert!(next <= prev + 1e-15);
                prev = next;
            }
        }

        #[test]
        fn density_positive_and_peaked(bias in -0.5f64..0.5, tau in 0.1f64..1e4, y in -2.0f64..2.0) {
            let a = ContinuousAccuracy::new(bias, tau).unwrap();
            let peak = continuous_error_density(y + bias, y, &a).unwrap();
            prop_assert!(peak > 0.0);
            let off = continuous_error_density(y + bias + 0.37, y, &a).unwrap();
            prop_assert!(off > 0.0 && off <= peak);
        }
    }
}
