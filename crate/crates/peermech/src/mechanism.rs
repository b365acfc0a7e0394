//! Score selection and transfers.
//!
//! Scores maximize posterior expected reward per paper (quadratic reward,
//! so the posterior-mean score). A grader's transfer for a paper is the
//! marginal contribution of her report: the realized reward at the chosen
//! score minus the reward at the score that would have been chosen without
//! her. Transfers add over the grader's non-probe papers.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::assignment::AssignmentPlan;
use crate::estimation::{estimate_continuous, estimate_discrete, EstimationError};
use crate::model::{
    ContinuousAccuracy, DiscreteModelParams, GradeMatrix, GraderId, ModelError, PaperId, TrueScores,
};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("no reports provided")]
    EmptyReports,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("non-finite report {0}")]
    NonFiniteReport(f64),
    #[error("reliability must be > 0, got {0}")]
    InvalidReliability(f64),
    #[error("grader {0} has no report on this paper")]
    GraderNotOnPaper(GraderId),
    #[error("missing true score for paper {0}")]
    MissingTruth(PaperId),
    #[error("grade matrix does not cover the plan: {0}")]
    Coverage(CoverageReport),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Plan edges missing from (or unexpected in) a grade matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageReport {
    pub missing: Vec<(GraderId, PaperId)>,
    pub unexpected: Vec<(GraderId, PaperId)>,
    pub flag_mismatch: Vec<(GraderId, PaperId)>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.flag_mismatch.is_empty()
    }
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |edges: &[(GraderId, PaperId)]| {
            edges
                .iter()
                .map(|(g, p)| format!("({g},{p})"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        if !self.missing.is_empty() {
            write!(f, "missing edges: {}; ", list(&self.missing))?;
        }
        if !self.unexpected.is_empty() {
            write!(f, "unexpected edges: {}; ", list(&self.unexpected))?;
        }
        if !self.flag_mismatch.is_empty() {
            write!(f, "probe-flag mismatches: {}", list(&self.flag_mismatch))?;
        }
        Ok(())
    }
}

/// Quadratic reward: the negated rechecking cost.
pub fn reward(score: f64, truth: f64) -> f64 {
    let d = score - truth;
    -(d * d)
}

/// Posterior-mean score for one paper in the continuous model:
/// `(gamma*mu + sum tau_i (y_i - b_i)) / (gamma + sum tau_i)`.
pub fn erm_score_continuous(
    reports: &[(f64, ContinuousAccuracy)],
    prior_mu: f64,
    prior_gamma: f64,
) -> Result<f64, MechanismError> {
    if reports.is_empty() {
        return Err(MechanismError::EmptyReports);
    }
    validate_prior(prior_mu, prior_gamma)?;
    let mut num = prior_gamma * prior_mu;
    let mut den = prior_gamma;
    for &(score, acc) in reports {
        if !score.is_finite() {
            return Err(MechanismError::NonFiniteReport(score));
        }
        if !(acc.reliability.is_finite() && acc.reliability > 0.0) {
            return Err(MechanismError::InvalidReliability(acc.reliability));
        }
        num += acc.reliability * (score - acc.bias);
        den += acc.reliability;
    }
    Ok(num / den)
}

fn validate_prior(mu: f64, gamma: f64) -> Result<(), MechanismError> {
    if !mu.is_finite() {
        return Err(MechanismError::InvalidPrior(format!(
            "mean must be finite, got {mu}"
        )));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(MechanismError::InvalidPrior(format!(
            "precision must be finite and > 0, got {gamma}"
        )));
    }
    Ok(())
}

/// Unnormalized posterior weights over the score domain given reports and
/// accuracies: `prior(y) * prod_i exp(-q_i |y - reported_i| / m)`.
fn discrete_posterior_weights(reports: &[(u32, f64)], params: &DiscreteModelParams) -> Vec<f64> {
    let m = f64::from(params.max_score());
    let log_weights: Vec<f64> = params
        .scores()
        .map(|y| {
            let mut log_w = params.score_prior()[y as usize].ln();
            for &(reported, q) in reports {
                log_w -= q * f64::from(reported.abs_diff(y)) / m;
            }
            log_w
        })
        .collect();
    let max = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    log_weights.into_iter().map(|lw| (lw - max).exp()).collect()
}

/// The score in the domain minimizing posterior expected squared loss; ties
/// break toward the smaller score. Empty reports reduce to the prior.
fn discrete_loss_argmin(reports: &[(u32, f64)], params: &DiscreteModelParams) -> u32 {
    let weights = discrete_posterior_weights(reports, params);
    let mut best_x = 0u32;
    let mut best_loss = f64::INFINITY;
    for x in params.scores() {
        let loss: f64 = weights
            .iter()
            .enumerate()
            .map(|(y, w)| {
                let d = f64::from(x) - y as f64;
                w * d * d
            })
            .sum();
        if loss < best_loss {
            best_loss = loss;
            best_x = x;
        }
    }
    best_x
}

/// Posterior expected-loss minimizing score for one paper in the discrete
/// model. Reports are `(score, accuracy q)` pairs.
pub fn erm_score_discrete(
    reports: &[(u32, f64)],
    params: &DiscreteModelParams,
) -> Result<u32, MechanismError> {
    if reports.is_empty() {
        return Err(MechanismError::EmptyReports);
    }
    let m = params.max_score();
    for &(score, q) in reports {
        if score > m {
            return Err(ModelError::ScoreOutOfRange { score, max: m }.into());
        }
        if !q.is_finite() || q < 0.0 {
            return Err(MechanismError::InvalidPrior(format!(
                "accuracy must be >= 0, got {q}"
            )));
        }
    }
    Ok(discrete_loss_argmin(reports, params))
}

/// A score model pluggable into the mechanism: how accuracies are estimated
/// from probe pairs, how a paper's score is chosen from reports, and what
/// score the prior alone would choose.
pub trait ScoreModel {
    type Accuracy: Copy + fmt::Debug;

    fn estimate(&self, pairs: &[(f64, f64)]) -> Result<Self::Accuracy, MechanismError>;
    fn erm(&self, reports: &[(f64, Self::Accuracy)]) -> Result<f64, MechanismError>;
    fn prior_score(&self) -> f64;

    /// Input validation hook; the default accepts any finite grades.
    fn validate_grades(&self, _grades: &GradeMatrix) -> Result<(), MechanismError> {
        Ok(())
    }
}

/// Continuous model: Gaussian score prior with mean `mu` and precision `gamma`.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousScoreModel {
    pub mu: f64,
    pub gamma: f64,
}

impl ContinuousScoreModel {
    pub fn new(mu: f64, gamma: f64) -> Result<Self, MechanismError> {
        validate_prior(mu, gamma)?;
        Ok(Self { mu, gamma })
    }
}

impl ScoreModel for ContinuousScoreModel {
    type Accuracy = ContinuousAccuracy;

    fn estimate(&self, pairs: &[(f64, f64)]) -> Result<Self::Accuracy, MechanismError> {
        Ok(estimate_continuous(pairs)?)
    }

    fn erm(&self, reports: &[(f64, Self::Accuracy)]) -> Result<f64, MechanismError> {
        erm_score_continuous(reports, self.mu, self.gamma)
    }

    fn prior_score(&self) -> f64 {
        self.mu
    }
}

/// Discrete model: integer scores with a PMF prior and grid accuracies.
#[derive(Debug, Clone)]
pub struct DiscreteScoreModel {
    params: DiscreteModelParams,
}

impl DiscreteScoreModel {
    pub fn new(params: DiscreteModelParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &DiscreteModelParams {
        &self.params
    }

    fn to_domain(&self, score: f64) -> Result<u32, MechanismError> {
        let m = self.params.max_score();
        if !score.is_finite() || score.fract() != 0.0 || score < 0.0 || score > f64::from(m) {
            return Err(ModelError::ScoreOutOfRange {
                score: score as u32,
                max: m,
            }
            .into());
        }
        Ok(score as u32)
    }
}

impl ScoreModel for DiscreteScoreModel {
    type Accuracy = f64;

    fn estimate(&self, pairs: &[(f64, f64)]) -> Result<Self::Accuracy, MechanismError> {
        let converted: Vec<(u32, u32)> = pairs
            .iter()
            .map(|&(r, t)| Ok((self.to_domain(r)?, self.to_domain(t)?)))
            .collect::<Result<_, MechanismError>>()?;
        Ok(estimate_discrete(&converted, &self.params)?)
    }

    fn erm(&self, reports: &[(f64, Self::Accuracy)]) -> Result<f64, MechanismError> {
        let converted: Vec<(u32, f64)> = reports
            .iter()
            .map(|&(r, q)| Ok((self.to_domain(r)?, q)))
            .collect::<Result<_, MechanismError>>()?;
        Ok(f64::from(erm_score_discrete(&converted, &self.params)?))
    }

    fn prior_score(&self) -> f64 {
        f64::from(discrete_loss_argmin(&[], &self.params))
    }

    fn validate_grades(&self, grades: &GradeMatrix) -> Result<(), MechanismError> {
        Ok(grades.validate_discrete(self.params.max_score())?)
    }
}

/// Per-paper scores, per-grader transfers, and the per-(grader, paper)
/// transfer decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutcome {
    pub scores: BTreeMap<PaperId, f64>,
    pub transfers: BTreeMap<GraderId, f64>,
    pub per_paper_transfers: BTreeMap<(GraderId, PaperId), f64>,
}

impl MechanismOutcome {
    /// CSV serialization: `paper_id,score_given,true_score`.
    pub fn scores_csv(&self, truths: &TrueScores) -> String {
        let mut out = String::from("paper_id,score_given,true_score\n");
        for (&paper, &score) in &self.scores {
            let truth = truths.get(paper).map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!("{paper},{score},{truth}\n"));
        }
        out
    }

    /// CSV serialization: `grader_id,transfer`.
    pub fn transfers_csv(&self) -> String {
        let mut out = String::from("grader_id,transfer\n");
        for (&grader, &transfer) in &self.transfers {
            out.push_str(&format!("{grader},{transfer}\n"));
        }
        out
    }
}

/// Transfer to `excluded` for one paper: realized reward at the full-report
/// score minus the reward at the score chosen without her report. With no
/// co-graders the leave-one-out score falls back to the prior-only choice.
pub fn transfer_for_paper<M: ScoreModel>(
    reports: &[(GraderId, f64, M::Accuracy)],
    model: &M,
    true_score: f64,
    excluded: GraderId,
) -> Result<f64, MechanismError> {
    if !reports.iter().any(|&(g, _, _)| g == excluded) {
        return Err(MechanismError::GraderNotOnPaper(excluded));
    }
    let full: Vec<(f64, M::Accuracy)> = reports.iter().map(|&(_, s, a)| (s, a)).collect();
    let score_full = model.erm(&full)?;
    let rest: Vec<(f64, M::Accuracy)> = reports
        .iter()
        .filter(|&&(g, _, _)| g != excluded)
        .map(|&(_, s, a)| (s, a))
        .collect();
    let score_without = if rest.is_empty() {
        model.prior_score()
    } else {
        model.erm(&rest)?
    };
    Ok(reward(score_full, true_score) - reward(score_without, true_score))
}

/// Runs the full mechanism on a grade matrix: estimates accuracies from the
/// probe entries, scores every paper that has non-probe reports, and pays
/// each grader her summed marginal contribution.
///
/// True scores must cover every probe paper (estimation input) and every
/// scored paper (transfers are settled once all true scores are known).
pub fn run_trupeqa_on_grades<M: ScoreModel>(
    grades: &GradeMatrix,
    truths: &TrueScores,
    model: &M,
) -> Result<MechanismOutcome, MechanismError> {
    model.validate_grades(grades)?;

    let mut accuracies: BTreeMap<GraderId, M::Accuracy> = BTreeMap::new();
    for grader in grades.graders() {
        let pairs: Vec<(f64, f64)> = grades
            .probe_reports(grader)
            .into_iter()
            .map(|(paper, reported)| {
                truths
                    .get(paper)
                    .map(|t| (reported, t))
                    .ok_or(MechanismError::MissingTruth(paper))
            })
            .collect::<Result<_, _>>()?;
        accuracies.insert(grader, model.estimate(&pairs)?);
    }

    let mut scores = BTreeMap::new();
    let mut transfers: BTreeMap<GraderId, f64> =
        grades.graders().into_iter().map(|g| (g, 0.0)).collect();
    let mut per_paper_transfers = BTreeMap::new();

    for (paper, paper_reports) in grades.nonprobe_by_paper() {
        let truth = truths
            .get(paper)
            .ok_or(MechanismError::MissingTruth(paper))?;
        let tagged: Vec<(GraderId, f64, M::Accuracy)> = paper_reports
            .iter()
            .map(|&(g, score)| (g, score, accuracies[&g]))
            .collect();
        let flat: Vec<(f64, M::Accuracy)> = tagged.iter().map(|&(_, s, a)| (s, a)).collect();
        let score = model.erm(&flat)?;
        scores.insert(paper, score);

        for &(grader, _, _) in &tagged {
            let t = transfer_for_paper(&tagged, model, truth, grader)?;
            per_paper_transfers.insert((grader, paper), t);
            *transfers.get_mut(&grader).unwrap() += t;
        }
    }

    Ok(MechanismOutcome {
        scores,
        transfers,
        per_paper_transfers,
    })
}

/// Checks that a grade matrix covers exactly the edges of a plan, with
/// matching probe flags.
pub fn check_coverage(plan: &AssignmentPlan, grades: &GradeMatrix) -> CoverageReport {
    let mut report = CoverageReport::default();
    let mut planned = BTreeMap::new();
    for (g, p, probe) in plan.edges() {
        planned.insert((g, p), probe);
        match grades.get(g, p) {
            None => report.missing.push((g, p)),
            Some(entry) if entry.probe != probe => report.flag_mismatch.push((g, p)),
            Some(_) => {}
        }
    }
    for (g, p, _) in grades.iter() {
        if !planned.contains_key(&(g, p)) {
            report.unexpected.push((g, p));
        }
    }
    report
}

/// [`run_trupeqa_on_grades`] preceded by a plan coverage check.
pub fn run_trupeqa<M: ScoreModel>(
    plan: &AssignmentPlan,
    grades: &GradeMatrix,
    truths: &TrueScores,
    model: &M,
) -> Result<MechanismOutcome, MechanismError> {
    let coverage = check_coverage(plan, grades);
    if !coverage.is_complete() {
        return Err(MechanismError::Coverage(coverage));
    }
    run_trupeqa_on_grades(grades, truths, model)
}
