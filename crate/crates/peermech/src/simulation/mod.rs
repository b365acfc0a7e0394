//! Seeded Monte-Carlo experiment harness.
//!
//! A run sweeps replications of synthetic worlds through a set of
//! mechanisms under a paired design: within one replication every mechanism
//! sees the same world and the same reports. Replications are independent
//! tasks with derived seeds, so results are byte-identical for any worker
//! count.

mod audit;
mod metrics;
mod world;

pub use audit::{
    run_eiic_audit, run_epir_audit, AuditConfig, DeviationStrategy, EiicReport, EpirReport,
};
pub use metrics::{compute_metrics, compute_metrics_discrete, mean_and_ci, mean_and_se, Metrics};
pub use world::{
    apply_behavior, draw_graders, draw_observations, draw_truths, generate_world, GraderBehavior,
    World,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::{build_assignment, AssignmentError};
use crate::baselines::{gibbs_continuous, mean_scores, median_scores, BaselineError, GibbsConfig};
use crate::mechanism::{run_trupeqa, ContinuousScoreModel, MechanismError};
use crate::model::{ContinuousModelParams, GraderId, ModelError, PaperId};
use crate::seed::{derive_seed, tag};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("no scores to evaluate")]
    EmptyScores,
    #[error("missing true score for paper {0}")]
    MissingTruth(PaperId),
    #[error("strategic behavior needs the own true score of grader {0}")]
    MissingOwnScore(GraderId),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameters of the synthetic generative model. The Gamma rate follows
/// from the shape and the target mean reliability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationParams {
    pub mu: f64,
    pub gamma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub mean_reliability: f64,
}

impl GenerationParams {
    pub fn beta(&self) -> f64 {
        self.alpha / self.mean_reliability
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        for (name, value) in [
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("mean_reliability", self.mean_reliability),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimulationError::InvalidConfig(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if !self.mu.is_finite() {
            return Err(SimulationError::InvalidConfig(format!(
                "mu must be finite, got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// The mechanisms the harness can run head-to-head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mechanism {
    Trupeqa,
    Mean,
    Median,
    Gibbs,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Trupeqa,
        Mechanism::Mean,
        Mechanism::Median,
        Mechanism::Gibbs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Trupeqa => "trupeqa",
            Mechanism::Mean => "mean",
            Mechanism::Median => "median",
            Mechanism::Gibbs => "gibbs",
        }
    }
}

/// Full configuration of one experiment cell.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n: usize,
    pub probe_count: usize,
    pub k: usize,
    pub gen: GenerationParams,
    /// Score prior used by the mechanisms; may differ from the generation
    /// prior in mismatched-prior experiments.
    pub prior_mu: f64,
    pub prior_gamma: f64,
    pub behavior: GraderBehavior,
    pub regrade_threshold: f64,
    pub trials_outer: usize,
    pub trials_inner: usize,
    pub master_seed: u64,
    pub gibbs_iterations: usize,
    pub gibbs_burn_in: usize,
    /// Off by default: feed the (possibly manipulated) reported matrix to
    /// the mechanism instead of the truthful one.
    pub trupeqa_uses_reported: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        self.gen.validate()?;
        if self.trials_outer < 1 || self.trials_inner < 1 {
            return Err(SimulationError::InvalidConfig(format!(
                "trial counts must be >= 1, got {}x{}",
                self.trials_outer, self.trials_inner
            )));
        }
        if !(self.regrade_threshold.is_finite() && self.regrade_threshold > 0.0) {
            return Err(SimulationError::InvalidConfig(format!(
                "regrade threshold must be > 0, got {}",
                self.regrade_threshold
            )));
        }
        if !self.prior_mu.is_finite() || !(self.prior_gamma.is_finite() && self.prior_gamma > 0.0) {
            return Err(SimulationError::InvalidConfig(format!(
                "mechanism prior must have finite mean and positive precision, got ({}, {})",
                self.prior_mu, self.prior_gamma
            )));
        }
        if self.gibbs_burn_in >= self.gibbs_iterations {
            return Err(SimulationError::InvalidConfig(format!(
                "gibbs burn-in {} must be below iterations {}",
                self.gibbs_burn_in, self.gibbs_iterations
            )));
        }
        Ok(())
    }

    pub fn replications(&self) -> usize {
        self.trials_outer * self.trials_inner
    }
}

/// Metrics of one mechanism in one replication, plus transfer statistics
/// where the mechanism pays transfers.
#[derive(Debug, Clone, Copy)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub metrics: Metrics,
    pub transfer_min: Option<f64>,
    pub transfer_mean: Option<f64>,
}

/// Aggregated metrics of one mechanism across replications with 95%
/// normal-approximation half-widths.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub mechanism: &'static str,
    pub rmse: f64,
    pub regrade_fraction: f64,
    pub ci_halfwidth_rmse: f64,
    pub ci_halfwidth_frac: f64,
    pub replications: usize,
    pub master_seed: u64,
}

/// Everything the harness produced for one mechanism.
#[derive(Debug, Clone)]
pub struct MechanismResult {
    pub mechanism: Mechanism,
    pub replications: Vec<ReplicationRecord>,
    pub report: MetricsReport,
}

struct ReplicationOutput {
    per_mechanism: Vec<(Metrics, Option<f64>, Option<f64>)>,
}

fn run_replication(
    cfg: &ExperimentConfig,
    mechanisms: &[Mechanism],
    replication: usize,
) -> Result<ReplicationOutput, SimulationError> {
    let outer = replication / cfg.trials_inner;
    let inner = replication % cfg.trials_inner;
    let master = cfg.master_seed;

    let plan = build_assignment(
        cfg.n,
        cfg.probe_count,
        cfg.k,
        derive_seed(master, &[tag::PLAN, outer as u64]),
    )?;
    let mut truth_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(master, &[tag::TRUTHS, outer as u64]));
    let truths = draw_truths(cfg.n, &cfg.gen, &mut truth_rng);
    let mut world_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        master,
        &[tag::WORLD, outer as u64, inner as u64],
    ));
    let graders = draw_graders(cfg.n, &cfg.gen, &mut world_rng);
    let observations = draw_observations(&plan, &truths, &graders, &mut world_rng);

    let truthful = apply_behavior(&plan, &observations, &truths, GraderBehavior::Truthful)?;
    let reported = apply_behavior(&plan, &observations, &truths, cfg.behavior)?;

    let mut per_mechanism = Vec::with_capacity(mechanisms.len());
    for mechanism in mechanisms {
        let entry = match mechanism {
            Mechanism::Trupeqa => {
                let input = if cfg.trupeqa_uses_reported {
                    &reported
                } else {
                    &truthful
                };
                let model = ContinuousScoreModel::new(cfg.prior_mu, cfg.prior_gamma)?;
                let outcome = run_trupeqa(&plan, input, &truths, &model)?;
                let m = compute_metrics(&outcome.scores, &truths, cfg.regrade_threshold)?;
                let values: Vec<f64> = outcome.transfers.values().copied().collect();
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                (m, Some(min), Some(mean))
            }
            Mechanism::Mean => {
                let scores = mean_scores(&reported)?;
                (
                    compute_metrics(&scores, &truths, cfg.regrade_threshold)?,
                    None,
                    None,
                )
            }
            Mechanism::Median => {
                let scores = median_scores(&reported)?;
                (
                    compute_metrics(&scores, &truths, cfg.regrade_threshold)?,
                    None,
                    None,
                )
            }
            Mechanism::Gibbs => {
                let params = ContinuousModelParams::new(
                    cfg.prior_mu,
                    cfg.prior_gamma,
                    cfg.gen.eta,
                    cfg.gen.alpha,
                    cfg.gen.beta(),
                )?;
                let gibbs_cfg = GibbsConfig::new(
                    cfg.gibbs_iterations,
                    cfg.gibbs_burn_in,
                    derive_seed(master, &[tag::GIBBS, outer as u64, inner as u64]),
                )?;
                let scores = gibbs_continuous(&reported, &params, &gibbs_cfg)?;
                (
                    compute_metrics(&scores, &truths, cfg.regrade_threshold)?,
                    None,
                    None,
                )
            }
        };
        per_mechanism.push(entry);
    }
    Ok(ReplicationOutput { per_mechanism })
}

/// Runs every requested mechanism over all replications. `jobs = 0` uses
/// the ambient thread pool; any positive value bounds the worker count.
/// Output is independent of the worker count.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mechanisms: &[Mechanism],
    jobs: usize,
) -> Result<Vec<MechanismResult>, SimulationError> {
    cfg.validate()?;
    let total = cfg.replications();

    let run_all = || -> Result<Vec<ReplicationOutput>, SimulationError> {
        (0..total)
            .into_par_iter()
            .map(|r| run_replication(cfg, mechanisms, r))
            .collect()
    };
    let outputs = if jobs == 0 {
        run_all()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| SimulationError::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(run_all)?
    };

    let results = mechanisms
        .iter()
        .enumerate()
        .map(|(idx, &mechanism)| {
            let replications: Vec<ReplicationRecord> = outputs
                .iter()
                .enumerate()
                .map(|(r, out)| {
                    let (metrics, transfer_min, transfer_mean) = out.per_mechanism[idx];
                    ReplicationRecord {
                        replication: r,
                        metrics,
                        transfer_min,
                        transfer_mean,
                    }
                })
                .collect();
            let rmses: Vec<f64> = replications.iter().map(|r| r.metrics.rmse).collect();
            let fracs: Vec<f64> = replications
                .iter()
                .map(|r| r.metrics.regrade_fraction)
                .collect();
            let (rmse, ci_rmse) = mean_and_ci(&rmses);
            let (frac, ci_frac) = mean_and_ci(&fracs);
            MechanismResult {
                mechanism,
                replications,
                report: MetricsReport {
                    mechanism: mechanism.name(),
                    rmse,
                    regrade_fraction: frac,
                    ci_halfwidth_rmse: ci_rmse,
                    ci_halfwidth_frac: ci_frac,
                    replications: total,
                    master_seed: cfg.master_seed,
                },
            }
        })
        .collect();
    Ok(results)
}

/// Per-replication dump:
/// `mechanism,replication,rmse,regrade_fraction,total_transfer_min,total_transfer_mean`.
/// Mechanisms without transfers leave the transfer fields empty.
pub fn replication_csv(results: &[MechanismResult]) -> String {
    let mut out = String::from(
        "mechanism,replication,rmse,regrade_fraction,total_transfer_min,total_transfer_mean\n",
    );
    for result in results {
        for rec in &result.replications {
            let min = rec.transfer_min.map(|v| v.to_string()).unwrap_or_default();
            let mean = rec.transfer_mean.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                result.mechanism.name(),
                rec.replication,
                rec.metrics.rmse,
                rec.metrics.regrade_fraction,
                min,
                mean,
            ));
        }
    }
    out
}

/// One row of the aggregate sweep CSV.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub mechanism: &'static str,
    pub mean_reliability: f64,
    pub eta: f64,
    pub rmse: f64,
    pub rmse_ci: f64,
    pub regrade_fraction: f64,
    pub frac_ci: f64,
}

/// Aggregate sweep CSV:
/// `mechanism,mean_reliability,eta,rmse,rmse_ci,regrade_fraction,frac_ci`.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out =
        String::from("mechanism,mean_reliability,eta,rmse,rmse_ci,regrade_fraction,frac_ci\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.mechanism,
            row.mean_reliability,
            row.eta,
            row.rmse,
            row.rmse_ci,
            row.regrade_fraction,
            row.frac_ci,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            n: 20,
            probe_count: 5,
            k: 4,
            gen: GenerationParams {
                mu: 1.0,
                gamma: 16.0,
                eta: 400.0,
                alpha: 25.0,
                mean_reliability: 2500.0,
            },
            prior_mu: 1.0,
            prior_gamma: 16.0,
            behavior: GraderBehavior::Truthful,
            regrade_threshold: 0.005,
            trials_outer: 2,
            trials_inner: 2,
            master_seed: seed,
            gibbs_iterations: 200,
            gibbs_burn_in: 50,
            trupeqa_uses_reported: false,
        }
    }

    #[test]
    fn experiment_is_deterministic_across_job_counts() {
        let cfg = desk_config(42);
        let a = run_experiment(&cfg, &Mechanism::ALL, 1).unwrap();
        let b = run_experiment(&cfg, &Mechanism::ALL, 3).unwrap();
        assert_eq!(replication_csv(&a), replication_csv(&b));
        let c = run_experiment(&cfg, &Mechanism::ALL, 0).unwrap();
        assert_eq!(replication_csv(&a), replication_csv(&c));
    }

    #[test]
    fn paired_design_keeps_baselines_fixed_under_prior_changes() {
        let cfg = desk_config(7);
        let mut mismatched = desk_config(7);
        mismatched.prior_mu = 1.25;
        let a = run_experiment(&cfg, &[Mechanism::Mean, Mechanism::Median], 1).unwrap();
        let b = run_experiment(&mismatched, &[Mechanism::Mean, Mechanism::Median], 1).unwrap();
        assert_eq!(replication_csv(&a), replication_csv(&b));

        let ta = run_experiment(&cfg, &[Mechanism::Trupeqa], 1).unwrap();
        let tb = run_experiment(&mismatched, &[Mechanism::Trupeqa], 1).unwrap();
        assert_ne!(replication_csv(&ta), replication_csv(&tb));
    }

    #[test]
    fn aggregate_matches_dump_recomputation() {
        let cfg = desk_config(9);
        let results = run_experiment(&cfg, &[Mechanism::Mean], 1).unwrap();
        let csv = replication_csv(&results);
        let mut values = Vec::new();
        for line in csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0], "mean");
            values.push(fields[2].parse::<f64>().unwrap());
        }
        let recomputed = values.iter().sum::<f64>() / values.len() as f64;
        assert!((recomputed - results[0].report.rmse).abs() < 1e-12);
    }

    #[test]
    fn trivial_world_yields_zero_rmse() {
        // Degenerate generation: essentially no bias and enormous reliability.
        let mut cfg = desk_config(3);
        cfg.gen.eta = 1e12;
        cfg.gen.mean_reliability = 1e12;
        cfg.gen.alpha = 1e4;
        let results = run_experiment(&cfg, &Mechanism::ALL, 1).unwrap();
        for result in &results {
            assert!(
                result.report.rmse < 2e-4,
                "{}: rmse {}",
                result.report.mechanism,
                result.report.rmse
            );
        }
    }

    #[test]
    fn strategic_behavior_hurts_baselines_not_trupeqa() {
        let mut cfg = desk_config(11);
        cfg.behavior = GraderBehavior::Strategic;
        cfg.trials_outer = 3;
        cfg.trials_inner = 3;
        let results = run_experiment(&cfg, &[Mechanism::Trupeqa, Mechanism::Mean], 1).unwrap();
        let trupeqa = &results[0].report;
        let mean = &results[1].report;
        assert!(trupeqa.rmse < mean.rmse);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = desk_config(1);
        cfg.trials_outer = 0;
        assert!(run_experiment(&cfg, &Mechanism::ALL, 1).is_err());
        let mut cfg = desk_config(1);
        cfg.regrade_threshold = 0.0;
        assert!(run_experiment(&cfg, &Mechanism::ALL, 1).is_err());
        let mut cfg = desk_config(1);
        cfg.gen.mean_reliability = -5.0;
        assert!(run_experiment(&cfg, &Mechanism::ALL, 1).is_err());
        let mut cfg = desk_config(1);
        cfg.gibbs_burn_in = 500;
        assert!(run_experiment(&cfg, &Mechanism::ALL, 1).is_err());
    }
}
