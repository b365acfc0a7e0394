//! Statistical incentive audits.
//!
//! The participation audit checks that truthful grading earns every grader
//! a non-negative expected transfer. The deviation audit compares one
//! designated grader's mean transfer under truthful reporting against fixed
//! deviation strategies on paired worlds: same worlds, same co-grader
//! reports, only the designated grader's non-probe reports change.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::mean_and_se;
use super::world::{apply_behavior, draw_graders, draw_observations, draw_truths, GraderBehavior};
use super::{GenerationParams, SimulationError};
use crate::assignment::build_assignment;
use crate::mechanism::{run_trupeqa, ContinuousScoreModel};
use crate::model::{GradeMatrix, GraderId, PaperId, TrueScores};
use crate::seed::{derive_seed, tag};

/// Configuration of one audit: world shape, priors, and replication count.
#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub n: usize,
    pub probe_count: usize,
    pub k: usize,
    pub gen: GenerationParams,
    pub prior_mu: f64,
    pub prior_gamma: f64,
    pub replications: usize,
    pub master_seed: u64,
}

impl AuditConfig {
    fn validate(&self) -> Result<(), SimulationError> {
        self.gen.validate()?;
        if self.replications < 2 {
            return Err(SimulationError::InvalidConfig(format!(
                "audits need at least 2 replications, got {}",
                self.replications
            )));
        }
        Ok(())
    }
}

/// Deviations applied to the designated grader's non-probe reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationStrategy {
    /// Identity deviation; useful as a null check.
    Truthful,
    /// Always report the public prior mean.
    ConstantPrior,
    /// Cap each report at the grader's own true score.
    OwnScore,
    /// Report uniform noise over the central 95% prior mass.
    UniformNoise,
}

impl DeviationStrategy {
    pub const ALL: [DeviationStrategy; 4] = [
        DeviationStrategy::Truthful,
        DeviationStrategy::ConstantPrior,
        DeviationStrategy::OwnScore,
        DeviationStrategy::UniformNoise,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DeviationStrategy::Truthful => "truthful",
            DeviationStrategy::ConstantPrior => "constant-mu",
            DeviationStrategy::OwnScore => "own-score",
            DeviationStrategy::UniformNoise => "uniform-noise",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Participation audit result.
#[derive(Debug, Clone)]
pub struct EpirReport {
    pub replications: usize,
    /// Mean transfer and its standard error per grader id.
    pub per_grader: Vec<(f64, f64)>,
    pub population_mean: f64,
    pub population_se: f64,
    /// Smallest per-grader slack `mean + 3se`; non-negative on pass.
    pub min_grader_slack: f64,
    pub pass: bool,
}

/// Deviation audit result for one strategy.
#[derive(Debug, Clone)]
pub struct EiicReport {
    pub strategy: DeviationStrategy,
    pub replications: usize,
    pub truthful_mean: f64,
    pub truthful_se: f64,
    pub deviation_mean: f64,
    pub deviation_se: f64,
    /// `sqrt(truthful_se^2 + deviation_se^2)`.
    pub combined_se: f64,
    pub paired_diff_mean: f64,
    pub paired_diff_se: f64,
    pub pass: bool,
}

struct AuditWorld {
    plan: crate::assignment::AssignmentPlan,
    truths: TrueScores,
    truthful: GradeMatrix,
}

fn build_audit_world(cfg: &AuditConfig, replication: usize) -> Result<AuditWorld, SimulationError> {
    let r = replication as u64;
    let plan = build_assignment(
        cfg.n,
        cfg.probe_count,
        cfg.k,
        derive_seed(cfg.master_seed, &[tag::PLAN, r]),
    )?;
    let mut truth_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[tag::TRUTHS, r]));
    let truths = draw_truths(cfg.n, &cfg.gen, &mut truth_rng);
    let mut world_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[tag::WORLD, r, 0]));
    let graders = draw_graders(cfg.n, &cfg.gen, &mut world_rng);
    let observations = draw_observations(&plan, &truths, &graders, &mut world_rng);
    let truthful = apply_behavior(&plan, &observations, &truths, GraderBehavior::Truthful)?;
    Ok(AuditWorld {
        plan,
        truths,
        truthful,
    })
}

/// Runs the participation audit: per-grader and population mean transfers
/// under truthful reporting.
pub fn run_epir_audit(cfg: &AuditConfig, jobs: usize) -> Result<EpirReport, SimulationError> {
    cfg.validate()?;
    let model = ContinuousScoreModel::new(cfg.prior_mu, cfg.prior_gamma)?;

    let run_all = || -> Result<Vec<Vec<f64>>, SimulationError> {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let world = build_audit_world(cfg, r)?;
                let outcome = run_trupeqa(&world.plan, &world.truthful, &world.truths, &model)?;
                Ok((0..cfg.n)
                    .map(|g| outcome.transfers[&GraderId(g)])
                    .collect())
            })
            .collect()
    };
    let transfers = with_pool(jobs, run_all)?;

    let per_grader: Vec<(f64, f64)> = (0..cfg.n)
        .map(|g| {
            let values: Vec<f64> = transfers.iter().map(|row| row[g]).collect();
            mean_and_se(&values)
        })
        .collect();
    let replication_means: Vec<f64> = transfers
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    let (population_mean, population_se) = mean_and_se(&replication_means);
    let min_grader_slack = per_grader
        .iter()
        .map(|&(mean, se)| mean + 3.0 * se)
        .fold(f64::INFINITY, f64::min);
    let pass = min_grader_slack >= 0.0 && population_mean > 0.0;
    Ok(EpirReport {
        replications: cfg.replications,
        per_grader,
        population_mean,
        population_se,
        min_grader_slack,
        pass,
    })
}

fn deviate(
    cfg: &AuditConfig,
    world: &AuditWorld,
    designated: GraderId,
    strategy: DeviationStrategy,
    replication: usize,
) -> Result<GradeMatrix, SimulationError> {
    let mut deviated = world.truthful.clone();
    let papers: Vec<PaperId> = world
        .plan
        .grader_papers(designated)
        .map(|papers| papers.nonprobes.clone())
        .unwrap_or_default();
    match strategy {
        DeviationStrategy::Truthful => {}
        DeviationStrategy::ConstantPrior => {
            for paper in papers {
                deviated.insert(designated, paper, cfg.prior_mu, false);
            }
        }
        DeviationStrategy::OwnScore => {
            let own = world
                .truths
                .get(PaperId(designated.0))
                .ok_or(SimulationError::MissingOwnScore(designated))?;
            for paper in papers {
                let observed = world.truthful.get(designated, paper).unwrap().score;
                deviated.insert(designated, paper, observed.min(own), false);
            }
        }
        DeviationStrategy::UniformNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.master_seed,
                &[tag::DEVIATION, replication as u64],
            ));
            let half_width = 2.0 / cfg.prior_gamma.sqrt();
            for paper in papers {
                let noise = rng.random_range(-half_width..=half_width);
                deviated.insert(designated, paper, cfg.prior_mu + noise, false);
            }
        }
    }
    Ok(deviated)
}

/// Runs the deviation audit for one strategy on paired worlds and reports
/// the designated grader's mean transfers under both behaviors.
pub fn run_eiic_audit(
    cfg: &AuditConfig,
    strategy: DeviationStrategy,
    designated: GraderId,
    jobs: usize,
) -> Result<EiicReport, SimulationError> {
    cfg.validate()?;
    if designated.0 >= cfg.n {
        return Err(SimulationError::InvalidConfig(format!(
            "designated grader {designated} out of range for n = {}",
            cfg.n
        )));
    }
    let model = ContinuousScoreModel::new(cfg.prior_mu, cfg.prior_gamma)?;

    let run_all = || -> Result<Vec<(f64, f64)>, SimulationError> {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let world = build_audit_world(cfg, r)?;
                let truthful_outcome =
                    run_trupeqa(&world.plan, &world.truthful, &world.truths, &model)?;
                let deviated = deviate(cfg, &world, designated, strategy, r)?;
                let deviated_outcome = run_trupeqa(&world.plan, &deviated, &world.truths, &model)?;
                Ok((
                    truthful_outcome.transfers[&designated],
                    deviated_outcome.transfers[&designated],
                ))
            })
            .collect()
    };
    let pairs = with_pool(jobs, run_all)?;

    let truthful: Vec<f64> = pairs.iter().map(|&(t, _)| t).collect();
    let deviated: Vec<f64> = pairs.iter().map(|&(_, d)| d).collect();
    let diffs: Vec<f64> = pairs.iter().map(|&(t, d)| t - d).collect();
    let (truthful_mean, truthful_se) = mean_and_se(&truthful);
    let (deviation_mean, deviation_se) = mean_and_se(&deviated);
    let (paired_diff_mean, paired_diff_se) = mean_and_se(&diffs);
    let combined_se = (truthful_se * truthful_se + deviation_se * deviation_se).sqrt();
    let pass = truthful_mean >= deviation_mean - 3.0 * combined_se;
    Ok(EiicReport {
        strategy,
        replications: cfg.replications,
        truthful_mean,
        truthful_se,
        deviation_mean,
        deviation_se,
        combined_se,
        paired_diff_mean,
        paired_diff_se,
        pass,
    })
}

fn with_pool<T, F>(jobs: usize, f: F) -> Result<T, SimulationError>
where
    T: Send,
    F: FnOnce() -> Result<T, SimulationError> + Send,
{
    if jobs == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| SimulationError::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(f)
    }
}
