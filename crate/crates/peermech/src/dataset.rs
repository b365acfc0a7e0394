//! Ingestion of discrete-score peer-grading datasets.
//!
//! Input is a CSV of `paper_id,grader_id,peer_grade,true_grade,order` rows
//! with raw grades in 1..=5; loading shifts them to 0..=4. There is no
//! common probe set: each grader's earliest-checked papers (by the `order`
//! column, ties by paper id) become her personal probes, so a paper can be
//! probe for one grader and non-probe for another. Papers are scored from
//! non-probe reports only.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assignment::GraderPapers;
use crate::baselines::{gibbs_discrete, mean_scores, median_scores, BaselineError, GibbsConfig};
use crate::mechanism::{run_trupeqa_on_grades, DiscreteScoreModel, MechanismError};
use crate::model::{
    discrete_error_pmf, DiscreteModelParams, GradeMatrix, GraderId, ModelError, PaperId, TrueScores,
};
use crate::seed::{derive_seed, tag};
use crate::simulation::{compute_metrics_discrete, mean_and_ci, SimulationError};

/// Maximum shifted score of the 1..=5 grade scale.
pub const DATASET_MAX_SCORE: u32 = 4;

/// Default probe count per grader: her first checked papers.
pub const DEFAULT_PROBES_PER_GRADER: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// One grading event in raw (1..=5) grade space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetRecord {
    pub paper_id: usize,
    pub grader_id: usize,
    pub peer_grade: u32,
    pub true_grade: u32,
    pub order: u32,
}

/// Probe/non-probe structure induced by the per-grader first-checked rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPlan {
    pub per_grader: BTreeMap<GraderId, GraderPapers>,
    pub per_paper: BTreeMap<PaperId, BTreeSet<GraderId>>,
}

/// A loaded dataset: the raw records plus the derived structures.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub plan: DatasetPlan,
    pub grades: GradeMatrix,
    pub truths: TrueScores,
}

const HEADER: &str = "paper_id,grader_id,peer_grade,true_grade,order";

/// Loads a dataset file. See [`load_dataset_from_str`].
pub fn load_dataset(path: &Path, probes_per_grader: usize) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_dataset_from_str(&text, probes_per_grader)
}

/// Parses CSV text and derives the probe structure: per grader, the first
/// `probes_per_grader` papers by `(order, paper_id)` are probes, the rest
/// non-probe. Graders with no more than `probes_per_grader` papers
/// contribute estimation data only.
pub fn load_dataset_from_str(
    text: &str,
    probes_per_grader: usize,
) -> Result<Dataset, DatasetError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == HEADER => {}
        Some((_, header)) => {
            return Err(DatasetError::Parse {
                line: 1,
                message: format!("expected header `{HEADER}`, got `{header}`"),
            })
        }
        None => return Err(DatasetError::Empty),
    }

    let mut records = Vec::new();
    let mut seen_edges = BTreeSet::new();
    let mut true_by_paper: BTreeMap<usize, (u32, usize)> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let trimmed = raw.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse_usize = |name: &str, value: &str| {
            value.parse::<usize>().map_err(|e| DatasetError::Parse {
                line,
                message: format!("bad {name} `{value}`: {e}"),
            })
        };
        let parse_u32 = |name: &str, value: &str| {
            value.parse::<u32>().map_err(|e| DatasetError::Parse {
                line,
                message: format!("bad {name} `{value}`: {e}"),
            })
        };
        let record = DatasetRecord {
            paper_id: parse_usize("paper_id", fields[0])?,
            grader_id: parse_usize("grader_id", fields[1])?,
            peer_grade: parse_u32("peer_grade", fields[2])?,
            true_grade: parse_u32("true_grade", fields[3])?,
            order: parse_u32("order", fields[4])?,
        };
        for (name, grade) in [
            ("peer_grade", record.peer_grade),
            ("true_grade", record.true_grade),
        ] {
            if !(1..=5).contains(&grade) {
                return Err(DatasetError::Parse {
                    line,
                    message: format!("{name} {grade} outside 1..=5"),
                });
            }
        }
        if !seen_edges.insert((record.grader_id, record.paper_id)) {
            return Err(DatasetError::Parse {
                line,
                message: format!(
                    "duplicate report by grader {} on paper {}",
                    record.grader_id, record.paper_id
                ),
            });
        }
        match true_by_paper.get(&record.paper_id) {
            Some(&(grade, first_line)) if grade != record.true_grade => {
                return Err(DatasetError::Parse {
                    line,
                    message: format!(
                        "true grade {} for paper {} contradicts {} from line {}",
                        record.true_grade, record.paper_id, grade, first_line
                    ),
                });
            }
            Some(_) => {}
            None => {
                true_by_paper.insert(record.paper_id, (record.true_grade, line));
            }
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }

    let mut truths = TrueScores::new();
    for (&paper, &(grade, _)) in &true_by_paper {
        truths.insert(PaperId(paper), f64::from(grade - 1));
    }

    let mut by_grader: BTreeMap<usize, Vec<&DatasetRecord>> = BTreeMap::new();
    for record in &records {
        by_grader.entry(record.grader_id).or_default().push(record);
    }

    let mut grades = GradeMatrix::new();
    let mut per_grader = BTreeMap::new();
    let mut per_paper: BTreeMap<PaperId, BTreeSet<GraderId>> = BTreeMap::new();
    for (grader, mut rows) in by_grader {
        rows.sort_by_key(|r| (r.order, r.paper_id));
        let g = GraderId(grader);
        let mut probes = Vec::new();
        let mut nonprobes = Vec::new();
        for (idx, row) in rows.iter().enumerate() {
            let p = PaperId(row.paper_id);
            let probe = idx < probes_per_grader;
            grades.insert(g, p, f64::from(row.peer_grade - 1), probe);
            per_paper.entry(p).or_default().insert(g);
            if probe {
                probes.push(p);
            } else {
                nonprobes.push(p);
            }
        }
        probes.sort_unstable();
        nonprobes.sort_unstable();
        per_grader.insert(g, GraderPapers { probes, nonprobes });
    }

    Ok(Dataset {
        records,
        plan: DatasetPlan {
            per_grader,
            per_paper,
        },
        grades,
        truths,
    })
}

/// Serializes records back to the input CSV format.
pub fn records_to_csv(records: &[DatasetRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.paper_id, r.grader_id, r.peer_grade, r.true_grade, r.order
        ));
    }
    out
}

/// Empirical PMF of the true grades over `0..=m`.
pub fn empirical_prior(truths: &TrueScores, m: u32) -> Result<Vec<f64>, DatasetError> {
    if truths.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut counts = vec![0usize; m as usize + 1];
    for (_, score) in truths.iter() {
        let value = score as usize;
        if score.fract() != 0.0 || value > m as usize {
            return Err(ModelError::ScoreOutOfRange {
                score: score as u32,
                max: m,
            }
            .into());
        }
        counts[value] += 1;
    }
    let total = truths.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Synthetic stand-in with the shape of the real course data: 60 papers,
/// 1347 grades, variable per-grader loads, reports drawn from the
/// exponential-distance error model. Deterministic given the seed.
pub fn synthetic_dataset(seed: u64) -> Vec<DatasetRecord> {
    const PAPERS: usize = 60;
    const GRADERS: usize = 75;
    const TOTAL_GRADES: usize = 1347;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Start from a near-even split that sums exactly, then shuffle load
    // between graders to make it ragged.
    let base = TOTAL_GRADES / GRADERS;
    let mut loads = vec![base; GRADERS];
    for load in loads.iter_mut().take(TOTAL_GRADES - base * GRADERS) {
        *load += 1;
    }
    for _ in 0..400 {
        let from = rng.random_range(0..GRADERS);
        let to = rng.random_range(0..GRADERS);
        if from != to && loads[from] > 7 && loads[to] < PAPERS {
            loads[from] -= 1;
            loads[to] += 1;
        }
    }
    debug_assert_eq!(loads.iter().sum::<usize>(), TOTAL_GRADES);

    // Grade-heavy prior typical of coursework.
    let prior = [0.05, 0.10, 0.20, 0.35, 0.30];
    let mut truths = Vec::with_capacity(PAPERS);
    for _ in 0..PAPERS {
        truths.push(sample_pmf(&prior, &mut rng) as u32);
    }

    let mut records = Vec::with_capacity(TOTAL_GRADES);
    for (grader, &load) in loads.iter().enumerate() {
        let accuracy = rng.random_range(1.0..8.0);
        let mut papers: Vec<usize> = (0..PAPERS).collect();
        papers.shuffle(&mut rng);
        papers.truncate(load);
        for (order, &paper) in papers.iter().enumerate() {
            let truth = truths[paper];
            let pmf: Vec<f64> = (0..=DATASET_MAX_SCORE)
                .map(|z| discrete_error_pmf(z, truth, accuracy, DATASET_MAX_SCORE).unwrap())
                .collect();
            let report = sample_pmf(&pmf, &mut rng) as u32;
            records.push(DatasetRecord {
                paper_id: paper,
                grader_id: grader,
                peer_grade: report + 1,
                true_grade: truth + 1,
                order: order as u32 + 1,
            });
        }
    }
    records.sort_by_key(|r| (r.grader_id, r.order, r.paper_id));
    records
}

fn sample_pmf<R: Rng>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    pmf.len() - 1
}

/// Which score prior the discrete mechanisms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    Uniform,
    Empirical,
}

impl PriorMode {
    pub fn name(&self) -> &'static str {
        match self {
            PriorMode::Uniform => "uniform",
            PriorMode::Empirical => "empirical",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(PriorMode::Uniform),
            "empirical" => Some(PriorMode::Empirical),
            _ => None,
        }
    }
}

/// One mechanism's metrics on the dataset. CI fields are `None` for the
/// deterministic mean/median mechanisms.
#[derive(Debug, Clone)]
pub struct DatasetRow {
    pub mechanism: &'static str,
    pub rmse: f64,
    pub regrade_fraction: f64,
    pub rmse_ci: Option<f64>,
    pub frac_ci: Option<f64>,
}

/// Runs all four mechanisms on a loaded dataset. The randomized Gibbs
/// mechanism is re-run `reruns` times with derived seeds and reported with
/// 95% half-widths; the mechanism pipeline itself is deterministic, so its
/// half-widths are zero by construction.
pub fn run_dataset_experiment(
    dataset: &Dataset,
    prior_mode: PriorMode,
    reruns: usize,
    master_seed: u64,
    gibbs_iterations: usize,
    gibbs_burn_in: usize,
) -> Result<Vec<DatasetRow>, DatasetError> {
    if reruns == 0 {
        return Err(DatasetError::Simulation(SimulationError::InvalidConfig(
            "need at least one rerun".to_string(),
        )));
    }
    let params = match prior_mode {
        PriorMode::Uniform => DiscreteModelParams::uniform(DATASET_MAX_SCORE)?,
        PriorMode::Empirical => DiscreteModelParams::with_prior(
            DATASET_MAX_SCORE,
            empirical_prior(&dataset.truths, DATASET_MAX_SCORE)?,
        )?,
    };

    let mut rows = Vec::with_capacity(4);

    let model = DiscreteScoreModel::new(params.clone());
    let outcome = run_trupeqa_on_grades(&dataset.grades, &dataset.truths, &model)?;
    let trupeqa_metrics = compute_metrics_discrete(&outcome.scores, &dataset.truths)?;
    rows.push(DatasetRow {
        mechanism: "trupeqa",
        rmse: trupeqa_metrics.rmse,
        regrade_fraction: trupeqa_metrics.regrade_fraction,
        rmse_ci: Some(0.0),
        frac_ci: Some(0.0),
    });

    let mean = compute_metrics_discrete(&mean_scores(&dataset.grades)?, &dataset.truths)?;
    rows.push(DatasetRow {
        mechanism: "mean",
        rmse: mean.rmse,
        regrade_fraction: mean.regrade_fraction,
        rmse_ci: None,
        frac_ci: None,
    });
    let median = compute_metrics_discrete(&median_scores(&dataset.grades)?, &dataset.truths)?;
    rows.push(DatasetRow {
        mechanism: "median",
        rmse: median.rmse,
        regrade_fraction: median.regrade_fraction,
        rmse_ci: None,
        frac_ci: None,
    });

    let mut gibbs_rmse = Vec::with_capacity(reruns);
    let mut gibbs_frac = Vec::with_capacity(reruns);
    for rerun in 0..reruns {
        let cfg = GibbsConfig::new(
            gibbs_iterations,
            gibbs_burn_in,
            derive_seed(master_seed, &[tag::DATASET, tag::GIBBS, rerun as u64]),
        )?;
        let scores = gibbs_discrete(&dataset.grades, &params, &cfg)?;
        let as_f64: BTreeMap<PaperId, f64> =
            scores.into_iter().map(|(p, s)| (p, f64::from(s))).collect();
        let metrics = compute_metrics_discrete(&as_f64, &dataset.truths)?;
        gibbs_rmse.push(metrics.rmse);
        gibbs_frac.push(metrics.regrade_fraction);
    }
    let (rmse, rmse_ci) = mean_and_ci(&gibbs_rmse);
    let (frac, frac_ci) = mean_and_ci(&gibbs_frac);
    rows.push(DatasetRow {
        mechanism: "gibbs",
        rmse,
        regrade_fraction: frac,
        rmse_ci: Some(rmse_ci),
        frac_ci: Some(frac_ci),
    });

    Ok(rows)
}

/// Dataset metrics CSV: `mechanism,prior,rmse,rmse_ci,regrade_fraction,frac_ci`.
pub fn dataset_report_csv(rows: &[DatasetRow], prior_mode: PriorMode) -> String {
    let mut out = String::from("mechanism,prior,rmse,rmse_ci,regrade_fraction,frac_ci\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.mechanism,
            prior_mode.name(),
            row.rmse,
            row.rmse_ci.map(|v| v.to_string()).unwrap_or_default(),
            row.regrade_fraction,
            row.frac_ci.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    out
}
