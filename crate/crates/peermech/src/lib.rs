//! Peer-grading mechanisms with probe-calibrated accuracy estimation.
//!
//! The library implements a peer-grading pipeline in which a small set of
//! staff-graded probe papers calibrates each grader's error model, papers
//! are scored by the posterior-mean expected-reward maximizer, and graders
//! are paid their marginal contribution to the realized reward. Mean,
//! median, and Gibbs-sampling baselines plus a seeded Monte-Carlo
//! experiment harness support head-to-head evaluation under truthful,
//! strategic, and mismatched-prior grader populations, in both a continuous
//! (Gaussian bias/reliability) and a discrete (exponential-distance) score
//! model.

pub mod assignment;
pub mod baselines;
pub mod dataset;
pub mod estimation;
pub mod mechanism;
pub mod model;
pub mod seed;
pub mod simulation;

pub use assignment::{build_assignment, build_assignment_with, AssignmentPlan};
pub use mechanism::{run_trupeqa, run_trupeqa_on_grades, MechanismOutcome};
pub use model::{GradeMatrix, GraderId, PaperId, TrueScores};
