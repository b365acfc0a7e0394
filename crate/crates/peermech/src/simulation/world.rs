//! Synthetic world generation and grader reporting behavior.
//!
//! True scores, grader biases, and reliabilities are drawn from the
//! Gaussian/Gamma generative model; observations are drawn per assignment
//! edge. Reporting behavior turns private observations into a grade matrix.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::{GenerationParams, SimulationError};
use crate::assignment::AssignmentPlan;
use crate::model::{ContinuousAccuracy, GradeMatrix, GraderId, PaperId, TrueScores};

/// How a grader turns an observed score into a reported score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraderBehavior {
    /// Reports the observation unchanged.
    Truthful,
    /// Caps each report at the grader's own true score: a grader never
    /// reports a score above the one she herself earned.
    Strategic,
}

impl GraderBehavior {
    pub fn name(&self) -> &'static str {
        match self {
            GraderBehavior::Truthful => "truthful",
            GraderBehavior::Strategic => "strategic",
        }
    }
}

/// A fully generated synthetic world.
#[derive(Debug, Clone)]
pub struct World {
    pub truths: TrueScores,
    pub grader_params: BTreeMap<GraderId, ContinuousAccuracy>,
    pub observations: BTreeMap<(GraderId, PaperId), f64>,
}

/// True scores for papers `0..n`, i.i.d. Normal(mu, 1/gamma).
pub fn draw_truths<R: Rng>(n: usize, gen: &GenerationParams, rng: &mut R) -> TrueScores {
    let normal = Normal::new(gen.mu, (1.0 / gen.gamma).sqrt()).expect("validated params");
    let mut truths = TrueScores::new();
    for j in 0..n {
        truths.insert(PaperId(j), normal.sample(rng));
    }
    truths
}

/// True (bias, reliability) pairs for graders `0..n`: bias Normal(0, 1/eta),
/// reliability Gamma(alpha, rate beta).
pub fn draw_graders<R: Rng>(
    n: usize,
    gen: &GenerationParams,
    rng: &mut R,
) -> BTreeMap<GraderId, ContinuousAccuracy> {
    let bias_dist = Normal::new(0.0, (1.0 / gen.eta).sqrt()).expect("validated params");
    let tau_dist = Gamma::new(gen.alpha, 1.0 / gen.beta()).expect("validated params");
    (0..n)
        .map(|i| {
            let bias = bias_dist.sample(rng);
            let reliability = tau_dist.sample(rng);
            (GraderId(i), ContinuousAccuracy { bias, reliability })
        })
        .collect()
}

/// One observation per plan edge: Normal(truth + bias, 1/reliability).
/// Infinite reliability collapses the noise to zero exactly.
pub fn draw_observations<R: Rng>(
    plan: &AssignmentPlan,
    truths: &TrueScores,
    graders: &BTreeMap<GraderId, ContinuousAccuracy>,
    rng: &mut R,
) -> BTreeMap<(GraderId, PaperId), f64> {
    let mut out = BTreeMap::new();
    for (g, p, _) in plan.edges() {
        let acc = &graders[&g];
        let mean = truths.get(p).expect("plan paper has a truth") + acc.bias;
        let sigma = if acc.reliability.is_finite() {
            (1.0 / acc.reliability).sqrt()
        } else {
            0.0
        };
        let obs = Normal::new(mean, sigma).expect("finite mean").sample(rng);
        out.insert((g, p), obs);
    }
    out
}

/// Generates a complete world from one seed: truths, grader parameters,
/// then observations, in that fixed order.
pub fn generate_world(plan: &AssignmentPlan, gen: &GenerationParams, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truths = draw_truths(plan.n(), gen, &mut rng);
    let grader_params = draw_graders(plan.n(), gen, &mut rng);
    let observations = draw_observations(plan, &truths, &grader_params, &mut rng);
    World {
        truths,
        grader_params,
        observations,
    }
}

/// Turns observations into reported grades under the given behavior. Probe
/// flags come from the plan. Strategic reporting needs the reporting
/// grader's own true score.
pub fn apply_behavior(
    plan: &AssignmentPlan,
    observations: &BTreeMap<(GraderId, PaperId), f64>,
    truths: &TrueScores,
    behavior: GraderBehavior,
) -> Result<GradeMatrix, SimulationError> {
    let mut grades = GradeMatrix::new();
    for (&(g, p), &obs) in observations {
        let report = match behavior {
            GraderBehavior::Truthful => obs,
            GraderBehavior::Strategic => {
                let own = truths
                    .get(PaperId(g.0))
                    .ok_or(SimulationError::MissingOwnScore(g))?;
                obs.min(own)
            }
        };
        grades.insert(g, p, report, plan.is_probe(p));
    }
    Ok(grades)
}
