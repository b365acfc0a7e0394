//! Grader-to-paper assignment with a probe set and balanced loads.
//!
//! Every grader receives `k/2` probe papers and `k/2` non-probe papers,
//! never their own. Loads are balanced: papers of each kind differ by at
//! most one grader. Construction is a randomized round-robin over a
//! circulant base design followed by a self-grading swap repair pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{GraderId, PaperId};

/// Errors raised while building an assignment plan.
#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("strict uniform load requested but {nonprobe_papers} non-probe papers cannot evenly share {slots} grading slots")]
    StrictLoadInfeasible {
        nonprobe_papers: usize,
        slots: usize,
    },
    #[error("constructed plan failed validation: {0:?}")]
    ConstructionFailed(Vec<Violation>),
}

/// A violated plan invariant, with the offending ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfGrading {
        grader: GraderId,
        paper: PaperId,
    },
    WrongProbeCount {
        grader: GraderId,
        got: usize,
        want: usize,
    },
    WrongNonprobeCount {
        grader: GraderId,
        got: usize,
        want: usize,
    },
    DuplicateAssignment {
        grader: GraderId,
        paper: PaperId,
    },
    EmptyGraderSet {
        paper: PaperId,
    },
    NonprobeLoadOutOfBand {
        paper: PaperId,
        load: usize,
        lo: usize,
        hi: usize,
    },
    ProbeLoadOutOfBand {
        paper: PaperId,
        load: usize,
        lo: usize,
        hi: usize,
    },
    IndexMismatch {
        grader: GraderId,
        paper: PaperId,
    },
    CograderMismatch {
        grader: GraderId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfGrading { grader, paper } => {
                write!(f, "grader {grader} assigned own paper {paper}")
            }
            Violation::WrongProbeCount { grader, got, want } => {
                write!(f, "grader {grader} has {got} probe papers, expected {want}")
            }
            Violation::WrongNonprobeCount { grader, got, want } => {
                write!(
                    f,
                    "grader {grader} has {got} non-probe papers, expected {want}"
                )
            }
            Violation::DuplicateAssignment { grader, paper } => {
                write!(f, "grader {grader} assigned paper {paper} more than once")
            }
            Violation::EmptyGraderSet { paper } => {
                write!(f, "paper {paper} has no graders")
            }
            Violation::NonprobeLoadOutOfBand {
                paper,
                load,
                lo,
                hi,
            } => {
                write!(
                    f,
                    "non-probe paper {paper} has load {load}, expected {lo}..={hi}"
                )
            }
            Violation::ProbeLoadOutOfBand {
                paper,
                load,
                lo,
                hi,
            } => {
                write!(
                    f,
                    "probe paper {paper} has load {load}, expected {lo}..={hi}"
                )
            }
            Violation::IndexMismatch { grader, paper } => {
                write!(
                    f,
                    "per-grader and per-paper indexes disagree on ({grader}, {paper})"
                )
            }
            Violation::CograderMismatch { grader } => {
                write!(
                    f,
                    "stored co-grader set of grader {grader} does not match the plan"
                )
            }
        }
    }
}

/// The papers one grader must grade, split into probe and non-probe lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraderPapers {
    pub probes: Vec<PaperId>,
    pub nonprobes: Vec<PaperId>,
}

/// The full bipartite assignment structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentPlan {
    n: usize,
    k: usize,
    probe_ids: BTreeSet<PaperId>,
    per_grader: BTreeMap<GraderId, GraderPapers>,
    per_paper: BTreeMap<PaperId, BTreeSet<GraderId>>,
    cograders: BTreeMap<GraderId, BTreeSet<GraderId>>,
}

impl AssignmentPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn probe_count(&self) -> usize {
        self.probe_ids.len()
    }

    pub fn probe_ids(&self) -> &BTreeSet<PaperId> {
        &self.probe_ids
    }

    pub fn is_probe(&self, paper: PaperId) -> bool {
        self.probe_ids.contains(&paper)
    }

    pub fn grader_papers(&self, grader: GraderId) -> Option<&GraderPapers> {
        self.per_grader.get(&grader)
    }

    pub fn graders_of(&self, paper: PaperId) -> Option<&BTreeSet<GraderId>> {
        self.per_paper.get(&paper)
    }

    pub fn cograders_of(&self, grader: GraderId) -> Option<&BTreeSet<GraderId>> {
        self.cograders.get(&grader)
    }

    pub fn graders(&self) -> impl Iterator<Item = (GraderId, &GraderPapers)> {
        self.per_grader.iter().map(|(&g, v)| (g, v))
    }

    /// Non-probe papers, sorted.
    pub fn nonprobe_papers(&self) -> Vec<PaperId> {
        (0..self.n)
            .map(PaperId)
            .filter(|p| !self.probe_ids.contains(p))
            .collect()
    }

    /// All (grader, paper, is_probe) edges, sorted by (grader, paper).
    pub fn edges(&self) -> Vec<(GraderId, PaperId, bool)> {
        let mut out = Vec::with_capacity(self.n * self.k);
        for (&g, papers) in &self.per_grader {
            let mut all: Vec<(PaperId, bool)> = papers
                .probes
                .iter()
                .map(|&p| (p, true))
                .chain(papers.nonprobes.iter().map(|&p| (p, false)))
                .collect();
            all.sort_unstable();
            out.extend(all.into_iter().map(|(p, probe)| (g, p, probe)));
        }
        out
    }

    /// CSV serialization: `grader_id,paper_id,is_probe`, sorted by
    /// (grader_id, paper_id).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grader_id,paper_id,is_probe\n");
        for (g, p, probe) in self.edges() {
            out.push_str(&format!("{g},{p},{probe}\n"));
        }
        out
    }

    /// Restriction of the plan to a single non-probe paper: keeps every
    /// grader's probe list (estimation input) but only the one paper's
    /// non-probe edges.
    pub fn restrict_to_paper(&self, paper: PaperId) -> AssignmentPlan {
        let mut per_grader = BTreeMap::new();
        let mut per_paper: BTreeMap<PaperId, BTreeSet<GraderId>> = BTreeMap::new();
        for (&g, papers) in &self.per_grader {
            let nonprobes: Vec<PaperId> = papers
                .nonprobes
                .iter()
                .copied()
                .filter(|&p| p == paper)
                .collect();
            for &p in &papers.probes {
                per_paper.entry(p).or_default().insert(g);
            }
            for &p in &nonprobes {
                per_paper.entry(p).or_default().insert(g);
            }
            per_grader.insert(
                g,
                GraderPapers {
                    probes: papers.probes.clone(),
                    nonprobes,
                },
            );
        }
        let cograders = compute_cograders(&per_grader, &per_paper);
        AssignmentPlan {
            n: self.n,
            k: self.k,
            probe_ids: self.probe_ids.clone(),
            per_grader,
            per_paper,
            cograders,
        }
    }
}

fn compute_cograders(
    per_grader: &BTreeMap<GraderId, GraderPapers>,
    per_paper: &BTreeMap<PaperId, BTreeSet<GraderId>>,
) -> BTreeMap<GraderId, BTreeSet<GraderId>> {
    per_grader
        .iter()
        .map(|(&g, papers)| {
            let mut set = BTreeSet::new();
            for p in &papers.nonprobes {
                if let Some(gs) = per_paper.get(p) {
                    set.extend(gs.iter().copied());
                }
            }
            (g, set)
        })
        .collect()
}

/// Load band for distributing `slots` grading slots over `papers` papers.
fn load_band(slots: usize, papers: usize) -> (usize, usize) {
    let lo = slots / papers;
    let hi = if slots.is_multiple_of(papers) {
        lo
    } else {
        lo + 1
    };
    (lo, hi)
}

/// Builds a balanced assignment: every grader gets `k/2` probe and `k/2`
/// non-probe papers, no one grades their own paper, and per-paper loads
/// within each kind differ by at most one.
///
/// Feasibility requires `k/2 < probe_count` and `k/2 < n - probe_count`:
/// probe papers belong to students too, so the owner of a probe paper must
/// be able to fill their probe quota from the remaining probes (and
/// symmetrically for non-probes).
pub fn build_assignment(
    n: usize,
    probe_count: usize,
    k: usize,
    seed: u64,
) -> Result<AssignmentPlan, AssignmentError> {
    build_assignment_with(n, probe_count, k, seed, false)
}

/// [`build_assignment`] with a strict-load switch: when `strict_uniform_load`
/// is set, construction fails unless every non-probe paper can receive
/// exactly the same number of graders, instead of balancing within a
/// one-grader band.
pub fn build_assignment_with(
    n: usize,
    probe_count: usize,
    k: usize,
    seed: u64,
    strict_uniform_load: bool,
) -> Result<AssignmentPlan, AssignmentError> {
    if n < 2 {
        return Err(AssignmentError::Infeasible(format!(
            "need n >= 2 students, got {n}"
        )));
    }
    if k == 0 || !k.is_multiple_of(2) {
        return Err(AssignmentError::Infeasible(format!(
            "k must be even and positive, got {k}"
        )));
    }
    let half = k / 2;
    if probe_count == 0 || probe_count >= n {
        return Err(AssignmentError::Infeasible(format!(
            "probe count must satisfy 0 < probes < n, got {probe_count} of {n}"
        )));
    }
    // A probe paper's owner draws probes from the other probe_count - 1
    // probes; a non-probe owner draws non-probes from the other n-l-1.
    if half >= probe_count {
        return Err(AssignmentError::Infeasible(format!(
            "k/2 = {half} probe papers per grader requires probes > k/2 \
             (the owner of a probe paper cannot grade it), got {probe_count}"
        )));
    }
    if half >= n - probe_count {
        return Err(AssignmentError::Infeasible(format!(
            "k/2 = {half} non-probe papers per grader requires n - probes > k/2 \
             (the owner of a non-probe paper cannot grade it), got {}",
            n - probe_count
        )));
    }
    let nonprobe_count = n - probe_count;
    if strict_uniform_load && !(n * half).is_multiple_of(nonprobe_count) {
        return Err(AssignmentError::StrictLoadInfeasible {
            nonprobe_papers: nonprobe_count,
            slots: n * half,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut papers: Vec<PaperId> = (0..n).map(PaperId).collect();
    papers.shuffle(&mut rng);
    let mut probe_list: Vec<PaperId> = papers[..probe_count].to_vec();
    let mut nonprobe_list: Vec<PaperId> = papers[probe_count..].to_vec();
    probe_list.shuffle(&mut rng);
    nonprobe_list.shuffle(&mut rng);

    let mut grader_order: Vec<GraderId> = (0..n).map(GraderId).collect();
    grader_order.shuffle(&mut rng);

    // Circulant base design: consecutive slots walk the shuffled paper list,
    // so per-paper loads differ by at most one and each grader's k/2 papers
    // are distinct (k/2 <= list length).
    let assign_round_robin = |list: &[PaperId]| -> BTreeMap<GraderId, Vec<PaperId>> {
        let mut out: BTreeMap<GraderId, Vec<PaperId>> = BTreeMap::new();
        let mut slot = 0usize;
        for &g in &grader_order {
            let chunk: Vec<PaperId> = (0..half).map(|t| list[(slot + t) % list.len()]).collect();
            out.insert(g, chunk);
            slot += half;
        }
        out
    };

    let mut probe_assign = assign_round_robin(&probe_list);
    let mut nonprobe_assign = assign_round_robin(&nonprobe_list);

    repair_self_grading(&mut probe_assign);
    repair_self_grading(&mut nonprobe_assign);

    let mut per_grader = BTreeMap::new();
    let mut per_paper: BTreeMap<PaperId, BTreeSet<GraderId>> = BTreeMap::new();
    for g in (0..n).map(GraderId) {
        let mut probes = probe_assign.remove(&g).unwrap();
        let mut nonprobes = nonprobe_assign.remove(&g).unwrap();
        probes.sort_unstable();
        nonprobes.sort_unstable();
        for &p in probes.iter().chain(nonprobes.iter()) {
            per_paper.entry(p).or_default().insert(g);
        }
        per_grader.insert(g, GraderPapers { probes, nonprobes });
    }
    let cograders = compute_cograders(&per_grader, &per_paper);

    let plan = AssignmentPlan {
        n,
        k,
        probe_ids: probe_list.into_iter().collect(),
        per_grader,
        per_paper,
        cograders,
    };
    let violations = validate(&plan);
    if violations.is_empty() {
        Ok(plan)
    } else {
        Err(AssignmentError::ConstructionFailed(violations))
    }
}

/// Swaps papers between graders until nobody holds their own paper.
///
/// A partner is any grader not already holding the offending paper; such a
/// partner always holds at least one paper the offender lacks, so each swap
/// fixes one violation without changing any per-paper load.
fn repair_self_grading(assign: &mut BTreeMap<GraderId, Vec<PaperId>>) {
    let graders: Vec<GraderId> = assign.keys().copied().collect();
    for &g in &graders {
        let own = PaperId(g.0);
        let Some(pos) = assign[&g].iter().position(|&p| p == own) else {
            continue;
        };
        let holder_free: Vec<GraderId> = graders
            .iter()
            .copied()
            .filter(|&g2| g2 != g && !assign[&g2].contains(&own))
            .collect();
        let mut swapped = false;
        for g2 in holder_free {
            let donor = assign[&g].clone();
            if let Some(&replacement) = assign[&g2]
                .iter()
                .find(|&&p| p != PaperId(g.0) && !donor.contains(&p))
            {
                let pos2 = assign[&g2].iter().position(|&p| p == replacement).unwrap();
                assign.get_mut(&g).unwrap()[pos] = replacement;
                assign.get_mut(&g2).unwrap()[pos2] = own;
                swapped = true;
                break;
            }
        }
        debug_assert!(
            swapped,
            "repair pass found no swap partner for grader {g:?}"
        );
    }
}

/// Checks every plan invariant and returns all violations found.
pub fn validate(plan: &AssignmentPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let half = plan.k / 2;
    let n = plan.n;
    let probe_count = plan.probe_ids.len();
    let nonprobe_count = n - probe_count;

    let mut probe_loads: BTreeMap<PaperId, usize> = BTreeMap::new();
    let mut nonprobe_loads: BTreeMap<PaperId, usize> = BTreeMap::new();

    for (&g, papers) in &plan.per_grader {
        if papers.probes.len() != half {
            out.push(Violation::WrongProbeCount {
                grader: g,
                got: papers.probes.len(),
                want: half,
            });
        }
        if papers.nonprobes.len() != half {
            out.push(Violation::WrongNonprobeCount {
                grader: g,
                got: papers.nonprobes.len(),
                want: half,
            });
        }
        let mut seen = BTreeSet::new();
        for &p in papers.probes.iter().chain(papers.nonprobes.iter()) {
            if p == PaperId(g.0) {
                out.push(Violation::SelfGrading {
                    grader: g,
                    paper: p,
                });
            }
            if !seen.insert(p) {
                out.push(Violation::DuplicateAssignment {
                    grader: g,
                    paper: p,
                });
            }
            match plan.per_paper.get(&p) {
                Some(gs) if gs.contains(&g) => {}
                _ => out.push(Violation::IndexMismatch {
                    grader: g,
                    paper: p,
                }),
            }
        }
        for &p in &papers.probes {
            *probe_loads.entry(p).or_default() += 1;
        }
        for &p in &papers.nonprobes {
            *nonprobe_loads.entry(p).or_default() += 1;
        }
    }

    for p in (0..n).map(PaperId) {
        if plan.per_paper.get(&p).is_none_or(BTreeSet::is_empty) {
            out.push(Violation::EmptyGraderSet { paper: p });
        }
    }
    for (&p, gs) in &plan.per_paper {
        for &g in gs {
            let listed = plan
                .per_grader
                .get(&g)
                .is_some_and(|papers| papers.probes.contains(&p) || papers.nonprobes.contains(&p));
            if !listed {
                out.push(Violation::IndexMismatch {
                    grader: g,
                    paper: p,
                });
            }
        }
    }

    if nonprobe_count > 0 {
        let (lo, hi) = load_band(n * half, nonprobe_count);
        for p in (0..n).map(PaperId).filter(|p| !plan.probe_ids.contains(p)) {
            let load = nonprobe_loads.get(&p).copied().unwrap_or(0);
            if load < lo || load > hi {
                out.push(Violation::NonprobeLoadOutOfBand {
                    paper: p,
                    load,
                    lo,
                    hi,
                });
            }
        }
    }
    if probe_count > 0 {
        let (lo, hi) = load_band(n * half, probe_count);
        for &p in &plan.probe_ids {
            let load = probe_loads.get(&p).copied().unwrap_or(0);
            if load < lo || load > hi {
                out.push(Violation::ProbeLoadOutOfBand {
                    paper: p,
                    load,
                    lo,
                    hi,
                });
            }
        }
    }

    let expected_cograders = compute_cograders(&plan.per_grader, &plan.per_paper);
    for (&g, set) in &plan.cograders {
        if expected_cograders.get(&g) != Some(set) {
            out.push(Violation::CograderMismatch { grader: g });
        }
    }

    out
}
