//! Worst-case uncertainty scores of ReLU ensembles over an ℓ∞ input ball.
//!
//! [`verify`] propagates interval bounds through every member, assembles the
//! score-maximization LP (see [`program`] for its layout) with one of the
//! linear softmax bound families, solves it, and brackets the true worst
//! score from below with a gradient attack.

pub mod attack;
pub mod network;
pub mod program;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lp::{solve, LpStatus};

pub use attack::{empirical_attack, nested_attack, score_gradient, AttackConfig, AttackResult};
pub use network::{interval_propagate, Ensemble, Layer, LayerBounds, Mlp};
pub use program::{
    assemble_lp, relu_relaxation, score_objective, BoundFamily, LinearObjective, ReluPhase, RowTag,
    ScoreProgram, ScoreRule, ScoreSpec, VarLayout,
};

/// Interval bounds of every member over the ball of `spec`.
pub fn member_bounds(ens: &Ensemble, spec: &ScoreSpec) -> Result<Vec<LayerBounds>> {
    spec.validate(ens)?;
    ens.members
        .iter()
        .map(|net| interval_propagate(net, &spec.x_star, spec.epsilon))
        .collect()
}

/// Score of the ensemble-averaged prediction at the ball's center.
pub fn clean_score(ens: &Ensemble, spec: &ScoreSpec) -> Result<f64> {
    Ok(spec
        .rule
        .score(&ens.probabilities(&spec.x_star)?, spec.y_star))
}

/// LP outcome for one bound family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyBound {
    pub family: BoundFamily,
    /// Upper bound on the score; infinite unless the LP solved to optimality.
    pub score_upper_bound: f64,
    /// Optimum of the linear objective, before any transform to score units.
    pub lp_objective: f64,
    pub lp_status: LpStatus,
    pub lp_iterations: usize,
    pub variables: usize,
    pub rows: usize,
}

pub fn bound_with_family(
    ens: &Ensemble,
    spec: &ScoreSpec,
    bounds: &[LayerBounds],
    family: BoundFamily,
) -> Result<FamilyBound> {
    let program = assemble_lp(ens, spec, bounds, family)?;
    let sol = solve(&program.lp)?;
    let optimal = sol.status == LpStatus::Optimal;
    Ok(FamilyBound {
        family,
        score_upper_bound: if optimal {
            program.score_bound(sol.objective_value)
        } else {
            f64::INFINITY
        },
        lp_objective: program.objective_value(sol.objective_value),
        lp_status: sol.status,
        lp_iterations: sol.iterations,
        variables: program.lp.num_vars(),
        rows: program.lp.num_rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub bound_family: BoundFamily,
    pub score_upper_bound: f64,
    pub attack_lower_bound: f64,
    pub clean_score: f64,
    pub lp_status: LpStatus,
}

pub fn verify(
    ens: &Ensemble,
    spec: &ScoreSpec,
    family: BoundFamily,
    attack: &AttackConfig,
) -> Result<VerifyResult> {
    let bounds = member_bounds(ens, spec)?;
    let fb = bound_with_family(ens, spec, &bounds, family)?;
    Ok(VerifyResult {
        bound_family: family,
        score_upper_bound: fb.score_upper_bound,
        attack_lower_bound: empirical_attack(ens, spec, attack)?.score,
        clean_score: clean_score(ens, spec)?,
        lp_status: fb.lp_status,
    })
}

/// Every requested family on one query, sharing bounds and the attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub spec: ScoreSpec,
    pub clean_score: f64,
    pub attack_lower_bound: f64,
    pub families: Vec<FamilyBound>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<f64>,
}

impl VerifyReport {
    /// Families whose LP failed or whose bound is beaten by the attack.
    pub fn violations(&self, tol: f64) -> Vec<String> {
        self.families
            .iter()
            .filter_map(|f| {
                if f.lp_status != LpStatus::Optimal {
                    Some(format!(
                        "{}: LP ended with status {:?}",
                        f.family, f.lp_status
                    ))
                } else if self.attack_lower_bound > f.score_upper_bound + tol {
                    Some(format!(
                        "{}: attack score {} exceeds bound {}",
                        f.family, self.attack_lower_bound, f.score_upper_bound
                    ))
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn family(&self, family: BoundFamily) -> Option<&FamilyBound> {
        self.families.iter().find(|f| f.family == family)
    }
}

pub fn verify_all(
    ens: &Ensemble,
    spec: &ScoreSpec,
    families: &[BoundFamily],
    attack: &AttackConfig,
    timed: bool,
) -> Result<VerifyReport> {
    let start = Instant::now();
    let bounds = member_bounds(ens, spec)?;
    let families = families
        .iter()
        .map(|&f| bound_with_family(ens, spec, &bounds, f))
        .collect::<Result<Vec<_>>>()?;
    let attack_lower_bound = empirical_attack(ens, spec, attack)?.score;
    Ok(VerifyReport {
        spec: spec.clone(),
        clean_score: clean_score(ens, spec)?,
        attack_lower_bound,
        families,
        wall_time_ms: timed.then(|| start.elapsed().as_secs_f64() * 1e3),
    })
}

/// A random ensemble and query.
#[derive(Debug, Clone)]
pub struct Instance {
    pub ensemble: Ensemble,
    pub spec: ScoreSpec,
}

/// Ensemble of `members` networks with layer widths `widths`, a standard
/// normal center, a uniform label and a radius uniform in `radius`.
pub fn random_instance(
    seed: u64,
    widths: &[usize],
    members: usize,
    rule: ScoreRule,
    radius: (f64, f64),
) -> Result<Instance> {
    let ensemble = Ensemble::random(widths, members, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let x_star: Vec<f64> = (0..widths[0]).map(|_| rng.sample(StandardNormal)).collect();
    let y_star = rng.gen_range(0..ensemble.classes());
    let epsilon = radius.0 + (radius.1 - radius.0) * rng.gen::<f64>();
    Ok(Instance {
        ensemble,
        spec: ScoreSpec {
            rule,
            y_star,
            x_star,
            epsilon,
        },
    })
}
