//! The score-maximization linear program.
//!
//! # Layout
//!
//! For an ensemble of `M` members with `K` classes and `n` inputs, write
//! `A_m` and `U_m` for the number of active and unstable hidden neurons of
//! member `m` (inactive neurons are the constant zero and get no variable).
//! The program has
//!
//! * variables: `n + sum_m (A_m + U_m + 2K)`, laid out as the shared input,
//!   then for each member its hidden activations layer by layer, its logits
//!   and its probabilities;
//! * rows: `sum_m (A_m + 2 U_m + 2K + 1)`, namely one equality per active
//!   neuron, two inequalities per unstable neuron, one equality per logit,
//!   one simplex equality, and one softmax row per class.
//!
//! Interval bounds on inputs, activations and logits, the ReLU lower bound
//! `x >= 0`, and the constant softmax bounds enter as variable bounds. The
//! softmax row for the labelled class `y*` is a lower bound on `p_{y*}`;
//! every other class gets an upper bound.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network::{Ensemble, LayerBounds};
use crate::bounds::{BoundKind, ConstBounds, Hyperbox, Side, SoftmaxBounds};
use crate::error::{check_len, Error, Result};
use crate::linearized::AffineBound;
use crate::lp::{LinearProgram, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    Nll,
    Brier,
}

impl ScoreRule {
    /// Score of prediction `p` for true class `y`; larger is worse.
    pub fn score(self, p: &[f64], y: usize) -> f64 {
        match self {
            ScoreRule::Nll => -p[y].ln(),
            ScoreRule::Brier => p
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let t = if k == y { 1.0 } else { 0.0 };
                    (v - t) * (v - t)
                })
                .sum(),
        }
    }
}

impl fmt::Display for ScoreRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreRule::Nll => "nll",
            ScoreRule::Brier => "brier",
        })
    }
}

impl FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(ScoreRule::Nll),
            "brier" => Ok(ScoreRule::Brier),
            _ => Err(Error::Usage(format!(
                "unknown score rule {s:?}; expected nll or brier"
            ))),
        }
    }
}

/// Worst-case score query over the ℓ∞ ball of radius `epsilon` around `x_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub rule: ScoreRule,
    pub y_star: usize,
    pub x_star: Vec<f64>,
    pub epsilon: f64,
}

impl ScoreSpec {
    pub fn validate(&self, ens: &Ensemble) -> Result<()> {
        check_len(ens.inputs, self.x_star.len())?;
        if self.y_star >= ens.classes() {
            return Err(Error::Usage(format!(
                "y_star {} out of range for {} classes",
                self.y_star,
                ens.classes()
            )));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Usage(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("x_star has a non-finite entry".into()));
        }
        Ok(())
    }

    pub fn lower(&self) -> Vec<f64> {
        self.x_star.iter().map(|v| v - self.epsilon).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.x_star.iter().map(|v| v + self.epsilon).collect()
    }
}

/// Convex relaxation of `x = max(z, 0)` for `z ∈ [l, u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReluPhase {
    /// `u <= 0`: `x = 0`.
    Inactive,
    /// `l >= 0`: `x = z`.
    Active,
    /// `x >= z`, `x >= 0`, `x <= slope * z + intercept`.
    Unstable { slope: f64, intercept: f64 },
}

pub fn relu_relaxation(l: f64, u: f64) -> Result<ReluPhase> {
    if !(l <= u) {
        return Err(Error::Verification(format!(
            "pre-activation bounds [{l}, {u}] are inverted"
        )));
    }
    Ok(if u <= 0.0 {
        ReluPhase::Inactive
    } else if l >= 0.0 {
        ReluPhase::Active
    } else {
        let slope = u / (u - l);
        ReluPhase::Unstable {
            slope,
            intercept: -slope * l,
        }
    })
}

/// `coeffs · p + constant` over the averaged probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearObjective {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl LinearObjective {
    pub fn eval(&self, p: &[f64]) -> f64 {
        self.coeffs.iter().zip(p).map(|(c, v)| c * v).sum::<f64>() + self.constant
    }
}

/// Linear objective whose maximum over the feasible probabilities bounds the
/// score. For NLL this is `-p_{y*}` (the score is its monotone transform
/// `-ln(-value)`); for Brier each `p_k^2` is replaced by its chord over
/// `[p_lo_k, p_hi_k]`.
pub fn score_objective(rule: ScoreRule, y_star: usize, consts: &[ConstBounds]) -> LinearObjective {
    let k = consts.len();
    let mut coeffs = vec![0.0; k];
    match rule {
        ScoreRule::Nll => {
            coeffs[y_star] = -1.0;
            LinearObjective {
                coeffs,
                constant: 0.0,
            }
        }
        ScoreRule::Brier => {
            for (c, b) in coeffs.iter_mut().zip(consts) {
                *c = b.p_lo + b.p_hi;
            }
            coeffs[y_star] -= 2.0;
            let constant = 1.0 - consts.iter().map(|b| b.p_lo * b.p_hi).sum::<f64>();
            LinearObjective { coeffs, constant }
        }
    }
}

/// Which linear softmax bounds relate logits to probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    /// The composed linear bounds.
    Lin,
    /// Midpoint tangents of the reciprocal lower bound and the log-sum-exp upper bound.
    ErTangent,
    /// Midpoint tangents of the log-sum-exp lower and upper bounds.
    LseTangent,
    /// Midpoint tangents of the starred log-sum-exp lower bound and the log-sum-exp upper bound.
    LseStarTangent,
}

impl BoundFamily {
    pub const ALL: [BoundFamily; 4] = [
        BoundFamily::Lin,
        BoundFamily::ErTangent,
        BoundFamily::LseTangent,
        BoundFamily::LseStarTangent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundFamily::Lin => "lin",
            BoundFamily::ErTangent => "er_tangent",
            BoundFamily::LseTangent => "lse_tangent",
            BoundFamily::LseStarTangent => "lse_star_tangent",
        }
    }

    /// Plane on `side` of output `k` over the member's logit box.
    pub fn plane(self, b: &SoftmaxBounds, side: Side) -> Result<AffineBound> {
        let lower = match self {
            BoundFamily::Lin => return Ok(b.lin_plane(side)),
            BoundFamily::ErTangent => BoundKind::ErLo,
            BoundFamily::LseTangent => BoundKind::LseLo,
            BoundFamily::LseStarTangent => BoundKind::LseStarLo,
        };
        let kind = match side {
            Side::Lower => lower,
            Side::Upper => BoundKind::LseHi,
        };
        b.midpoint_tangent(kind)
    }
}

impl fmt::Display for BoundFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown bound family {s:?}")))
    }
}

/// What each LP row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    Active {
        member: usize,
        layer: usize,
        neuron: usize,
    },
    UnstableLower {
        member: usize,
        layer: usize,
        neuron: usize,
    },
    UnstableUpper {
        member: usize,
        layer: usize,
        neuron: usize,
    },
    Logit {
        member: usize,
        class: usize,
    },
    Simplex {
        member: usize,
    },
    SoftmaxLower {
        member: usize,
        class: usize,
    },
    SoftmaxUpper {
        member: usize,
        class: usize,
    },
}

/// Variable indices of the program.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub inputs: usize,
    /// `[member][hidden layer][neuron]`; `None` for inactive neurons.
    pub hidden: Vec<Vec<Vec<Option<usize>>>>,
    pub logits: Vec<Vec<usize>>,
    pub probs: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ScoreProgram {
    pub lp: LinearProgram,
    pub layout: VarLayout,
    pub tags: Vec<RowTag>,
    pub rule: ScoreRule,
    /// Objective over the averaged probabilities; the LP objective omits its constant.
    pub objective: LinearObjective,
    /// Member-averaged constant bounds per class.
    pub consts: Vec<ConstBounds>,
}

impl ScoreProgram {
    /// Value of the linear objective at an LP optimum `lp_value`.
    pub fn objective_value(&self, lp_value: f64) -> f64 {
        lp_value + self.objective.constant
    }

    /// Score bound implied by the LP optimum.
    pub fn score_bound(&self, lp_value: f64) -> f64 {
        let v = self.objective_value(lp_value);
        match self.rule {
            ScoreRule::Nll if -v > 0.0 => -(-v).ln(),
            ScoreRule::Nll => f64::INFINITY,
            ScoreRule::Brier => v,
        }
    }

    /// The LP point induced by input `x`: exact activations, logits and
    /// member softmax outputs.
    pub fn induced_point(&self, ens: &Ensemble, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.layout.inputs, x.len())?;
        let mut v = vec![0.0; self.lp.num_vars()];
        v[..x.len()].copy_from_slice(x);
        for (m, net) in ens.members.iter().enumerate() {
            let trace = net.trace(x)?;
            for (l, vars) in self.layout.hidden[m].iter().enumerate() {
                for (i, var) in vars.iter().enumerate() {
                    if let Some(j) = var {
                        v[*j] = trace[l][i].max(0.0);
                    }
                }
            }
            let z = trace.last().expect("at least one layer");
            let p = crate::bounds::softmax(z)?;
            for k in 0..z.len() {
                v[self.layout.logits[m][k]] = z[k];
                v[self.layout.probs[m][k]] = p[k];
            }
        }
        Ok(v)
    }
}

/// Softmax bounds for each class of one member's logit box.
pub(crate) fn member_softmax_bounds(bounds: &LayerBounds) -> Result<Vec<SoftmaxBounds>> {
    let (lo, hi) = bounds.logits();
    let region = Hyperbox::new(lo.to_vec(), hi.to_vec())
        .map_err(|e| Error::Verification(format!("logit bounds unusable: {e}")))?;
    (0..lo.len())
        .map(|k| SoftmaxBounds::new(region.clone(), k))
        .collect()
}

/// Constant bounds averaged over members, per class.
pub fn averaged_const_bounds(per_member: &[Vec<SoftmaxBounds>]) -> Vec<ConstBounds> {
    let m = per_member.len() as f64;
    let k = per_member[0].len();
    (0..k)
        .map(|c| {
            let (lo, hi) = per_member.iter().fold((0.0, 0.0), |(l, h), sb| {
                let b = sb[c].consts();
                (l + b.p_lo, h + b.p_hi)
            });
            ConstBounds {
                p_lo: lo / m,
                p_hi: hi / m,
            }
        })
        .collect()
}

/// Builds the score-maximization program. `bounds` holds one
/// [`LayerBounds`] per member, covering the ball of `spec`.
pub fn assemble_lp(
    ens: &Ensemble,
    spec: &ScoreSpec,
    bounds: &[LayerBounds],
    family: BoundFamily,
) -> Result<ScoreProgram> {
    spec.validate(ens)?;
    check_len(ens.members.len(), bounds.len())?;
    let k = ens.classes();
    let n = ens.inputs;
    let mut lp = LinearProgram::new(0);
    let mut tags = Vec::new();
    for (lo, hi) in spec.lower().into_iter().zip(spec.upper()) {
        lp.add_var(lo, hi, 0.0);
    }
    let member_bounds: Vec<Vec<SoftmaxBounds>> = bounds
        .iter()
        .map(member_softmax_bounds)
        .collect::<Result<_>>()?;
    let consts = averaged_const_bounds(&member_bounds);
    let objective = score_objective(spec.rule, spec.y_star, &consts);
    let weight = 1.0 / ens.members.len() as f64;

    let mut layout = VarLayout {
        inputs: n,
        hidden: Vec::new(),
        logits: Vec::new(),
        probs: Vec::new(),
    };
    for (m, net) in ens.members.iter().enumerate() {
        let lb = &bounds[m];
        check_len(net.layers.len(), lb.lower.len())?;
        // variables feeding the current layer: (index, ...) or None for a constant zero
        let mut prev: Vec<Option<usize>> = (0..n).map(Some).collect();
        let mut hidden = Vec::new();
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter().enumerate() {
            let affine = |row: &[f64], scale: f64| -> Vec<(usize, f64)> {
                row.iter()
                    .zip(&prev)
                    .filter_map(|(w, p)| p.map(|j| (j, -scale * w)))
                    .collect()
            };
            if l == last {
                let mut z = Vec::with_capacity(k);
                for (c, (row, b)) in layer.w.iter().zip(&layer.b).enumerate() {
                    let (zl, zu) = (lb.lower[l][c], lb.upper[l][c]);
                    if !(zl <= zu) {
                        return Err(Error::Verification(format!(
                            "member {m} logit {c}: inverted bounds [{zl}, {zu}]"
                        )));
                    }
                    let var = lp.add_var(zl, zu, 0.0);
                    let mut terms = affine(row, 1.0);
                    terms.push((var, 1.0));
                    lp.add_sparse_row(&terms, Sense::Eq, *b);
                    tags.push(RowTag::Logit {
                        member: m,
                        class: c,
                    });
                    z.push(var);
                }
                layout.logits.push(z);
                break;
            }
            let mut vars = Vec::with_capacity(layer.outputs());
            for (i, (row, b)) in layer.w.iter().zip(&layer.b).enumerate() {
                let (zl, zu) = (lb.lower[l][i], lb.upper[l][i]);
                let var = match relu_relaxation(zl, zu)? {
                    ReluPhase::Inactive => None,
                    ReluPhase::Active => {
                        let var = lp.add_var(zl, zu, 0.0);
                        let mut terms = affine(row, 1.0);
                        terms.push((var, 1.0));
                        lp.add_sparse_row(&terms, Sense::Eq, *b);
                        tags.push(RowTag::Active {
                            member: m,
                            layer: l,
                            neuron: i,
                        });
                        Some(var)
                    }
                    ReluPhase::Unstable { slope, intercept } => {
                        let var = lp.add_var(0.0, zu, 0.0);
                        let mut terms = affine(row, 1.0);
                        terms.push((var, 1.0));
                        lp.add_sparse_row(&terms, Sense::Ge, *b);
                        tags.push(RowTag::UnstableLower {
                            member: m,
                            layer: l,
                            neuron: i,
                        });
                        let mut terms = affine(row, slope);
                        terms.push((var, 1.0));
                        lp.add_sparse_row(&terms, Sense::Le, slope * b + intercept);
                        tags.push(RowTag::UnstableUpper {
                            member: m,
                            layer: l,
                            neuron: i,
                        });
                        Some(var)
                    }
                };
                vars.push(var);
            }
            prev = vars.clone();
            hidden.push(vars);
        }
        layout.hidden.push(hidden);

        let z = layout.logits[m].clone();
        let mut probs = Vec::with_capacity(k);
        for (c, sb) in member_bounds[m].iter().enumerate() {
            let cb = sb.consts();
            let (lo, hi) = if c == spec.y_star {
                (cb.p_lo, 1.0)
            } else {
                (0.0, cb.p_hi)
            };
            probs.push(lp.add_var(lo, hi, weight * objective.coeffs[c]));
        }
        let simplex: Vec<(usize, f64)> = probs.iter().map(|&j| (j, 1.0)).collect();
        lp.add_sparse_row(&simplex, Sense::Eq, 1.0);
        tags.push(RowTag::Simplex { member: m });
        for (c, sb) in member_bounds[m].iter().enumerate() {
            let side = if c == spec.y_star {
                Side::Lower
            } else {
                Side::Upper
            };
            let plane = family.plane(sb, side)?;
            if plane.coeffs.iter().any(|v| !v.is_finite()) || !plane.offset.is_finite() {
                return Err(Error::Verification(format!(
                    "member {m} class {c}: non-finite softmax plane"
                )));
            }
            let mut terms: Vec<(usize, f64)> = z
                .iter()
                .zip(&plane.coeffs)
                .map(|(&j, &a)| (j, -a))
                .collect();
            terms.push((probs[c], 1.0));
            match side {
                Side::Lower => {
                    lp.add_sparse_row(&terms, Sense::Ge, plane.offset);
                    tags.push(RowTag::SoftmaxLower {
                        member: m,
                        class: c,
                    });
                }
                Side::Upper => {
                    lp.add_sparse_row(&terms, Sense::Le, plane.offset);
                    tags.push(RowTag::SoftmaxUpper {
                        member: m,
                        class: c,
                    });
                }
            }
        }
        layout.probs.push(probs);
    }
    Ok(ScoreProgram {
        lp,
        layout,
        tags,
        rule: spec.rule,
        objective,
        consts,
    })
}
