//! Exact softmax evaluation and closed-form bounds on one softmax output over
//! a box of logits.
//!
//! Every bound is stated for an arbitrary target output `k`. Internally the
//! target plays the role of the anchor of the difference variables
//! `x̃_j = x_j - x_k`, so no index permutation is needed.
//!
//! Lower bounds are convex in `x`, upper bounds concave. For any `x` in the
//! box they satisfy
//!
//! ```text
//! lin_lo <= er_lo <= p_k <= lse_hi <= er_hi <= lin_hi
//! ```
//!
//! and, for two classes, `er_lo <= lse2_lo <= p_k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative slack used when checking that a point lies inside a box.
pub const BOX_TOLERANCE: f64 = 1e-9;

/// Below this width an interval is treated as a single point.
const DEGENERATE_WIDTH: f64 = 1e-12;

fn slack(lo: f64, hi: f64) -> f64 {
    BOX_TOLERANCE * 1f64.max(lo.abs()).max(hi.abs())
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    let t = slack(lo, hi);
    v >= lo - t && v <= hi + t
}

/// Axis-aligned box `[lower, upper]` of logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Hyperbox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len(lower.len(), upper.len())?;
        if lower.len() < 2 {
            return Err(Error::InvalidBox(format!(
                "softmax needs at least 2 logits, got {}",
                lower.len()
            )));
        }
        for (j, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidBox(format!("non-finite bound at index {j}")));
            }
            if l > u {
                return Err(Error::InvalidBox(format!(
                    "lower {l} exceeds upper {u} at index {j}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The box `[center - eps, center + eps]`.
    pub fn around(center: &[f64], eps: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidBox(format!("negative half-width {eps}")));
        }
        Self::new(
            center.iter().map(|c| c - eps).collect(),
            center.iter().map(|c| c + eps).collect(),
        )
    }

    /// A zero-width box at `x`.
    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (u - l))
            .collect()
    }

    /// True if `x` lies in the box up to [`BOX_TOLERANCE`] relative slack.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| within(v, l, u))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_len(self.dim(), x.len())?;
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite logit at index {j}")));
        }
        if !self.contains(x) {
            return Err(Error::Domain("point lies outside the box".into()));
        }
        Ok(())
    }
}

/// Bounds on the difference variables `x_j - x_anchor`.
///
/// The anchor entry is always the point interval `[0, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffBox {
    anchor: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DiffBox {
    /// Builds a difference box from externally supplied bounds, which may be
    /// tighter than the ones [`diff_box`] derives from a logit box.
    pub fn new(anchor: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len(lower.len(), upper.len())?;
        if anchor >= lower.len() {
            return Err(Error::Usage(format!(
                "anchor {anchor} out of range for {} logits",
                lower.len()
            )));
        }
        if lower[anchor] != 0.0 || upper[anchor] != 0.0 {
            return Err(Error::InvalidBox("anchor entry must be [0, 0]".into()));
        }
        for (j, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidBox(format!(
                    "bad difference interval [{l}, {u}] at index {j}"
                )));
            }
        }
        Ok(Self {
            anchor,
            lower,
            upper,
        })
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

/// Lower or upper side of a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        })
    }
}

/// The named bounds on a softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    ConstLo,
    ConstHi,
    LinLo,
    LinHi,
    ErLo,
    ErHi,
    LseLo,
    LseStarLo,
    Lse2Lo,
    LsePrimeLo,
    LseHi,
}

impl BoundKind {
    pub const ALL: [BoundKind; 11] = [
        BoundKind::ConstLo,
        BoundKind::ConstHi,
        BoundKind::LinLo,
        BoundKind::LinHi,
        BoundKind::ErLo,
        BoundKind::ErHi,
        BoundKind::LseLo,
        BoundKind::LseStarLo,
        BoundKind::Lse2Lo,
        BoundKind::LsePrimeLo,
        BoundKind::LseHi,
    ];

    /// The kinds whose tangent planes and gradients are available.
    pub const NONLINEAR: [BoundKind; 5] = [
        BoundKind::ErLo,
        BoundKind::ErHi,
        BoundKind::LseLo,
        BoundKind::LseStarLo,
        BoundKind::LseHi,
    ];

    pub fn side(self) -> Side {
        match self {
            BoundKind::ConstHi | BoundKind::LinHi | BoundKind::ErHi | BoundKind::LseHi => {
                Side::Upper
            }
            _ => Side::Lower,
        }
    }

    /// The constant bound on the same side, used as the reference for gap ratios.
    pub fn constant_counterpart(self) -> BoundKind {
        match self.side() {
            Side::Lower => BoundKind::ConstLo,
            Side::Upper => BoundKind::ConstHi,
        }
    }

    /// Whether the bound is defined for `k` logits.
    pub fn applicable(self, k: usize) -> bool {
        match self {
            BoundKind::Lse2Lo => k == 2,
            _ => k >= 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::ConstLo => "const_lo",
            BoundKind::ConstHi => "const_hi",
            BoundKind::LinLo => "lin_lo",
            BoundKind::LinHi => "lin_hi",
            BoundKind::ErLo => "er_lo",
            BoundKind::ErHi => "er_hi",
            BoundKind::LseLo => "lse_lo",
            BoundKind::LseStarLo => "lse_star_lo",
            BoundKind::Lse2Lo => "lse2_lo",
            BoundKind::LsePrimeLo => "lse_prime_lo",
            BoundKind::LseHi => "lse_hi",
        }
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown bound kind '{s}'")))
    }
}

/// Softmax via the max-shifted form, so that huge logits do not overflow.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Usage("softmax needs at least 2 logits".into()));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite logit at index {j}")));
    }
    let m = max(x);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Sum of exponentials. Overflow saturates to `+inf`.
pub fn se(x: &[f64]) -> f64 {
    x.iter().map(|v| v.exp()).sum()
}

/// Log-sum-exp, max-shifted.
pub fn lse(x: &[f64]) -> f64 {
    lse_iter(x.iter().copied())
}

fn lse_iter(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn max(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Slope of the chord of `exp` over `[lo, hi]`; the derivative `e^lo` when
/// the interval is a point.
fn chord_slope(lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w <= DEGENERATE_WIDTH {
        lo.exp()
    } else {
        lo.exp() * (w.exp_m1() / w)
    }
}

/// Chords of `exp` over a family of intervals, precomputed.
#[derive(Debug, Clone)]
pub(crate) struct Chords {
    lo: Vec<f64>,
    exp_lo: Vec<f64>,
    slope: Vec<f64>,
}

impl Chords {
    pub(crate) fn new(lo: &[f64], hi: &[f64]) -> Self {
        Self {
            lo: lo.to_vec(),
            exp_lo: lo.iter().map(|v| v.exp()).collect(),
            slope: lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| chord_slope(l, h))
                .collect(),
        }
    }

    #[inline]
    pub(crate) fn term(&self, j: usize, v: f64) -> f64 {
        self.exp_lo[j] + self.slope[j] * (v - self.lo[j])
    }

    #[inline]
    pub(crate) fn slope(&self, j: usize) -> f64 {
        self.slope[j]
    }
}

/// Chordal upper bound on `se(x)` over `[lo, hi]`.
pub fn se_chord(x: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64> {
    check_len(x.len(), lo.len())?;
    check_len(x.len(), hi.len())?;
    for j in 0..x.len() {
        if !(lo[j] <= hi[j]) || !within(x[j], lo[j], hi[j]) {
            return Err(Error::Domain(format!(
                "x[{j}] = {} outside [{}, {}]",
                x[j], lo[j], hi[j]
            )));
        }
    }
    let c = Chords::new(lo, hi);
    Ok((0..x.len()).map(|j| c.term(j, x[j])).sum())
}

/// Difference-variable bounds `l_j - u_anchor <= x_j - x_anchor <= u_j - l_anchor`.
pub fn diff_box(region: &Hyperbox, anchor: usize) -> Result<DiffBox> {
    if anchor >= region.dim() {
        return Err(Error::Usage(format!(
            "anchor {anchor} out of range for {} logits",
            region.dim()
        )));
    }
    let (l, u) = (region.lower(), region.upper());
    let mut lower: Vec<f64> = l.iter().map(|v| v - u[anchor]).collect();
    let mut upper: Vec<f64> = u.iter().map(|v| v - l[anchor]).collect();
    lower[anchor] = 0.0;
    upper[anchor] = 0.0;
    Ok(DiffBox {
        anchor,
        lower,
        upper,
    })
}

/// Index of the largest midpoint; ties go to the smallest index.
pub fn argmax_midpoint(region: &Hyperbox) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, (l, u)) in region.lower().iter().zip(region.upper()).enumerate() {
        let s = l + u;
        if s > best_val {
            best_val = s;
            best = j;
        }
    }
    best
}

/// Constant bounds on the anchor output over the difference box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstBounds {
    pub p_lo: f64,
    pub p_hi: f64,
}

pub fn const_bounds(d: &DiffBox) -> ConstBounds {
    ConstBounds {
        p_lo: 1.0 / se(&d.upper),
        p_hi: 1.0 / se(&d.lower),
    }
}

/// Tangent abscissas and reciprocal-input bounds for the composed linear bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinAux {
    /// Tangent points for the exponentials; the anchor entry is unused.
    pub t: Vec<f64>,
    pub q_lo_lin: f64,
    pub q_hi_lin: f64,
    pub t_q: f64,
}

pub fn lin_aux(d: &DiffBox) -> LinAux {
    let a = d.anchor;
    let mut t = vec![0.0; d.dim()];
    let mut q_lo = 1.0;
    for j in 0..d.dim() {
        if j == a {
            continue;
        }
        let (l, u) = (d.lower[j], d.upper[j]);
        // log of the chord slope, computed without forming the slope itself
        let log_slope = if u - l <= DEGENERATE_WIDTH {
            l
        } else {
            l + ((u - l).exp_m1() / (u - l)).ln()
        };
        t[j] = log_slope.min(l + 1.0);
        q_lo += t[j].exp() * (l - t[j] + 1.0);
    }
    let q_hi = se(&d.upper);
    let t_q = (q_lo * q_hi).sqrt().max(0.5 * q_hi);
    LinAux {
        t,
        q_lo_lin: q_lo,
        q_hi_lin: q_hi,
        t_q,
    }
}

/// Bounds on the shifted log-sum-exp argument used by the alternative
/// lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsePrimeAux {
    pub v_lo: f64,
    pub v_hi: f64,
}

pub fn lse_prime_aux(region: &Hyperbox, target: usize) -> LsePrimeAux {
    let (l, u) = (region.lower(), region.upper());
    let others = |v: &[f64]| {
        lse_iter(
            v.iter()
                .enumerate()
                .filter(|&(j, _)| j != target)
                .map(|(_, &x)| x),
        )
    };
    LsePrimeAux {
        v_lo: others(l) - u[target],
        v_hi: others(u) - l[target],
    }
}

/// Everything that depends only on a difference box.
#[derive(Debug, Clone)]
pub(crate) struct DiffBounds {
    pub(crate) diff: DiffBox,
    pub(crate) consts: ConstBounds,
    pub(crate) lin: LinAux,
    pub(crate) chords: Chords,
    /// `log p_hi`, `log p_lo`.
    pub(crate) log_p_hi: f64,
    pub(crate) log_p_lo: f64,
    /// Logarithmic mean of `p_lo` and `p_hi`: the slope of the exp chord.
    pub(crate) log_mean: f64,
    pub(crate) saturated: bool,
}

impl DiffBounds {
    pub(crate) fn new(diff: DiffBox) -> Self {
        let consts = const_bounds(&diff);
        let lin = lin_aux(&diff);
        let chords = Chords::new(&diff.lower, &diff.upper);
        let log_p_hi = -lse(&diff.lower);
        let log_p_lo = -lse(&diff.upper);
        let saturated = !(consts.p_lo > 0.0) || !lin.q_hi_lin.is_finite();
        let log_mean = logarithmic_mean(consts.p_hi, log_p_hi, log_p_lo);
        Self {
            diff,
            consts,
            lin,
            chords,
            log_p_hi,
            log_p_lo,
            log_mean,
            saturated,
        }
    }

    #[inline]
    fn xt(&self, x: &[f64], j: usize) -> f64 {
        x[j] - x[self.diff.anchor]
    }

    pub(crate) fn check(&self, x: &[f64]) -> Result<()> {
        check_len(self.diff.dim(), x.len())?;
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite logit at index {j}")));
        }
        for j in 0..x.len() {
            if !within(self.xt(x, j), self.diff.lower[j], self.diff.upper[j]) {
                return Err(Error::Domain(format!(
                    "difference variable {j} outside its bounds"
                )));
            }
        }
        Ok(())
    }

    /// Chordal upper bound on `se(x̃)`.
    #[inline]
    pub(crate) fn se_bar(&self, x: &[f64]) -> f64 {
        (0..x.len())
            .map(|j| self.chords.term(j, self.xt(x, j)))
            .sum()
    }

    #[inline]
    pub(crate) fn se_tilde(&self, x: &[f64]) -> f64 {
        let a = x[self.diff.anchor];
        x.iter().map(|v| (v - a).exp()).sum()
    }

    #[inline]
    pub(crate) fn lse_tilde(&self, x: &[f64]) -> f64 {
        let a = x[self.diff.anchor];
        lse_iter(x.iter().map(move |v| v - a))
    }

    /// Tangent-line lower bound on `se(x̃)`.
    fn se_tangent(&self, x: &[f64]) -> f64 {
        let t = &self.lin.t;
        1.0 + (0..x.len())
            .filter(|&j| j != self.diff.anchor)
            .map(|j| t[j].exp() * (self.xt(x, j) - t[j] + 1.0))
            .sum::<f64>()
    }

    pub(crate) fn lin_lo(&self, x: &[f64]) -> f64 {
        let tq = self.lin.t_q;
        (2.0 - self.se_bar(x) / tq) / tq
    }

    pub(crate) fn lin_hi(&self, x: &[f64]) -> f64 {
        let p_lo = self.consts.p_lo;
        let q = self.lin.q_lo_lin;
        1.0 / q + p_lo - p_lo / q * self.se_tangent(x)
    }

    pub(crate) fn er_lo(&self, x: &[f64]) -> f64 {
        1.0 / self.se_bar(x)
    }

    pub(crate) fn er_hi(&self, x: &[f64]) -> f64 {
        let ConstBounds { p_lo, p_hi } = self.consts;
        p_hi + p_lo - p_hi * p_lo * self.se_tilde(x)
    }

    /// `p_hi - R (lse(x̃) - lse(l̃))`, algebraically the log-sum-exp upper bound
    /// written so that it stays finite on a degenerate box.
    pub(crate) fn lse_hi(&self, x: &[f64]) -> f64 {
        self.consts.p_hi - self.log_mean * (self.lse_tilde(x) + self.log_p_hi)
    }

    pub(crate) fn lse2_lo(&self, x: &[f64]) -> f64 {
        let o = 1 - self.diff.anchor;
        let (l, u) = (self.diff.lower[o], self.diff.upper[o]);
        if u - l <= DEGENERATE_WIDTH {
            return self.consts.p_hi;
        }
        let w = ((self.xt(x, o) - l) / (u - l)).clamp(0.0, 1.0);
        (w * self.log_p_lo + (1.0 - w) * self.log_p_hi).exp()
    }
}

/// `(p_hi - p_lo) / (log p_hi - log p_lo)` with its limit `p_hi` when the two
/// coincide.
fn logarithmic_mean(p_hi: f64, log_p_hi: f64, log_p_lo: f64) -> f64 {
    let d = log_p_hi - log_p_lo;
    if d <= 1e-12 {
        return p_hi;
    }
    // p_lo / p_hi = exp(-d)
    p_hi * (-(-d).exp_m1()) / d
}

fn trivial(side: Side) -> f64 {
    match side {
        Side::Lower => 0.0,
        Side::Upper => 1.0,
    }
}

pub fn bound_lin(x: &[f64], d: &DiffBox, aux: &LinAux, side: Side) -> Result<f64> {
    let mut db = DiffBounds::new(d.clone());
    db.lin = aux.clone();
    db.check(x)?;
    if db.saturated {
        return Ok(trivial(side));
    }
    Ok(match side {
        Side::Lower => db.lin_lo(x),
        Side::Upper => db.lin_hi(x),
    })
}

pub fn bound_er(x: &[f64], d: &DiffBox, side: Side) -> Result<f64> {
    let db = DiffBounds::new(d.clone());
    db.check(x)?;
    if db.saturated {
        return Ok(trivial(side));
    }
    Ok(match side {
        Side::Lower => db.er_lo(x),
        Side::Upper => db.er_hi(x),
    })
}

/// The log-sum-exp family of bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LseVariant {
    /// Chords over the raw logit box; lower and upper sides.
    Lse,
    /// Chords over differences to the largest-midpoint logit; lower side.
    LseStar,
    /// Two-class geometric-mean bound; lower side.
    Lse2,
    /// Chord of `-log(1 + e^v)` composed with chords over the other logits;
    /// lower side.
    LsePrime,
}

/// Log-sum-exp bounds on output `0` over `region`.
pub fn bound_lse(x: &[f64], region: &Hyperbox, variant: LseVariant, side: Side) -> Result<f64> {
    let kind = match (variant, side) {
        (LseVariant::Lse, Side::Lower) => BoundKind::LseLo,
        (LseVariant::Lse, Side::Upper) => BoundKind::LseHi,
        (LseVariant::LseStar, Side::Lower) => BoundKind::LseStarLo,
        (LseVariant::Lse2, Side::Lower) => BoundKind::Lse2Lo,
        (LseVariant::LsePrime, Side::Lower) => BoundKind::LsePrimeLo,
        (v, Side::Upper) => {
            return Err(Error::Usage(format!("{v:?} has no upper side")));
        }
    };
    SoftmaxBounds::new(region.clone(), 0)?.value(kind, x)
}

/// Evaluates `kind` for output `0` at `x`.
pub fn evaluate(kind: BoundKind, x: &[f64], region: &Hyperbox) -> Result<f64> {
    SoftmaxBounds::new(region.clone(), 0)?.value(kind, x)
}

/// All bounds on output `target` over a fixed box, with the box-dependent
/// quantities computed once.
///
/// Values are immutable after construction; evaluation takes `&self` and the
/// type is `Send + Sync`.
#[derive(Debug, Clone)]
pub struct SoftmaxBounds {
    region: Hyperbox,
    target: usize,
    /// Difference bounds anchored at the target.
    pub(crate) main: DiffBounds,
    /// Largest-midpoint index and the chords of its difference box.
    pub(crate) star_anchor: usize,
    pub(crate) star: Chords,
    /// Chords of the raw logits shifted by `shift`.
    pub(crate) raw: Chords,
    pub(crate) shift: f64,
    pub(crate) prime: LsePrimeAux,
}

impl SoftmaxBounds {
    pub fn new(region: Hyperbox, target: usize) -> Result<Self> {
        let diff = diff_box(&region, target)?;
        Self::with_diff_box(region, diff)
    }

    /// Uses the supplied difference bounds for the target instead of the
    /// ones implied by `region`. The target is the difference box's anchor.
    pub fn with_diff_box(region: Hyperbox, diff: DiffBox) -> Result<Self> {
        check_len(region.dim(), diff.dim())?;
        let target = diff.anchor();
        let star_anchor = argmax_midpoint(&region);
        let star_diff = diff_box(&region, star_anchor)?;
        let star = Chords::new(star_diff.lower(), star_diff.upper());
        let shift = max(region.upper());
        let lo: Vec<f64> = region.lower().iter().map(|v| v - shift).collect();
        let hi: Vec<f64> = region.upper().iter().map(|v| v - shift).collect();
        let raw = Chords::new(&lo, &hi);
        let prime = lse_prime_aux(&region, target);
        Ok(Self {
            region,
            target,
            main: DiffBounds::new(diff),
            star_anchor,
            star,
            raw,
            shift,
            prime,
        })
    }

    pub fn region(&self) -> &Hyperbox {
        &self.region
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn diff_box(&self) -> &DiffBox {
        &self.main.diff
    }

    pub fn consts(&self) -> ConstBounds {
        self.main.consts
    }

    pub fn lin_aux(&self) -> &LinAux {
        &self.main.lin
    }

    pub fn lse_prime_aux(&self) -> LsePrimeAux {
        self.prime
    }

    /// The anchor of the starred difference variables.
    pub fn star_anchor(&self) -> usize {
        self.star_anchor
    }

    /// Set when the sum of exponentials over the box overflows; every
    /// non-constant bound then degrades to the trivial `[0, 1]`.
    pub fn saturated(&self) -> bool {
        self.main.saturated
    }

    /// Validates `x` against the box and `kind` against the dimension.
    pub(crate) fn check(&self, kind: BoundKind, x: &[f64]) -> Result<()> {
        if !kind.applicable(self.dim()) {
            return Err(Error::Usage(format!(
                "{kind} is not defined for K = {}",
                self.dim()
            )));
        }
        self.region.check_point(x)?;
        self.main.check(x)
    }

    /// Value of bound `kind` at `x`.
    pub fn value(&self, kind: BoundKind, x: &[f64]) -> Result<f64> {
        self.check(kind, x)?;
        Ok(self.value_unchecked(kind, x))
    }

    /// Value of bound `kind` at `x` without validating `x`; the caller
    /// guarantees `x` is finite, in the box, and `kind` applicable.
    pub fn value_unchecked(&self, kind: BoundKind, x: &[f64]) -> f64 {
        let m = &self.main;
        match kind {
            BoundKind::ConstLo => return m.consts.p_lo,
            BoundKind::ConstHi => return m.consts.p_hi,
            _ if m.saturated => return trivial(kind.side()),
            _ => {}
        }
        match kind {
            BoundKind::LinLo => m.lin_lo(x),
            BoundKind::LinHi => m.lin_hi(x),
            BoundKind::ErLo => m.er_lo(x),
            BoundKind::ErHi => m.er_hi(x),
            BoundKind::LseLo => self.lse_lo(x),
            BoundKind::LseStarLo => self.lse_star_lo(x),
            BoundKind::Lse2Lo => m.lse2_lo(x),
            BoundKind::LsePrimeLo => self.lse_prime_lo(x),
            BoundKind::LseHi => m.lse_hi(x),
            BoundKind::ConstLo | BoundKind::ConstHi => unreachable!(),
        }
    }

    /// `(sum_j chord_j(x_j), e^{x_target})` in coordinates shifted by the
    /// largest upper bound.
    #[inline]
    pub(crate) fn raw_parts(&self, x: &[f64]) -> (f64, f64) {
        let s: f64 = (0..x.len())
            .map(|j| self.raw.term(j, x[j] - self.shift))
            .sum();
        (s, (x[self.target] - self.shift).exp())
    }

    pub(crate) fn lse_lo(&self, x: &[f64]) -> f64 {
        let (s, e) = self.raw_parts(x);
        e / s
    }

    /// `(chord sum over ẋ, e^{ẋ_target})`.
    #[inline]
    pub(crate) fn star_parts(&self, x: &[f64]) -> (f64, f64) {
        let a = x[self.star_anchor];
        let s: f64 = (0..x.len()).map(|j| self.star.term(j, x[j] - a)).sum();
        (s, (x[self.target] - a).exp())
    }

    pub(crate) fn lse_star_lo(&self, x: &[f64]) -> f64 {
        let (s, e) = self.star_parts(x);
        e / s
    }

    /// Slope of the chord of `-softplus` over `[v_lo, v_hi]`.
    pub(crate) fn prime_slope(&self) -> f64 {
        let LsePrimeAux { v_lo, v_hi } = self.prime;
        if v_hi - v_lo <= 1e-9 {
            -sigmoid(0.5 * (v_lo + v_hi))
        } else {
            (softplus(v_lo) - softplus(v_hi)) / (v_hi - v_lo)
        }
    }

    pub(crate) fn lse_prime_lo(&self, x: &[f64]) -> f64 {
        let a = self.target;
        let rest: f64 = (0..x.len())
            .filter(|&j| j != a)
            .map(|j| self.raw.term(j, x[j] - self.shift))
            .sum();
        // chord upper bound on lse(x_{-a}) - x_a
        let w = rest.ln() + self.shift - x[a];
        (-softplus(self.prime.v_lo) + self.prime_slope() * (w - self.prime.v_lo)).exp()
    }
}
