//! Tangent-plane linearizations of the nonlinear softmax bounds.
//!
//! A tangent plane of a convex lower bound is itself a lower bound, and a
//! tangent plane of a concave upper bound is an upper bound, so each plane
//! produced here is sound over the whole box that generated it. The
//! composed linear bounds (`lin_lo`, `lin_hi`) are already affine and are
//! exposed through [`SoftmaxBounds::lin_plane`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{softmax, BoundKind, Hyperbox, Side, SoftmaxBounds};
use crate::error::{check_len, Error, Result};

/// `coeffs · x + offset`, a linear bound on output `output_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineBound {
    pub coeffs: Vec<f64>,
    pub offset: f64,
    pub side: Side,
    pub output_index: usize,
}

impl AffineBound {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.offset
    }
}

/// Relative finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Where and for which bound to build a tangent plane.
#[derive(Debug, Clone)]
pub struct TangentSpec {
    pub kind: BoundKind,
    pub point: Vec<f64>,
    pub region: Hyperbox,
    pub output_index: usize,
}

impl TangentSpec {
    /// Tangent at the midpoint of `region`.
    pub fn at_midpoint(kind: BoundKind, region: Hyperbox, output_index: usize) -> Self {
        Self {
            kind,
            point: region.midpoint(),
            region,
            output_index,
        }
    }
}

fn require_nonlinear(kind: BoundKind) -> Result<()> {
    if BoundKind::NONLINEAR.contains(&kind) {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "no analytic gradient for {kind}; expected one of er_lo, er_hi, lse_lo, lse_star_lo, lse_hi"
        )))
    }
}

impl SoftmaxBounds {
    /// Analytic gradient of a nonlinear bound with respect to the logits.
    pub fn gradient(&self, kind: BoundKind, x: &[f64]) -> Result<Vec<f64>> {
        require_nonlinear(kind)?;
        self.check(kind, x)?;
        if self.saturated() {
            return Ok(vec![0.0; x.len()]);
        }
        Ok(match kind {
            BoundKind::ErLo => self.er_lo_grad(x),
            BoundKind::ErHi => self.er_hi_grad(x),
            BoundKind::LseLo => self.lse_lo_grad(x),
            BoundKind::LseStarLo if self.star_anchor() == self.target() => self.er_lo_grad(x),
            BoundKind::LseStarLo => self.lse_star_lo_grad(x),
            BoundKind::LseHi => self.lse_hi_grad(x)?,
            _ => unreachable!(),
        })
    }

    fn er_lo_grad(&self, x: &[f64]) -> Vec<f64> {
        let a = self.target();
        let l = self.main.er_lo(x);
        let l2 = l * l;
        let mut g = vec![0.0; x.len()];
        for j in (0..x.len()).filter(|&j| j != a) {
            let s = self.main.chords.slope(j);
            g[j] = -l2 * s;
            g[a] += l2 * s;
        }
        g
    }

    fn er_hi_grad(&self, x: &[f64]) -> Vec<f64> {
        let a = self.target();
        let c = self.consts();
        let pp = c.p_hi * c.p_lo;
        let mut g = vec![0.0; x.len()];
        for j in (0..x.len()).filter(|&j| j != a) {
            let e = (x[j] - x[a]).exp();
            g[j] = -pp * e;
            g[a] += pp * e;
        }
        g
    }

    fn lse_lo_grad(&self, x: &[f64]) -> Vec<f64> {
        let a = self.target();
        let (s, e) = self.raw_parts(x);
        let l = e / s;
        // e^{x_a} / sebar^2 in shifted coordinates; the slopes carry the same shift
        let w = l / s;
        let mut g: Vec<f64> = (0..x.len()).map(|j| -w * self.raw.slope(j)).collect();
        g[a] += l;
        g
    }

    fn lse_star_lo_grad(&self, x: &[f64]) -> Vec<f64> {
        let a = self.target();
        let js = self.star_anchor();
        let (s, e) = self.star_parts(x);
        let l = e / s;
        let w = l / s;
        // derivative in the starred differences, then chain through ẋ_j = x_j - x_{j*}
        let mut g = vec![0.0; x.len()];
        for j in (0..x.len()).filter(|&j| j != js) {
            g[j] = -w * self.star.slope(j);
        }
        g[a] += l;
        let total: f64 = (0..x.len()).filter(|&j| j != js).map(|j| g[j]).sum();
        g[js] = -total;
        g
    }

    fn lse_hi_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a = self.target();
        let r = self.main.log_mean;
        let p = softmax(x)?;
        let mut g: Vec<f64> = p.iter().map(|pi| -r * pi).collect();
        g[a] += r;
        Ok(g)
    }

    /// Plane tangent to nonlinear bound `kind` at `point`.
    pub fn tangent_plane(&self, kind: BoundKind, point: &[f64]) -> Result<AffineBound> {
        let coeffs = self.gradient(kind, point)?;
        let value = self.value(kind, point)?;
        let offset = value - coeffs.iter().zip(point).map(|(c, v)| c * v).sum::<f64>();
        Ok(AffineBound {
            coeffs,
            offset,
            side: kind.side(),
            output_index: self.target(),
        })
    }

    /// Plane tangent at the midpoint of the box.
    pub fn midpoint_tangent(&self, kind: BoundKind) -> Result<AffineBound> {
        self.tangent_plane(kind, &self.region().midpoint())
    }

    /// The composed linear bound on `side` as an affine function of the logits.
    pub fn lin_plane(&self, side: Side) -> AffineBound {
        let a = self.target();
        let k = self.dim();
        let side_kind = match side {
            Side::Lower => BoundKind::LinLo,
            Side::Upper => BoundKind::LinHi,
        };
        if self.saturated() {
            return AffineBound {
                coeffs: vec![0.0; k],
                offset: if side == Side::Lower { 0.0 } else { 1.0 },
                side,
                output_index: a,
            };
        }
        let aux = self.lin_aux();
        // slope in each difference variable x_j - x_a
        let slope = |j: usize| match side {
            Side::Lower => -self.main.chords.slope(j) / (aux.t_q * aux.t_q),
            Side::Upper => -self.consts().p_lo / aux.q_lo_lin * aux.t[j].exp(),
        };
        let mut coeffs = vec![0.0; k];
        for j in (0..k).filter(|&j| j != a) {
            coeffs[j] = slope(j);
            coeffs[a] -= coeffs[j];
        }
        // both bounds are affine in the differences, so the offset is the value at x = 0
        let offset = self.value_unchecked(side_kind, &vec![0.0; k]);
        AffineBound {
            coeffs,
            offset,
            side,
            output_index: a,
        }
    }

    /// Central finite-difference gradient of `kind`, with per-coordinate step
    /// `h * max(1, |x_j|)` shrunk to keep both probes inside the box.
    pub fn finite_diff_gradient(&self, kind: BoundKind, x: &[f64], h: f64) -> Result<Vec<f64>> {
        self.check(kind, x)?;
        let (lo, hi) = (self.region().lower(), self.region().upper());
        let mut probe = x.to_vec();
        let mut g = vec![0.0; x.len()];
        for j in 0..x.len() {
            let step = h * 1f64.max(x[j].abs());
            let room_lo = (x[j] - lo[j]).max(0.0);
            let room_hi = (hi[j] - x[j]).max(0.0);
            let central = step.min(room_lo).min(room_hi);
            let (minus, plus) = if central > 0.0 {
                (central, central)
            } else if room_hi > 0.0 {
                (0.0, step.min(room_hi))
            } else if room_lo > 0.0 {
                (step.min(room_lo), 0.0)
            } else {
                // zero-width coordinate: the closed forms extend smoothly past the box
                (step, step)
            };
            probe[j] = x[j] + plus;
            let fp = self.value_unchecked(kind, &probe);
            probe[j] = x[j] - minus;
            let fm = self.value_unchecked(kind, &probe);
            probe[j] = x[j];
            g[j] = (fp - fm) / (plus + minus);
        }
        Ok(g)
    }
}

/// Gradient of bound `kind` on output `0`.
pub fn grad(kind: BoundKind, x: &[f64], region: &Hyperbox) -> Result<Vec<f64>> {
    SoftmaxBounds::new(region.clone(), 0)?.gradient(kind, x)
}

pub fn tangent_plane(spec: &TangentSpec) -> Result<AffineBound> {
    check_len(spec.region.dim(), spec.point.len())?;
    SoftmaxBounds::new(spec.region.clone(), spec.output_index)?
        .tangent_plane(spec.kind, &spec.point)
}

/// Finite-difference gradient of bound `kind` on output `0`.
pub fn finite_diff_grad(kind: BoundKind, x: &[f64], region: &Hyperbox, h: f64) -> Result<Vec<f64>> {
    SoftmaxBounds::new(region.clone(), 0)?.finite_diff_gradient(kind, x, h)
}

/// Largest relative disagreement between two gradients, scaled by
/// `max(1, |reference|)` per entry.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / 1f64.max(r.abs()))
        .fold(0.0, f64::max)
}

/// Worst gradient disagreement for one `(kind, K)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub kind: BoundKind,
    pub k: usize,
    pub points: usize,
    pub max_rel_error: f64,
}

/// Compares analytic and finite-difference gradients at `points` random
/// `(box, x)` pairs per kind and dimension. Boxes have standard normal
/// centers and per-coordinate widths uniform in `[0.01, 4]`; the target is
/// output `0`.
pub fn gradient_check(
    kinds: &[BoundKind],
    dims: &[usize],
    points: usize,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (di, &k) in dims.iter().enumerate() {
        for (ki, &kind) in kinds.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((di * kinds.len() + ki) as u64);
            let mut worst = 0.0f64;
            for _ in 0..points {
                let center: Vec<f64> = (0..k)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let width: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..=4.0)).collect();
                let lower: Vec<f64> = center
                    .iter()
                    .zip(&width)
                    .map(|(c, w)| c - w / 2.0)
                    .collect();
                let upper: Vec<f64> = center
                    .iter()
                    .zip(&width)
                    .map(|(c, w)| c + w / 2.0)
                    .collect();
                let x: Vec<f64> = lower
                    .iter()
                    .zip(&upper)
                    .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
                    .collect();
                let b = SoftmaxBounds::new(Hyperbox::new(lower, upper)?, 0)?;
                let analytic = b.gradient(kind, &x)?;
                let numeric = b.finite_diff_gradient(kind, &x, FD_STEP)?;
                worst = worst.max(max_relative_error(&analytic, &numeric));
            }
            out.push(GradCheck {
                kind,
                k,
                points,
                max_rel_error: worst,
            });
        }
    }
    Ok(out)
}
