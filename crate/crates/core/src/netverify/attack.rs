//! Projected gradient ascent on the ensemble score inside an ℓ∞ ball.
//!
//! Each step moves every input coordinate by `step` in the direction of the
//! gradient's sign and clamps back into the ball. For NLL the ascent target
//! is `-p_{y*}`, which has the same maximizers as `-ln p_{y*}` but stays
//! bounded; the returned value is always the true score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Ensemble, Mlp};
use super::program::{ScoreRule, ScoreSpec};
use crate::bounds::softmax;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub restarts: usize,
    pub steps: usize,
    /// Step size as a fraction of `epsilon`.
    pub step_fraction: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            steps: 200,
            step_fraction: 1.0 / 20.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub score: f64,
    pub point: Vec<f64>,
}

/// Gradient of `sum_k v_k p_k` through one member, given `v = dS/dp`.
fn member_backprop(net: &Mlp, x: &[f64], v: &[f64], grad: &mut [f64]) -> Result<()> {
    let trace = net.trace(x)?;
    let z = trace.last().expect("at least one layer");
    let p = softmax(z)?;
    let dot: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
    let mut g: Vec<f64> = p.iter().zip(v).map(|(pi, vi)| pi * (vi - dot)).collect();
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let mut back = vec![0.0; layer.inputs()];
        for (row, gi) in layer.w.iter().zip(&g) {
            if *gi != 0.0 {
                for (b, w) in back.iter_mut().zip(row) {
                    *b += w * gi;
                }
            }
        }
        if l > 0 {
            for (b, z) in back.iter_mut().zip(&trace[l - 1]) {
                if *z <= 0.0 {
                    *b = 0.0;
                }
            }
        }
        g = back;
    }
    for (a, b) in grad.iter_mut().zip(&g) {
        *a += b;
    }
    Ok(())
}

/// Gradient of the ascent target with respect to the input.
pub fn score_gradient(ens: &Ensemble, rule: ScoreRule, y: usize, x: &[f64]) -> Result<Vec<f64>> {
    let m = ens.members.len() as f64;
    let v: Vec<f64> = match rule {
        ScoreRule::Nll => (0..ens.classes())
            .map(|k| if k == y { -1.0 / m } else { 0.0 })
            .collect(),
        ScoreRule::Brier => {
            let p = ens.probabilities(x)?;
            p.iter()
                .enumerate()
                .map(|(k, &pk)| 2.0 * (pk - if k == y { 1.0 } else { 0.0 }) / m)
                .collect()
        }
    };
    let mut grad = vec![0.0; ens.inputs];
    for net in &ens.members {
        member_backprop(net, x, &v, &mut grad)?;
    }
    Ok(grad)
}

fn score_at(ens: &Ensemble, spec: &ScoreSpec, x: &[f64]) -> Result<f64> {
    Ok(spec.rule.score(&ens.probabilities(x)?, spec.y_star))
}

/// Best score found by projected sign-gradient ascent. The first restart
/// starts at `x_star` (or at `warm_start` if given), later restarts at
/// uniform points of the ball drawn from stream `restart` of `cfg.seed`.
pub fn empirical_attack_from(
    ens: &Ensemble,
    spec: &ScoreSpec,
    cfg: &AttackConfig,
    warm_start: Option<&[f64]>,
) -> Result<AttackResult> {
    spec.validate(ens)?;
    let (lo, hi) = (spec.lower(), spec.upper());
    let mut best = AttackResult {
        score: score_at(ens, spec, &spec.x_star)?,
        point: spec.x_star.clone(),
    };
    if spec.epsilon == 0.0 {
        return Ok(best);
    }
    let consider = |x: &[f64], best: &mut AttackResult| -> Result<()> {
        let s = score_at(ens, spec, x)?;
        if s > best.score {
            best.score = s;
            best.point = x.to_vec();
        }
        Ok(())
    };
    let warm: Option<Vec<f64>> = warm_start.map(|w| {
        w.iter()
            .zip(lo.iter().zip(&hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    });
    let step = spec.epsilon * cfg.step_fraction;
    for r in 0..cfg.restarts {
        let mut x: Vec<f64> = if r == 0 {
            warm.clone().unwrap_or_else(|| spec.x_star.clone())
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            lo.iter()
                .zip(&hi)
                .map(|(l, h)| l + (h - l) * rng.gen::<f64>())
                .collect()
        };
        consider(&x, &mut best)?;
        for _ in 0..cfg.steps {
            let g = score_gradient(ens, spec.rule, spec.y_star, &x)?;
            for j in 0..x.len() {
                let dir = if g[j] > 0.0 {
                    1.0
                } else if g[j] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                x[j] = (x[j] + step * dir).clamp(lo[j], hi[j]);
            }
            consider(&x, &mut best)?;
        }
    }
    Ok(best)
}

pub fn empirical_attack(
    ens: &Ensemble,
    spec: &ScoreSpec,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    empirical_attack_from(ens, spec, cfg, None)
}

/// Attacks over increasing radii, warm-starting each from the previous best
/// point, so the returned scores never decrease with the radius.
pub fn nested_attack(
    ens: &Ensemble,
    spec: &ScoreSpec,
    radii: &[f64],
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    let mut sorted: Vec<(usize, f64)> = radii.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut results: Vec<Option<AttackResult>> = vec![None; radii.len()];
    let mut prev: Option<Vec<f64>> = None;
    for (i, eps) in sorted {
        let s = ScoreSpec {
            epsilon: eps,
            ..spec.clone()
        };
        let r = empirical_attack_from(ens, &s, cfg, prev.as_deref())?;
        prev = Some(r.point.clone());
        results[i] = Some(r);
    }
    Ok(results
        .into_iter()
        .map(|r| r.expect("every radius attacked"))
        .collect())
}
