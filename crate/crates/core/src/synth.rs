//! Synthetic tightness experiment.
//!
//! Softmax outputs are drawn from a Dirichlet distribution whose largest
//! concentration sits on one component, converted to centered logits, and
//! widened into a box of half-width `epsilon`. Uniform draws from each box
//! measure the mean gap between every bound and the true output `0`, both in
//! absolute terms and relative to the matching constant bound.
//!
//! Each region draws from its own ChaCha8 stream keyed by `(seed, region)`,
//! so results do not depend on how regions are scheduled.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, Hyperbox, Side, SoftmaxBounds};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Exec};

/// Output index whose bounds are measured.
pub const TARGET: usize = 0;

/// Largest-mean-component values swept by default.
pub const MU_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    pub k: usize,
    pub alpha_max: f64,
    pub j_max: usize,
    pub seed: u64,
}

impl DirichletSpec {
    pub fn new(k: usize, alpha_max: f64, j_max: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Usage(format!("need at least two classes, got {k}")));
        }
        if !(alpha_max >= 1.0) || !alpha_max.is_finite() {
            return Err(Error::Usage(format!(
                "alpha_max must be finite and >= 1, got {alpha_max}"
            )));
        }
        if j_max >= k {
            return Err(Error::Usage(format!(
                "j_max {j_max} out of range for K = {k}"
            )));
        }
        Ok(Self {
            k,
            alpha_max,
            j_max,
            seed,
        })
    }

    /// Spec whose largest mean component equals `mu_max`.
    pub fn from_mu_max(k: usize, mu_max: f64, j_max: usize, seed: u64) -> Result<Self> {
        if !(mu_max > 0.0 && mu_max < 1.0) {
            return Err(Error::Usage(format!(
                "mu_max must lie in (0, 1), got {mu_max}"
            )));
        }
        Self::new(k, alpha_for_mu(k, mu_max), j_max, seed)
    }

    /// Mean of the boosted component, `alpha_max / (alpha_max + K - 1)`.
    pub fn mu_max(&self) -> f64 {
        self.alpha_max / (self.alpha_max + (self.k - 1) as f64)
    }
}

/// Concentration that puts mean mass `mu` on the boosted component.
pub fn alpha_for_mu(k: usize, mu: f64) -> f64 {
    mu * (k - 1) as f64 / (1.0 - mu)
}

/// Grid points of [`MU_GRID`] reachable with `alpha_max >= 1`, i.e. `mu >= 1/K`.
pub fn default_mu_grid(k: usize) -> Vec<f64> {
    MU_GRID
        .iter()
        .copied()
        .filter(|&mu| alpha_for_mu(k, mu) >= 1.0)
        .collect()
}

/// One Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(spec: &DirichletSpec, rng: &mut R) -> Vec<f64> {
    let boosted = Gamma::new(spec.alpha_max, 1.0).expect("alpha_max validated");
    let unit = Gamma::new(1.0, 1.0).expect("unit shape");
    let mut g: Vec<f64> = (0..spec.k)
        .map(|j| {
            if j == spec.j_max {
                boosted.sample(rng)
            } else {
                unit.sample(rng)
            }
        })
        .collect();
    let total: f64 = g.iter().sum();
    for v in &mut g {
        *v /= total;
    }
    g
}

/// Centered logits `log(p_j / p_0) - mean`.
pub fn probs_to_logits(p: &[f64]) -> Result<Vec<f64>> {
    if p.len() < 2 {
        return Err(Error::Usage("need at least two probabilities".into()));
    }
    if let Some(j) = p.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "probability {j} is not strictly positive"
        )));
    }
    let logs: Vec<f64> = p.iter().map(|v| (v / p[0]).ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.into_iter().map(|v| v - mean).collect())
}

#[derive(Debug, Clone)]
pub struct RegionSample {
    pub center_logits: Vec<f64>,
    pub epsilon: f64,
    pub region: Hyperbox,
    pub draws: usize,
}

impl RegionSample {
    pub fn new(center_logits: Vec<f64>, epsilon: f64, draws: usize) -> Result<Self> {
        let region = Hyperbox::around(&center_logits, epsilon)?;
        Ok(Self {
            center_logits,
            epsilon,
            region,
            draws,
        })
    }
}

/// Independent random stream for one region.
pub fn region_rng(seed: u64, region: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(region as u64);
    rng
}

/// Mean gaps of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGaps {
    /// Mean gap per requested kind, in request order.
    pub gaps: Vec<f64>,
    /// Mean gap of the constant bound on each kind's side.
    pub const_gaps: Vec<f64>,
    /// Mean gap of the pointwise maximum of `lse_lo` and `lse_star_lo`.
    pub best_lse_gap: f64,
    /// Smallest single-sample gap seen; negative values mean an unsound bound.
    pub min_gap: f64,
}

impl RegionGaps {
    pub fn ratio(&self, i: usize) -> f64 {
        self.gaps[i] / self.const_gaps[i]
    }
}

#[inline]
fn softmax_at(x: &[f64], k: usize) -> f64 {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().map(|v| (v - mx).exp()).sum();
    (x[k] - mx).exp() / s
}

fn gap(side: Side, p: f64, bound: f64) -> f64 {
    match side {
        Side::Lower => p - bound,
        Side::Upper => bound - p,
    }
}

/// Samples `draws` uniform points in `region` and averages every gap.
pub fn measure_region<R: Rng + ?Sized>(
    region: &Hyperbox,
    draws: usize,
    kinds: &[BoundKind],
    rng: &mut R,
) -> Result<RegionGaps> {
    let b = SoftmaxBounds::new(region.clone(), TARGET)?;
    let k = region.dim();
    if let Some(bad) = kinds.iter().find(|kind| !kind.applicable(k)) {
        return Err(Error::Usage(format!("{bad} is not defined for K = {k}")));
    }
    let c = b.consts();
    let mut sums = vec![0.0; kinds.len()];
    let (mut const_lo, mut const_hi, mut best) = (0.0, 0.0, 0.0);
    let mut min_gap = f64::INFINITY;
    let (lo, hi) = (region.lower(), region.upper());
    let mut x = vec![0.0; k];
    for _ in 0..draws {
        for j in 0..k {
            x[j] = lo[j] + (hi[j] - lo[j]) * rng.gen::<f64>();
        }
        let p = softmax_at(&x, TARGET);
        for (s, &kind) in sums.iter_mut().zip(kinds) {
            let g = gap(kind.side(), p, b.value_unchecked(kind, &x));
            min_gap = min_gap.min(g);
            *s += g;
        }
        let lse = b.value_unchecked(BoundKind::LseLo, &x);
        let star = b.value_unchecked(BoundKind::LseStarLo, &x);
        best += p - lse.max(star);
        const_lo += p - c.p_lo;
        const_hi += c.p_hi - p;
    }
    let n = draws.max(1) as f64;
    Ok(RegionGaps {
        gaps: sums.iter().map(|s| s / n).collect(),
        const_gaps: kinds
            .iter()
            .map(|kind| match kind.side() {
                Side::Lower => const_lo / n,
                Side::Upper => const_hi / n,
            })
            .collect(),
        best_lse_gap: best / n,
        min_gap,
    })
}

/// Aggregate tightness of one bound kind at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindGap {
    pub kind: BoundKind,
    pub side: Side,
    pub mean_gap: f64,
    /// Mean over regions of the per-region ratio to the constant bound's gap.
    pub mean_ratio: f64,
    pub stderr_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStats {
    pub spec: DirichletSpec,
    /// Grid value this run was requested for; equals `spec.mu_max()` up to rounding.
    pub mu_max: f64,
    pub epsilon: f64,
    pub regions: usize,
    pub draws: usize,
    pub kinds: Vec<KindGap>,
    /// Mean gap of the pointwise best of `lse_lo` and `lse_star_lo`.
    pub best_lse_gap: f64,
    pub min_gap: f64,
    pub per_region: Vec<RegionGaps>,
}

impl GapStats {
    pub fn get(&self, kind: BoundKind) -> Option<&KindGap> {
        self.kinds.iter().find(|g| g.kind == kind)
    }
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `regions` independent regions for one Dirichlet spec.
pub fn run_experiment(
    spec: &DirichletSpec,
    epsilon: f64,
    regions: usize,
    draws: usize,
    kinds: &[BoundKind],
    exec: Exec,
) -> Result<GapStats> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Usage(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    if regions == 0 || draws == 0 {
        return Err(Error::Usage("regions and draws must be positive".into()));
    }
    if let Some(bad) = kinds.iter().find(|kind| !kind.applicable(spec.k)) {
        return Err(Error::Usage(format!(
            "{bad} is not defined for K = {}",
            spec.k
        )));
    }
    let per_region = map_indexed(exec, regions, |r| {
        let mut rng = region_rng(spec.seed, r);
        let p = sample_dirichlet(spec, &mut rng);
        let region = RegionSample::new(probs_to_logits(&p)?, epsilon, draws)?;
        measure_region(&region.region, draws, kinds, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let kind_stats = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let gaps: Vec<f64> = per_region.iter().map(|g| g.gaps[i]).collect();
            let ratios: Vec<f64> = per_region.iter().map(|g| g.ratio(i)).collect();
            let (mean_ratio, stderr_ratio) = mean_and_stderr(&ratios);
            KindGap {
                kind,
                side: kind.side(),
                mean_gap: mean_and_stderr(&gaps).0,
                mean_ratio,
                stderr_ratio,
            }
        })
        .collect();
    let best: Vec<f64> = per_region.iter().map(|g| g.best_lse_gap).collect();
    Ok(GapStats {
        spec: *spec,
        mu_max: spec.mu_max(),
        epsilon,
        regions,
        draws,
        kinds: kind_stats,
        best_lse_gap: mean_and_stderr(&best).0,
        min_gap: per_region
            .iter()
            .map(|g| g.min_gap)
            .fold(f64::INFINITY, f64::min),
        per_region,
    })
}

/// Whether the Dirichlet mass is boosted on the measured output or away from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// `j_max = 0`: output `0` tends to be the largest.
    High,
    /// `j_max = 1`: output `0` tends to be small.
    Low,
}

impl Case {
    pub fn j_max(self) -> usize {
        match self {
            Case::High => 0,
            Case::Low => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub k: usize,
    pub epsilon: f64,
    pub regions: usize,
    pub draws: usize,
    pub case: Case,
    pub seed: u64,
    pub kinds: Vec<BoundKind>,
    pub mu_grid: Vec<f64>,
    pub exec: Exec,
}

impl GridConfig {
    /// 100 regions x 1000 draws over the default grid with every applicable kind.
    pub fn standard(k: usize, epsilon: f64, case: Case, seed: u64) -> Self {
        Self {
            k,
            epsilon,
            regions: 100,
            draws: 1000,
            case,
            seed,
            kinds: BoundKind::ALL
                .into_iter()
                .filter(|b| b.applicable(k))
                .collect(),
            mu_grid: default_mu_grid(k),
            exec: Exec::default(),
        }
    }
}

/// Runs the experiment at every grid point. All grid points share `seed`.
pub fn run_grid(cfg: &GridConfig) -> Result<Vec<GapStats>> {
    cfg.mu_grid
        .iter()
        .map(|&mu| {
            let spec = DirichletSpec::from_mu_max(cfg.k, mu, cfg.case.j_max(), cfg.seed)?;
            let mut stats = run_experiment(
                &spec,
                cfg.epsilon,
                cfg.regions,
                cfg.draws,
                &cfg.kinds,
                cfg.exec,
            )?;
            stats.mu_max = mu;
            Ok(stats)
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "mu_max,kind,side,mean_gap,mean_ratio,stderr_ratio,regions,draws,epsilon,K,seed";

pub const PER_REGION_HEADER: &str = "mu_max,region,kind,side,mean_gap,ratio";

/// One row per `(mu_max, kind)`.
pub fn write_csv<W: Write>(mut w: W, stats: &[GapStats]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for s in stats {
        for g in &s.kinds {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.mu_max,
                g.kind,
                g.side,
                g.mean_gap,
                g.mean_ratio,
                g.stderr_ratio,
                s.regions,
                s.draws,
                s.epsilon,
                s.spec.k,
                s.spec.seed
            )?;
        }
    }
    Ok(())
}

/// One row per `(mu_max, region, kind)`.
pub fn write_per_region_csv<W: Write>(mut w: W, stats: &[GapStats]) -> Result<()> {
    writeln!(w, "{PER_REGION_HEADER}")?;
    for s in stats {
        for (r, region) in s.per_region.iter().enumerate() {
            for (i, g) in s.kinds.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    s.mu_max,
                    r,
                    g.kind,
                    g.side,
                    region.gaps[i],
                    region.ratio(i)
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::softmax;

    #[test]
    fn mu_max_formula() {
        let s = DirichletSpec::new(16, 15.0, 0, 1).unwrap();
        assert!((s.mu_max() - 0.5).abs() < 1e-15);
        let s = DirichletSpec::new(16, 1.0, 0, 1).unwrap();
        assert!((s.mu_max() - 0.0625).abs() < 1e-15);
        for mu in MU_GRID {
            let s = DirichletSpec::from_mu_max(16, mu, 0, 1).unwrap();
            assert!((s.mu_max() - mu).abs() < 1e-12);
        }
        assert_eq!(default_mu_grid(2), vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95]);
    }

    #[test]
    fn spec_validation() {
        assert!(DirichletSpec::new(16, 0.5, 0, 1).is_err());
        assert!(DirichletSpec::new(16, 2.0, 16, 1).is_err());
        assert!(DirichletSpec::new(1, 2.0, 0, 1).is_err());
    }

    #[test]
    fn dirichlet_means() {
        let mut rng = region_rng(7, 0);
        for (alpha, expect) in [(1.0, 1.0 / 16.0), (15.0, 0.5)] {
            let spec = DirichletSpec::new(16, alpha, 3, 7).unwrap();
            let n = 20_000;
            let mean = (0..n)
                .map(|_| sample_dirichlet(&spec, &mut rng)[3])
                .sum::<f64>()
                / n as f64;
            assert!((mean - expect).abs() < 0.01, "{alpha}: {mean}");
        }
    }

    #[test]
    fn logits_examples() {
        assert_eq!(probs_to_logits(&[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);
        let m = probs_to_logits(&[0.8807970779778824, 0.11920292202211756]).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12 && (m[1] + 1.0).abs() < 1e-12);
        assert!(matches!(
            probs_to_logits(&[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn logits_round_trip() {
        let mut rng = region_rng(3, 9);
        let spec = DirichletSpec::new(8, 2.0, 0, 3).unwrap();
        for _ in 0..1000 {
            let p = sample_dirichlet(&spec, &mut rng);
            let q = softmax(&probs_to_logits(&p).unwrap()).unwrap();
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_kinds_have_unit_ratio() {
        let spec = DirichletSpec::from_mu_max(4, 0.5, 0, 11).unwrap();
        let kinds = [BoundKind::ConstLo, BoundKind::ConstHi, BoundKind::ErLo];
        let s = run_experiment(&spec, 1.0, 4, 50, &kinds, Exec::Sequential).unwrap();
        for kind in [BoundKind::ConstLo, BoundKind::ConstHi] {
            let g = s.get(kind).unwrap();
            assert_eq!(g.mean_ratio, 1.0);
            assert_eq!(g.stderr_ratio, 0.0);
        }
        assert!(s.min_gap > -1e-9);
    }

    #[test]
    fn two_class_geometric_bound_beats_er_per_region() {
        let spec = DirichletSpec::from_mu_max(2, 0.7, 0, 5).unwrap();
        let kinds = [BoundKind::ErLo, BoundKind::Lse2Lo];
        let s = run_experiment(&spec, 1.5, 10, 200, &kinds, Exec::Sequential).unwrap();
        for r in &s.per_region {
            assert!(r.gaps[1] <= r.gaps[0] + 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let spec = DirichletSpec::from_mu_max(3, 0.5, 0, 2).unwrap();
        let s = run_experiment(&spec, 0.5, 2, 10, &[BoundKind::ErHi], Exec::Sequential).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, std::slice::from_ref(&s)).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("0.5,er_hi,upper,"));
        assert!(lines[1].ends_with(",2,10,0.5,3,2"));
        let mut out = Vec::new();
        write_per_region_csv(&mut out, &[s]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }
}
