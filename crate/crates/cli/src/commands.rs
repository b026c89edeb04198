use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use softbound::bounds::BoundKind;
use softbound::netverify::{
    clean_score, empirical_attack, verify_all, AttackConfig, BoundFamily, Ensemble, ScoreRule,
    ScoreSpec,
};
use softbound::synth::{self, Case, GridConfig};
use softbound::{gradient_check, softmax, Exec, Hyperbox, SoftmaxBounds};

use crate::{
    AttackArgs, BoundsArgs, CaseArg, Failure, GenNetArgs, GradcheckArgs, QueryArgs, RuleArg,
    SynthArgs, VerifyArgs,
};

type CmdResult = Result<(), Failure>;

fn emit(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn parse_kinds(names: &Option<Vec<String>>, k: usize) -> anyhow::Result<Vec<BoundKind>> {
    match names {
        None => Ok(BoundKind::ALL
            .into_iter()
            .filter(|b| b.applicable(k))
            .collect()),
        Some(list) => list
            .iter()
            .map(|s| {
                let kind: BoundKind = s.parse()?;
                if !kind.applicable(k) {
                    bail!("{kind} is not defined for K = {k}");
                }
                Ok(kind)
            })
            .collect(),
    }
}

pub fn bounds(a: &BoundsArgs) -> CmdResult {
    if let Some(at) = &a.at {
        return Ok(bounds_at(a, at)?);
    }
    if a.k.is_some_and(|k| k != 2) {
        return Err(anyhow!("grid mode needs --k 2; use --at for other K").into());
    }
    if a.grid < 2 {
        return Err(anyhow!("--grid must be at least 2").into());
    }
    let lower = a.lower.clone().unwrap_or_else(|| vec![0.0, a.lo]);
    let upper = a.upper.clone().unwrap_or_else(|| vec![0.0, a.hi]);
    let region = Hyperbox::new(lower, upper)?;
    if region.dim() != 2 {
        return Err(anyhow!("grid mode needs two-class bounds").into());
    }
    if a.target >= 2 {
        return Err(anyhow!("--target must be 0 or 1").into());
    }
    let kinds = parse_kinds(&a.kinds, 2)?;
    let b = SoftmaxBounds::new(region.clone(), a.target)?;
    let x1 = region.midpoint()[0];
    let (lo, hi) = (region.lower()[1], region.upper()[1]);
    let mut csv = String::from("x2,kind,value\n");
    for i in 0..a.grid {
        let x2 = if i + 1 == a.grid {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (a.grid - 1) as f64
        };
        let x = [x1, x2];
        let _ = writeln!(csv, "{x2},softmax,{}", softmax(&x)?[a.target]);
        for &kind in &kinds {
            let _ = writeln!(csv, "{x2},{kind},{}", b.value(kind, &x)?);
        }
    }
    Ok(emit(&a.out, &csv)?)
}

fn bounds_at(a: &BoundsArgs, at: &[f64]) -> anyhow::Result<()> {
    let k = at.len();
    if a.k.is_some_and(|n| n != k) {
        bail!("--at has {k} entries but --k is {}", a.k.unwrap_or(k));
    }
    let lower = a.lower.clone().unwrap_or_else(|| vec![a.lo; k]);
    let upper = a.upper.clone().unwrap_or_else(|| vec![a.hi; k]);
    let region = Hyperbox::new(lower, upper)?;
    if region.dim() != k {
        bail!("--at has {k} entries but the box has {}", region.dim());
    }
    if a.target >= k {
        bail!("--target {} out of range for K = {k}", a.target);
    }
    let kinds = parse_kinds(&a.kinds, k)?;
    let b = SoftmaxBounds::new(region, a.target)?;
    let mut csv = String::from("kind,side,value\n");
    let _ = writeln!(csv, "softmax,exact,{}", softmax(at)?[a.target]);
    for kind in kinds {
        let _ = writeln!(csv, "{kind},{},{}", kind.side(), b.value(kind, at)?);
    }
    emit(&a.out, &csv)
}

#[derive(Serialize)]
struct GradcheckReport {
    seed: u64,
    points: usize,
    tolerance: f64,
    max_rel_error: f64,
    passed: bool,
    checks: Vec<softbound::GradCheck>,
}

pub fn gradcheck(a: &GradcheckArgs) -> CmdResult {
    if a.k_values.iter().any(|&k| k < 2) {
        return Err(anyhow!("every --k-values entry must be at least 2").into());
    }
    let checks = gradient_check(&BoundKind::NONLINEAR, &a.k_values, a.points, a.seed)?;
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let report = GradcheckReport {
        seed: a.seed,
        points: a.points,
        tolerance: a.tolerance,
        max_rel_error,
        passed: max_rel_error <= a.tolerance,
        checks,
    };
    emit(&a.out, &json(&report)?)?;
    if !report.passed {
        return Err(Failure::Invariant(format!(
            "gradient error {max_rel_error:e} exceeds {:e}",
            a.tolerance
        )));
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let seed = match a.seed {
        Some(s) => s,
        None if std::env::var_os("CI").is_some() => {
            return Err(anyhow!("--seed is required when CI is set").into())
        }
        None => 0,
    };
    let case = match a.case {
        CaseArg::High => Case::High,
        CaseArg::Low => Case::Low,
    };
    let mut cfg = GridConfig::standard(a.k, a.epsilon, case, seed);
    cfg.regions = a.regions;
    cfg.draws = a.draws;
    cfg.kinds = parse_kinds(&a.kinds, a.k)?;
    if let Some(grid) = &a.mu_grid {
        cfg.mu_grid = grid.clone();
    }
    if a.sequential {
        cfg.exec = Exec::Sequential;
    }
    let stats = synth::run_grid(&cfg)?;
    let mut out = Vec::new();
    synth::write_csv(&mut out, &stats)?;
    emit(&a.out, &String::from_utf8(out).expect("ascii csv"))?;
    if let Some(path) = &a.per_region {
        let mut out = Vec::new();
        synth::write_per_region_csv(&mut out, &stats)?;
        std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    let worst = stats
        .iter()
        .map(|s| s.min_gap)
        .fold(f64::INFINITY, f64::min);
    if worst < -1e-9 {
        return Err(Failure::Invariant(format!(
            "a bound was crossed by {:e}",
            -worst
        )));
    }
    Ok(())
}

pub fn gen_net(a: &GenNetArgs) -> CmdResult {
    let ens = Ensemble::random(&a.widths, a.members, a.seed)?;
    Ok(emit(&a.out, &(ens.to_json()? + "\n"))?)
}

fn load_query(q: &QueryArgs) -> anyhow::Result<(Ensemble, ScoreSpec, AttackConfig)> {
    let ens = Ensemble::load(&q.net).with_context(|| format!("loading {}", q.net.display()))?;
    let spec = ScoreSpec {
        rule: match q.rule {
            RuleArg::Nll => ScoreRule::Nll,
            RuleArg::Brier => ScoreRule::Brier,
        },
        y_star: q.y_star,
        x_star: q.x_star.clone(),
        epsilon: q.eps,
    };
    spec.validate(&ens)?;
    let cfg = AttackConfig {
        restarts: q.restarts,
        steps: q.steps,
        seed: q.seed,
        ..AttackConfig::default()
    };
    Ok((ens, spec, cfg))
}

pub fn verify(a: &VerifyArgs) -> CmdResult {
    let (ens, spec, cfg) = load_query(&a.query)?;
    let families: Vec<BoundFamily> = match &a.families {
        None => BoundFamily::ALL.to_vec(),
        Some(names) => names.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
    };
    let report = verify_all(&ens, &spec, &families, &cfg, a.timing)?;
    emit(&a.query.out, &json(&report)?)?;
    let violations = report.violations(a.tolerance);
    if !violations.is_empty() {
        return Err(Failure::Invariant(violations.join("; ")));
    }
    Ok(())
}

#[derive(Serialize)]
struct AttackReport {
    spec: ScoreSpec,
    clean_score: f64,
    score: f64,
    point: Vec<f64>,
}

pub fn attack(a: &AttackArgs) -> CmdResult {
    let (ens, spec, cfg) = load_query(&a.query)?;
    let r = empirical_attack(&ens, &spec, &cfg)?;
    let report = AttackReport {
        clean_score: clean_score(&ens, &spec)?,
        score: r.score,
        point: r.point,
        spec,
    };
    Ok(emit(&a.query.out, &json(&report)?)?)
}
