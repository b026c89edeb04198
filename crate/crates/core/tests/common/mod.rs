//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_distr::StandardNormal;
use softbound::lp::{LinearProgram, Sense};
use softbound::Hyperbox;

/// Box with standard normal center and per-coordinate widths in `[w_lo, w_hi]`,
/// plus a uniform point inside it.
pub fn random_box<R: Rng>(rng: &mut R, k: usize, w_lo: f64, w_hi: f64) -> (Hyperbox, Vec<f64>) {
    let center: Vec<f64> = (0..k)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let width: Vec<f64> = (0..k).map(|_| rng.gen_range(w_lo..=w_hi)).collect();
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
    let x = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
        .collect();
    (Hyperbox::new(lower, upper).unwrap(), x)
}

/// `a <= b` up to a relative tolerance.
pub fn le_rel(a: f64, b: f64, rel: f64) -> bool {
    a <= b + rel * a.abs().max(b.abs())
}

/// Bounded LP that is feasible by construction: finite variable bounds and
/// rows built around a known point, which is returned alongside. At most
/// `max_eq` rows are equalities.
pub fn random_bounded_lp<R: Rng>(
    rng: &mut R,
    n: usize,
    m: usize,
    max_eq: usize,
) -> (LinearProgram, Vec<f64>) {
    let mut lp = LinearProgram::new(0);
    let mut x0 = Vec::with_capacity(n);
    for _ in 0..n {
        let lo = rng.gen_range(-5.0..0.0);
        let hi = lo + rng.gen_range(0.5..6.0);
        x0.push(lo + (hi - lo) * rng.gen::<f64>());
        lp.add_var(lo, hi, rng.gen_range(-3.0..3.0));
    }
    let mut eqs = 0;
    for _ in 0..m {
        let mut coeffs: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(-4.0..4.0)
                }
            })
            .collect();
        if coeffs.iter().all(|&a| a == 0.0) {
            let j = rng.gen_range(0..n);
            coeffs[j] = rng.gen_range(0.5..4.0);
        }
        let act: f64 = coeffs.iter().zip(&x0).map(|(a, x)| a * x).sum();
        let (sense, rhs) = match rng.gen_range(0..10) {
            0 if eqs < max_eq => {
                eqs += 1;
                (Sense::Eq, act)
            }
            0..=5 => (Sense::Le, act + rng.gen_range(0.0..2.0)),
            _ => (Sense::Ge, act - rng.gen_range(0.0..2.0)),
        };
        lp.add_row(coeffs, sense, rhs);
    }
    (lp, x0)
}

/// Solves the square system `a x = b` by partial pivoting; `None` if singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Best objective over all basic feasible points, found by intersecting
/// every choice of `n` constraint hyperplanes. Needs finite variable bounds.
/// Returns `None` if no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram, tol: f64) -> Option<f64> {
    let n = lp.num_vars();
    let mut planes: Vec<(Vec<f64>, f64)> =
        lp.rows.iter().map(|r| (r.coeffs.clone(), r.rhs)).collect();
    for (j, &(lo, hi)) in lp.var_bounds.iter().enumerate() {
        assert!(
            lo.is_finite() && hi.is_finite(),
            "vertex enumeration needs finite bounds"
        );
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lo));
        planes.push((e, hi));
    }
    let mut best: Option<f64> = None;
    combinations(planes.len(), n, |pick| {
        let (a, b): (Vec<_>, Vec<_>) = pick.iter().map(|&i| planes[i].clone()).unzip();
        let Some(x) = solve_square(a, b) else { return };
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ok_rows = lp.rows.iter().all(|r| r.violation(&x) <= tol * scale);
        let ok_bounds = lp
            .var_bounds
            .iter()
            .zip(&x)
            .all(|(&(lo, hi), &v)| v >= lo - tol * scale && v <= hi + tol * scale);
        if ok_rows && ok_bounds {
            let val: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            best = Some(best.map_or(val, |b| b.max(val)));
        }
    });
    best
}
