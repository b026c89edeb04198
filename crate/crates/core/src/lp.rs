//! Dense linear programs and a bounded-variable primal simplex solver.
//!
//! Problems are stated as `maximize c·v` subject to rows `a_i·v (≤|=|≥) b_i`
//! and per-variable bounds `lo ≤ v ≤ hi` (infinite bounds allowed).
//!
//! Internally each row gets a logical variable `r_i = a_i·v` whose bounds
//! encode the row sense, giving the system `[A | -I] z = 0` with every
//! column bounded. Phase one adds one artificial column for each row whose
//! logical starts out of bounds and minimizes their sum. Both phases use
//! Dantzig pricing with bound flips and switch to Bland's rule after
//! `5 (m + n)` iterations without objective progress.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const PIVOT_TOLERANCE: f64 = 1e-10;
pub const RATIO_TOLERANCE: f64 = 1e-9;
const COST_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, v: &[f64]) -> f64 {
        self.coeffs.iter().zip(v).map(|(a, x)| a * x).sum()
    }

    /// Amount by which `v` violates this row, zero if satisfied.
    pub fn violation(&self, v: &[f64]) -> f64 {
        let act = self.activity(v);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// `maximize objective·v` subject to `rows` and `var_bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub var_bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// `n` variables, zero objective, no rows, all variables free.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            rows: Vec::new(),
            var_bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, lo: f64, hi: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.var_bounds.push((lo, hi));
        for row in &mut self.rows {
            row.coeffs.push(0.0);
        }
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.rows.push(Row { coeffs, sense, rhs });
    }

    /// Adds a row from `(index, coefficient)` pairs; repeated indices add up.
    pub fn add_sparse_row(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add_row(coeffs, sense, rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        check_len(n, self.var_bounds.len())?;
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Usage("non-finite objective coefficient".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            check_len(n, row.coeffs.len())?;
            if row.coeffs.iter().any(|a| !a.is_finite()) || !row.rhs.is_finite() {
                return Err(Error::Usage(format!("row {i} has a non-finite entry")));
            }
        }
        for (j, &(lo, hi)) in self.var_bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::Usage(format!("variable {j} has an invalid bound")));
            }
        }
        Ok(())
    }

    /// Plain-text dump: one `max` line, one line per row, one line per
    /// variable bound. Meant for debugging, not as an exchange format.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let terms = |c: &[f64]| {
            let parts: Vec<String> = c
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(j, a)| format!("{a:+} v{j}"))
                .collect();
            if parts.is_empty() {
                "0".to_string()
            } else {
                parts.join(" ")
            }
        };
        let _ = writeln!(s, "max {}", terms(&self.objective));
        for (i, row) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "r{i}: {} {} {}",
                terms(&row.coeffs),
                row.sense.symbol(),
                row.rhs
            );
        }
        for (j, (lo, hi)) in self.var_bounds.iter().enumerate() {
            let _ = writeln!(s, "bound v{j} {lo} {hi}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// `objective·point`; meaningful only when `status` is `Optimal`.
    pub objective_value: f64,
    pub point: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Largest row or bound violation.
    pub worst: f64,
}

/// Checks `point` against every row and bound with absolute tolerance `tol`.
pub fn check_feasible(lp: &LinearProgram, point: &[f64], tol: f64) -> Result<Feasibility> {
    check_len(lp.num_vars(), point.len())?;
    let rows = lp.rows.iter().map(|r| r.violation(point));
    let bounds = lp
        .var_bounds
        .iter()
        .zip(point)
        .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0));
    let worst = rows.chain(bounds).fold(0.0, f64::max);
    let worst = if point.iter().any(|v| !v.is_finite()) {
        f64::INFINITY
    } else {
        worst
    };
    Ok(Feasibility {
        feasible: worst <= tol,
        worst,
    })
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    Ok(Simplex::new(lp).run(lp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseEnd {
    Optimal,
    Unbounded,
    IterLimit,
}

const NONBASIC: usize = usize::MAX;

struct Simplex {
    m: usize,
    n: usize,
    cols: usize,
    /// `B^{-1} [A | -I | art]`, row-major `m x cols`.
    t: Vec<f64>,
    /// Original `[A | -I | art]`, kept to recompute basic values at the end.
    orig: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    n_art: usize,
    iterations: usize,
    max_iterations: usize,
}

fn start_value(lo: f64, hi: f64) -> f64 {
    if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}

impl Simplex {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let mut lo: Vec<f64> = lp.var_bounds.iter().map(|b| b.0).collect();
        let mut hi: Vec<f64> = lp.var_bounds.iter().map(|b| b.1).collect();
        let mut x: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| start_value(l, h))
            .collect();
        for row in &lp.rows {
            let (l, h) = match row.sense {
                Sense::Le => (f64::NEG_INFINITY, row.rhs),
                Sense::Ge => (row.rhs, f64::INFINITY),
                Sense::Eq => (row.rhs, row.rhs),
            };
            lo.push(l);
            hi.push(h);
        }
        // rows whose logical starts out of bounds get an artificial column
        let mut arts = Vec::new();
        let mut logical = Vec::with_capacity(m);
        for (i, row) in lp.rows.iter().enumerate() {
            let act = row.activity(&x[..n]);
            let (l, h) = (lo[n + i], hi[n + i]);
            if act > h {
                arts.push((i, -1.0, act - h));
                logical.push(h);
            } else if act < l {
                arts.push((i, 1.0, l - act));
                logical.push(l);
            } else {
                logical.push(act);
            }
        }
        x.extend(logical);
        let n_art = arts.len();
        let cols = n + m + n_art;
        let mut orig = vec![0.0; m * cols];
        for (i, row) in lp.rows.iter().enumerate() {
            orig[i * cols..i * cols + n].copy_from_slice(&row.coeffs);
            orig[i * cols + n + i] = -1.0;
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        for (k, &(i, sigma, value)) in arts.iter().enumerate() {
            let c = n + m + k;
            orig[i * cols + c] = sigma;
            basis[i] = c;
            lo.push(0.0);
            hi.push(f64::INFINITY);
            x.push(value);
        }
        let mut t = orig.clone();
        for (i, &b) in basis.iter().enumerate() {
            let piv = orig[i * cols + b];
            for v in &mut t[i * cols..(i + 1) * cols] {
                *v /= piv;
            }
        }
        let mut row_of = vec![NONBASIC; cols];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        Self {
            m,
            n,
            cols,
            t,
            orig,
            lo,
            hi,
            x,
            basis,
            row_of,
            n_art,
            iterations: 0,
            max_iterations: 50 * (m + cols) + 10_000,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        cost.iter().zip(&self.x).map(|(c, v)| c * v).sum()
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Entering column and direction (+1 increase, -1 decrease).
    fn price(&self, d: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_mag = 0.0;
        for j in 0..self.cols {
            if self.row_of[j] != NONBASIC || self.lo[j] == self.hi[j] {
                continue;
            }
            let dir = if d[j] < -COST_TOLERANCE && self.x[j] < self.hi[j] {
                1.0
            } else if d[j] > COST_TOLERANCE && self.x[j] > self.lo[j] {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if d[j].abs() > best_mag {
                best_mag = d[j].abs();
                best = Some((j, dir));
            }
        }
        best
    }

    /// Leaving row (or `None` for a bound flip) and the step length.
    fn ratio_test(&self, j: usize, dir: f64, bland: bool) -> Option<(Option<usize>, f64)> {
        let mut limits: Vec<(usize, f64, f64)> = Vec::new();
        let mut theta = f64::INFINITY;
        for i in 0..self.m {
            let alpha = self.at(i, j) * dir;
            let b = self.basis[i];
            let lim = if alpha > PIVOT_TOLERANCE && self.lo[b].is_finite() {
                ((self.x[b] - self.lo[b]) / alpha).max(0.0)
            } else if alpha < -PIVOT_TOLERANCE && self.hi[b].is_finite() {
                ((self.hi[b] - self.x[b]) / -alpha).max(0.0)
            } else {
                continue;
            };
            theta = theta.min(lim);
            limits.push((i, lim, alpha.abs()));
        }
        let flip = self.hi[j] - self.lo[j];
        if flip <= theta && flip.is_finite() {
            return Some((None, flip));
        }
        if !theta.is_finite() {
            return None;
        }
        let mut pick: Option<(usize, f64)> = None;
        for &(i, lim, mag) in &limits {
            if lim > theta + RATIO_TOLERANCE {
                continue;
            }
            pick = match pick {
                None => Some((i, mag)),
                Some((pi, pm)) => {
                    let better = if bland {
                        self.basis[i] < self.basis[pi]
                    } else {
                        mag > pm
                    };
                    if better {
                        Some((i, mag))
                    } else {
                        Some((pi, pm))
                    }
                }
            };
        }
        pick.map(|(i, _)| (Some(i), theta))
    }

    /// Moves nonbasic `j` by `step` in direction `dir` and updates basics.
    fn advance(&mut self, j: usize, dir: f64, step: f64) {
        if step == 0.0 {
            return;
        }
        self.x[j] += dir * step;
        for i in 0..self.m {
            let a = self.at(i, j);
            if a != 0.0 {
                let b = self.basis[i];
                self.x[b] -= dir * step * a;
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let piv = self.t[r * cols + j];
        for v in &mut self.t[r * cols..(r + 1) * cols] {
            *v /= piv;
        }
        let pivot_row: Vec<f64> = self.t[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + j];
            if f != 0.0 {
                let row = &mut self.t[i * cols..(i + 1) * cols];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[j] = 0.0;
            }
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = NONBASIC;
        self.basis[r] = j;
        self.row_of[j] = r;
    }

    fn snap_to_bound(&mut self, c: usize) {
        let v = self.x[c];
        self.x[c] = if (v - self.lo[c]).abs() <= (self.hi[c] - v).abs() {
            self.lo[c]
        } else {
            self.hi[c]
        };
    }

    fn run_phase(&mut self, cost: &[f64]) -> PhaseEnd {
        let stall_limit = 5 * (self.m + self.cols);
        let mut bland = false;
        let mut best = self.objective(cost);
        let mut stall = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return PhaseEnd::IterLimit;
            }
            let d = self.reduced_costs(cost);
            let Some((j, dir)) = self.price(&d, bland) else {
                return PhaseEnd::Optimal;
            };
            let Some((leave, step)) = self.ratio_test(j, dir, bland) else {
                return PhaseEnd::Unbounded;
            };
            self.iterations += 1;
            self.advance(j, dir, step);
            match leave {
                None => self.snap_to_bound(j),
                Some(r) => {
                    let b = self.basis[r];
                    self.pivot(r, j);
                    self.snap_to_bound(b);
                }
            }
            let obj = self.objective(cost);
            if obj < best - 1e-12 * (1.0 + best.abs()) {
                best = obj;
                stall = 0;
            } else {
                stall += 1;
                if stall >= stall_limit {
                    bland = true;
                }
            }
        }
    }

    /// Pivots zero-valued artificials out of the basis where possible and
    /// pins every artificial to zero.
    fn retire_artificials(&mut self) {
        let first = self.n + self.m;
        for r in 0..self.m {
            let b = self.basis[r];
            if b < first {
                continue;
            }
            let entering = (0..first)
                .filter(|&j| self.row_of[j] == NONBASIC)
                .max_by(|&a, &c| self.at(r, a).abs().total_cmp(&self.at(r, c).abs()))
                .filter(|&j| self.at(r, j).abs() > 1e-9);
            if let Some(j) = entering {
                let step = self.x[b] / self.at(r, j);
                self.advance(j, 1.0, step);
                self.pivot(r, j);
            }
        }
        for c in first..self.cols {
            self.lo[c] = 0.0;
            self.hi[c] = 0.0;
            self.x[c] = 0.0;
        }
    }

    /// Recomputes basic values from the original columns by Gaussian
    /// elimination with partial pivoting, discarding tableau drift.
    fn refresh_basics(&mut self) {
        let m = self.m;
        if m == 0 {
            return;
        }
        let cols = self.cols;
        let mut a = vec![0.0; m * (m + 1)];
        for i in 0..m {
            for (k, &b) in self.basis.iter().enumerate() {
                a[i * (m + 1) + k] = self.orig[i * cols + b];
            }
            let mut rhs = 0.0;
            for j in 0..cols {
                if self.row_of[j] == NONBASIC && self.x[j] != 0.0 {
                    rhs -= self.orig[i * cols + j] * self.x[j];
                }
            }
            a[i * (m + 1) + m] = rhs;
        }
        let w = m + 1;
        for col in 0..m {
            let p = (col..m)
                .max_by(|&r, &s| a[r * w + col].abs().total_cmp(&a[s * w + col].abs()))
                .unwrap_or(col);
            if a[p * w + col].abs() < 1e-13 {
                return;
            }
            if p != col {
                for k in 0..w {
                    a.swap(p * w + k, col * w + k);
                }
            }
            for r in 0..m {
                if r != col {
                    let f = a[r * w + col] / a[col * w + col];
                    if f != 0.0 {
                        for k in col..w {
                            a[r * w + k] -= f * a[col * w + k];
                        }
                    }
                }
            }
        }
        for k in 0..m {
            let b = self.basis[k];
            self.x[b] = a[k * w + m] / a[k * w + k];
        }
    }

    fn run(mut self, lp: &LinearProgram) -> LpSolution {
        let n = self.n;
        let finish = |s: &Simplex, status: LpStatus| {
            let point: Vec<f64> = s.x[..n]
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    // absorb round-off beyond the bounds
                    let (lo, hi) = (s.lo[j], s.hi[j]);
                    if v < lo && lo - v <= 1e-9 {
                        lo
                    } else if v > hi && v - hi <= 1e-9 {
                        hi
                    } else {
                        v
                    }
                })
                .collect();
            let objective_value = lp.objective.iter().zip(&point).map(|(c, v)| c * v).sum();
            LpSolution {
                status,
                objective_value,
                point,
                iterations: s.iterations,
            }
        };
        if (0..n).any(|j| self.lo[j] > self.hi[j])
            || (0..lp.num_rows()).any(|i| self.lo[n + i] > self.hi[n + i])
        {
            return finish(&self, LpStatus::Infeasible);
        }
        if self.n_art > 0 {
            let mut cost = vec![0.0; self.cols];
            for c in &mut cost[n + self.m..] {
                *c = 1.0;
            }
            let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            match self.run_phase(&cost) {
                PhaseEnd::IterLimit => return finish(&self, LpStatus::IterLimit),
                PhaseEnd::Unbounded => return finish(&self, LpStatus::Infeasible),
                PhaseEnd::Optimal => {}
            }
            if self.objective(&cost) > 1e-9 * scale {
                return finish(&self, LpStatus::Infeasible);
            }
            self.retire_artificials();
        }
        let mut cost = vec![0.0; self.cols];
        for (c, o) in cost.iter_mut().zip(&lp.objective) {
            *c = -o;
        }
        let status = match self.run_phase(&cost) {
            PhaseEnd::Optimal => LpStatus::Optimal,
            PhaseEnd::Unbounded => LpStatus::Unbounded,
            PhaseEnd::IterLimit => LpStatus::IterLimit,
        };
        self.refresh_basics();
        finish(&self, status)
    }
}
