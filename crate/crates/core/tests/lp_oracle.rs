mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softbound::lp::{check_feasible, solve, LinearProgram, LpStatus, Sense};

use common::{random_bounded_lp, vertex_enumeration};

/// Lagrangian dual of a primal with finite variable bounds, posed as a
/// maximization so the same solver can run it. Its optimum is the negated
/// primal optimum when strong duality holds.
fn dual(lp: &LinearProgram) -> LinearProgram {
    let n = lp.num_vars();
    let mut d = LinearProgram::new(0);
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for row in &lp.rows {
        let (lo, hi) = match row.sense {
            Sense::Le => (0.0, f64::INFINITY),
            Sense::Ge => (f64::NEG_INFINITY, 0.0),
            Sense::Eq => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let y = d.add_var(lo, hi, -row.rhs);
        for (j, &a) in row.coeffs.iter().enumerate() {
            if a != 0.0 {
                cols[j].push((y, a));
            }
        }
    }
    for (j, &(lo, hi)) in lp.var_bounds.iter().enumerate() {
        let s = d.add_var(0.0, f64::INFINITY, -hi);
        let t = d.add_var(0.0, f64::INFINITY, lo);
        cols[j].push((s, 1.0));
        cols[j].push((t, -1.0));
    }
    for (j, terms) in cols.iter().enumerate() {
        d.add_sparse_row(terms, Sense::Eq, lp.objective[j]);
    }
    d
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn textbook_examples() {
    let mut lp = LinearProgram::new(0);
    lp.add_var(0.0, f64::INFINITY, 1.0);
    lp.add_row(vec![1.0], Sense::Le, 1.0);
    let s = solve(&lp).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.objective_value - 1.0).abs() < 1e-12 && (s.point[0] - 1.0).abs() < 1e-12);

    let mut lp = LinearProgram::new(0);
    lp.add_var(0.0, 1.0, 1.0);
    lp.add_var(0.0, 1.0, 1.0);
    lp.add_row(vec![1.0, 1.0], Sense::Le, 1.0);
    let s = solve(&lp).unwrap();
    assert!((s.objective_value - 1.0).abs() < 1e-12);
    assert!((s.point[0] + s.point[1] - 1.0).abs() < 1e-12);

    let mut lp = LinearProgram::new(0);
    lp.add_var(0.0, f64::INFINITY, 3.0);
    lp.add_var(0.0, f64::INFINITY, 2.0);
    lp.add_row(vec![1.0, 1.0], Sense::Le, 4.0);
    lp.add_row(vec![1.0, 3.0], Sense::Le, 6.0);
    let s = solve(&lp).unwrap();
    assert!((s.objective_value - 12.0).abs() < 1e-12);
    assert!((s.point[0] - 4.0).abs() < 1e-12 && s.point[1].abs() < 1e-12);
}

#[test]
fn matches_vertex_enumeration_on_small_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=12);
        let (lp, _) = random_bounded_lp(&mut rng, n, m, 2);
        let s = solve(&lp).unwrap();
        let want = vertex_enumeration(&lp, 1e-9).expect("feasible by construction");
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(
            close(s.objective_value, want, 1e-7),
            "{} vs {want}",
            s.objective_value
        );
    }
}

#[test]
fn strong_duality_up_to_thirty_by_thirty() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.gen_range(1..=30);
        let m = rng.gen_range(1..=30);
        let (lp, x0) = random_bounded_lp(&mut rng, n, m, 3);
        let primal = solve(&lp).unwrap();
        assert_eq!(primal.status, LpStatus::Optimal);
        assert!(check_feasible(&lp, &primal.point, 1e-7).unwrap().feasible);
        let witness: f64 = lp.objective.iter().zip(&x0).map(|(c, v)| c * v).sum();
        assert!(witness <= primal.objective_value + 1e-7);

        let d = dual(&lp);
        let ds = solve(&d).unwrap();
        assert_eq!(
            ds.status,
            LpStatus::Optimal,
            "dual of a bounded feasible LP"
        );
        assert!(check_feasible(&d, &ds.point, 1e-7).unwrap().feasible);
        assert!(
            close(primal.objective_value, -ds.objective_value, 1e-7),
            "n={n} m={m}: primal {} dual {}",
            primal.objective_value,
            -ds.objective_value
        );
    }
}

#[test]
fn random_feasible_points_never_beat_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..30 {
        let (lp, x0) = random_bounded_lp(&mut rng, 6, 10, 0);
        let s = solve(&lp).unwrap();
        // Walk from the witness towards random box points while feasible.
        for _ in 0..200 {
            let target: Vec<f64> = lp
                .var_bounds
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                .collect();
            let t: f64 = rng.gen();
            let x: Vec<f64> = x0
                .iter()
                .zip(&target)
                .map(|(a, b)| a + t * (b - a))
                .collect();
            if check_feasible(&lp, &x, 0.0).unwrap().feasible {
                let v: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                assert!(v <= s.objective_value + 1e-7);
            }
        }
    }
}

#[test]
fn identical_programs_give_identical_answers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (lp, _) = random_bounded_lp(&mut rng, 20, 25, 3);
    let a = solve(&lp).unwrap();
    let b = solve(&lp.clone()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn detects_infeasible_and_unbounded_programs() {
    let mut lp = LinearProgram::new(0);
    lp.add_var(0.0, 1.0, 1.0);
    lp.add_row(vec![1.0], Sense::Ge, 2.0);
    assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);

    let mut lp = LinearProgram::new(0);
    lp.add_var(0.0, f64::INFINITY, 1.0);
    lp.add_var(0.0, f64::INFINITY, 0.0);
    lp.add_row(vec![1.0, -1.0], Sense::Le, 1.0);
    assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
}
