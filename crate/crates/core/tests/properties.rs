mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softbound::bounds::{softmax, BoundKind, Hyperbox, Side, SoftmaxBounds};
use softbound::lp::{solve, LpStatus};
use softbound::netverify::{interval_propagate, relu_relaxation, Ensemble, ReluPhase};
use softbound::synth::{run_experiment, DirichletSpec};
use softbound::Exec;

use common::{le_rel, random_bounded_lp};

/// A box of `k` logits with a point inside and a second point for segments.
#[derive(Debug, Clone)]
struct Case {
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Case {
    fn region(&self) -> Hyperbox {
        Hyperbox::new(self.lower.clone(), self.upper.clone()).unwrap()
    }

    fn bounds(&self) -> SoftmaxBounds {
        SoftmaxBounds::new(self.region(), 0).unwrap()
    }
}

fn case(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Case> {
    k.prop_flat_map(|k| {
        (
            prop::collection::vec(-3.0f64..3.0, k),
            prop::collection::vec(0.01f64..4.0, k),
            prop::collection::vec(0.0f64..=1.0, k),
            prop::collection::vec(0.0f64..=1.0, k),
        )
    })
    .prop_map(|(c, w, s, t)| {
        let lower: Vec<f64> = c.iter().zip(&w).map(|(c, w)| c - w / 2.0).collect();
        let upper: Vec<f64> = c.iter().zip(&w).map(|(c, w)| c + w / 2.0).collect();
        let at = |f: &[f64]| {
            lower
                .iter()
                .zip(&upper)
                .zip(f)
                .map(|((l, u), f)| l + (u - l) * f)
                .collect()
        };
        Case {
            x: at(&s),
            y: at(&t),
            lower,
            upper,
        }
    })
}

fn applicable(k: usize) -> impl Iterator<Item = BoundKind> {
    BoundKind::ALL.into_iter().filter(move |b| b.applicable(k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn every_bound_is_sound(c in case(2..=8)) {
        let b = c.bounds();
        let p = softmax(&c.x).unwrap()[0];
        for kind in applicable(c.x.len()) {
            let v = b.value(kind, &c.x).unwrap();
            match kind.side() {
                Side::Lower => prop_assert!(le_rel(v, p, 1e-9), "{kind}: {v} > {p}"),
                Side::Upper => prop_assert!(le_rel(p, v, 1e-9), "{kind}: {v} < {p}"),
            }
        }
    }

    #[test]
    fn bounds_stay_consistent_with_constants(c in case(2..=8), seed in any::<u64>()) {
        use rand::Rng;
        let b = c.bounds();
        let consts = b.consts();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kind in applicable(c.x.len()) {
            let mut extreme = match kind.side() {
                Side::Lower => f64::NEG_INFINITY,
                Side::Upper => f64::INFINITY,
            };
            for _ in 0..32 {
                let x: Vec<f64> = c.lower.iter().zip(&c.upper).map(|(l, u)| l + (u - l) * rng.gen::<f64>()).collect();
                let v = b.value(kind, &x).unwrap();
                extreme = match kind.side() {
                    Side::Lower => extreme.max(v),
                    Side::Upper => extreme.min(v),
                };
            }
            match kind.side() {
                Side::Lower => prop_assert!(le_rel(extreme, consts.p_hi, 1e-9), "{kind}: max {extreme} > {}", consts.p_hi),
                Side::Upper => prop_assert!(le_rel(consts.p_lo, extreme, 1e-9), "{kind}: min {extreme} < {}", consts.p_lo),
            }
        }
    }

    #[test]
    fn er_bounds_are_tight_at_extreme_corners(c in case(2..=8)) {
        let b = c.bounds();
        let consts = b.consts();
        let k = c.x.len();
        // Worst corner for output 0: own logit low, others high; best corner reversed.
        let worst: Vec<f64> = (0..k).map(|j| if j == 0 { c.lower[0] } else { c.upper[j] }).collect();
        let best: Vec<f64> = (0..k).map(|j| if j == 0 { c.upper[0] } else { c.lower[j] }).collect();
        for kind in [BoundKind::ErLo, BoundKind::ErHi] {
            let (lo, hi) = (b.value(kind, &worst).unwrap(), b.value(kind, &best).unwrap());
            prop_assert!((lo - consts.p_lo).abs() <= 1e-12 * consts.p_lo.max(1e-300) + 1e-15, "{kind}: {lo} vs {}", consts.p_lo);
            prop_assert!((hi - consts.p_hi).abs() <= 1e-12 * consts.p_hi + 1e-15, "{kind}: {hi} vs {}", consts.p_hi);
        }
    }

    #[test]
    fn other_targets_are_index_permutations(c in case(2..=6), pick in any::<prop::sample::Index>()) {
        let k = c.x.len();
        let t = pick.index(k);
        let swap = |v: &[f64]| {
            let mut w = v.to_vec();
            w.swap(0, t);
            w
        };
        let direct = SoftmaxBounds::new(c.region(), t).unwrap();
        let swapped = SoftmaxBounds::new(Hyperbox::new(swap(&c.lower), swap(&c.upper)).unwrap(), 0).unwrap();
        let p = softmax(&c.x).unwrap()[t];
        prop_assert!((p - softmax(&swap(&c.x)).unwrap()[0]).abs() <= 1e-15);
        for kind in applicable(k) {
            let (v, w) = (direct.value(kind, &c.x).unwrap(), swapped.value(kind, &swap(&c.x)).unwrap());
            prop_assert!((v - w).abs() <= 1e-12 * (1.0 + v.abs()), "{kind} target {t}: {v} vs {w}");
        }
    }

    #[test]
    fn two_class_lse_sits_between_er_and_softmax(c in case(2..=2)) {
        let b = c.bounds();
        let (lo, hi) = (c.lower[1], c.upper[1]);
        for i in 0..=64 {
            let x = [c.x[0], lo + (hi - lo) * i as f64 / 64.0];
            let p = softmax(&x).unwrap()[0];
            let er = b.value(BoundKind::ErLo, &x).unwrap();
            let l2 = b.value(BoundKind::Lse2Lo, &x).unwrap();
            prop_assert!(le_rel(er, l2, 1e-9) && le_rel(l2, p, 1e-9), "{er} {l2} {p}");
        }
    }

    #[test]
    fn lower_bounds_convex_upper_concave(c in case(2..=6), t in 0.0f64..=1.0) {
        let b = c.bounds();
        let z: Vec<f64> = c.x.iter().zip(&c.y).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        for kind in applicable(c.x.len()) {
            if matches!(kind, BoundKind::ConstLo | BoundKind::ConstHi) {
                continue;
            }
            let (fx, fy, fz) = (
                b.value(kind, &c.x).unwrap(),
                b.value(kind, &c.y).unwrap(),
                b.value(kind, &z).unwrap(),
            );
            let chord = (1.0 - t) * fx + t * fy;
            let tol = 1e-9 * (1.0 + chord.abs());
            match kind.side() {
                Side::Lower => prop_assert!(fz <= chord + tol, "{kind}: {fz} above chord {chord}"),
                Side::Upper => prop_assert!(fz >= chord - tol, "{kind}: {fz} below chord {chord}"),
            }
        }
    }

    #[test]
    fn permuting_other_classes_changes_nothing(c in case(3..=7), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let k = c.x.len();
        let mut perm: Vec<usize> = (1..k).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        perm.insert(0, 0);
        let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pc = Case { lower: pick(&c.lower), upper: pick(&c.upper), x: pick(&c.x), y: pick(&c.y) };
        let (b, pb) = (c.bounds(), pc.bounds());
        for kind in applicable(k) {
            let (v, w) = (b.value(kind, &c.x).unwrap(), pb.value(kind, &pc.x).unwrap());
            prop_assert!((v - w).abs() <= 1e-12 * (1.0 + v.abs()), "{kind}: {v} vs {w}");
        }
    }

    #[test]
    fn common_shift_changes_nothing(c in case(2..=6)) {
        let shift = |v: &[f64]| v.iter().map(|a| a + 1000.0).collect::<Vec<_>>();
        let sc = Case { lower: shift(&c.lower), upper: shift(&c.upper), x: shift(&c.x), y: shift(&c.y) };
        let (b, sb) = (c.bounds(), sc.bounds());
        for kind in applicable(c.x.len()) {
            let (v, w) = (b.value(kind, &c.x).unwrap(), sb.value(kind, &sc.x).unwrap());
            prop_assert!(w.is_finite());
            prop_assert!((v - w).abs() <= 1e-9 * (1.0 + v.abs()), "{kind}: {v} vs {w}");
        }
    }

    #[test]
    fn tangent_planes_are_sound(c in case(2..=6)) {
        let b = c.bounds();
        let p = softmax(&c.y).unwrap()[0];
        for kind in BoundKind::NONLINEAR {
            let plane = b.tangent_plane(kind, &c.x).unwrap();
            let f = b.value(kind, &c.y).unwrap();
            let at_y = plane.eval(&c.y);
            let touch = plane.eval(&c.x) - b.value(kind, &c.x).unwrap();
            prop_assert!(touch.abs() <= 1e-12, "{kind}: plane misses its base point by {touch}");
            let tol = 1e-9 * (1.0 + f.abs());
            match kind.side() {
                Side::Lower => {
                    prop_assert!(at_y <= f + tol, "{kind}: plane {at_y} above bound {f}");
                    prop_assert!(at_y <= p + tol);
                }
                Side::Upper => {
                    prop_assert!(at_y >= f - tol, "{kind}: plane {at_y} below bound {f}");
                    prop_assert!(at_y >= p - tol);
                }
            }
        }
        for side in [Side::Lower, Side::Upper] {
            let plane = b.lin_plane(side);
            let kind = if side == Side::Lower { BoundKind::LinLo } else { BoundKind::LinHi };
            let v = b.value(kind, &c.y).unwrap();
            prop_assert!((plane.eval(&c.y) - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn gradients_match_finite_differences(c in case(2..=6)) {
        let b = c.bounds();
        for kind in BoundKind::NONLINEAR {
            let g = b.gradient(kind, &c.x).unwrap();
            let fd = b.finite_diff_gradient(kind, &c.x, 1e-5).unwrap();
            for (a, r) in g.iter().zip(&fd) {
                prop_assert!((a - r).abs() <= 1e-5 * r.abs().max(1.0), "{kind}: {a} vs {r}");
            }
        }
    }

    #[test]
    fn relu_relaxation_contains_graph(l in -5.0f64..5.0, w in 0.0f64..5.0, t in 0.0f64..=1.0) {
        let u = l + w;
        let z = l + w * t;
        let x = z.max(0.0);
        match relu_relaxation(l, u).unwrap() {
            ReluPhase::Inactive => prop_assert_eq!(x, 0.0),
            ReluPhase::Active => prop_assert_eq!(x, z),
            ReluPhase::Unstable { slope, intercept } => {
                prop_assert!(x >= z && x >= 0.0);
                prop_assert!(x <= slope * z + intercept + 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn brier_chord_dominance_dense(lo in 0.0f64..=1.0, hi in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let p = lo + (hi - lo) * t;
        prop_assert!((lo + hi) * p - lo * hi >= p * p - 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_optimum_is_feasible_and_dominates_witness(seed in any::<u64>(), n in 1usize..12, m in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lp, x0) = random_bounded_lp(&mut rng, n, m, 2);
        let sol = solve(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        for row in &lp.rows {
            prop_assert!(row.violation(&sol.point) <= 1e-7);
        }
        for (&(lo, hi), &v) in lp.var_bounds.iter().zip(&sol.point) {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
        let witness: f64 = lp.objective.iter().zip(&x0).map(|(c, v)| c * v).sum();
        prop_assert!(sol.objective_value >= witness - 1e-7 * (1.0 + witness.abs()));
    }

    #[test]
    fn interval_bounds_contain_reachable_traces(seed in any::<u64>(), radius in 0.0f64..1.0) {
        use rand::Rng;
        let ens = Ensemble::random(&[3, 6, 5, 2], 1, seed).unwrap();
        let net = &ens.members[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let center: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bounds = interval_propagate(net, &center, radius).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = center.iter().map(|c| c + radius * rng.gen_range(-1.0..=1.0)).collect();
            let trace = net.trace(&x).unwrap();
            prop_assert!(bounds.contains(&trace, 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_runs_are_reproducible(seed in any::<u64>(), k in 2usize..6, alpha in 1.0f64..20.0) {
        let spec = DirichletSpec::new(k, alpha, 0, seed).unwrap();
        let kinds: Vec<BoundKind> = applicable(k).collect();
        let a = run_experiment(&spec, 0.5, 8, 40, &kinds, Exec::Sequential).unwrap();
        let b = run_experiment(&spec, 0.5, 8, 40, &kinds, Exec::Parallel).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.min_gap >= -1e-9);
    }
}
