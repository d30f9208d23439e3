mod common;

use common::frontier_oracle::brute_force_frontier;
use exitbench_core::scoring::{
    build_baseline_curve, elue_score_dataset, interpolate, pareto_frontier, PerfPoint,
};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = PerfPoint> {
    // small integer grid so ties on each axis are common
    (1u32..40, 0u32..40).prop_map(|(f, p)| PerfPoint::new(f as f64, p as f64).unwrap())
}

fn curve_knots() -> impl Strategy<Value = Vec<PerfPoint>> {
    prop::collection::btree_set(1u32..100_000, 2..14).prop_flat_map(|fs| {
        let n = fs.len();
        prop::collection::vec(0.0f64..100.0, n).prop_map(move |ps| {
            fs.iter()
                .zip(ps)
                .map(|(&f, p)| PerfPoint::new(f as f64 * 1e5, p).unwrap())
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn frontier_matches_brute_force(points in prop::collection::vec(point(), 1..200)) {
        prop_assert_eq!(pareto_frontier(&points), brute_force_frontier(&points));
    }

    #[test]
    fn frontier_members_undominated_and_permutation_invariant(
        points in prop::collection::vec(point(), 1..100).prop_shuffle()
    ) {
        let front = pareto_frontier(&points);
        for a in &front {
            prop_assert!(!front.iter().any(|b| b.dominates(a)));
        }
        for p in &points {
            prop_assert!(front.contains(p) || front.iter().any(|m| m.dominates(p)));
        }
        let mut rev = points.clone();
        rev.reverse();
        prop_assert_eq!(pareto_frontier(&rev), front);
    }

    #[test]
    fn knots_score_zero(knots in curve_knots()) {
        let curve = build_baseline_curve(&knots, "d").unwrap();
        prop_assert_eq!(elue_score_dataset(&knots, &curve).unwrap().score, 0.0);
    }

    #[test]
    fn interpolation_bounded_between_knots(knots in curve_knots(), t in 0.0f64..1.0) {
        let curve = build_baseline_curve(&knots, "d").unwrap();
        for w in curve.knots().windows(2) {
            let f = w[0].flops + t * (w[1].flops - w[0].flops);
            let p = interpolate(&curve, f).perf;
            prop_assert!(p >= w[0].perf.min(w[1].perf) && p <= w[0].perf.max(w[1].perf));
        }
    }

    #[test]
    fn score_translation(
        knots in curve_knots(),
        subs in prop::collection::vec((1e5f64..1e10, 0.0f64..100.0), 1..10),
        c in -50.0f64..50.0,
    ) {
        let curve = build_baseline_curve(&knots, "d").unwrap();
        let pts: Vec<PerfPoint> = subs.iter().map(|&(f, p)| PerfPoint::new(f, p).unwrap()).collect();
        let base = elue_score_dataset(&pts, &curve).unwrap().score;

        let shifted: Vec<PerfPoint> = pts.iter().map(|p| PerfPoint::new(p.flops, p.perf + c).unwrap()).collect();
        prop_assert!((elue_score_dataset(&shifted, &curve).unwrap().score - (base + c)).abs() < 1e-12);

        let lifted: Vec<PerfPoint> = knots.iter().map(|k| PerfPoint::new(k.flops, k.perf + c).unwrap()).collect();
        let lifted = build_baseline_curve(&lifted, "d").unwrap();
        prop_assert!((elue_score_dataset(&pts, &lifted).unwrap().score - (base - c)).abs() < 1e-12);
    }
}
