use proptest::prelude::*;
use smpc_core::otcore::{coupling_from, hilbert_metric};
use smpc_core::*;

fn cost_strategy(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec(0.0..5.0f64, n * n)))
}

fn positive(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..20.0f64, len)
}

fn square(n: usize, data: Vec<f64>) -> CostMatrix {
    CostMatrix::new(n, n, data).unwrap()
}

proptest! {
    #[test]
    fn kernel_entries_lie_in_unit_interval((n, c) in cost_strategy(6), eps in 0.05..10.0f64) {
        let k = gibbs_kernel(&square(n, c), eps).unwrap();
        prop_assert!(k.as_slice().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn one_step_matches_row_marginals(
        (n, c) in cost_strategy(6),
        eps in 0.3..10.0f64,
        seed in positive(6),
    ) {
        let k = gibbs_kernel(&square(n, c), eps).unwrap();
        let m = Marginals::uniform(n, n);
        let pair = sinkhorn_step(&k, &m, &seed[..n]).unwrap();
        let p = coupling_from(&k, &pair);
        for (r, a) in p.row_sums().iter().zip(m.a()) {
            prop_assert!((r - a).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn step_is_invariant_to_scaling_alpha(
        (n, c) in cost_strategy(5),
        eps in 0.3..10.0f64,
        seed in positive(5),
        s in 0.01..100.0f64,
    ) {
        let k = gibbs_kernel(&square(n, c), eps).unwrap();
        let m = Marginals::uniform(n, n);
        let scaled: Vec<f64> = seed[..n].iter().map(|v| v * s).collect();
        let a = coupling_from(&k, &sinkhorn_step(&k, &m, &seed[..n]).unwrap());
        let b = coupling_from(&k, &sinkhorn_step(&k, &m, &scaled).unwrap());
        prop_assert!(a.max_abs_diff(b.plan()) <= 1e-12);
    }

    #[test]
    fn hilbert_metric_is_projective_and_triangular(
        x in positive(5), y in positive(5), z in positive(5),
        s in 0.01..100.0f64,
    ) {
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        let dxy = hilbert_metric(&x, &y).unwrap();
        prop_assert!(hilbert_metric(&x, &xs).unwrap() <= 1e-12);
        prop_assert!((hilbert_metric(&xs, &y).unwrap() - dxy).abs() <= 1e-10);
        prop_assert!((hilbert_metric(&y, &x).unwrap() - dxy).abs() <= 1e-12);
        let via = hilbert_metric(&x, &z).unwrap() + hilbert_metric(&z, &y).unwrap();
        prop_assert!(dxy <= via + 1e-10);
    }

    #[test]
    fn hungarian_agrees_with_enumeration((n, c) in cost_strategy(6)) {
        let cost = square(n, c);
        let fast = hungarian(&cost).unwrap();
        let slow = brute_force_assignment(&cost).unwrap();
        prop_assert!((fast.total_cost - slow.total_cost).abs() <= 1e-9);
        let mut seen = fast.sigma.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn targets_stay_in_the_hull(
        (n, c) in cost_strategy(5),
        eps in 0.3..10.0f64,
        pts in prop::collection::vec(-3.0..3.0f64, 10),
    ) {
        let points: Vec<Vec<f64>> = pts[..2 * n].chunks(2).map(|p| p.to_vec()).collect();
        let set = TargetSet::new(points.clone()).unwrap();
        let k = gibbs_kernel(&square(n, c), eps).unwrap();
        let m = Marginals::uniform(n, n);
        let sol = sinkhorn_solve(&k, &m, &vec![1.0; n], StoppingPolicy::tolerance(1e-6)).unwrap();
        let out = barycentric_targets(&sol.coupling, &set, m.a()).unwrap();
        for t in out {
            for d in 0..2 {
                let lo = points.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
                let hi = points.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(t[d] >= lo - 1e-9 && t[d] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn reduction_preserves_the_solution((n, c) in cost_strategy(5), eps in 0.5..5.0f64) {
        let cost = square(n, c);
        let m = Marginals::uniform(n, n);
        let policy = StoppingPolicy::tolerance(1e-12);
        let a = sinkhorn_solve(&gibbs_kernel(&cost, eps).unwrap(), &m, &vec![1.0; n], policy).unwrap();
        let b = sinkhorn_solve(&gibbs_kernel(&cost.reduced(), eps).unwrap(), &m, &vec![1.0; n], policy).unwrap();
        prop_assert!(a.coupling.max_abs_diff(b.coupling.plan()) <= 1e-9);
    }
}
