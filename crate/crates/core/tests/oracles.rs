//! Independent oracles for the control and transport layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smpc_core::analysis;
use smpc_core::numerics::{continuous_gramian, mat_power};
use smpc_core::otcore::contraction_factor;
use smpc_core::*;

fn ex2d() -> LinearSystem {
    LinearSystem::continuous(Matrix::from_rows(&[[2.0, 1.3], [-0.5, 1.0]]).unwrap(), Matrix::identity(2)).unwrap()
}

/// `e^{Ah}` by a 20-term Taylor series in plain arithmetic (row-major 2×2).
fn exp_small(a: &[f64; 4], h: f64) -> [f64; 4] {
    let mut out = [1.0, 0.0, 0.0, 1.0];
    let mut term = [1.0, 0.0, 0.0, 1.0];
    for k in 1..20 {
        let t = term;
        let s = h / k as f64;
        term = [
            s * (t[0] * a[0] + t[1] * a[2]),
            s * (t[0] * a[1] + t[1] * a[3]),
            s * (t[2] * a[0] + t[3] * a[2]),
            s * (t[2] * a[1] + t[3] * a[3]),
        ];
        for i in 0..4 {
            out[i] += term[i];
        }
    }
    out
}

#[test]
fn continuous_gramian_matches_quadrature() {
    // B = I, so the integrand is e^{Aτ} e^{Aᵀτ}; composite Simpson with step 1e-4
    let a = [2.0, 1.3, -0.5, 1.0];
    let (t_h, h) = (2.0, 1e-4);
    let steps = (t_h / h) as usize;
    let step = exp_small(&a, h);
    let mut e = [1.0, 0.0, 0.0, 1.0];
    let mut sum = [0.0; 4];
    for k in 0..=steps {
        let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let f = [
            e[0] * e[0] + e[1] * e[1],
            e[0] * e[2] + e[1] * e[3],
            e[2] * e[0] + e[3] * e[1],
            e[2] * e[2] + e[3] * e[3],
        ];
        for i in 0..4 {
            sum[i] += w * f[i];
        }
        e = [
            e[0] * step[0] + e[1] * step[2],
            e[0] * step[1] + e[1] * step[3],
            e[2] * step[0] + e[3] * step[2],
            e[2] * step[1] + e[3] * step[3],
        ];
    }
    let quad: Vec<f64> = sum.iter().map(|s| s * h / 3.0).collect();
    let g = continuous_gramian(ex2d().a(), ex2d().b(), t_h).unwrap();
    for (x, y) in g.as_slice().iter().zip(&quad) {
        assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn fine_euler_metric_approaches_continuous_metric() {
    // Σ‖u_k‖² over steps of length h approximates ∫‖u‖²dt / h, so h·𝒢_d → 𝒢_c
    let (t_h, h) = (2.0, 1e-4);
    let cont = build_mpc_law(&ex2d(), Horizon::Time(t_h)).unwrap();
    let disc = build_mpc_law(&discretize_euler(&ex2d(), h).unwrap(), Horizon::Steps((t_h / h).round() as usize)).unwrap();
    let diff = disc.metric().scale(h).try_sub(cont.metric()).unwrap();
    let rel = diff.frobenius_norm() / cont.metric().frobenius_norm();
    assert!(rel < 0.01, "relative gap {rel}");
}

#[test]
fn metric_matches_least_norm_energy() {
    // dense least-norm solve of the stacked terminal constraint
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let sys = LinearSystem::discrete(
            Matrix::from_rows(&[[rng.gen_range(-1.2..1.2), 0.3], [rng.gen_range(-0.5..0.5), 0.9]]).unwrap(),
            Matrix::from_rows(&[[1.0, rng.gen_range(-0.5..0.5)], [0.2, 0.8]]).unwrap(),
        )
        .unwrap();
        let tau = 6;
        let law = build_mpc_law(&sys, Horizon::Steps(tau)).unwrap();
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let xhat = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let na = |m: &Matrix| nalgebra::DMatrix::from_row_slice(2, 2, m.as_slice());
        let mut reach = nalgebra::DMatrix::zeros(2, 2 * tau);
        for k in 0..tau {
            let block = na(&mat_power(sys.a(), tau - 1 - k).unwrap()) * na(sys.b());
            reach.view_mut((0, 2 * k), (2, 2)).copy_from(&block);
        }
        let at = na(&mat_power(sys.a(), tau).unwrap());
        let rhs = at * nalgebra::DVector::from_vec(vec![xhat[0] - x[0], xhat[1] - x[1]]);
        let v = reach.clone().svd(true, true).solve(&rhs, 1e-14).unwrap();
        let oracle = v.norm_squared();
        let cost = law.cost(&x, &xhat).unwrap();
        assert!((cost - oracle).abs() <= 1e-10 * oracle.max(1.0), "{cost} vs {oracle}");
        // and the open-loop sequence is that least-norm sequence
        let seq = law.open_loop_sequence(&x, &xhat).unwrap();
        let hold = law.holding_input(&xhat).unwrap();
        for (k, u) in seq.iter().enumerate() {
            for c in 0..2 {
                assert!((u[c] - hold[c] - v[2 * k + c]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn contraction_factor_matches_quadruple_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(0.0..3.0)).collect()).collect();
        let k = gibbs_kernel(&CostMatrix::from_rows(&rows).unwrap(), 1.3).unwrap();
        let mut eta: f64 = 1.0;
        for i in 0..4 {
            for j in 0..4 {
                for a in 0..3 {
                    for b in 0..3 {
                        eta = eta.max(k.get(i, a) * k.get(j, b) / (k.get(j, a) * k.get(i, b)));
                    }
                }
            }
        }
        let expected = (eta.sqrt() - 1.0) / (eta.sqrt() + 1.0);
        assert!((contraction_factor(&k) - expected).abs() < 1e-12);
    }
}

fn scalar_fleet(x0: &[f64], targets: &[f64], epsilon: f64, schedule: IterationSchedule, steps: usize) -> FleetScenario {
    let sys = LinearSystem::discrete(Matrix::scalar(1.0), Matrix::scalar(0.1)).unwrap();
    FleetScenario::new(ScenarioConfig {
        systems: vec![sys; x0.len()],
        euler_step: None,
        x0: x0.iter().map(|&v| vec![v]).collect(),
        targets: TargetSet::new(targets.iter().map(|&v| vec![v]).collect()).unwrap(),
        marginals: None,
        epsilon,
        tau_h: 20,
        schedule,
        alpha0: None,
        step_count: steps,
        navigator: NavigatorKind::Barycentric,
        snapshots: SnapshotPolicy::On,
        diagnostics: false,
    })
    .unwrap()
}

#[test]
fn crossing_fleet_changes_assignment() {
    // rotational drift swings the agents around the target ring, so the
    // step-wise optimal matching has to reorder along the way
    let (c, s) = (0.4f64.cos(), 0.4f64.sin());
    let sys = LinearSystem::discrete(
        Matrix::from_rows(&[[1.02 * c, -1.02 * s], [1.02 * s, 1.02 * c]]).unwrap(),
        Matrix::from_rows(&[[0.1, 0.0], [0.0, 0.1]]).unwrap(),
    )
    .unwrap();
    let ring = |r: f64, phase: f64| -> Vec<Vec<f64>> {
        (0..3)
            .map(|k| {
                let t = phase + k as f64 * std::f64::consts::TAU / 3.0;
                vec![r * t.cos(), r * t.sin()]
            })
            .collect()
    };
    let scenario = FleetScenario::new(ScenarioConfig {
        systems: vec![sys; 3],
        euler_step: None,
        x0: ring(3.0, 0.5),
        targets: TargetSet::new(ring(1.0, 0.0)).unwrap(),
        marginals: None,
        epsilon: 0.1,
        tau_h: 10,
        schedule: IterationSchedule::Fixed(1),
        alpha0: None,
        step_count: 60,
        navigator: NavigatorKind::Barycentric,
        snapshots: SnapshotPolicy::On,
        diagnostics: false,
    })
    .unwrap();
    let log = run_baseline_permutation(&scenario).unwrap();
    for r in &log.records {
        let brute = brute_force_assignment(&scenario.cost_matrix(&r.states).unwrap()).unwrap();
        assert_eq!(r.assignment.as_deref(), Some(brute.sigma.as_slice()));
    }
    assert!(!log.records[0].assignment_changed);
    let changes = log.records.iter().filter(|r| r.assignment_changed).count();
    assert!(changes >= 1, "no assignment change in {} steps", log.records.len());
}

#[test]
fn hungarian_baseline_matches_fixed_without_crossing() {
    let s = scalar_fleet(&[-1.2, 0.1, 1.3], &[-1.0, 0.0, 1.0], 0.1, IterationSchedule::Fixed(1), 80);
    let a = run_baseline_permutation(&s).unwrap();
    let b = run_baseline_fixed(&s).unwrap();
    assert_eq!(a.final_states, b.final_states);
    assert_eq!(a.total_raw_energy(), b.total_raw_energy());
}

#[test]
fn sweep_drifts_toward_the_centroid() {
    let s = scalar_fleet(&[-1.1, -0.2, 0.4, 1.2], &[-1.0, -0.3, 0.3, 1.0], 0.1, IterationSchedule::tolerance(1e-10), 4000);
    let rows = analysis::epsilon_sweep(&s, &[0.1, 1.0, 10.0, 100.0]).unwrap();
    let spread: Vec<f64> = rows.iter().map(|r| r.outcome.as_ref().unwrap().centroid_distance).collect();
    assert!(spread.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{spread:?}");
    assert!(spread[3] < 1e-3);
}

#[test]
fn blur_grows_with_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.gen_range(0.0..2.0)).collect()).collect();
    let cost = CostMatrix::from_rows(&rows).unwrap();
    let m = Marginals::uniform(4, 4);
    let mut last = f64::INFINITY;
    for eps in [1.0, 10.0, 100.0, 1e3, 1e4] {
        let k = gibbs_kernel(&cost, eps).unwrap();
        let sol = sinkhorn_solve(&k, &m, &[1.0; 4], StoppingPolicy::tolerance(1e-13)).unwrap();
        let dist = sol.coupling.max_abs_diff(&[1.0 / 16.0; 16]);
        assert!(dist < last);
        last = dist;
    }
}

#[test]
fn lyapunov_decreases_near_equilibrium() {
    // S ≡ 1 from a small perturbation of a sharp equilibrium
    let targets = [-1.0, 0.0, 1.0];
    let s = scalar_fleet(&[-0.97, 0.02, 1.01], &targets, 0.05, IterationSchedule::Fixed(1), 60);
    let anchor_state = analysis::run_to_steady(&s.with_x0(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap()).unwrap();
    let anchor = analysis::EquilibriumAnchor::at(&s, &anchor_state.states).unwrap();
    let log = run(&s).unwrap();
    let mut last = f64::INFINITY;
    for r in &log.records[1..] {
        let beta = &r.coupling.as_ref().unwrap().scaling().beta;
        let v = analysis::lyapunov_v(&s, &r.states, beta, &anchor, 1.0).unwrap();
        assert!(v <= last + 1e-12, "{v} after {last}");
        last = v;
    }
}

#[test]
fn single_agent_bench_is_trivial() {
    let s = scalar_fleet(&[0.3], &[0.0], 0.1, IterationSchedule::tolerance(0.005), 1);
    let k = smpc_core::simulator::kernel_at(&s, s.x0()).unwrap();
    let sol = sinkhorn_solve(&k, s.marginals(), &[1.0], StoppingPolicy::tolerance(0.005)).unwrap();
    assert_eq!(sol.iterations, 1);
    assert_eq!(hungarian(&s.cost_matrix(s.x0()).unwrap()).unwrap().sigma, vec![0]);
}
