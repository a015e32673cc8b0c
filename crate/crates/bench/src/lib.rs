//! Seeded workloads shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smpc_core::simulator::kernel_at;
use smpc_core::*;

/// Planar fleet with unstable drift: agents uniform in `[-1.5, 1.5]²`,
/// targets on a jittered grid over the same box.
pub fn planar_fleet(n: usize, epsilon: f64, seed: u64) -> FleetScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_rows(&[[2.0, 1.3], [-0.5, 1.0]]).unwrap();
    let sys = discretize_euler(&LinearSystem::continuous(a, Matrix::identity(2)).unwrap(), 0.02).unwrap();
    let x0 = (0..n).map(|_| vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]).collect();
    let side = (n as f64).sqrt().ceil() as usize;
    let targets = (0..n)
        .map(|j| {
            let (r, c) = ((j / side) as f64, (j % side) as f64);
            let cell = 3.0 / side as f64;
            vec![-1.5 + cell * (c + rng.gen_range(0.2..0.8)), -1.5 + cell * (r + rng.gen_range(0.2..0.8))]
        })
        .collect();
    FleetScenario::new(ScenarioConfig {
        systems: vec![sys; n],
        euler_step: None,
        x0,
        targets: TargetSet::new(targets).unwrap(),
        marginals: None,
        epsilon,
        tau_h: 100,
        schedule: IterationSchedule::Fixed(1),
        alpha0: None,
        step_count: 1,
        navigator: NavigatorKind::Barycentric,
        snapshots: SnapshotPolicy::Off,
        diagnostics: false,
    })
    .unwrap()
}

/// Kernel and cost at the fleet's initial state.
pub fn initial_problem(scenario: &FleetScenario) -> (GibbsKernel, CostMatrix) {
    let x0 = scenario.x0();
    (kernel_at(scenario, x0).unwrap(), scenario.cost_matrix(x0).unwrap())
}
