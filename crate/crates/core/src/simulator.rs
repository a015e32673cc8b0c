//! Closed-loop fleet simulation.
//!
//! [`run`] is Sinkhorn MPC: at every step the Gibbs kernel is rebuilt from
//! the per-agent MPC costs, a few Sinkhorn steps are taken from the scaling
//! vector carried over from the previous step, the navigator turns the
//! coupling into temporary targets and each agent applies its MPC input.
//! [`run_baseline_permutation`] and [`run_baseline_fixed`] replace the
//! coupling by an exact assignment.

use crate::analysis;
use crate::assignment::{hungarian, Assignment};
use crate::error::{Error, Result};
use crate::mpc::{build_mpc_law, discretize_euler, Flavor, Horizon, LinearSystem, MpcLaw};
use crate::navigator::{NavigatorKind, TargetSet};
use crate::otcore::{
    gibbs_kernel, sinkhorn_solve, Coupling, CostMatrix, GibbsKernel, Marginals, StoppingPolicy,
};

/// Per-step cap on Sinkhorn iterations under a marginal tolerance.
pub const DEFAULT_STEP_CAP: usize = 10_000;

/// Couplings are stored in the log only up to this many agents under
/// [`SnapshotPolicy::Auto`].
pub const SNAPSHOT_AUTO_MAX: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IterationSchedule {
    /// `S[k] = S` for every step.
    Fixed(usize),
    /// Iterate each step until the marginal violation is below `threshold`.
    Tolerance { threshold: f64, cap: usize },
}

impl IterationSchedule {
    pub fn tolerance(threshold: f64) -> Self {
        IterationSchedule::Tolerance {
            threshold,
            cap: DEFAULT_STEP_CAP,
        }
    }

    fn policy(&self) -> StoppingPolicy {
        match *self {
            IterationSchedule::Fixed(s) => StoppingPolicy::FixedCount(s),
            IterationSchedule::Tolerance { threshold, cap } => {
                StoppingPolicy::MarginalTolerance { threshold, cap }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SnapshotPolicy {
    #[default]
    Auto,
    On,
    Off,
}

/// Everything needed to set up a fleet. Continuous-time systems require
/// `euler_step` and are discretized before the laws are built.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub systems: Vec<LinearSystem>,
    pub euler_step: Option<f64>,
    pub x0: Vec<Vec<f64>>,
    pub targets: TargetSet,
    /// Uniform when `None`.
    pub marginals: Option<Marginals>,
    pub epsilon: f64,
    pub tau_h: usize,
    pub schedule: IterationSchedule,
    /// All ones when `None`.
    pub alpha0: Option<Vec<f64>>,
    pub step_count: usize,
    pub navigator: NavigatorKind,
    pub snapshots: SnapshotPolicy,
    /// Record the entropic cost and equilibrium residual at each step.
    pub diagnostics: bool,
}

/// A validated scenario with its MPC laws built. Agents with identical
/// systems share one law.
#[derive(Clone, Debug)]
pub struct FleetScenario {
    systems: Vec<LinearSystem>,
    laws: Vec<MpcLaw>,
    law_of_agent: Vec<usize>,
    x0: Vec<Vec<f64>>,
    targets: TargetSet,
    marginals: Marginals,
    epsilon: f64,
    tau_h: usize,
    schedule: IterationSchedule,
    alpha0: Vec<f64>,
    step_count: usize,
    navigator: NavigatorKind,
    snapshots: SnapshotPolicy,
    diagnostics: bool,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")))
    }
}

fn check_schedule(schedule: &IterationSchedule) -> Result<()> {
    schedule.policy().validate()
}

impl FleetScenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let n = config.x0.len();
        if n == 0 {
            return Err(Error::Parameter("scenario has no agents".into()));
        }
        if config.systems.len() != n {
            return Err(Error::dim(
                "FleetScenario",
                format!("{} systems for {n} agents", config.systems.len()),
            ));
        }
        check_epsilon(config.epsilon)?;
        check_schedule(&config.schedule)?;
        if config.tau_h == 0 {
            return Err(Error::Parameter("horizon must be at least one step".into()));
        }
        let dim = config.targets.dim();
        let mut systems = Vec::with_capacity(n);
        for (i, sys) in config.systems.into_iter().enumerate() {
            if sys.state_dim() != dim {
                return Err(Error::dim(
                    "FleetScenario",
                    format!("agent {i} has state dimension {}, targets have {dim}", sys.state_dim()),
                ));
            }
            let sys = match sys.flavor() {
                Flavor::Discrete => sys,
                Flavor::Continuous => {
                    let h = config.euler_step.ok_or_else(|| {
                        Error::Parameter(format!("agent {i} is continuous but no Euler step is set"))
                    })?;
                    discretize_euler(&sys, h)?
                }
            };
            systems.push(sys);
        }
        for (i, x) in config.x0.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::dim(
                    "FleetScenario",
                    format!("initial state {i} has dimension {}, expected {dim}", x.len()),
                ));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("initial state {i} is not finite")));
            }
        }
        let m = config.targets.len();
        let marginals = config.marginals.unwrap_or_else(|| Marginals::uniform(n, m));
        if marginals.a().len() != n || marginals.b().len() != m {
            return Err(Error::dim(
                "FleetScenario",
                format!(
                    "marginals of length {} and {} for {n} agents and {m} targets",
                    marginals.a().len(),
                    marginals.b().len()
                ),
            ));
        }
        let alpha0 = config.alpha0.unwrap_or_else(|| vec![1.0; n]);
        if alpha0.len() != n || alpha0.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Parameter(
                "alpha0 must have one strictly positive entry per agent".into(),
            ));
        }

        let mut laws: Vec<MpcLaw> = Vec::new();
        let mut law_of_agent = Vec::with_capacity(n);
        for sys in &systems {
            let idx = match laws.iter().position(|l| l.system() == sys) {
                Some(idx) => idx,
                None => {
                    laws.push(build_mpc_law(sys, Horizon::Steps(config.tau_h))?);
                    laws.len() - 1
                }
            };
            law_of_agent.push(idx);
        }

        Ok(Self {
            systems,
            laws,
            law_of_agent,
            x0: config.x0,
            targets: config.targets,
            marginals,
            epsilon: config.epsilon,
            tau_h: config.tau_h,
            schedule: config.schedule,
            alpha0,
            step_count: config.step_count,
            navigator: config.navigator,
            snapshots: config.snapshots,
            diagnostics: config.diagnostics,
        })
    }

    pub fn agents(&self) -> usize {
        self.x0.len()
    }

    pub fn state_dim(&self) -> usize {
        self.targets.dim()
    }

    pub fn system(&self, i: usize) -> &LinearSystem {
        &self.systems[i]
    }

    pub fn law(&self, i: usize) -> &MpcLaw {
        &self.laws[self.law_of_agent[i]]
    }

    /// One law per distinct system.
    pub fn distinct_laws(&self) -> &[MpcLaw] {
        &self.laws
    }

    pub fn x0(&self) -> &[Vec<f64>] {
        &self.x0
    }

    pub fn targets(&self) -> &TargetSet {
        &self.targets
    }

    pub fn marginals(&self) -> &Marginals {
        &self.marginals
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn tau_h(&self) -> usize {
        self.tau_h
    }

    pub fn schedule(&self) -> IterationSchedule {
        self.schedule
    }

    pub fn alpha0(&self) -> &[f64] {
        &self.alpha0
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn navigator(&self) -> &NavigatorKind {
        &self.navigator
    }

    pub fn diagnostics(&self) -> bool {
        self.diagnostics
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            ..self.clone()
        })
    }

    pub fn with_schedule(&self, schedule: IterationSchedule) -> Result<Self> {
        check_schedule(&schedule)?;
        Ok(Self {
            schedule,
            ..self.clone()
        })
    }

    pub fn with_step_count(&self, step_count: usize) -> Self {
        Self {
            step_count,
            ..self.clone()
        }
    }

    pub fn with_diagnostics(&self, diagnostics: bool) -> Self {
        Self {
            diagnostics,
            ..self.clone()
        }
    }

    pub fn with_x0(&self, x0: Vec<Vec<f64>>) -> Result<Self> {
        if x0.len() != self.agents() || x0.iter().any(|x| x.len() != self.state_dim()) {
            return Err(Error::dim("with_x0", "initial states do not match the fleet"));
        }
        Ok(Self {
            x0,
            ..self.clone()
        })
    }

    fn stores_snapshots(&self) -> bool {
        match self.snapshots {
            SnapshotPolicy::On => true,
            SnapshotPolicy::Off => false,
            SnapshotPolicy::Auto => self.agents() <= SNAPSHOT_AUTO_MAX,
        }
    }

    /// `C_ij = c_i(x_i, x_j^d)`.
    pub fn cost_matrix(&self, x: &[Vec<f64>]) -> Result<CostMatrix> {
        let (n, m) = (self.agents(), self.targets.len());
        if x.len() != n {
            return Err(Error::dim("cost_matrix", format!("{} states for {n} agents", x.len())));
        }
        let mut data = Vec::with_capacity(n * m);
        for (i, xi) in x.iter().enumerate() {
            let law = self.law(i);
            for target in self.targets.points() {
                data.push(law.cost(xi, target)?);
            }
        }
        CostMatrix::new(n, m, data)
    }
}

/// Gibbs kernel of the MPC costs at fleet state `x`.
pub fn kernel_at(scenario: &FleetScenario, x: &[Vec<f64>]) -> Result<GibbsKernel> {
    let cost = scenario.cost_matrix(x)?;
    gibbs_kernel(&cost, scenario.epsilon)
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    /// Scaling vector carried into the next step's Sinkhorn iterations.
    pub alpha: Vec<f64>,
    pub last_coupling: Option<Coupling>,
    /// Warm start for the diagnostic (converged) Sinkhorn solves.
    pub diagnostic_alpha: Option<Vec<f64>>,
}

impl SimState {
    pub fn initial(scenario: &FleetScenario) -> Self {
        Self {
            k: 0,
            x: scenario.x0.clone(),
            alpha: scenario.alpha0.clone(),
            last_coupling: None,
            diagnostic_alpha: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `x[k]`, before the inputs are applied.
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub iterations: usize,
    pub violation: f64,
    /// The Sinkhorn cap was hit and the best coupling so far was used.
    pub capped: bool,
    pub coupling: Option<Coupling>,
    /// `Σ_i ‖u_i − ū_i‖²` with `ū_i` the input holding agent `i` at its target.
    pub deviation_energy: f64,
    /// `Σ_i ‖u_i‖²`.
    pub raw_energy: f64,
    pub entropic_cost: Option<f64>,
    pub residual: Option<f64>,
    pub assignment: Option<Vec<usize>>,
    pub assignment_changed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
    pub final_states: Vec<Vec<f64>>,
    pub final_alpha: Vec<f64>,
    pub warnings: Vec<String>,
}

impl TrajectoryLog {
    pub fn total_raw_energy(&self) -> f64 {
        self.records.iter().map(|r| r.raw_energy).sum()
    }

    pub fn total_deviation_energy(&self) -> f64 {
        self.records.iter().map(|r| r.deviation_energy).sum()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.iterations).collect()
    }

    /// `x[k]` for `k = 0..=len`, the last entry being the final state.
    pub fn state(&self, k: usize) -> Option<&[Vec<f64>]> {
        if k < self.records.len() {
            Some(&self.records[k].states)
        } else if k == self.records.len() {
            Some(&self.final_states)
        } else {
            None
        }
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }
}

/// How the temporary targets are chosen at a step.
enum Targeting<'a> {
    Sinkhorn,
    Assignment(&'a Assignment),
}

fn apply_inputs(
    scenario: &FleetScenario,
    state: &SimState,
    targets: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64, f64)> {
    let n = scenario.agents();
    let mut inputs = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    let (mut deviation, mut raw) = (0.0, 0.0);
    for i in 0..n {
        let law = scenario.law(i);
        let u = law.control(&state.x[i], &targets[i])?;
        let hold = law.holding_input(&targets[i])?;
        deviation += u.iter().zip(&hold).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        raw += u.iter().map(|v| v * v).sum::<f64>();
        let xn = scenario.system(i).advance(&state.x[i], &u)?;
        if xn.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: state.k,
                agent: i,
            });
        }
        next.push(xn);
        inputs.push(u);
    }
    Ok((inputs, next, deviation, raw))
}

fn diagnose(scenario: &FleetScenario, state: &SimState) -> Result<(Option<f64>, Option<f64>, Option<Vec<f64>>)> {
    if !scenario.diagnostics {
        return Ok((None, None, state.diagnostic_alpha.clone()));
    }
    let eval = analysis::converged_coupling(scenario, &state.x, state.diagnostic_alpha.as_deref())?;
    let cost = analysis::entropic_cost_of(scenario, &state.x, &eval.coupling)?;
    let residual = analysis::residual_of(scenario, &state.x, &eval.coupling)?.residual;
    Ok((Some(cost), Some(residual), Some(eval.coupling.scaling().alpha.clone())))
}

fn advance(
    scenario: &FleetScenario,
    state: &SimState,
    targeting: Targeting<'_>,
    warnings: &mut Vec<String>,
) -> Result<(SimState, StepRecord)> {
    let (entropic_cost, residual, diagnostic_alpha) = diagnose(scenario, state)?;
    let a = scenario.marginals.a();
    let (targets, iterations, violation, capped, coupling, alpha, assignment) = match targeting {
        Targeting::Sinkhorn => {
            let kernel = kernel_at(scenario, &state.x)?;
            let (coupling, iterations, violation, capped) =
                match sinkhorn_solve(&kernel, &scenario.marginals, &state.alpha, scenario.schedule.policy()) {
                    Ok(sol) => (sol.coupling, sol.iterations, sol.violation, false),
                    Err(Error::SinkhornCap {
                        iterations,
                        violation,
                        best,
                        ..
                    }) => {
                        warnings.push(format!(
                            "step {}: Sinkhorn cap of {iterations} reached, continuing with violation {violation:.3e}",
                            state.k
                        ));
                        (*best, iterations, violation, true)
                    }
                    Err(e) => return Err(e),
                };
            let targets = scenario.navigator.targets(&coupling, &scenario.targets, a)?;
            let alpha = coupling.scaling().alpha.clone();
            (targets, iterations, violation, capped, Some(coupling), alpha, None)
        }
        Targeting::Assignment(assignment) => {
            let targets: Vec<Vec<f64>> = assignment
                .sigma
                .iter()
                .map(|&j| scenario.targets.get(j).to_vec())
                .collect();
            (targets, 0, 0.0, false, None, state.alpha.clone(), Some(assignment.sigma.clone()))
        }
    };
    let (inputs, next, deviation_energy, raw_energy) = apply_inputs(scenario, state, &targets)?;
    let snapshot = if scenario.stores_snapshots() {
        coupling.clone()
    } else {
        None
    };
    let record = StepRecord {
        step: state.k,
        states: state.x.clone(),
        inputs,
        targets,
        iterations,
        violation,
        capped,
        coupling: snapshot,
        deviation_energy,
        raw_energy,
        entropic_cost,
        residual,
        assignment,
        assignment_changed: false,
    };
    let next_state = SimState {
        k: state.k + 1,
        x: next,
        alpha,
        last_coupling: coupling,
        diagnostic_alpha,
    };
    Ok((next_state, record))
}

fn wrap_step<T>(k: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (Error::Step { .. } | Error::NonFinite { .. }) => e,
        e => Error::Step {
            step: k,
            source: Box::new(e),
        },
    })
}

/// One Sinkhorn MPC step.
pub fn step(scenario: &FleetScenario, state: &SimState) -> Result<(SimState, StepRecord)> {
    let mut warnings = Vec::new();
    wrap_step(state.k, advance(scenario, state, Targeting::Sinkhorn, &mut warnings))
}

fn finish(scenario: &FleetScenario, state: SimState, records: Vec<StepRecord>, warnings: Vec<String>) -> TrajectoryLog {
    let _ = scenario;
    TrajectoryLog {
        records,
        final_states: state.x,
        final_alpha: state.alpha,
        warnings,
    }
}

/// `step_count` Sinkhorn MPC steps from `x0`.
pub fn run(scenario: &FleetScenario) -> Result<TrajectoryLog> {
    let mut state = SimState::initial(scenario);
    let mut records = Vec::with_capacity(scenario.step_count);
    let mut warnings = Vec::new();
    for _ in 0..scenario.step_count {
        let (next, record) = wrap_step(
            state.k,
            advance(scenario, &state, Targeting::Sinkhorn, &mut warnings),
        )?;
        records.push(record);
        state = next;
    }
    Ok(finish(scenario, state, records, warnings))
}

fn require_assignment_problem(scenario: &FleetScenario) -> Result<()> {
    let n = scenario.agents();
    if scenario.targets.len() != n {
        return Err(Error::Parameter(format!(
            "assignment baselines need as many targets as agents ({} vs {n})",
            scenario.targets.len()
        )));
    }
    let uniform = 1.0 / n as f64;
    let is_uniform = |v: &[f64]| v.iter().all(|&x| (x - uniform).abs() <= 1e-12);
    if !is_uniform(scenario.marginals.a()) || !is_uniform(scenario.marginals.b()) {
        return Err(Error::Parameter(
            "assignment baselines need uniform marginals".into(),
        ));
    }
    Ok(())
}

fn run_assignment(scenario: &FleetScenario, recompute: bool) -> Result<TrajectoryLog> {
    require_assignment_problem(scenario)?;
    let mut state = SimState::initial(scenario);
    let mut records = Vec::with_capacity(scenario.step_count);
    let mut warnings = Vec::new();
    let mut current: Option<Assignment> = None;
    for _ in 0..scenario.step_count {
        let k = state.k;
        let assignment = match current.take() {
            Some(a) if !recompute => a,
            _ => wrap_step(k, scenario.cost_matrix(&state.x).and_then(|c| hungarian(&c)))?,
        };
        let changed = records
            .last()
            .and_then(|r: &StepRecord| r.assignment.as_ref())
            .is_some_and(|prev| *prev != assignment.sigma);
        let (next, mut record) = wrap_step(
            k,
            advance(scenario, &state, Targeting::Assignment(&assignment), &mut warnings),
        )?;
        record.assignment_changed = changed;
        records.push(record);
        state = next;
        current = Some(assignment);
    }
    Ok(finish(scenario, state, records, warnings))
}

/// MPC toward `x^d_{σ(i; x[k])}` with the optimal assignment recomputed at
/// every step.
pub fn run_baseline_permutation(scenario: &FleetScenario) -> Result<TrajectoryLog> {
    run_assignment(scenario, true)
}

/// MPC toward the assignment computed once at `x0`.
pub fn run_baseline_fixed(scenario: &FleetScenario) -> Result<TrajectoryLog> {
    run_assignment(scenario, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn scalar_fleet(x0: &[f64], targets: &[f64], epsilon: f64, schedule: IterationSchedule) -> FleetScenario {
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
            step_count: 50,
            navigator: NavigatorKind::Barycentric,
            snapshots: SnapshotPolicy::Auto,
            diagnostics: false,
        })
        .unwrap()
    }

    #[test]
    fn single_agent_reduces_to_plain_mpc() {
        let s = scalar_fleet(&[1.3], &[-0.4], 0.1, IterationSchedule::Fixed(1));
        let log = run(&s).unwrap();
        let mut x = 1.3;
        for k in 0..=s.step_count() {
            let logged = log.state(k).unwrap()[0][0];
            assert!((logged - x).abs() < 1e-12, "step {k}: {logged} vs {x}");
            x = 0.95 * x + 0.05 * -0.4;
        }
        for r in &log.records {
            assert!((r.coupling.as_ref().unwrap().plan()[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let s = scalar_fleet(&[1.0, 2.0], &[0.0, 3.0], 0.1, IterationSchedule::Fixed(1)).with_step_count(0);
        let log = run(&s).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.final_states, s.x0());
    }

    #[test]
    fn agents_at_targets_stay_put() {
        let s = scalar_fleet(&[-0.5, 0.5], &[-0.5, 0.5], 0.05, IterationSchedule::tolerance(1e-12));
        let log = run(&s).unwrap();
        for (a, b) in log.final_states.iter().zip(s.x0()) {
            assert!((a[0] - b[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_has_unit_diagonal_at_targets() {
        let s = scalar_fleet(&[-0.5, 0.5], &[-0.5, 0.5], 0.3, IterationSchedule::Fixed(1));
        let k = kernel_at(&s, s.x0()).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(1, 1), 1.0);
        assert_eq!(k.get(0, 1), k.get(1, 0));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = scalar_fleet(&[0.9, -0.2, 0.4], &[-1.0, 0.0, 1.0], 0.1, IterationSchedule::Fixed(2));
        assert_eq!(run(&s).unwrap(), run(&s).unwrap());
    }

    #[test]
    fn cap_is_a_warning_not_an_abort() {
        let s = scalar_fleet(
            &[0.9, -0.2, 0.4],
            &[-1.0, 0.0, 1.0],
            0.1,
            IterationSchedule::Tolerance { threshold: 1e-300, cap: 2 },
        )
        .with_step_count(3);
        let log = run(&s).unwrap();
        assert_eq!(log.warnings.len(), 3);
        assert!(log.records.iter().all(|r| r.capped && r.iterations == 2));
    }

    #[test]
    fn baselines_hold_when_at_targets() {
        let s = scalar_fleet(&[1.0, -1.0], &[-1.0, 1.0], 0.1, IterationSchedule::Fixed(1));
        for log in [run_baseline_permutation(&s).unwrap(), run_baseline_fixed(&s).unwrap()] {
            for r in &log.records {
                assert_eq!(r.assignment.as_deref(), Some(&[1, 0][..]));
                assert!(!r.assignment_changed);
            }
            for (a, b) in log.final_states.iter().zip(s.x0()) {
                assert!((a[0] - b[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn baselines_reject_unequal_counts() {
        let s = scalar_fleet(&[1.0, -1.0], &[0.0, 1.0, 2.0], 0.1, IterationSchedule::Fixed(1));
        assert!(run_baseline_permutation(&s).is_err());
        // Sinkhorn MPC handles N != M
        assert!(run(&s).is_ok());
    }

    #[test]
    fn degenerate_kernel_aborts_with_step() {
        let s = scalar_fleet(&[1e3], &[0.0], 1e-3, IterationSchedule::Fixed(1));
        match run(&s) {
            Err(Error::Step { step: 0, source }) => {
                assert!(matches!(*source, Error::DegenerateKernel { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_validation() {
        let sys = LinearSystem::discrete(Matrix::scalar(1.0), Matrix::scalar(0.1)).unwrap();
        let base = ScenarioConfig {
            systems: vec![sys.clone()],
            euler_step: None,
            x0: vec![vec![0.0]],
            targets: TargetSet::new(vec![vec![1.0]]).unwrap(),
            marginals: None,
            epsilon: -1.0,
            tau_h: 5,
            schedule: IterationSchedule::Fixed(1),
            alpha0: None,
            step_count: 1,
            navigator: NavigatorKind::Barycentric,
            snapshots: SnapshotPolicy::Auto,
            diagnostics: false,
        };
        assert!(FleetScenario::new(base.clone()).is_err());
        let cont = LinearSystem::continuous(Matrix::scalar(0.0), Matrix::scalar(1.0)).unwrap();
        let no_step = ScenarioConfig {
            systems: vec![cont],
            epsilon: 1.0,
            ..base.clone()
        };
        assert!(FleetScenario::new(no_step.clone()).is_err());
        let with_step = ScenarioConfig {
            euler_step: Some(0.1),
            ..no_step
        };
        let s = FleetScenario::new(with_step).unwrap();
        assert_eq!(s.system(0).b(), &Matrix::scalar(0.1));
        let bad_schedule = ScenarioConfig {
            epsilon: 1.0,
            schedule: IterationSchedule::Fixed(0),
            ..base
        };
        assert!(FleetScenario::new(bad_schedule).is_err());
    }
}
