//! Measurements on fleet states and trajectories: entropic OT cost and its
//! gradient, equilibrium residuals, the Lyapunov function, ultimate bounds,
//! the dual objective, ε-sweeps and the small-ε equilibrium decay.

use crate::assignment::{next_permutation, BRUTE_FORCE_MAX};
use crate::error::{Error, Result};
use crate::numerics::{norm, spectral_radius, Matrix};
use crate::otcore::{entropy, hilbert_metric, sinkhorn_newton_solve, Coupling, SinkhornSolution};
use crate::simulator::{kernel_at, step, FleetScenario, SimState, TrajectoryLog};

/// Marginal violation at which a coupling counts as `P*(x)`.
pub const DIAGNOSTIC_TOLERANCE: f64 = 1e-10;

/// Plain Sinkhorn steps taken before the Newton polish in
/// [`converged_coupling`].
pub const NEWTON_WARMUP: usize = 50;

/// Step-to-step displacement below which a fleet counts as steady.
pub const STEADY_DISPLACEMENT: f64 = 1e-9;
/// Consecutive quiet steps required for a steady state.
pub const STEADY_WINDOW: usize = 10;

/// `P*(x)` to [`DIAGNOSTIC_TOLERANCE`], warm-started from `alpha0` if given.
pub fn converged_coupling(
    scenario: &FleetScenario,
    x: &[Vec<f64>],
    alpha0: Option<&[f64]>,
) -> Result<SinkhornSolution> {
    converged_coupling_to(scenario, x, alpha0, DIAGNOSTIC_TOLERANCE)
}

pub fn converged_coupling_to(
    scenario: &FleetScenario,
    x: &[Vec<f64>],
    alpha0: Option<&[f64]>,
    threshold: f64,
) -> Result<SinkhornSolution> {
    let kernel = kernel_at(scenario, x)?;
    let ones;
    let alpha0 = match alpha0 {
        Some(a) => a,
        None => {
            ones = vec![1.0; scenario.agents()];
            &ones
        }
    };
    sinkhorn_newton_solve(&kernel, scenario.marginals(), alpha0, threshold, NEWTON_WARMUP)
}

/// `Σ C_ij(x) P_ij − ε H(P)` for a given coupling.
pub fn entropic_cost_of(scenario: &FleetScenario, x: &[Vec<f64>], coupling: &Coupling) -> Result<f64> {
    let cost = scenario.cost_matrix(x)?;
    if cost.rows() != coupling.rows() || cost.cols() != coupling.cols() {
        return Err(Error::dim("entropic_cost", "coupling does not match the fleet"));
    }
    Ok(cost.transport_cost(coupling.plan()) - scenario.epsilon() * entropy(coupling.plan()))
}

/// Entropic OT cost `E(x)` at the converged coupling.
pub fn entropic_cost(scenario: &FleetScenario, x: &[Vec<f64>]) -> Result<f64> {
    let sol = converged_coupling(scenario, x, None)?;
    entropic_cost_of(scenario, x, &sol.coupling)
}

/// `∇_{x_i} E = 2𝒢_i Σ_j P_ij (x_i − x_j^d)` for a given coupling.
pub fn entropic_cost_gradient_of(
    scenario: &FleetScenario,
    x: &[Vec<f64>],
    coupling: &Coupling,
) -> Result<Vec<Vec<f64>>> {
    let targets = scenario.targets();
    let mut out = Vec::with_capacity(x.len());
    for (i, xi) in x.iter().enumerate() {
        let mut v = vec![0.0; xi.len()];
        for (p, t) in coupling.row(i).iter().zip(targets.points()) {
            for ((vk, xk), tk) in v.iter_mut().zip(xi).zip(t) {
                *vk += p * (xk - tk);
            }
        }
        let zero = vec![0.0; xi.len()];
        out.push(scenario.law(i).cost_gradient(&v, &zero)?);
    }
    Ok(out)
}

pub fn entropic_cost_gradient(scenario: &FleetScenario, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let sol = converged_coupling(scenario, x, None)?;
    entropic_cost_gradient_of(scenario, x, &sol.coupling)
}

#[derive(Clone, Debug)]
pub struct EquilibriumReport {
    /// `max_i ‖x_i − (1/a_i) Σ_j P_ij x_j^d‖`.
    pub residual: f64,
    pub per_agent: Vec<f64>,
    pub coupling: Coupling,
    pub epsilon: f64,
}

pub fn residual_of(scenario: &FleetScenario, x: &[Vec<f64>], coupling: &Coupling) -> Result<EquilibriumReport> {
    let bary = scenario
        .navigator()
        .targets(coupling, scenario.targets(), scenario.marginals().a())?;
    let per_agent: Vec<f64> = x
        .iter()
        .zip(&bary)
        .map(|(xi, ti)| distance(xi, ti))
        .collect();
    Ok(EquilibriumReport {
        residual: per_agent.iter().copied().fold(0.0, f64::max),
        per_agent,
        coupling: coupling.clone(),
        epsilon: scenario.epsilon(),
    })
}

pub fn equilibrium_residual(scenario: &FleetScenario, x: &[Vec<f64>]) -> Result<EquilibriumReport> {
    let sol = converged_coupling(scenario, x, None)?;
    residual_of(scenario, x, &sol.coupling)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// An equilibrium `(x^e, β^e, P^e)` for [`lyapunov_v`].
#[derive(Clone, Debug)]
pub struct EquilibriumAnchor {
    pub states: Vec<Vec<f64>>,
    pub coupling: Coupling,
}

impl EquilibriumAnchor {
    pub fn at(scenario: &FleetScenario, x: &[Vec<f64>]) -> Result<Self> {
        let sol = converged_coupling(scenario, x, None)?;
        Ok(Self {
            states: x.to_vec(),
            coupling: sol.coupling,
        })
    }

    pub fn beta(&self) -> &[f64] {
        &self.coupling.scaling().beta
    }
}

/// `V(x, β) = Σ_i ‖x_i − (1/a_i) Σ_j P^e_ij x_j^d‖²_{𝒢_i} + γ d_H(β, β^e)`.
pub fn lyapunov_v(
    scenario: &FleetScenario,
    x: &[Vec<f64>],
    beta: &[f64],
    anchor: &EquilibriumAnchor,
    gamma: f64,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let centers = crate::navigator::barycentric_targets(
        &anchor.coupling,
        scenario.targets(),
        scenario.marginals().a(),
    )?;
    let mut v = 0.0;
    for (i, (xi, ci)) in x.iter().zip(&centers).enumerate() {
        let d: Vec<f64> = xi.iter().zip(ci).map(|(a, b)| a - b).collect();
        v += scenario.law(i).metric().quadratic_form(&d)?;
    }
    Ok(v + gamma * hilbert_metric(beta, anchor.beta())?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentBound {
    pub rho: f64,
    pub nu: f64,
    pub kappa: f64,
    /// `‖I − Ā‖₂`.
    pub gap: f64,
    /// `κ r̄ ‖I − Ā‖ / (1 − (ρ + ν))`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub radius: f64,
    pub agents: Vec<AgentBound>,
}

/// Longest power sequence examined when computing `κ`.
pub const KAPPA_MAX_POWER: usize = 100_000;

/// `κ = sup_k ‖Ā^k‖ / (ρ+ν)^k`. Once some power `m` has ratio ≤ 1,
/// submultiplicativity bounds every later ratio by one with exponent below
/// `m`, so the running max at that point is the supremum.
fn kappa(closed_loop: &Matrix, rate: f64) -> Result<f64> {
    let mut power = Matrix::identity(closed_loop.rows());
    let mut scale = 1.0;
    let mut best: f64 = 1.0;
    for _ in 1..=KAPPA_MAX_POWER {
        power = closed_loop * &power;
        scale *= rate;
        let ratio = power.norm2()? / scale;
        if ratio <= 1.0 {
            return Ok(best);
        }
        best = best.max(ratio);
    }
    Err(Error::NoConvergence {
        what: "kappa",
        iterations: KAPPA_MAX_POWER,
        estimate: best,
    })
}

/// Default margin: halfway between the spectral radius and one.
pub fn default_margins(scenario: &FleetScenario) -> Result<Vec<f64>> {
    (0..scenario.agents())
        .map(|i| Ok((1.0 - spectral_radius(scenario.law(i).closed_loop())?) / 2.0))
        .collect()
}

pub fn ultimate_bound(scenario: &FleetScenario, nu: &[f64]) -> Result<BoundReport> {
    if nu.len() != scenario.agents() {
        return Err(Error::dim("ultimate_bound", format!("{} margins for {} agents", nu.len(), scenario.agents())));
    }
    let radius = scenario.targets().radius();
    let mut agents = Vec::with_capacity(nu.len());
    for (i, &nu_i) in nu.iter().enumerate() {
        let abar = scenario.law(i).closed_loop();
        let rho = spectral_radius(abar)?;
        if !(nu_i > 0.0) || rho + nu_i >= 1.0 {
            return Err(Error::Parameter(format!(
                "agent {i}: need 0 < nu and rho + nu < 1, got rho = {rho}, nu = {nu_i}"
            )));
        }
        let kappa = kappa(abar, rho + nu_i)?;
        let gap = Matrix::identity(abar.rows()).try_sub(abar)?.norm2()?;
        agents.push(AgentBound {
            rho,
            nu: nu_i,
            kappa,
            gap,
            bound: kappa * radius * gap / (1.0 - (rho + nu_i)),
        });
    }
    Ok(BoundReport { radius, agents })
}

impl BoundReport {
    /// First step at which the transient `κ(ρ+ν)^k‖x_i^0‖` is at most `delta`.
    pub fn settling_index(&self, i: usize, x0: &[f64], delta: f64) -> usize {
        let a = &self.agents[i];
        let rate = a.rho + a.nu;
        let mut transient = a.kappa * norm(x0);
        let mut k = 0;
        while transient > delta {
            transient *= rate;
            k += 1;
        }
        k
    }

    /// Largest `‖x_i[k]‖ − (δ + bound_i)` over logged states at or after each
    /// agent's settling index; non-positive when the bound holds.
    pub fn worst_excess(&self, log: &TrajectoryLog, x0: &[Vec<f64>], delta: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, xi0) in x0.iter().enumerate() {
            let start = self.settling_index(i, xi0, delta);
            let limit = delta + self.agents[i].bound;
            let mut k = start;
            while let Some(states) = log.state(k) {
                worst = worst.max(norm(&states[i]) - limit);
                k += 1;
            }
        }
        worst
    }
}

/// Largest `‖x_i[k]‖ − (‖Ā^k‖‖x_i^0‖ + Σ_{s=1}^k ‖Ā^{s−1}‖ r̄ ‖I−Ā‖)` over the
/// whole log, accumulated directly from matrix powers.
pub fn transient_bound_excess(scenario: &FleetScenario, log: &TrajectoryLog) -> Result<f64> {
    let radius = scenario.targets().radius();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..scenario.agents() {
        let abar = scenario.law(i).closed_loop();
        let gap = Matrix::identity(abar.rows()).try_sub(abar)?.norm2()?;
        let x0 = norm(&scenario.x0()[i]);
        let mut power = Matrix::identity(abar.rows());
        let mut forced = 0.0;
        let mut k = 0;
        while let Some(states) = log.state(k) {
            let bound = power.norm2()? * x0 + forced;
            worst = worst.max(norm(&states[i]) - bound);
            forced += power.norm2()? * radius * gap;
            power = abar * &power;
            k += 1;
        }
    }
    Ok(worst)
}

/// Value and gradients of `Q(f, g; x) = fᵀa + gᵀb − ε Σ_ij e^{f_i/ε} K_ij e^{g_j/ε}`.
#[derive(Clone, Debug)]
pub struct DualValue {
    pub value: f64,
    pub grad_f: Vec<f64>,
    pub grad_g: Vec<f64>,
}

pub fn dual_objective(scenario: &FleetScenario, x: &[Vec<f64>], f: &[f64], g: &[f64]) -> Result<DualValue> {
    let kernel = kernel_at(scenario, x)?;
    let (a, b) = (scenario.marginals().a(), scenario.marginals().b());
    if f.len() != a.len() || g.len() != b.len() {
        return Err(Error::dim("dual_objective", "dual vectors do not match the marginals"));
    }
    let eps = scenario.epsilon();
    let exp_scaled = |v: &[f64], what: &str| -> Result<Vec<f64>> {
        v.iter()
            .map(|&t| {
                let e = (t / eps).exp();
                if e.is_finite() {
                    Ok(e)
                } else {
                    Err(Error::Breakdown(format!("e^({what}/eps) is not finite for {what} = {t}")))
                }
            })
            .collect()
    };
    let ef = exp_scaled(f, "f")?;
    let eg = exp_scaled(g, "g")?;
    let mut k_eg = vec![0.0; a.len()];
    let mut kt_ef = vec![0.0; b.len()];
    kernel.apply(&eg, &mut k_eg);
    kernel.apply_transpose(&ef, &mut kt_ef);
    let mass: f64 = ef.iter().zip(&k_eg).map(|(p, q)| p * q).sum();
    let value = crate::numerics::dot(f, a) + crate::numerics::dot(g, b) - eps * mass;
    let grad_f = a.iter().zip(&ef).zip(&k_eg).map(|((ai, e), k)| ai - e * k).collect();
    let grad_g = b.iter().zip(&eg).zip(&kt_ef).map(|((bj, e), k)| bj - e * k).collect();
    Ok(DualValue { value, grad_f, grad_g })
}

/// `(f, g) = ε (log α, log β)`.
pub fn duals_of(coupling: &Coupling) -> (Vec<f64>, Vec<f64>) {
    let eps = coupling.epsilon();
    let s = coupling.scaling();
    (
        s.alpha.iter().map(|a| eps * a.ln()).collect(),
        s.beta.iter().map(|b| eps * b.ln()).collect(),
    )
}

/// Largest pairwise target cost `max c_i(x_l^d, x_j^d)`: the cost scale the
/// fleet sees near its equilibria.
pub fn max_target_cost(scenario: &FleetScenario) -> Result<f64> {
    let pts = scenario.targets().points();
    let mut best: f64 = 0.0;
    for law in scenario.distinct_laws() {
        for from in pts {
            for to in pts {
                best = best.max(law.cost(from, to)?);
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub states: Vec<Vec<f64>>,
    pub steps: usize,
    pub converged: bool,
    pub sinkhorn_iterations: usize,
    pub alpha: Vec<f64>,
}

/// Step the scenario until the largest per-agent displacement stays below
/// [`STEADY_DISPLACEMENT`] for [`STEADY_WINDOW`] steps, or `step_count`
/// steps have been taken.
pub fn run_to_steady(scenario: &FleetScenario) -> Result<SteadyState> {
    let mut state = SimState::initial(scenario);
    let mut quiet = 0;
    let mut iterations = 0;
    while state.k < scenario.step_count() {
        let (next, record) = step(scenario, &state)?;
        iterations += record.iterations;
        let moved = next
            .x
            .iter()
            .zip(&state.x)
            .map(|(a, b)| distance(a, b))
            .fold(0.0, f64::max);
        state = next;
        quiet = if moved < STEADY_DISPLACEMENT { quiet + 1 } else { 0 };
        if quiet >= STEADY_WINDOW {
            break;
        }
    }
    Ok(SteadyState {
        states: state.x,
        steps: state.k,
        converged: quiet >= STEADY_WINDOW,
        sinkhorn_iterations: iterations,
        alpha: state.alpha,
    })
}

/// Nearest permutation of the targets to `x` in max-over-agents distance.
/// Exhaustive up to [`BRUTE_FORCE_MAX`] agents; above that the minimum-sum
/// matching on distances is used, which coincides with the nearest
/// permutation whenever the fleet is within half the target separation of
/// one.
pub fn nearest_permutation(scenario: &FleetScenario, x: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = x.len();
    let pts = scenario.targets().points();
    if pts.len() != n {
        return Err(Error::Parameter("permutation distance needs as many targets as agents".into()));
    }
    let spread = |perm: &[usize]| {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| distance(&x[i], &pts[j]))
            .fold(0.0, f64::max)
    };
    if n > BRUTE_FORCE_MAX {
        let d: Vec<f64> = x.iter().flat_map(|xi| pts.iter().map(move |t| distance(xi, t))).collect();
        let a = crate::assignment::hungarian(&crate::otcore::CostMatrix::new(n, n, d)?)?;
        let worst = spread(&a.sigma);
        return Ok((a.sigma, worst));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), f64::INFINITY);
    loop {
        let d = spread(&perm);
        if d < best.1 {
            best = (perm.clone(), d);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub steady: SteadyState,
    pub residual: f64,
    /// `max_i ‖x_i − centroid‖`.
    pub centroid_distance: f64,
    /// Frobenius distance of `P*(steady)` from the uniform plan.
    pub blur: f64,
    /// Nearest target permutation, when the fleet is small and square.
    pub permutation: Option<(Vec<usize>, f64)>,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Failures are recorded per ε and the sweep continues.
    pub outcome: std::result::Result<SweepPoint, String>,
}

fn sweep_point(scenario: &FleetScenario) -> Result<SweepPoint> {
    let steady = run_to_steady(scenario)?;
    let sol = converged_coupling(scenario, &steady.states, Some(&steady.alpha))?;
    let residual = residual_of(scenario, &steady.states, &sol.coupling)?.residual;
    let centroid = scenario.targets().centroid();
    let centroid_distance = steady
        .states
        .iter()
        .map(|x| distance(x, &centroid))
        .fold(0.0, f64::max);
    let (n, m) = (scenario.agents(), scenario.targets().len());
    let uniform = 1.0 / (n * m) as f64;
    let blur = sol
        .coupling
        .plan()
        .iter()
        .map(|p| (p - uniform) * (p - uniform))
        .sum::<f64>()
        .sqrt();
    let permutation = if n == m && n <= BRUTE_FORCE_MAX {
        Some(nearest_permutation(scenario, &steady.states)?)
    } else {
        None
    };
    Ok(SweepPoint {
        steady,
        residual,
        centroid_distance,
        blur,
        permutation,
    })
}

/// One run to steady state per ε of an ascending grid.
pub fn epsilon_sweep(scenario: &FleetScenario, eps_grid: &[f64]) -> Result<Vec<SweepRow>> {
    if eps_grid.is_empty() || eps_grid.windows(2).any(|w| !(w[0] < w[1])) || !(eps_grid[0] > 0.0) {
        return Err(Error::Parameter("epsilon grid must be positive and strictly ascending".into()));
    }
    eps_grid
        .iter()
        .map(|&epsilon| {
            let outcome = scenario
                .with_epsilon(epsilon)
                .and_then(|s| sweep_point(&s))
                .map_err(|e| e.to_string());
            Ok(SweepRow { epsilon, outcome })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayOptions {
    pub damping: f64,
    /// Fixed-point stop: largest per-agent update below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub sinkhorn_threshold: f64,
    /// Distances below this are treated as round-off and left out of the fit.
    pub floor: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-14,
            max_iterations: 20_000,
            sinkhorn_threshold: 1e-13,
            floor: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecayRow {
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `max_i ‖x_i^e − x^d_{σ(i)}‖`.
    pub state_distance: f64,
    /// `max_ij |P*_ij(x^e) − P^σ_ij|`.
    pub plan_distance: f64,
    pub states: Vec<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `ln(state_distance)` against `1/ε`.
    pub slope: Option<f64>,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn check_sigma(sigma: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if sigma.len() != n {
        return Err(Error::dim("sigma", format!("length {} for {n} agents", sigma.len())));
    }
    for &j in sigma {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::Parameter("sigma is not a permutation".into()));
        }
    }
    Ok(())
}

fn decay_row(scenario: &FleetScenario, sigma: &[usize], opts: &DecayOptions) -> Result<DecayRow> {
    let pts = scenario.targets().points();
    let n = sigma.len();
    let mut x: Vec<Vec<f64>> = sigma.iter().map(|&j| pts[j].clone()).collect();
    let mut alpha: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut coupling = None;
    while iterations < opts.max_iterations {
        iterations += 1;
        let sol = converged_coupling_to(scenario, &x, alpha.as_deref(), opts.sinkhorn_threshold)?;
        let h = scenario
            .navigator()
            .targets(&sol.coupling, scenario.targets(), scenario.marginals().a())?;
        let mut moved: f64 = 0.0;
        for (xi, hi) in x.iter_mut().zip(&h) {
            for (a, b) in xi.iter_mut().zip(hi) {
                let next = (1.0 - opts.damping) * *a + opts.damping * b;
                moved = moved.max((next - *a).abs());
                *a = next;
            }
        }
        alpha = Some(sol.coupling.scaling().alpha.clone());
        coupling = Some(sol.coupling);
        if moved < opts.tolerance {
            converged = true;
            break;
        }
    }
    let sol = converged_coupling_to(scenario, &x, alpha.as_deref(), opts.sinkhorn_threshold)
        .map(|s| s.coupling)
        .or_else(|e| coupling.ok_or(e))?;
    let state_distance = x
        .iter()
        .zip(sigma)
        .map(|(xi, &j)| distance(xi, &pts[j]))
        .fold(0.0, f64::max);
    let mut plan_distance: f64 = 0.0;
    for (i, &j_sigma) in sigma.iter().enumerate() {
        for j in 0..n {
            let target = if j == j_sigma { 1.0 / n as f64 } else { 0.0 };
            plan_distance = plan_distance.max((sol.get(i, j) - target).abs());
        }
    }
    Ok(DecayRow {
        epsilon: scenario.epsilon(),
        converged,
        iterations,
        state_distance,
        plan_distance,
        states: x,
        error: None,
    })
}

/// For each ε of a descending grid, locate the equilibrium near `x^d(σ)` by
/// damped fixed-point iteration of the barycentric map and measure how far it
/// is from the permutation.
pub fn exponential_equilibrium_check(
    scenario: &FleetScenario,
    sigma: &[usize],
    eps_grid: &[f64],
    opts: &DecayOptions,
) -> Result<DecayTable> {
    let n = scenario.agents();
    if scenario.targets().len() != n || n > BRUTE_FORCE_MAX {
        return Err(Error::Parameter(format!(
            "decay check needs a small square fleet, got {n} agents and {} targets",
            scenario.targets().len()
        )));
    }
    check_sigma(sigma, n)?;
    if eps_grid.windows(2).any(|w| !(w[0] > w[1])) || eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Parameter("epsilon grid must be positive and strictly descending".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Parameter("damping must lie in (0, 1]".into()));
    }
    let mut rows = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let row = scenario
            .with_epsilon(eps)
            .and_then(|s| decay_row(&s, sigma, opts))
            .unwrap_or_else(|e| DecayRow {
                epsilon: eps,
                converged: false,
                iterations: 0,
                state_distance: f64::NAN,
                plan_distance: f64::NAN,
                states: Vec::new(),
                error: Some(e.to_string()),
            });
        rows.push(row);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.converged && r.state_distance > opts.floor)
        .map(|r| (1.0 / r.epsilon, r.state_distance.ln()))
        .unzip();
    let slope = regression_slope(&xs, &ys);
    Ok(DecayTable { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::LinearSystem;
    use crate::navigator::{NavigatorKind, TargetSet};
    use crate::simulator::{IterationSchedule, ScenarioConfig, SnapshotPolicy};

    fn scalar_fleet(x0: &[f64], targets: &[f64], epsilon: f64) -> FleetScenario {
        let sys = LinearSystem::discrete(Matrix::scalar(1.0), Matrix::scalar(0.1)).unwrap();
        FleetScenario::new(ScenarioConfig {
            systems: vec![sys; x0.len()],
            euler_step: None,
            x0: x0.iter().map(|&v| vec![v]).collect(),
            targets: TargetSet::new(targets.iter().map(|&v| vec![v]).collect()).unwrap(),
            marginals: None,
            epsilon,
            tau_h: 20,
            schedule: IterationSchedule::tolerance(1e-12),
            alpha0: None,
            step_count: 2000,
            navigator: NavigatorKind::Barycentric,
            snapshots: SnapshotPolicy::Auto,
            diagnostics: false,
        })
        .unwrap()
    }

    #[test]
    fn single_agent_cost_and_gradient() {
        let s = scalar_fleet(&[0.7], &[0.2], 0.3);
        let x = vec![vec![0.7]];
        // 𝒢 = 5 for this system
        let c = 5.0 * 0.25;
        assert!((entropic_cost(&s, &x).unwrap() - (c - 0.3)).abs() < 1e-12);
        let g = entropic_cost_gradient(&s, &x).unwrap();
        assert!((g[0][0] - 2.0 * 5.0 * 0.5).abs() < 1e-12);
        assert!(equilibrium_residual(&s, &[vec![0.2]]).unwrap().residual < 1e-15);
    }

    #[test]
    fn lower_bound_holds() {
        let s = scalar_fleet(&[0.0, 0.5, -0.3], &[-1.0, 0.2, 0.9], 0.4);
        let x = s.x0().to_vec();
        let e = entropic_cost(&s, &x).unwrap();
        let cost = s.cost_matrix(&x).unwrap();
        let n = 3.0f64;
        let mins: f64 = (0..3).map(|i| cost.row(i).iter().copied().fold(f64::INFINITY, f64::min)).sum();
        assert!(e >= mins / n - 0.4 * (2.0 * n.ln() + 1.0));
    }

    #[test]
    fn dual_all_ones_kernel() {
        let s = scalar_fleet(&[0.0, 0.0], &[0.0, 0.0], 1.5);
        let d = dual_objective(&s, s.x0(), &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((d.value + 1.5 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn dual_matches_primal_at_optimum() {
        let s = scalar_fleet(&[0.3, -0.6, 0.1], &[-1.0, 0.0, 1.0], 2.0);
        let x = s.x0().to_vec();
        let sol = converged_coupling_to(&s, &x, None, 1e-14).unwrap();
        let (f, g) = duals_of(&sol.coupling);
        let q = dual_objective(&s, &x, &f, &g).unwrap();
        let e = entropic_cost_of(&s, &x, &sol.coupling).unwrap();
        assert!((q.value - e).abs() <= 1e-8 * (1.0 + e.abs()));
        assert!(q.grad_f.iter().chain(&q.grad_g).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn scalar_bound_example() {
        let s = scalar_fleet(&[0.3], &[1.0], 0.1);
        let r = ultimate_bound(&s, &[0.01]).unwrap();
        let a = &r.agents[0];
        assert!((a.rho - 0.95).abs() < 1e-12);
        assert_eq!(a.kappa, 1.0);
        assert!((a.bound - 1.25).abs() < 1e-9);
        assert!(ultimate_bound(&s, &[0.06]).is_err());
    }

    #[test]
    fn kappa_of_nonnormal_matrix_exceeds_one() {
        let a = Matrix::from_rows(&[[0.5, 4.0], [0.0, 0.5]]).unwrap();
        let k = kappa(&a, 0.6).unwrap();
        // brute force over a long window
        let mut p = Matrix::identity(2);
        let mut best: f64 = 1.0;
        for k in 1..400 {
            p = &a * &p;
            best = best.max(p.norm2().unwrap() / 0.6f64.powi(k));
        }
        assert!(k > 1.0);
        assert!((k - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn lyapunov_zero_at_anchor() {
        let s = scalar_fleet(&[0.3, -0.6], &[-1.0, 1.0], 0.2);
        let x = s.x0().to_vec();
        let anchor = EquilibriumAnchor::at(&s, &x).unwrap();
        let centers =
            crate::navigator::barycentric_targets(&anchor.coupling, s.targets(), s.marginals().a()).unwrap();
        let v = lyapunov_v(&s, &centers, anchor.beta(), &anchor, 1.0).unwrap();
        assert!(v.abs() < 1e-15);
        let shifted = vec![vec![centers[0][0] + 0.1], centers[1].clone()];
        let v = lyapunov_v(&s, &shifted, anchor.beta(), &anchor, 1.0).unwrap();
        assert!((v - 5.0 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn large_epsilon_collapses_to_centroid() {
        let s = scalar_fleet(&[0.9, -0.1], &[-1.0, 1.0], 1.0);
        let big = 100.0 * max_target_cost(&s).unwrap();
        let rows = epsilon_sweep(&s, &[big]).unwrap();
        let p = rows[0].outcome.as_ref().unwrap();
        assert!(p.steady.converged);
        assert!(p.centroid_distance < 1e-3);
    }

    #[test]
    fn two_agent_symmetric_basins() {
        let s = scalar_fleet(&[0.0, 0.0], &[-1.0, 1.0], 1.0);
        let opts = DecayOptions::default();
        for sigma in [[0, 1], [1, 0]] {
            let t = exponential_equilibrium_check(&s, &sigma, &[1.0, 0.5], &opts).unwrap();
            let last = t.rows.last().unwrap();
            assert!(last.converged, "{sigma:?}: {last:?}");
            assert!(last.state_distance < t.rows[0].state_distance);
        }
    }

    #[test]
    fn regression_slope_of_a_line() {
        let x = [1.0, 2.0, 3.0];
        let y = [5.0, 3.0, 1.0];
        assert_eq!(regression_slope(&x, &y), Some(-2.0));
        assert_eq!(regression_slope(&[1.0], &[1.0]), None);
    }
}
