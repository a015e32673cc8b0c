//! Entropic optimal transport between discrete measures.
//!
//! The solver works in the linear domain: a Gibbs kernel `K = exp(-C/ε)`
//! and two positive scaling vectors `(α, β)` with coupling
//! `P = diag(α) K diag(β)`. One Sinkhorn step is a β-update followed by an
//! α-update, so the coupling assembled after a step matches the row
//! marginal to rounding error.

use crate::error::{Error, Result};

/// Default iteration cap for [`StoppingPolicy::MarginalTolerance`].
pub const DEFAULT_SINKHORN_CAP: usize = 100_000;

/// Kernels larger than this are too expensive for the exhaustive
/// contraction factor; it is meant for diagnostics only.
pub const CONTRACTION_DIAGNOSTIC_MAX: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(
                "CostMatrix",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Parameter(format!(
                "cost ({}, {}) = {} must be finite and nonnegative",
                pos / cols,
                pos % cols,
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            if r.as_ref().len() != ncols {
                return Err(Error::dim("CostMatrix", "ragged rows"));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), ncols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(0.0, |m: f64, &c| m.max(c))
    }

    /// Row minima subtracted, then column minima. Shifting a row or column
    /// by a constant only rescales `α` or `β`, so the coupling of every ε is
    /// unchanged, but each row and column of the result has a zero and its
    /// Gibbs kernel keeps a unit entry there however small ε is.
    pub fn reduced(&self) -> CostMatrix {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.cols.max(1)) {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            row.iter_mut().for_each(|c| *c -= lo);
        }
        for j in 0..self.cols {
            let lo = (0..self.rows).map(|i| data[i * self.cols + j]).fold(f64::INFINITY, f64::min);
            for i in 0..self.rows {
                data[i * self.cols + j] -= lo;
            }
        }
        CostMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// `Σ_ij C_ij P_ij`.
    pub fn transport_cost(&self, plan: &[f64]) -> f64 {
        self.data.iter().zip(plan).map(|(c, p)| c * p).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsKernel {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    epsilon: f64,
}

impl GibbsKernel {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.data.iter().all(|&k| k > 0.0)
    }

    /// `K v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = lane_dot(row, v);
        }
    }

    /// `Kᵀ v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&x, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, k) in out.iter_mut().zip(row) {
                *o += k * x;
            }
        }
    }
}

/// Dot product over eight independent partial sums, which lets the
/// compiler vectorize; the summation order is fixed, so results are
/// deterministic.
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (a_main, a_tail) = a.split_at(a.len() - a.len() % LANES);
    let (b_main, b_tail) = b.split_at(a_main.len());
    for (ca, cb) in a_main.chunks_exact(LANES).zip(b_main.chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += ca[k] * cb[k];
        }
    }
    let tail: f64 = a_tail.iter().zip(b_tail).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Marginals {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        for (name, v) in [("a", &a), ("b", &b)] {
            if v.is_empty() {
                return Err(Error::Parameter(format!("marginal {name} is empty")));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Parameter(format!(
                    "marginal {name} has a negative or non-finite entry"
                )));
            }
            let total: f64 = v.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter(format!(
                    "marginal {name} sums to {total}, expected 1"
                )));
            }
        }
        Ok(Self { a, b })
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self {
            a: vec![1.0 / n as f64; n],
            b: vec![1.0 / m as f64; m],
        }
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPair {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    rows: usize,
    cols: usize,
    plan: Vec<f64>,
    scaling: ScalingPair,
    epsilon: f64,
}

impl Coupling {
    /// Build a coupling directly from a plan, e.g. the permutation plan of
    /// an exact assignment. The scaling vectors are left empty.
    pub fn from_plan(rows: usize, cols: usize, plan: Vec<f64>) -> Result<Self> {
        if rows * cols != plan.len() {
            return Err(Error::dim("Coupling::from_plan", "plan size"));
        }
        Ok(Self {
            rows,
            cols,
            plan,
            scaling: ScalingPair {
                alpha: Vec::new(),
                beta: Vec::new(),
            },
            epsilon: 0.0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.plan[i * self.cols..(i + 1) * self.cols]
    }

    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    pub fn scaling(&self) -> &ScalingPair {
        &self.scaling
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.plan.chunks_exact(self.cols) {
            for (o, p) in out.iter_mut().zip(r) {
                *o += p;
            }
        }
        out
    }

    /// Largest entrywise deviation from another plan of the same shape.
    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.plan
            .iter()
            .zip(other)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()))
    }
}

/// Entropy `H(P) = -Σ P_ij (log P_ij - 1)` with `0 log 0 = 0`.
pub fn entropy(plan: &[f64]) -> f64 {
    -plan
        .iter()
        .map(|&p| if p > 0.0 { p * (p.ln() - 1.0) } else { 0.0 })
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StoppingPolicy {
    /// Exactly this many Sinkhorn steps.
    FixedCount(usize),
    /// Iterate until the ℓ1 marginal violation drops below `threshold`.
    MarginalTolerance { threshold: f64, cap: usize },
}

impl StoppingPolicy {
    pub fn tolerance(threshold: f64) -> Self {
        StoppingPolicy::MarginalTolerance {
            threshold,
            cap: DEFAULT_SINKHORN_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StoppingPolicy::FixedCount(0) => Err(Error::Parameter(
                "fixed Sinkhorn count must be at least 1".into(),
            )),
            StoppingPolicy::MarginalTolerance { threshold, cap } => {
                if !(threshold > 0.0 && threshold.is_finite()) {
                    Err(Error::Parameter(format!(
                        "marginal tolerance must be positive, got {threshold}"
                    )))
                } else if cap == 0 {
                    Err(Error::Parameter("Sinkhorn cap must be at least 1".into()))
                } else {
                    Ok(())
                }
            }
            StoppingPolicy::FixedCount(_) => Ok(()),
        }
    }
}

/// `K_ij = exp(-C_ij / ε)`.
///
/// Individual entries may underflow to zero when `ε` is small next to the
/// cost spread; such entries carry relative mass below `1e-308`. A row or
/// column that underflows entirely cannot be scaled to its marginal and is
/// rejected.
pub fn gibbs_kernel(cost: &CostMatrix, epsilon: f64) -> Result<GibbsKernel> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let data: Vec<f64> = cost.data.iter().map(|c| (-c / epsilon).exp()).collect();
    let kernel = GibbsKernel {
        rows: cost.rows,
        cols: cost.cols,
        data,
        epsilon,
    };
    check_support(&kernel, cost)?;
    Ok(kernel)
}

fn check_support(kernel: &GibbsKernel, cost: &CostMatrix) -> Result<()> {
    let degenerate = |row: usize, col: usize| Error::DegenerateKernel {
        row,
        col,
        cost: cost.get(row, col),
        epsilon: kernel.epsilon,
    };
    let argmin = |it: &mut dyn Iterator<Item = (usize, f64)>| {
        it.min_by(|a, b| a.1.total_cmp(&b.1)).map_or(0, |(k, _)| k)
    };
    for i in 0..kernel.rows {
        if kernel.row(i).iter().all(|&k| k == 0.0) {
            let j = argmin(&mut cost.row(i).iter().copied().enumerate());
            return Err(degenerate(i, j));
        }
    }
    let col_mass = {
        let mut m = vec![0.0; kernel.cols];
        kernel.apply_transpose(&vec![1.0; kernel.rows], &mut m);
        m
    };
    if let Some(j) = col_mass.iter().position(|&m| m == 0.0) {
        let i = argmin(&mut (0..cost.rows).map(|i| (i, cost.get(i, j))));
        return Err(degenerate(i, j));
    }
    Ok(())
}

fn check_dims(kernel: &GibbsKernel, marginals: &Marginals, alpha: &[f64]) -> Result<()> {
    if marginals.a.len() != kernel.rows || marginals.b.len() != kernel.cols {
        return Err(Error::dim(
            "sinkhorn",
            format!(
                "kernel {}x{} with marginals of length {} and {}",
                kernel.rows,
                kernel.cols,
                marginals.a.len(),
                marginals.b.len()
            ),
        ));
    }
    if alpha.len() != kernel.rows {
        return Err(Error::dim(
            "sinkhorn",
            format!("alpha has length {}, kernel has {} rows", alpha.len(), kernel.rows),
        ));
    }
    if alpha.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Parameter("alpha must be strictly positive".into()));
    }
    Ok(())
}

/// `out = num ⊘ den`, failing on zero or non-finite denominators.
fn divide_into(num: &[f64], den: &[f64], out: &mut [f64], what: &str) -> Result<()> {
    for (k, ((o, &n), &d)) in out.iter_mut().zip(num).zip(den).enumerate() {
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Breakdown(format!("{what} denominator {k} is {d}")));
        }
        *o = n / d;
        if !o.is_finite() {
            return Err(Error::Breakdown(format!("{what} entry {k} overflowed")));
        }
    }
    Ok(())
}

/// One β-update from `alpha_in` followed by one α-update.
pub fn sinkhorn_step(
    kernel: &GibbsKernel,
    marginals: &Marginals,
    alpha_in: &[f64],
) -> Result<ScalingPair> {
    check_dims(kernel, marginals, alpha_in)?;
    let mut state = SinkhornState::new(kernel, marginals, alpha_in.to_vec());
    state.step()?;
    Ok(ScalingPair {
        alpha: state.alpha,
        beta: state.beta,
    })
}

/// Iteration state that keeps `Kᵀα` around so that the marginal violation
/// of each iterate costs no extra pass over the kernel.
struct SinkhornState<'a> {
    kernel: &'a GibbsKernel,
    marginals: &'a Marginals,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    k_beta: Vec<f64>,
    kt_alpha: Vec<f64>,
}

impl<'a> SinkhornState<'a> {
    fn new(kernel: &'a GibbsKernel, marginals: &'a Marginals, alpha: Vec<f64>) -> Self {
        let mut kt_alpha = vec![0.0; kernel.cols];
        kernel.apply_transpose(&alpha, &mut kt_alpha);
        Self {
            kernel,
            marginals,
            alpha,
            beta: vec![0.0; kernel.cols],
            k_beta: vec![0.0; kernel.rows],
            kt_alpha,
        }
    }

    /// `Kβ`, the α-update and the next `Kᵀα` share one pass over the
    /// kernel, row by row, so each row is read from memory once.
    fn step(&mut self) -> Result<()> {
        divide_into(&self.marginals.b, &self.kt_alpha, &mut self.beta, "beta")?;
        self.kt_alpha.iter_mut().for_each(|v| *v = 0.0);
        let rows = self.kernel.data.chunks_exact(self.kernel.cols);
        for (i, row) in rows.enumerate() {
            let kb = lane_dot(row, &self.beta);
            if kb == 0.0 || !kb.is_finite() {
                return Err(Error::Breakdown(format!("alpha denominator {i} is {kb}")));
            }
            let a = self.marginals.a[i] / kb;
            if !a.is_finite() {
                return Err(Error::Breakdown(format!("alpha entry {i} overflowed")));
            }
            self.k_beta[i] = kb;
            self.alpha[i] = a;
            for (o, k) in self.kt_alpha.iter_mut().zip(row) {
                *o += k * a;
            }
        }
        Ok(())
    }

    /// `‖P1 − a‖₁ + ‖Pᵀ1 − b‖₁` for the current `(α, β)`.
    fn violation(&self) -> f64 {
        let rows: f64 = self
            .alpha
            .iter()
            .zip(&self.k_beta)
            .zip(&self.marginals.a)
            .map(|((al, kb), a)| (al * kb - a).abs())
            .sum();
        let cols: f64 = self
            .beta
            .iter()
            .zip(&self.kt_alpha)
            .zip(&self.marginals.b)
            .map(|((be, ka), b)| (be * ka - b).abs())
            .sum();
        rows + cols
    }

    fn coupling(&self) -> Coupling {
        coupling_from(
            self.kernel,
            &ScalingPair {
                alpha: self.alpha.clone(),
                beta: self.beta.clone(),
            },
        )
    }
}

/// Result of [`sinkhorn_solve`].
#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    pub coupling: Coupling,
    pub iterations: usize,
    /// Marginal violation of `coupling`.
    pub violation: f64,
}

/// Run Sinkhorn steps from `alpha0` until `stop` is satisfied. At least one
/// step is always taken.
pub fn sinkhorn_solve(
    kernel: &GibbsKernel,
    marginals: &Marginals,
    alpha0: &[f64],
    stop: StoppingPolicy,
) -> Result<SinkhornSolution> {
    check_dims(kernel, marginals, alpha0)?;
    stop.validate()?;
    let mut state = SinkhornState::new(kernel, marginals, alpha0.to_vec());
    match stop {
        StoppingPolicy::FixedCount(steps) => {
            for _ in 0..steps {
                state.step()?;
            }
            Ok(SinkhornSolution {
                coupling: state.coupling(),
                iterations: steps,
                violation: state.violation(),
            })
        }
        StoppingPolicy::MarginalTolerance { threshold, cap } => {
            let mut best: Option<(f64, ScalingPair)> = None;
            for it in 1..=cap {
                state.step()?;
                let violation = state.violation();
                if violation < threshold {
                    return Ok(SinkhornSolution {
                        coupling: state.coupling(),
                        iterations: it,
                        violation,
                    });
                }
                if best.as_ref().is_none_or(|(v, _)| violation < *v) {
                    best = Some((
                        violation,
                        ScalingPair {
                            alpha: state.alpha.clone(),
                            beta: state.beta.clone(),
                        },
                    ));
                }
            }
            let (violation, scaling) = best.expect("cap is at least one");
            Err(Error::SinkhornCap {
                iterations: cap,
                threshold,
                violation,
                best: Box::new(coupling_from(kernel, &scaling)),
            })
        }
    }
}

/// Newton steps on the semi-dual taken by [`sinkhorn_newton_solve`] before it
/// falls back to plain Sinkhorn.
pub const NEWTON_MAX_STEPS: usize = 60;

/// Largest change of any `log α_i` tried by one Newton line search.
const NEWTON_MAX_LOG_STEP: f64 = 20.0;

const NEWTON_REGULARIZATION: f64 = 1e-12;

/// Tight solve for `P*`: Sinkhorn warm-up, then Newton steps on the
/// semi-dual `F(u) = aᵀu − bᵀ log(Kᵀe^u)` with `u = log α`, each followed by
/// one Sinkhorn step so the result keeps the `diag(α) K diag(β)` form and
/// exact row sums. Falls back to plain Sinkhorn (up to
/// [`DEFAULT_SINKHORN_CAP`]) if Newton stalls. `iterations` counts Sinkhorn
/// and Newton steps together.
pub fn sinkhorn_newton_solve(
    kernel: &GibbsKernel,
    marginals: &Marginals,
    alpha0: &[f64],
    threshold: f64,
    warmup: usize,
) -> Result<SinkhornSolution> {
    check_dims(kernel, marginals, alpha0)?;
    StoppingPolicy::tolerance(threshold).validate()?;
    let mut state = SinkhornState::new(kernel, marginals, alpha0.to_vec());
    let mut iterations = 0;
    let done = |state: &SinkhornState, iterations| {
        let violation = state.violation();
        (violation < threshold).then(|| SinkhornSolution {
            coupling: state.coupling(),
            iterations,
            violation,
        })
    };
    for _ in 0..warmup.max(1) {
        state.step()?;
        iterations += 1;
        if let Some(sol) = done(&state, iterations) {
            return Ok(sol);
        }
    }
    for _ in 0..NEWTON_MAX_STEPS {
        if !newton_step(&mut state)? {
            break;
        }
        state.step()?;
        iterations += 2;
        if let Some(sol) = done(&state, iterations) {
            return Ok(sol);
        }
    }
    let remaining = DEFAULT_SINKHORN_CAP.saturating_sub(iterations).max(1);
    let alpha = state.alpha.clone();
    sinkhorn_solve(
        kernel,
        marginals,
        &alpha,
        StoppingPolicy::MarginalTolerance {
            threshold,
            cap: remaining,
        },
    )
    .map(|mut sol| {
        sol.iterations += iterations;
        sol
    })
}

/// Semi-dual value `aᵀ log α − bᵀ log(Kᵀα)`; `None` if a column sum vanishes.
fn semi_dual(kernel: &GibbsKernel, marginals: &Marginals, alpha: &[f64], kt: &mut [f64]) -> Option<f64> {
    kernel.apply_transpose(alpha, kt);
    let mut f: f64 = marginals.a.iter().zip(alpha).map(|(a, al)| a * al.ln()).sum();
    for (b, k) in marginals.b.iter().zip(kt.iter()) {
        if *b > 0.0 {
            if !(*k > 0.0 && k.is_finite()) {
                return None;
            }
            f -= b * k.ln();
        }
    }
    f.is_finite().then_some(f)
}

/// One damped Newton ascent step on the semi-dual, applied to `state.alpha`.
/// With `β = b ⊘ Kᵀα` and `P = diag(α) K diag(β)` the gradient is `a − P1`
/// and the negated Hessian is the Laplacian `diag(P1) − P diag(b)⁻¹ Pᵀ`,
/// whose null space (constant shifts of `u`) is removed by pinning `u_0`.
/// Returns `false` when no ascent step is found.
fn newton_step(state: &mut SinkhornState) -> Result<bool> {
    let kernel = state.kernel;
    let marginals = state.marginals;
    let (n, m) = (kernel.rows, kernel.cols);
    if n < 2 {
        return Ok(false);
    }
    let mut kt = vec![0.0; m];
    let Some(f0) = semi_dual(kernel, marginals, &state.alpha, &mut kt) else {
        return Ok(false);
    };
    let beta: Vec<f64> = marginals
        .b
        .iter()
        .zip(&kt)
        .map(|(b, k)| if *b > 0.0 { b / k } else { 0.0 })
        .collect();
    let mut plan = vec![0.0; n * m];
    let mut r = vec![0.0; n];
    for i in 0..n {
        let row = &kernel.data[i * m..(i + 1) * m];
        for j in 0..m {
            let p = state.alpha[i] * row[j] * beta[j];
            plan[i * m + j] = p;
            r[i] += p;
        }
    }
    let grad: Vec<f64> = marginals.a.iter().zip(&r).map(|(a, ri)| a - ri).collect();
    // scaled rows P_ij / sqrt(b_j) so that the Hessian term is a Gram matrix
    let inv_sqrt_b: Vec<f64> = marginals
        .b
        .iter()
        .map(|&b| if b > 0.0 { 1.0 / b.sqrt() } else { 0.0 })
        .collect();
    let scaled: Vec<f64> = plan
        .chunks_exact(m)
        .flat_map(|row| row.iter().zip(&inv_sqrt_b).map(|(p, s)| p * s))
        .collect();
    let q = nalgebra::DMatrix::from_row_slice(n, m, &scaled);
    let mut lap = -(&q * q.transpose());
    // the relative shift keeps numerically disconnected blocks of the plan
    // (whose own gauge is free) from making the system singular
    for i in 0..n {
        lap[(i, i)] += r[i] * (1.0 + NEWTON_REGULARIZATION);
    }
    let reduced = lap.view((1, 1), (n - 1, n - 1)).into_owned();
    let rhs = nalgebra::DVector::from_column_slice(&grad[1..]);
    let Some(sol) = reduced.lu().solve(&rhs) else {
        return Ok(false);
    };
    let mut delta = vec![0.0; n];
    delta[1..].copy_from_slice(sol.as_slice());
    if delta.iter().any(|d| !d.is_finite()) {
        return Ok(false);
    }
    let slope: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
    if !(slope > 0.0) {
        return Ok(false);
    }
    // near-disconnected plans make the Laplacian nearly singular and the
    // raw direction huge; start from a step that moves log α by at most
    // NEWTON_MAX_LOG_STEP
    let largest = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut t = (NEWTON_MAX_LOG_STEP / largest).min(1.0);
    let mut trial = vec![0.0; n];
    for _ in 0..60 {
        for ((x, a), d) in trial.iter_mut().zip(&state.alpha).zip(&delta) {
            *x = a * (t * d).exp();
        }
        if trial.iter().all(|x| *x > 0.0 && x.is_finite()) {
            if let Some(f) = semi_dual(kernel, marginals, &trial, &mut kt) {
                if f >= f0 + 1e-4 * t * slope {
                    state.alpha.copy_from_slice(&trial);
                    state.kt_alpha.copy_from_slice(&kt);
                    return Ok(true);
                }
            }
        }
        t *= 0.5;
    }
    Ok(false)
}

/// `P = diag(α) K diag(β)`.
pub fn coupling_from(kernel: &GibbsKernel, scaling: &ScalingPair) -> Coupling {
    let mut plan = Vec::with_capacity(kernel.data.len());
    for (row, &a) in kernel.data.chunks_exact(kernel.cols).zip(&scaling.alpha) {
        plan.extend(row.iter().zip(&scaling.beta).map(|(k, b)| a * k * b));
    }
    Coupling {
        rows: kernel.rows,
        cols: kernel.cols,
        plan,
        scaling: scaling.clone(),
        epsilon: kernel.epsilon,
    }
}

/// `‖P1 − a‖₁ + ‖Pᵀ1 − b‖₁` by direct summation.
pub fn marginal_violation(coupling: &Coupling, marginals: &Marginals) -> f64 {
    let rows: f64 = coupling
        .row_sums()
        .iter()
        .zip(&marginals.a)
        .map(|(s, a)| (s - a).abs())
        .sum();
    let cols: f64 = coupling
        .col_sums()
        .iter()
        .zip(&marginals.b)
        .map(|(s, b)| (s - b).abs())
        .sum();
    rows + cols
}

/// Hilbert projective distance between positive vectors: the log of the
/// spread of the ratios `x_i / y_i`.
pub fn hilbert_metric(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(
            "hilbert_metric",
            format!("lengths {} and {}", x.len(), y.len()),
        ));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Parameter(
            "Hilbert metric needs strictly positive finite entries".into(),
        ));
    }
    let (lo, hi) = x
        .iter()
        .zip(y)
        .map(|(a, b)| a.ln() - b.ln())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    Ok(if x.is_empty() { 0.0 } else { hi - lo })
}

/// Birkhoff contraction factor `λ(K) = (√η − 1)/(√η + 1)` where `η` is the
/// largest cross-ratio `K_ik K_jl / (K_jk K_il)`.
///
/// For a row pair `(i, j)` the cross-ratio over column pairs is the spread
/// of `K_ik / K_jk`, so the max is taken over row pairs in `O(N²M)`. A
/// kernel with zero entries has unbounded `η` and factor 1.
pub fn contraction_factor(kernel: &GibbsKernel) -> f64 {
    if !kernel.is_strictly_positive() {
        return 1.0;
    }
    let logs: Vec<f64> = kernel.data.iter().map(|k| k.ln()).collect();
    let cols = kernel.cols;
    let mut log_eta: f64 = 0.0;
    for i in 0..kernel.rows {
        for j in (i + 1)..kernel.rows {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for k in 0..cols {
                let r = logs[i * cols + k] - logs[j * cols + k];
                lo = lo.min(r);
                hi = hi.max(r);
            }
            log_eta = log_eta.max(hi - lo);
        }
    }
    // (√η − 1)/(√η + 1) = tanh(log η / 4)
    (log_eta / 4.0).tanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn kernel(rows: &[&[f64]], eps: f64) -> GibbsKernel {
        gibbs_kernel(&CostMatrix::from_rows(rows).unwrap(), eps).unwrap()
    }

    #[test]
    fn kernel_direct_exponentiation() {
        let k = kernel(&[&[0.0, 1.0], &[1.0, 0.0]], 1.0);
        assert_eq!(k.as_slice(), &[1.0, (-1.0f64).exp(), (-1.0f64).exp(), 1.0]);
        let k = kernel(&[&[0.0; 3], &[0.0; 3]], 0.37);
        assert!(k.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn kernel_underflow_is_degenerate() {
        let c = CostMatrix::from_rows(&[[0.0, 1e6]]).unwrap();
        match gibbs_kernel(&c, 1.0) {
            Err(Error::DegenerateKernel { row, col, .. }) => assert_eq!((row, col), (0, 1)),
            other => panic!("expected degenerate kernel, got {other:?}"),
        }
    }

    #[test]
    fn kernel_rejects_bad_epsilon() {
        let c = CostMatrix::from_rows(&[[0.0]]).unwrap();
        assert!(matches!(gibbs_kernel(&c, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(gibbs_kernel(&c, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn cost_matrix_rejects_negative() {
        assert!(CostMatrix::from_rows(&[[-1.0]]).is_err());
        assert!(CostMatrix::from_rows(&[[f64::INFINITY]]).is_err());
    }

    #[test]
    fn marginals_validate_mass() {
        assert!(Marginals::new(vec![0.5, 0.6], vec![1.0]).is_err());
        assert!(Marginals::new(vec![], vec![1.0]).is_err());
        assert!(Marginals::new(vec![0.25, 0.75], vec![1.0]).is_ok());
    }

    #[test]
    fn uniform_fixed_point_step() {
        let k = kernel(&[&[0.0, 0.0], &[0.0, 0.0]], 1.0);
        let m = Marginals::uniform(2, 2);
        let s = sinkhorn_step(&k, &m, &[1.0, 1.0]).unwrap();
        assert_eq!(s.beta, vec![0.25, 0.25]);
        assert_eq!(s.alpha, vec![1.0, 1.0]);

        let scaled = sinkhorn_step(&k, &m, &[3.0, 3.0]).unwrap();
        let p1 = coupling_from(&k, &s);
        let p2 = coupling_from(&k, &scaled);
        assert!(p1.max_abs_diff(p2.plan()) < 1e-16);
    }

    #[test]
    fn one_step_matches_hand_evaluation() {
        let k = kernel(&[&[0.0, 1.0], &[1.0, 0.0]], 1.0);
        let m = Marginals::uniform(2, 2);
        let s = sinkhorn_step(&k, &m, &[1.0, 1.0]).unwrap();
        // Kᵀ1 = (1 + 1/e) on each column
        let beta = 0.5 / (1.0 + 1.0 / E);
        // Kβ = β(1 + 1/e) = 1/2 on each row
        let alpha = 0.5 / (beta * (1.0 + 1.0 / E));
        for b in &s.beta {
            assert!((b - beta).abs() < 1e-15);
        }
        for a in &s.alpha {
            assert!((a - alpha).abs() < 1e-15);
        }
    }

    #[test]
    fn step_breaks_down_on_zero_denominator() {
        // a kernel with a zero column can only be produced by hand
        let k = GibbsKernel {
            rows: 1,
            cols: 2,
            data: vec![1.0, 0.0],
            epsilon: 1.0,
        };
        let m = Marginals::uniform(1, 2);
        assert!(matches!(
            sinkhorn_step(&k, &m, &[1.0]),
            Err(Error::Breakdown(_))
        ));
    }

    #[test]
    fn all_ones_kernel_converges_in_one_step() {
        let n = 5;
        let c = CostMatrix::new(n, n, vec![0.0; n * n]).unwrap();
        let k = gibbs_kernel(&c, 1.0).unwrap();
        let m = Marginals::uniform(n, n);
        let sol = sinkhorn_solve(&k, &m, &vec![1.0; n], StoppingPolicy::tolerance(1e-12)).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.violation < 1e-15);
        for &p in sol.coupling.plan() {
            assert!((p - 1.0 / 25.0).abs() < 1e-17);
        }
    }

    #[test]
    fn two_by_two_matches_entropic_brute_force() {
        // Feasible 2x2 couplings with uniform marginals are
        // [[t, 1/2 - t], [1/2 - t, t]], t ∈ [0, 1/2]. Minimise the entropic
        // objective over t by a fine grid plus golden-section refinement.
        let (c_off, eps) = (10.0, 0.5);
        let objective = |t: f64| {
            let plan = [t, 0.5 - t, 0.5 - t, t];
            c_off * (1.0 - 2.0 * t) - eps * entropy(&plan)
        };
        let (mut lo, mut hi) = (0.25, 0.5 - 1e-300);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) * 0.381_966;
            let m2 = lo + (hi - lo) * 0.618_034;
            if objective(m1) < objective(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let t_star = 0.5 * (lo + hi);

        let k = kernel(&[&[0.0, c_off], &[c_off, 0.0]], eps);
        let m = Marginals::uniform(2, 2);
        let sol = sinkhorn_solve(&k, &m, &[1.0, 1.0], StoppingPolicy::tolerance(1e-9)).unwrap();
        let p = sol.coupling;
        assert!((p.get(0, 0) - t_star).abs() < 1e-6);
        assert!((p.get(0, 0) - 0.5).abs() < 1e-6);
        assert!(p.get(0, 1) < 1e-6);
    }

    #[test]
    fn fixed_count_runs_exactly() {
        let k = kernel(&[&[0.0, 3.0], &[2.0, 0.5]], 1.0);
        let m = Marginals::uniform(2, 2);
        let sol = sinkhorn_solve(&k, &m, &[1.0, 1.0], StoppingPolicy::FixedCount(7)).unwrap();
        assert_eq!(sol.iterations, 7);
        let mut alpha = vec![1.0, 1.0];
        for _ in 0..7 {
            alpha = sinkhorn_step(&k, &m, &alpha).unwrap().alpha;
        }
        assert_eq!(sol.coupling.scaling().alpha, alpha);
    }

    #[test]
    fn cap_reports_best_coupling() {
        let k = kernel(&[&[0.0, 0.3, 0.2], &[0.9, 0.0, 1.0], &[0.4, 0.1, 0.0]], 1.0);
        let m = Marginals::new(vec![0.5, 0.3, 0.2], vec![0.2, 0.2, 0.6]).unwrap();
        let stop = StoppingPolicy::MarginalTolerance {
            threshold: 1e-300,
            cap: 3,
        };
        match sinkhorn_solve(&k, &m, &[1.0; 3], stop) {
            Err(Error::SinkhornCap { iterations, best, violation, .. }) => {
                assert_eq!(iterations, 3);
                assert!((marginal_violation(&best, &m) - violation).abs() < 1e-12);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn newton_polish_matches_plain_sinkhorn() {
        let k = kernel(&[&[0.0, 0.3, 2.0, 1.0], &[0.9, 0.0, 1.0, 0.2], &[0.4, 0.1, 0.0, 3.0]], 0.05);
        let m = Marginals::new(vec![0.5, 0.3, 0.2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let plain = sinkhorn_solve(&k, &m, &[1.0; 3], StoppingPolicy::tolerance(1e-13)).unwrap();
        let newton = sinkhorn_newton_solve(&k, &m, &[1.0; 3], 1e-13, 2).unwrap();
        assert!(newton.violation < 1e-13);
        assert!(newton.iterations < plain.iterations);
        assert!(newton.coupling.max_abs_diff(plain.coupling.plan()) < 1e-12);
    }

    #[test]
    fn stopping_policy_validation() {
        assert!(StoppingPolicy::FixedCount(0).validate().is_err());
        assert!(StoppingPolicy::tolerance(0.0).validate().is_err());
        assert!(StoppingPolicy::MarginalTolerance { threshold: 0.1, cap: 0 }
            .validate()
            .is_err());
    }

    #[test]
    fn coupling_scale_cancellation_and_elementwise() {
        let k = kernel(&[&[0.0, 0.0], &[0.0, 0.0]], 1.0);
        let a = coupling_from(
            &k,
            &ScalingPair {
                alpha: vec![2.0, 2.0],
                beta: vec![0.5, 0.5],
            },
        );
        assert_eq!(a.plan(), k.as_slice());

        let k = kernel(&[&[0.0, 2.0], &[2.0, 0.0]], 1.0);
        let p = coupling_from(
            &k,
            &ScalingPair {
                alpha: vec![1.0, 2.0],
                beta: vec![3.0, 4.0],
            },
        );
        let off = (-2.0f64).exp();
        assert_eq!(p.plan(), &[3.0, 4.0 * off, 2.0 * 3.0 * off, 8.0]);
    }

    #[test]
    fn violation_of_product_and_perturbed_plans() {
        let m = Marginals::new(vec![0.2, 0.8], vec![0.3, 0.3, 0.4]).unwrap();
        let mut plan = Vec::new();
        for a in m.a() {
            for b in m.b() {
                plan.push(a * b);
            }
        }
        let p = Coupling::from_plan(2, 3, plan.clone()).unwrap();
        assert!(marginal_violation(&p, &m) < 1e-16);

        // scale row 0 by 1.1: row 0 sum grows by 0.02, and so do the column
        // sums in total (0.006 + 0.006 + 0.008)
        for v in plan.iter_mut().take(3) {
            *v *= 1.1;
        }
        let p = Coupling::from_plan(2, 3, plan).unwrap();
        assert!((marginal_violation(&p, &m) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn hilbert_metric_cases() {
        let v = [0.3, 1.7, 2.2];
        let w: Vec<f64> = v.iter().map(|x| 4.5 * x).collect();
        assert!(hilbert_metric(&v, &w).unwrap().abs() < 1e-15);
        let d = hilbert_metric(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert!((d - 4.0f64.ln()).abs() < 1e-15);
        assert!(hilbert_metric(&[1.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(hilbert_metric(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn reduction_keeps_the_coupling() {
        let c = CostMatrix::from_rows(&[[3.0, 1.0, 4.0], [1.5, 9.0, 2.6], [5.0, 3.5, 8.0]]).unwrap();
        let r = c.reduced();
        for i in 0..3 {
            assert!(r.row(i).contains(&0.0));
            assert!((0..3).any(|k| r.get(k, i) == 0.0));
        }
        let m = Marginals::uniform(3, 3);
        let solve = |c: &CostMatrix| {
            let k = gibbs_kernel(c, 0.7).unwrap();
            sinkhorn_solve(&k, &m, &[1.0; 3], StoppingPolicy::tolerance(1e-13)).unwrap().coupling
        };
        assert!(solve(&c).max_abs_diff(solve(&r).plan()) < 1e-12);
    }

    #[test]
    fn contraction_factor_cases() {
        let zeros: &[f64] = &[0.0; 4];
        let k = kernel(&[zeros; 4], 1.0);
        assert_eq!(contraction_factor(&k), 0.0);

        let k = kernel(&[&[0.0, 2.0], &[2.0, 0.0]], 1.0);
        // quadruple enumeration
        let mut eta: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        eta = eta.max(k.get(i, a) * k.get(j, b) / (k.get(j, a) * k.get(i, b)));
                    }
                }
            }
        }
        assert!((eta - 4.0f64.exp()).abs() < 1e-9);
        let expected = (eta.sqrt() - 1.0) / (eta.sqrt() + 1.0);
        assert!((contraction_factor(&k) - expected).abs() < 1e-14);
    }

    #[test]
    fn entropy_of_single_entry() {
        assert_eq!(entropy(&[1.0]), 1.0);
        assert_eq!(entropy(&[0.0, 1.0]), 1.0);
    }
}
