//! Minimum-energy finite-horizon MPC for linear agents with invertible
//! input matrices.
//!
//! For a target `x̂` the stage cost penalises the deviation of the input
//! from the equilibrium-holding input `ū(x̂)`, and the terminal constraint
//! pins the state to `x̂` at the end of the horizon. Both the first optimal
//! input and the optimal value have closed forms in terms of the
//! controllability Gramian `G`:
//!
//! * discrete: `u = −Bᵀ(Aᵀ)^{τ−1} G⁻¹ A^τ (x − x̂) + B⁻¹(x̂ − A x̂)`,
//!   value `‖x − x̂‖²_𝒢` with `𝒢 = (A^τ)ᵀ G⁻¹ A^τ`;
//! * continuous: `u = −Bᵀ𝒢(x − x̂) − B⁻¹A x̂` with
//!   `𝒢 = e^{AᵀT} G_T⁻¹ e^{AT}`.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::numerics::{self, continuous_gramian, decimal, mat_power, matrix_exponential, Matrix};

/// Relative eigenvalue floor of the Gramian; below it the horizon is
/// treated as uncontrollable (condition number above `1e12`).
pub const GRAMIAN_CONDITION_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Continuous,
    Discrete,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    a: Matrix,
    b: Matrix,
    flavor: Flavor,
}

impl LinearSystem {
    pub fn new(a: Matrix, b: Matrix, flavor: Flavor) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(
                "LinearSystem",
                format!("A is {}x{}", a.rows(), a.cols()),
            ));
        }
        if b.rows() != a.rows() {
            return Err(Error::dim(
                "LinearSystem",
                format!("A is {0}x{0} but B has {1} rows", a.rows(), b.rows()),
            ));
        }
        Ok(Self { a, b, flavor })
    }

    pub fn discrete(a: Matrix, b: Matrix) -> Result<Self> {
        Self::new(a, b, Flavor::Discrete)
    }

    pub fn continuous(a: Matrix, b: Matrix) -> Result<Self> {
        Self::new(a, b, Flavor::Continuous)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    /// `A x + B u` for discrete systems, `ẋ` for continuous ones.
    pub fn advance(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let ax = self.a.mul_vec(x)?;
        let bu = self.b.mul_vec(u)?;
        Ok(ax.iter().zip(&bu).map(|(p, q)| p + q).collect())
    }
}

/// Explicit Euler: `A_d = I + hA`, `B_d = hB`.
///
/// Entries are combined in exact decimal arithmetic and rounded once, so a
/// system written with decimal literals maps to the correctly rounded
/// decimal matrices (`1 + 0.02·2 = 1.04`, `0.02·1.3 = 0.026`).
pub fn discretize_euler(sys: &LinearSystem, h: f64) -> Result<LinearSystem> {
    if sys.flavor != Flavor::Continuous {
        return Err(Error::Parameter(
            "Euler discretization expects a continuous-time system".into(),
        ));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("step size must be positive, got {h}")));
    }
    let n = sys.state_dim();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let scaled = decimal::mul(h, sys.a.get(i, j));
            a.set(i, j, if i == j { decimal::add(1.0, scaled) } else { scaled });
        }
    }
    let mut b = Matrix::zeros(n, sys.input_dim());
    for i in 0..n {
        for j in 0..sys.input_dim() {
            b.set(i, j, decimal::mul(h, sys.b.get(i, j)));
        }
    }
    LinearSystem::discrete(a, b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Steps(usize),
    Time(f64),
}

/// `Σ_{k=0}^{τ−1} A^k B Bᵀ (Aᵀ)^k`.
pub fn discrete_gramian(sys: &LinearSystem, tau_h: usize) -> Result<Matrix> {
    if tau_h == 0 {
        return Err(Error::Parameter("horizon must be at least one step".into()));
    }
    let bbt = sys.b() * &sys.b().transpose();
    let mut gram = Matrix::zeros(sys.state_dim(), sys.state_dim());
    let mut power = Matrix::identity(sys.state_dim());
    for _ in 0..tau_h {
        gram = &gram + &(&(&power * &bbt) * &power.transpose());
        power = &power * sys.a();
    }
    Ok(gram.symmetrize())
}

/// Precomputed quadratic MPC law for one agent.
#[derive(Clone, Debug)]
pub struct MpcLaw {
    system: LinearSystem,
    horizon: Horizon,
    gramian: Matrix,
    gramian_inv: Matrix,
    metric: Matrix,
    closed_loop: Matrix,
    gain: Matrix,
    b_inv: Matrix,
    /// `A^τ` (discrete) or `e^{AT}` (continuous).
    transition: Matrix,
}

/// SPD inverse with the conditioning guard.
fn invert_gramian(gram: &Matrix) -> Result<Matrix> {
    let eig = numerics::symmetric_eigenvalues(gram)?;
    let (min_eig, max_eig) = (eig[0], eig[eig.len() - 1]);
    if !(max_eig > 0.0) || min_eig < GRAMIAN_CONDITION_FLOOR * max_eig {
        return Err(Error::Uncontrollable { min_eig, max_eig });
    }
    let chol = Cholesky::new(gram.to_nalgebra()).ok_or(Error::Uncontrollable { min_eig, max_eig })?;
    Ok(Matrix::from_nalgebra(&chol.inverse()).symmetrize())
}

pub fn build_mpc_law(sys: &LinearSystem, horizon: Horizon) -> Result<MpcLaw> {
    if !sys.b().is_square() {
        return Err(Error::NotInvertible);
    }
    let b_inv = sys.b().inverse()?;
    let bt = sys.b().transpose();
    match (sys.flavor(), horizon) {
        (Flavor::Discrete, Horizon::Steps(tau)) => {
            let gramian = discrete_gramian(sys, tau)?;
            let gramian_inv = invert_gramian(&gramian)?;
            let transition = mat_power(sys.a(), tau)?;
            let at_pow = mat_power(&sys.a().transpose(), tau - 1)?;
            let gain = &(&(&bt * &at_pow) * &gramian_inv) * &transition;
            let metric = (&(&transition.transpose() * &gramian_inv) * &transition).symmetrize();
            let closed_loop = sys.a() - &(sys.b() * &gain);
            Ok(MpcLaw {
                system: sys.clone(),
                horizon,
                gramian,
                gramian_inv,
                metric,
                closed_loop,
                gain,
                b_inv,
                transition,
            })
        }
        (Flavor::Continuous, Horizon::Time(t)) => {
            let gramian = continuous_gramian(sys.a(), sys.b(), t)?;
            let gramian_inv = invert_gramian(&gramian)?;
            let transition = matrix_exponential(&sys.a().scale(t))?;
            let metric = (&(&transition.transpose() * &gramian_inv) * &transition).symmetrize();
            let gain = &bt * &metric;
            let closed_loop = sys.a() - &(sys.b() * &gain);
            Ok(MpcLaw {
                system: sys.clone(),
                horizon,
                gramian,
                gramian_inv,
                metric,
                closed_loop,
                gain,
                b_inv,
                transition,
            })
        }
        (Flavor::Discrete, Horizon::Time(_)) => Err(Error::Parameter(
            "discrete systems take a horizon in steps".into(),
        )),
        (Flavor::Continuous, Horizon::Steps(_)) => Err(Error::Parameter(
            "continuous systems take a horizon in time".into(),
        )),
    }
}

fn diff(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

impl MpcLaw {
    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn gramian(&self) -> &Matrix {
        &self.gramian
    }

    /// Cost metric 𝒢.
    pub fn metric(&self) -> &Matrix {
        &self.metric
    }

    /// Closed-loop matrix Ā.
    pub fn closed_loop(&self) -> &Matrix {
        &self.closed_loop
    }

    pub fn gain(&self) -> &Matrix {
        &self.gain
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    fn check_dims(&self, x: &[f64], xhat: &[f64]) -> Result<()> {
        let n = self.state_dim();
        if x.len() != n || xhat.len() != n {
            return Err(Error::dim(
                "mpc",
                format!("state dimension {n}, got vectors of length {} and {}", x.len(), xhat.len()),
            ));
        }
        Ok(())
    }

    /// Input that keeps the agent at `x̂`: `B⁻¹(x̂ − Ax̂)` or `−B⁻¹Ax̂`.
    pub fn holding_input(&self, xhat: &[f64]) -> Result<Vec<f64>> {
        let ax = self.system.a().mul_vec(xhat)?;
        let drift = match self.system.flavor() {
            Flavor::Discrete => diff(xhat, &ax),
            Flavor::Continuous => ax.iter().map(|v| -v).collect(),
        };
        self.b_inv.mul_vec(&drift)
    }

    /// First input of the optimal sequence steering `x` to `x̂`.
    pub fn control(&self, x: &[f64], xhat: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, xhat)?;
        let feedback = self.gain.mul_vec(&diff(x, xhat))?;
        let hold = self.holding_input(xhat)?;
        Ok(hold.iter().zip(&feedback).map(|(h, f)| h - f).collect())
    }

    /// Optimal value `(x − x̂)ᵀ 𝒢 (x − x̂)`.
    pub fn cost(&self, x: &[f64], xhat: &[f64]) -> Result<f64> {
        self.check_dims(x, xhat)?;
        self.metric.quadratic_form(&diff(x, xhat))
    }

    /// Gradient of the cost in its first argument: `2𝒢(x − x̂)`.
    pub fn cost_gradient(&self, x: &[f64], xhat: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, xhat)?;
        Ok(self
            .metric
            .mul_vec(&diff(x, xhat))?
            .into_iter()
            .map(|v| 2.0 * v)
            .collect())
    }

    /// The full minimum-energy input sequence of length τ for a discrete
    /// law: `u[k] = ū − Bᵀ(Aᵀ)^{τ−1−k} G⁻¹ A^τ (x − x̂)`.
    pub fn open_loop_sequence(&self, x: &[f64], xhat: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_dims(x, xhat)?;
        let Horizon::Steps(tau) = self.horizon else {
            return Err(Error::Parameter(
                "open-loop sequences are defined for discrete laws".into(),
            ));
        };
        let hold = self.holding_input(xhat)?;
        let rhs = self.transition.mul_vec(&diff(x, xhat))?;
        let mut lambda = self.gramian_inv.mul_vec(&rhs)?;
        // one refinement pass; the terminal miss scales with the residual of
        // this solve, and long horizons make the Gramian ill-conditioned
        let resid = diff(&rhs, &self.gramian.mul_vec(&lambda)?);
        for (l, c) in lambda.iter_mut().zip(self.gramian_inv.mul_vec(&resid)?) {
            *l += c;
        }
        let bt = self.system.b().transpose();
        let at = self.system.a().transpose();
        // (Aᵀ)^{τ−1−k} λ for k = τ−1 down to 0
        let mut costate = lambda;
        let mut seq = vec![Vec::new(); tau];
        for k in (0..tau).rev() {
            let v = bt.mul_vec(&costate)?;
            seq[k] = hold.iter().zip(&v).map(|(h, d)| h - d).collect();
            costate = at.mul_vec(&costate)?;
        }
        Ok(seq)
    }
}
