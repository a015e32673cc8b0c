use thiserror::Error;

use crate::otcore::Coupling;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Every entry of a kernel row or column underflowed to zero; `(row, col)`
    /// is the entry with the smallest cost on that line.
    #[error("Gibbs kernel degenerates at ({row}, {col}): cost {cost} with epsilon {epsilon} underflows")]
    DegenerateKernel {
        row: usize,
        col: usize,
        cost: f64,
        epsilon: f64,
    },

    #[error("numerical breakdown: {0}")]
    Breakdown(String),

    #[error("{what} did not converge within {iterations} iterations (last estimate {estimate})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        estimate: f64,
    },

    #[error("Sinkhorn stopped at the cap of {iterations} iterations with marginal violation {violation} (threshold {threshold})")]
    SinkhornCap {
        iterations: usize,
        threshold: f64,
        violation: f64,
        best: Box<Coupling>,
    },

    #[error("Gramian is not positive definite over the horizon (eigenvalues in [{min_eig}, {max_eig}])")]
    Uncontrollable { min_eig: f64, max_eig: f64 },

    #[error("input matrix is not invertible")]
    NotInvertible,

    #[error("brute-force assignment supports at most 9 agents, got {0}")]
    SizeCap(usize),

    #[error("row {0} has zero marginal mass")]
    DegenerateRow(usize),

    #[error("simulation aborted at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite state for agent {agent} at step {step}")]
    NonFinite { step: usize, agent: usize },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
