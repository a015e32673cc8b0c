//! Sinkhorn MPC: multi-agent assignment by entropic optimal transport, with
//! each agent driven toward its temporary target by a closed-form quadratic
//! MPC law.
//!
//! The crate is organized bottom-up: [`numerics`] (dense linear algebra),
//! [`otcore`] (Gibbs kernels and Sinkhorn iterations), [`assignment`] (exact
//! matching baseline), [`mpc`] (per-agent laws), [`navigator`] (coupling to
//! targets), [`simulator`] (the closed loop) and [`analysis`] (measurements).
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod assignment;
pub mod error;
pub mod mpc;
pub mod navigator;
pub mod numerics;
pub mod otcore;
pub mod simulator;

pub use assignment::{brute_force_assignment, hungarian, Assignment};
pub use error::{Error, Result};
pub use mpc::{build_mpc_law, discretize_euler, Flavor, Horizon, LinearSystem, MpcLaw};
pub use navigator::{barycentric_targets, NavigatorKind, TargetSet};
pub use numerics::Matrix;
pub use otcore::{
    gibbs_kernel, sinkhorn_solve, sinkhorn_step, Coupling, CostMatrix, GibbsKernel, Marginals,
    ScalingPair, SinkhornSolution, StoppingPolicy,
};
pub use simulator::{
    run, run_baseline_fixed, run_baseline_permutation, FleetScenario, IterationSchedule,
    ScenarioConfig, SimState, SnapshotPolicy, StepRecord, TrajectoryLog,
};
