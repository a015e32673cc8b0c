//! The `run`, `sweep`, `bench` and `validate` verbs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use smpc_core::analysis::{self, SweepRow};
use smpc_core::otcore::{sinkhorn_solve, sinkhorn_step, StoppingPolicy};
use smpc_core::simulator::kernel_at;
use smpc_core::{hungarian, FleetScenario, TrajectoryLog};

use crate::error::CliError;
use crate::output::{self, BenchRow};
use crate::scenario::{ScenarioFile, SnapshotSpec, Verbosity};

/// The marginal criterion used for first-step iteration counts.
pub const FIRST_STEP_THRESHOLD: f64 = 0.005;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Sinkhorn,
    HungarianBaseline,
    FixedBaseline,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub snapshots: Option<SnapshotSpec>,
}

impl Overrides {
    fn apply(&self, file: &ScenarioFile) -> ScenarioFile {
        let mut f = file.clone();
        if let Some(seed) = self.seed {
            f.seed = seed;
        }
        if let Some(s) = self.snapshots {
            f.snapshots = s;
        }
        f
    }

    fn out_dir(&self, file: &ScenarioFile) -> Result<PathBuf, CliError> {
        let dir = self
            .out
            .clone()
            .or_else(|| file.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| Path::new("out").join(&file.name));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(dir)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub agents: usize,
    pub targets: usize,
    pub steps: usize,
    pub total_raw_energy: f64,
    pub total_deviation_energy: f64,
    pub final_residual: Option<f64>,
    pub first_step_iterations: Option<usize>,
    pub total_sinkhorn_iterations: usize,
    /// Per-step counts live in this file.
    pub iteration_series: String,
    pub sinkhorn_seconds_per_iteration: f64,
    pub hungarian_seconds_per_solve: Option<f64>,
    pub assignment_changes: usize,
    pub capped_steps: usize,
    pub warnings: Vec<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Median wall time of one Sinkhorn iteration on the kernel at `x0`.
pub fn time_sinkhorn_iteration(scenario: &FleetScenario, samples: usize) -> Result<f64, CliError> {
    let kernel = kernel_at(scenario, scenario.x0())?;
    let mut alpha = scenario.alpha0().to_vec();
    let mut times = Vec::with_capacity(samples.max(1));
    for _ in 0..samples.max(1) {
        let t = Instant::now();
        let s = sinkhorn_step(&kernel, scenario.marginals(), &alpha)?;
        times.push(t.elapsed().as_secs_f64());
        alpha = s.alpha;
    }
    Ok(median(times))
}

/// Wall time of one Hungarian solve on the cost matrix at `x0`.
pub fn time_hungarian(scenario: &FleetScenario) -> Result<f64, CliError> {
    let cost = scenario.cost_matrix(scenario.x0())?;
    let t = Instant::now();
    hungarian(&cost)?;
    Ok(t.elapsed().as_secs_f64())
}

/// Sinkhorn iterations from `alpha0` to the first-step marginal criterion.
pub fn first_step_iterations(scenario: &FleetScenario) -> Result<usize, CliError> {
    let kernel = kernel_at(scenario, scenario.x0())?;
    let sol = sinkhorn_solve(
        &kernel,
        scenario.marginals(),
        scenario.alpha0(),
        StoppingPolicy::tolerance(FIRST_STEP_THRESHOLD),
    )?;
    Ok(sol.iterations)
}

fn note(file: &ScenarioFile, level: Verbosity, msg: impl AsRef<str>) {
    if file.verbosity >= level {
        eprintln!("{}", msg.as_ref());
    }
}

pub fn simulate(scenario: &FleetScenario, mode: Mode) -> Result<TrajectoryLog, CliError> {
    let log = match mode {
        Mode::Sinkhorn => smpc_core::run(scenario),
        Mode::HungarianBaseline => smpc_core::run_baseline_permutation(scenario),
        Mode::FixedBaseline => smpc_core::run_baseline_fixed(scenario),
    };
    log.map_err(|e| match e {
        // baseline preconditions are input errors, not numerical ones
        smpc_core::Error::Parameter(msg) => CliError::Argument(msg),
        e => CliError::Numerical(e),
    })
}

pub fn cmd_run(file: &ScenarioFile, mode: Mode, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let file = overrides.apply(file);
    let scenario = file.build()?;
    let out = overrides.out_dir(&file)?;
    note(&file, Verbosity::Normal, format!("running {} ({} agents, {} steps)", file.name, scenario.agents(), scenario.step_count()));
    let log = simulate(&scenario, mode)?;
    for w in &log.warnings {
        note(&file, Verbosity::Verbose, w);
    }
    let final_residual = analysis::equilibrium_residual(&scenario, &log.final_states)
        .map(|r| r.residual)
        .ok();
    let sinkhorn_time = time_sinkhorn_iteration(&scenario, 5)?;
    let hungarian_time = match mode {
        Mode::Sinkhorn => None,
        _ => Some(time_hungarian(&scenario)?),
    };
    let input_dim = scenario.system(0).input_dim();
    output::write_trajectories(&out.join("trajectories.csv"), &log, scenario.state_dim(), input_dim)?;
    output::write_metrics(&out.join("metrics.csv"), &log)?;
    let summary = RunSummary {
        scenario: file.name.clone(),
        mode,
        seed: file.seed,
        agents: scenario.agents(),
        targets: scenario.targets().len(),
        steps: log.steps(),
        total_raw_energy: log.total_raw_energy(),
        total_deviation_energy: log.total_deviation_energy(),
        final_residual,
        first_step_iterations: match mode {
            Mode::Sinkhorn => log.records.first().map(|r| r.iterations),
            _ => None,
        },
        total_sinkhorn_iterations: log.iterations().iter().sum(),
        iteration_series: "metrics.csv".into(),
        sinkhorn_seconds_per_iteration: sinkhorn_time,
        hungarian_seconds_per_solve: hungarian_time,
        assignment_changes: log.records.iter().filter(|r| r.assignment_changed).count(),
        capped_steps: log.records.iter().filter(|r| r.capped).count(),
        warnings: log.warnings.clone(),
    };
    output::write_json(&out.join("summary.json"), &summary)?;
    note(
        &file,
        Verbosity::Normal,
        format!(
            "wrote {}: energy {:.6}, final residual {}",
            out.display(),
            summary.total_raw_energy,
            final_residual.map_or("n/a".into(), |r| format!("{r:.3e}"))
        ),
    );
    Ok(summary)
}

pub fn resolve_grid(file: &ScenarioFile, scenario: &FleetScenario, eps: Option<Vec<f64>>, relative: Option<bool>) -> Result<Vec<f64>, CliError> {
    let (grid, rel) = match (eps, &file.sweep) {
        (Some(g), spec) => (g, relative.unwrap_or(spec.as_ref().is_some_and(|s| s.relative_to_max_cost))),
        (None, Some(spec)) => (spec.epsilons.clone(), relative.unwrap_or(spec.relative_to_max_cost)),
        (None, None) => return Err(CliError::Argument("no epsilon grid: pass --eps or add a sweep block".into())),
    };
    if grid.is_empty() {
        return Err(CliError::Argument("epsilon grid is empty".into()));
    }
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::Argument("epsilon grid must be positive and strictly ascending".into()));
    }
    if rel {
        let scale = analysis::max_target_cost(scenario)?;
        if !(scale > 0.0) {
            return Err(CliError::Argument("relative grid needs distinct targets".into()));
        }
        Ok(grid.iter().map(|e| e * scale).collect())
    } else {
        Ok(grid)
    }
}

pub fn cmd_sweep(
    file: &ScenarioFile,
    eps: Option<Vec<f64>>,
    relative: Option<bool>,
    overrides: &Overrides,
) -> Result<Vec<SweepRow>, CliError> {
    let file = overrides.apply(file);
    let scenario = file.build()?;
    let grid = resolve_grid(&file, &scenario, eps, relative)?;
    let out = overrides.out_dir(&file)?;
    note(&file, Verbosity::Normal, format!("sweeping {} over {} values of epsilon", file.name, grid.len()));
    let rows = analysis::epsilon_sweep(&scenario, &grid).map_err(|e| CliError::Argument(e.to_string()))?;
    for row in &rows {
        if let Err(msg) = &row.outcome {
            note(&file, Verbosity::Normal, format!("epsilon {}: {msg}", row.epsilon));
        }
    }
    output::write_sweep(&out.join("sweep.csv"), &rows, scenario.agents(), scenario.state_dim())?;
    Ok(rows)
}

fn bench_cell(file: &ScenarioFile, agents: usize, epsilon: f64, samples: usize) -> Result<BenchRow, CliError> {
    let mut f = file.resized(agents)?;
    f.epsilon = epsilon;
    let scenario = f.build()?;
    Ok(BenchRow {
        agents,
        epsilon,
        sinkhorn_seconds_per_iteration: time_sinkhorn_iteration(&scenario, samples)?,
        first_step_iterations: Some(first_step_iterations(&scenario)?),
        hungarian_seconds: time_hungarian(&scenario)?,
        status: "ok".into(),
    })
}

pub fn cmd_bench(
    file: &ScenarioFile,
    sizes: Option<Vec<usize>>,
    eps: Option<Vec<f64>>,
    overrides: &Overrides,
) -> Result<Vec<BenchRow>, CliError> {
    let file = overrides.apply(file);
    let spec = file.bench.clone();
    let sizes = sizes
        .or_else(|| spec.as_ref().map(|b| b.sizes.clone()))
        .ok_or_else(|| CliError::Argument("no sizes: pass --sizes or add a bench block".into()))?;
    let eps = eps
        .or_else(|| spec.as_ref().map(|b| b.epsilons.clone()))
        .ok_or_else(|| CliError::Argument("no epsilons: pass --eps or add a bench block".into()))?;
    if sizes.is_empty() || eps.is_empty() || sizes.contains(&0) {
        return Err(CliError::Argument("bench needs non-empty sizes and epsilons".into()));
    }
    let samples = spec.as_ref().map_or(15, |b| b.timing_samples);
    let out = overrides.out_dir(&file)?;
    let mut rows = Vec::new();
    for &n in &sizes {
        for &e in &eps {
            note(&file, Verbosity::Normal, format!("bench N={n} epsilon={e}"));
            let row = match bench_cell(&file, n, e, samples) {
                Ok(row) => row,
                Err(err @ (CliError::Field { .. } | CliError::Argument(_) | CliError::Parse { .. })) => return Err(err),
                Err(err) => BenchRow {
                    agents: n,
                    epsilon: e,
                    sinkhorn_seconds_per_iteration: f64::NAN,
                    first_step_iterations: None,
                    hungarian_seconds: f64::NAN,
                    status: format!("error: {err}"),
                },
            };
            rows.push(row);
        }
    }
    output::write_bench(&out.join("bench.csv"), &rows)?;
    Ok(rows)
}

/// Parse, build and return the canonical form.
pub fn cmd_validate(file: &ScenarioFile) -> Result<String, CliError> {
    file.build()?;
    Ok(file.canonical())
}
