//! Scenario files: one self-describing JSON document per experiment.
//!
//! Initial states and targets are either listed explicitly or generated from
//! the file's seed, so a file fully determines a run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smpc_core::{
    FleetScenario, IterationSchedule, LinearSystem, Marginals, Matrix, NavigatorKind,
    ScenarioConfig, SnapshotPolicy, TargetSet,
};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    /// Seeds every generated point set.
    pub seed: u64,
    pub agents: usize,
    pub system: SystemSpec,
    pub initial_states: PointSpec,
    pub targets: PointSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginals: Option<MarginalSpec>,
    pub epsilon: f64,
    pub tau_h: usize,
    pub schedule: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<Vec<f64>>,
    pub step_count: usize,
    #[serde(default)]
    pub navigator: NavigatorSpec,
    #[serde(default)]
    pub snapshots: SnapshotSpec,
    /// Record entropic cost and equilibrium residual at every step.
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub verbosity: Verbosity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Discrete,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Required for continuous systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euler_step: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSpec {
    Explicit {
        points: Vec<Vec<f64>>,
    },
    /// Independent uniform draws from the box `[low, high]`.
    UniformBox {
        low: Vec<f64>,
        high: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
    },
    /// Evenly spaced points spanning the box, in one or two dimensions. In
    /// two dimensions the grid shape is the factorization of the count whose
    /// spacing is closest to isotropic.
    Lattice {
        low: Vec<f64>,
        high: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Fixed { iterations: usize },
    Tolerance { threshold: f64, cap: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavigatorSpec {
    #[default]
    Barycentric,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSpec {
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbosity {
    Quiet,
    #[default]
    Normal,
    Verbose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub epsilons: Vec<f64>,
    /// Read the grid as multiples of the largest pairwise target cost.
    #[serde(default)]
    pub relative_to_max_cost: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// Timed single Sinkhorn iterations per cell; the median is reported.
    #[serde(default = "default_timing_samples")]
    pub timing_samples: usize,
}

fn default_timing_samples() -> usize {
    15
}

fn field(name: &str, message: impl Into<String>) -> CliError {
    CliError::Field {
        field: name.to_string(),
        message: message.into(),
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
            ));
        }
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Pretty-printed JSON with a trailing newline. Parsing the output and
    /// printing again yields the same bytes.
    pub fn canonical(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn state_dim(&self) -> usize {
        self.system.a.len()
    }

    fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
        Matrix::from_rows(rows).map_err(|e| field(name, e.to_string()))
    }

    fn linear_system(&self) -> Result<LinearSystem, CliError> {
        let a = Self::matrix("system.a", &self.system.a)?;
        let b = Self::matrix("system.b", &self.system.b)?;
        let sys = match self.system.kind {
            SystemKind::Discrete => {
                if self.system.euler_step.is_some() {
                    return Err(field("system.euler_step", "only meaningful for continuous systems"));
                }
                LinearSystem::discrete(a, b)
            }
            SystemKind::Continuous => {
                if self.system.euler_step.is_none() {
                    return Err(field("system.euler_step", "continuous systems need an Euler step"));
                }
                LinearSystem::continuous(a, b)
            }
        };
        sys.map_err(|e| field("system", e.to_string()))
    }

    /// Agent states and targets, generating any that are not explicit.
    /// Initial states draw from the seeded stream first, then targets.
    pub fn points(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), CliError> {
        let dim = self.state_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let x0 = generate("initial_states", &self.initial_states, self.agents, dim, &mut rng)?;
        if x0.len() != self.agents {
            return Err(field(
                "initial_states",
                format!("{} states for {} agents", x0.len(), self.agents),
            ));
        }
        let targets = generate("targets", &self.targets, self.agents, dim, &mut rng)?;
        Ok((x0, targets))
    }

    pub fn schedule(&self) -> Result<IterationSchedule, CliError> {
        let s = match self.schedule {
            ScheduleSpec::Fixed { iterations } => IterationSchedule::Fixed(iterations),
            ScheduleSpec::Tolerance { threshold, cap } => IterationSchedule::Tolerance { threshold, cap },
        };
        Ok(s)
    }

    /// Validate and build the fleet. Every failure here is an input error.
    pub fn build(&self) -> Result<FleetScenario, CliError> {
        if self.agents == 0 {
            return Err(field("agents", "must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(field("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if self.tau_h == 0 {
            return Err(field("tau_h", "must be at least 1"));
        }
        let sys = self.linear_system()?;
        let (x0, targets) = self.points()?;
        let targets = TargetSet::new(targets).map_err(|e| field("targets", e.to_string()))?;
        let marginals = match &self.marginals {
            None => None,
            Some(m) => Some(Marginals::new(m.a.clone(), m.b.clone()).map_err(|e| field("marginals", e.to_string()))?),
        };
        let config = ScenarioConfig {
            systems: vec![sys; self.agents],
            euler_step: self.system.euler_step,
            x0,
            targets,
            marginals,
            epsilon: self.epsilon,
            tau_h: self.tau_h,
            schedule: self.schedule()?,
            alpha0: self.alpha0.clone(),
            step_count: self.step_count,
            navigator: match self.navigator {
                NavigatorSpec::Barycentric => NavigatorKind::Barycentric,
            },
            snapshots: match self.snapshots {
                SnapshotSpec::Auto => SnapshotPolicy::Auto,
                SnapshotSpec::On => SnapshotPolicy::On,
                SnapshotSpec::Off => SnapshotPolicy::Off,
            },
            diagnostics: self.diagnostics,
        };
        FleetScenario::new(config).map_err(|e| field("scenario", e.to_string()))
    }

    /// The same scenario resized to `agents` agents and targets, for bench
    /// templates. Explicit point lists cannot be resized.
    pub fn resized(&self, agents: usize) -> Result<Self, CliError> {
        let strip = |spec: &PointSpec, name: &str| match spec {
            PointSpec::Explicit { .. } => Err(field(name, "explicit points cannot be resized")),
            PointSpec::UniformBox { low, high, .. } => Ok(PointSpec::UniformBox {
                low: low.clone(),
                high: high.clone(),
                count: None,
            }),
            PointSpec::Lattice { low, high, .. } => Ok(PointSpec::Lattice {
                low: low.clone(),
                high: high.clone(),
                count: None,
            }),
        };
        Ok(Self {
            agents,
            initial_states: strip(&self.initial_states, "initial_states")?,
            targets: strip(&self.targets, "targets")?,
            marginals: None,
            alpha0: None,
            ..self.clone()
        })
    }
}

fn check_box(name: &str, low: &[f64], high: &[f64], dim: usize) -> Result<(), CliError> {
    if low.len() != dim || high.len() != dim {
        return Err(field(name, format!("box corners must have dimension {dim}")));
    }
    if low.iter().zip(high).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
        return Err(field(name, "box needs finite corners with low <= high"));
    }
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if n == 1 {
        (lo + hi) / 2.0
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

/// Columns × rows = `n`, with column spacing closest to row spacing.
fn lattice_shape(n: usize, width: f64, height: f64) -> (usize, usize) {
    let mut best = (n, 1);
    let mut best_score = f64::INFINITY;
    for cols in 1..=n {
        if n % cols != 0 {
            continue;
        }
        let rows = n / cols;
        let dx = if cols > 1 { width / (cols - 1) as f64 } else { f64::INFINITY };
        let dy = if rows > 1 { height / (rows - 1) as f64 } else { f64::INFINITY };
        let score = if dx.is_finite() && dy.is_finite() && dx > 0.0 && dy > 0.0 {
            (dx / dy).ln().abs()
        } else {
            f64::MAX
        };
        if score < best_score {
            best_score = score;
            best = (cols, rows);
        }
    }
    if best_score == f64::MAX {
        // prime count: one line along the longer side
        return if width >= height { (n, 1) } else { (1, n) };
    }
    best
}

fn generate(
    name: &str,
    spec: &PointSpec,
    default_count: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, CliError> {
    match spec {
        PointSpec::Explicit { points } => {
            if points.iter().any(|p| p.len() != dim) {
                return Err(field(name, format!("every point must have dimension {dim}")));
            }
            Ok(points.clone())
        }
        PointSpec::UniformBox { low, high, count } => {
            check_box(name, low, high, dim)?;
            let n = count.unwrap_or(default_count);
            Ok((0..n)
                .map(|_| {
                    low.iter()
                        .zip(high)
                        .map(|(&l, &h)| if l < h { rng.gen_range(l..h) } else { l })
                        .collect()
                })
                .collect())
        }
        PointSpec::Lattice { low, high, count } => {
            check_box(name, low, high, dim)?;
            let n = count.unwrap_or(default_count);
            match dim {
                1 => Ok((0..n).map(|k| vec![linspace(low[0], high[0], n, k)]).collect()),
                2 => {
                    let (cols, rows) = lattice_shape(n, high[0] - low[0], high[1] - low[1]);
                    Ok((0..n)
                        .map(|k| {
                            vec![
                                linspace(low[0], high[0], cols, k % cols),
                                linspace(low[1], high[1], rows, k / cols),
                            ]
                        })
                        .collect())
                }
                _ => Err(field(name, "lattices are only defined in one or two dimensions")),
            }
        }
    }
}
