//! CSV and JSON artifacts. Floats are written with 17 significant digits so
//! they parse back to the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use smpc_core::analysis::SweepRow;
use smpc_core::TrajectoryLog;

use crate::error::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Keep free text inside one CSV field.
fn sanitize(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let mut w = create(path)?;
    let go = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()
    };
    go().map_err(io_err(path))
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}_{k}")).collect()
}

/// `step,agent,x_*,u_*,target_*`; the final state is written as one more
/// step with empty input and target fields.
pub fn write_trajectories(path: &Path, log: &TrajectoryLog, dim: usize, input_dim: usize) -> Result<(), CliError> {
    let mut header = vec!["step".to_string(), "agent".to_string()];
    header.extend(indexed("x", dim));
    header.extend(indexed("u", input_dim));
    header.extend(indexed("target", dim));
    let mut rows = Vec::new();
    for r in &log.records {
        for (i, x) in r.states.iter().enumerate() {
            let mut f = vec![r.step.to_string(), i.to_string()];
            f.extend(x.iter().map(|&v| fmt_f64(v)));
            f.extend(r.inputs[i].iter().map(|&v| fmt_f64(v)));
            f.extend(r.targets[i].iter().map(|&v| fmt_f64(v)));
            rows.push(f.join(","));
        }
    }
    let last = log.records.len();
    for (i, x) in log.final_states.iter().enumerate() {
        let mut f = vec![last.to_string(), i.to_string()];
        f.extend(x.iter().map(|&v| fmt_f64(v)));
        f.extend(std::iter::repeat_n(String::new(), input_dim + dim));
        rows.push(f.join(","));
    }
    write_lines(path, &header.join(","), rows)
}

pub const METRICS_HEADER: &str =
    "step,iterations,violation,entropic_cost,residual,raw_energy,deviation_energy,capped,assignment_changed";

pub fn write_metrics(path: &Path, log: &TrajectoryLog) -> Result<(), CliError> {
    let rows = log.records.iter().map(|r| {
        [
            r.step.to_string(),
            r.iterations.to_string(),
            fmt_f64(r.violation),
            fmt_opt(r.entropic_cost),
            fmt_opt(r.residual),
            fmt_f64(r.raw_energy),
            fmt_f64(r.deviation_energy),
            u8::from(r.capped).to_string(),
            u8::from(r.assignment_changed).to_string(),
        ]
        .join(",")
    });
    write_lines(path, METRICS_HEADER, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// One row per ε with the steady state flattened as `x_<agent>_<component>`.
pub fn write_sweep(path: &Path, rows: &[SweepRow], agents: usize, dim: usize) -> Result<(), CliError> {
    let mut header: Vec<String> = [
        "epsilon",
        "status",
        "steps",
        "converged",
        "sinkhorn_iterations",
        "residual",
        "centroid_distance",
        "blur",
        "permutation_distance",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..agents {
        header.extend(indexed(&format!("x_{i}"), dim));
    }
    let lines = rows.iter().map(|row| {
        let mut f = vec![fmt_f64(row.epsilon)];
        match &row.outcome {
            Ok(p) => {
                f.push("ok".into());
                f.push(p.steady.steps.to_string());
                f.push(u8::from(p.steady.converged).to_string());
                f.push(p.steady.sinkhorn_iterations.to_string());
                f.push(fmt_f64(p.residual));
                f.push(fmt_f64(p.centroid_distance));
                f.push(fmt_f64(p.blur));
                f.push(fmt_opt(p.permutation.as_ref().map(|(_, d)| *d)));
                f.extend(p.steady.states.iter().flatten().map(|&v| fmt_f64(v)));
            }
            Err(msg) => {
                f.push(format!("error: {}", sanitize(msg)));
                f.extend(std::iter::repeat_n(String::new(), 7 + agents * dim));
            }
        }
        f.join(",")
    });
    write_lines(path, &header.join(","), lines)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub agents: usize,
    pub epsilon: f64,
    pub sinkhorn_seconds_per_iteration: f64,
    /// Iterations to reach the 0.005 marginal criterion at the first step.
    pub first_step_iterations: Option<usize>,
    pub hungarian_seconds: f64,
    pub status: String,
}

pub const BENCH_HEADER: &str =
    "agents,epsilon,sinkhorn_seconds_per_iteration,first_step_iterations,hungarian_seconds,status";

pub fn write_bench(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let lines = rows.iter().map(|r| {
        [
            r.agents.to_string(),
            fmt_f64(r.epsilon),
            fmt_f64(r.sinkhorn_seconds_per_iteration),
            r.first_step_iterations.map(|s| s.to_string()).unwrap_or_default(),
            fmt_f64(r.hungarian_seconds),
            sanitize(&r.status),
        ]
        .join(",")
    });
    write_lines(path, BENCH_HEADER, lines)
}
