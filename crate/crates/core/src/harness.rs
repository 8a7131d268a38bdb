//! Multi-start experiment harness: single runs, method comparisons and
//! Pareto-front snapshots, all written as deterministic CSV plus a JSON
//! manifest echoing the resolved configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::diagnostics::dominance_filter;
use crate::exec::{map_indexed, Execution};
use crate::format::sci12;
use crate::problems::{eval_objectives, MultiObjective, ProblemFamily, ProblemSpec};
use crate::rng::UniformStream;
use crate::solvers::{run, Method, MethodConfig, RunTrace};
use crate::{Error, Result};

pub const TRACE_HEADER: &str =
    "k,wall_seconds,kkt_residual,iterate_gap,M_k,gamma_k,tau_k,restart_flag,backtrack_count";
pub const COMPARE_THRESHOLDS: [f64; 3] = [1e-2, 1e-4, 1e-6];
pub const UNREACHED: &str = "∞";

fn default_n_starts() -> usize {
    100
}
fn default_init_box() -> (f64, f64) {
    (-2.0, 2.0)
}
fn default_max_iters() -> usize {
    500
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_n_starts")]
    pub n_starts: usize,
    #[serde(default = "default_init_box")]
    pub init_box: (f64, f64),
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// The benchmark setup: `n = p = 100`, `δ = 0.05`, `N = 100` starts in
    /// `[-2, 2]^n`, `M₀ = 10`, comparing SD, APG, AMG-QP with `μ = 0` and
    /// `μ = δ`, and both restart variants.
    pub fn benchmark_default(family: ProblemFamily) -> Self {
        let delta = 0.05;
        let problem = ProblemSpec::new(family, 0, 100, 100, delta);
        let m0 = 10.0;
        let strong = if family == ProblemFamily::NonconvexPair { 0.0 } else { delta };
        let mut methods = vec![
            MethodConfig::new(Method::Sd, 0.0, m0),
            MethodConfig::new(Method::Apg, 0.0, m0),
            MethodConfig::new(Method::AmgQpBt, 0.0, m0),
        ];
        if strong > 0.0 {
            methods.push(MethodConfig::new(Method::AmgQpBt, strong, m0));
        }
        methods.push(MethodConfig::new(Method::AmgQpSr, 0.0, m0));
        methods.push(MethodConfig::new(Method::AmgQpResR, 0.0, m0));
        Self {
            problem,
            methods,
            n_starts: default_n_starts(),
            init_box: default_init_box(),
            init_seed: 0,
            max_iters: default_max_iters(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Validates and pushes the experiment budget into every method.
    pub fn resolve(&self) -> Result<Self> {
        if self.n_starts == 0 {
            return Err(Error::InvalidInput("n_starts must be at least 1".into()));
        }
        let (lo, hi) = self.init_box;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!("init_box ({lo}, {hi}) needs lo < hi")));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods configured".into()));
        }
        let mut resolved = self.clone();
        for method in &mut resolved.methods {
            method.max_iters = self.max_iters;
            method.validate()?;
        }
        Ok(resolved)
    }
}

/// Start point `start` drawn from `init_box^n` on stream `(init_seed, "init/<start>")`.
pub fn initial_point(init_seed: u64, start: usize, n: usize, init_box: (f64, f64)) -> Array1<f64> {
    Array1::from(UniformStream::new(init_seed, &format!("init/{start}")).fill(n, init_box.0, init_box.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartFailure {
    pub method_index: usize,
    pub method: Method,
    pub start: usize,
    pub error: String,
}

/// Traces indexed by method, then start; `None` marks a failed start.
type TraceGrid = Vec<Vec<Option<RunTrace>>>;

/// Per-method, per-start results.
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub traces: Vec<Vec<Option<RunTrace>>>,
    pub failures: Vec<StartFailure>,
}

pub fn trace_file_name(method_index: usize, method: Method, start: usize) -> String {
    format!("{method_index:02}_{}_start{start:04}.csv", method.name())
}

pub fn write_trace_csv<W: Write>(out: &mut W, trace: &RunTrace) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            sci12(r.wall_seconds),
            sci12(r.kkt_residual),
            sci12(r.iterate_gap),
            sci12(r.m_k),
            sci12(r.gamma_k),
            sci12(r.tau_k),
            u8::from(r.restart_flag),
            r.backtrack_count
        )?;
    }
    Ok(())
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn prepare_output(config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&config.output_dir)?;
    let manifest = serde_json::to_string_pretty(config)?;
    write_atomic(&config.output_dir.join("manifest.json"), manifest.as_bytes())
}

fn write_failures(config: &ExperimentConfig, failures: &[StartFailure]) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    let text = serde_json::to_string_pretty(failures)?;
    write_atomic(&config.output_dir.join("failures.json"), text.as_bytes())
}

fn execute(
    config: &ExperimentConfig,
    bundle: &dyn MultiObjective,
    exec: Execution,
    write_traces: bool,
) -> Result<(TraceGrid, Vec<StartFailure>)> {
    let n_methods = config.methods.len();
    let tasks = n_methods * config.n_starts;
    let results = map_indexed(exec, tasks, |task| -> Result<std::result::Result<RunTrace, String>> {
        let (mi, start) = (task / config.n_starts, task % config.n_starts);
        let method = &config.methods[mi];
        let x0 = initial_point(config.init_seed, start, bundle.n(), config.init_box);
        match run(bundle, method, x0.view()) {
            Ok(trace) => {
                if write_traces {
                    let mut buf = Vec::new();
                    write_trace_csv(&mut buf, &trace)?;
                    write_atomic(&config.output_dir.join(trace_file_name(mi, method.method, start)), &buf)?;
                }
                Ok(Ok(trace))
            }
            Err(e) => Ok(Err(e.to_string())),
        }
    });
    let mut traces: Vec<Vec<Option<RunTrace>>> = (0..n_methods).map(|_| Vec::new()).collect();
    let mut failures = Vec::new();
    for (task, result) in results.into_iter().enumerate() {
        let (mi, start) = (task / config.n_starts, task % config.n_starts);
        match result? {
            Ok(trace) => traces[mi].push(Some(trace)),
            Err(error) => {
                traces[mi].push(None);
                failures.push(StartFailure {
                    method_index: mi,
                    method: config.methods[mi].method,
                    start,
                    error,
                });
            }
        }
    }
    Ok((traces, failures))
}

/// One CSV per (method, start) plus `manifest.json`; failed starts are
/// listed in `failures.json` without stopping the others.
pub fn cmd_run(config: &ExperimentConfig, exec: Execution) -> Result<RunOutcome> {
    let config = config.resolve()?;
    let bundle = config.problem.build()?;
    prepare_output(&config)?;
    let (traces, failures) = execute(&config, bundle.as_ref(), exec, true)?;
    write_failures(&config, &failures)?;
    Ok(RunOutcome { config, traces, failures })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method_index: usize,
    pub method: Method,
    pub mu: f64,
    pub threshold: f64,
    /// Median over starts; `None` when the median start never got there.
    pub median_iterations: Option<f64>,
    pub median_seconds: Option<f64>,
}

pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
    pub failures: Vec<StartFailure>,
    pub text: String,
}

/// Median with unreached entries ordered last (as +∞).
pub fn median_with_unreached(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = values.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    median.is_finite().then_some(median)
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => UNREACHED.to_string(),
    }
}

/// Median iterations and seconds to each residual threshold, per method.
pub fn cmd_compare(config: &ExperimentConfig, exec: Execution) -> Result<CompareOutcome> {
    let config = config.resolve()?;
    if config.methods.len() < 2 {
        return Err(Error::InvalidInput("compare needs at least two methods".into()));
    }
    let bundle = config.problem.build()?;
    prepare_output(&config)?;
    let (traces, failures) = execute(&config, bundle.as_ref(), exec, false)?;
    write_failures(&config, &failures)?;

    let mut rows = Vec::new();
    for (mi, per_start) in traces.iter().enumerate() {
        for &threshold in &COMPARE_THRESHOLDS {
            let iters: Vec<Option<f64>> = per_start
                .iter()
                .map(|t| t.as_ref().and_then(|t| t.iterations_to(threshold)).map(|k| k as f64))
                .collect();
            let secs: Vec<Option<f64>> = per_start
                .iter()
                .map(|t| t.as_ref().and_then(|t| t.seconds_to(threshold)))
                .collect();
            rows.push(CompareRow {
                method_index: mi,
                method: config.methods[mi].method,
                mu: config.methods[mi].mu,
                threshold,
                median_iterations: median_with_unreached(&iters),
                median_seconds: median_with_unreached(&secs),
            });
        }
    }

    let mut csv = String::from("method_index,method,mu,threshold,median_iterations,median_seconds\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method_index,
            r.method.name(),
            sci12(r.mu),
            sci12(r.threshold),
            cell(r.median_iterations),
            r.median_seconds.map(sci12).unwrap_or_else(|| UNREACHED.into())
        ));
    }
    write_atomic(&config.output_dir.join("compare.csv"), csv.as_bytes())?;

    let header = ["#", "method", "mu", "threshold", "median iters", "median secs"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.method_index.to_string(),
                r.method.name().to_string(),
                format!("{}", r.mu),
                format!("{:.0e}", r.threshold),
                cell(r.median_iterations),
                r.median_seconds
                    .map(|s| format!("{s:.4}"))
                    .unwrap_or_else(|| UNREACHED.into()),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..6)
        .map(|c| {
            body.iter()
                .map(|row| row[c].chars().count())
                .chain(std::iter::once(header[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}", w = *w))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut text = line(header.to_vec());
    text.push('\n');
    for row in &body {
        text.push_str(&line(row.iter().map(String::as_str).collect()));
        text.push('\n');
    }
    write_atomic(&config.output_dir.join("compare.txt"), text.as_bytes())?;

    Ok(CompareOutcome { rows, failures, text })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontPoint {
    pub start: usize,
    pub values: Array1<f64>,
}

pub struct FrontOutcome {
    /// Nondominated snapshot values per method.
    pub fronts: Vec<Vec<FrontPoint>>,
    /// Every start's final iterate per method (`None` on failure).
    pub snapshots: Vec<Vec<Option<Array1<f64>>>>,
    pub failures: Vec<StartFailure>,
}

pub fn front_file_name(method_index: usize, method: Method) -> String {
    format!("front_{method_index:02}_{}.csv", method.name())
}

/// Runs every method for `k_snapshot` iterations from each start and
/// writes the nondominated objective vectors per method.
pub fn cmd_front(config: &ExperimentConfig, k_snapshot: usize, exec: Execution) -> Result<FrontOutcome> {
    let mut config = config.clone();
    config.max_iters = k_snapshot;
    let config = config.resolve()?;
    let bundle = config.problem.build()?;
    prepare_output(&config)?;
    let (traces, failures) = execute(&config, bundle.as_ref(), exec, false)?;
    write_failures(&config, &failures)?;

    let mut fronts = Vec::new();
    let mut snapshots = Vec::new();
    for (mi, per_start) in traces.iter().enumerate() {
        let finals: Vec<Option<Array1<f64>>> = per_start.iter().map(|t| t.as_ref().map(|t| t.final_x.clone())).collect();
        let mut points = Vec::new();
        for (start, x) in finals.iter().enumerate() {
            if let Some(x) = x {
                points.push(FrontPoint {
                    start,
                    values: eval_objectives(bundle.as_ref(), x.view())?,
                });
            }
        }
        let values: Vec<Array1<f64>> = points.iter().map(|p| p.values.clone()).collect();
        let kept: Vec<FrontPoint> = dominance_filter(&values).into_iter().map(|i| points[i].clone()).collect();

        let mut csv = String::from("start");
        for j in 0..bundle.m() {
            csv.push_str(&format!(",f{}", j + 1));
        }
        csv.push('\n');
        for p in &kept {
            csv.push_str(&p.start.to_string());
            for v in &p.values {
                csv.push(',');
                csv.push_str(&sci12(*v));
            }
            csv.push('\n');
        }
        write_atomic(&config.output_dir.join(front_file_name(mi, config.methods[mi].method)), csv.as_bytes())?;
        fronts.push(kept);
        snapshots.push(finals);
    }
    Ok(FrontOutcome {
        fronts,
        snapshots,
        failures,
    })
}
