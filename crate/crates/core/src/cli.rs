//! Command-line front end: `solve`, `verify`, `sweep` and `selftest`.
//!
//! Exit codes: 0 success, 1 failed gating check (`verify`), 2 solver stalled
//! or hit a domain failure, 3 configuration or input error, 4 output could
//! not be written.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::config::{load_config, ConfigError, OutputFormat, ValidatedConfig};
use crate::diagnostics::{
    calibrate_tolerance, fp_residual, lasry_lions_gap, max_gradient, recover_density, run_diagnostics,
    DiagnosticsInput, DiagnosticsReport,
};
use crate::grid::{read_fields_csv, write_fields_csv, GridError, GridSpec, SpaceTimeField, MIN_NT, MIN_NX};
use crate::plot::{write_plots, PlotFormats};
use crate::selftest::run_selftest;
use crate::solver::{
    continuation_solve, l2_distance, newton_solve, EpsilonStage, PathEntry, SolveReport, SolveStatus, SolverSettings,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_STALLED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_OUTPUT: i32 = 4;

/// Used when no coarse solve is available to calibrate bound checks.
pub const FALLBACK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "mfg-elliptic", version, about = "Elliptic-reduction solver for first-order local mean field games")]
pub struct Cli {
    /// Output directory (overrides `output.directory` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Worker threads for assembly (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the problem in a config file.
    Solve { config: PathBuf },
    /// Re-run the diagnostics on a stored solution.
    Verify { solution: PathBuf, config: PathBuf },
    /// Tabulate the solution along a viscosity sequence.
    Sweep { config: PathBuf },
    /// Run the built-in property suite.
    Selftest {
        /// Fewer random samples.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct StageSummary {
    pub epsilon: f64,
    pub cauchy_increment: Option<f64>,
    pub max_gradient: f64,
    pub min_density: f64,
    pub max_density: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub grid: GridSpec,
    pub theta: f64,
    pub epsilon: f64,
    pub message: Option<String>,
    pub warnings: Vec<String>,
    pub newton_iterations: usize,
    pub path: Vec<PathEntry>,
    pub stages: Vec<StageSummary>,
}

impl SolveSummary {
    pub fn from_report(r: &SolveReport) -> Self {
        Self {
            status: r.status,
            grid: r.u.grid,
            theta: r.theta,
            epsilon: r.epsilon,
            message: r.message.clone(),
            warnings: r.warnings.clone(),
            newton_iterations: r.path.iter().map(|p| p.newton_iters).sum(),
            path: r.path.clone(),
            stages: r.stages.iter().map(stage_summary).collect(),
        }
    }
}

fn stage_summary(s: &EpsilonStage) -> StageSummary {
    let (lo, hi) = s
        .m
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    StageSummary {
        epsilon: s.epsilon,
        cauchy_increment: s.cauchy_increment,
        max_gradient: max_gradient(&s.u),
        min_density: lo,
        max_density: hi,
    }
}

/// Contents of `report.json`; the schema is documented in `docs/report.md`.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub config: Option<String>,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub tolerance_source: Option<String>,
    pub solve: Option<SolveSummary>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub files: Vec<String>,
}

impl RunReport {
    fn new(command: &str, config: &Path) -> Self {
        Self {
            schema_version: 1,
            command: command.into(),
            config: Some(config.display().to_string()),
            status: String::new(),
            exit_code: EXIT_OK,
            error: None,
            tolerance_source: None,
            solve: None,
            diagnostics: None,
            files: Vec::new(),
        }
    }

    fn fail(mut self, status: &str, code: i32, error: impl ToString) -> Self {
        self.status = status.into();
        self.exit_code = code;
        self.error = Some(error.to_string());
        self
    }
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: Option<&ValidatedConfig>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| cfg.map(|c| c.raw.output.directory.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes `report` as pretty JSON; returns the exit code to use.
fn finish_report(dir: &Path, name: &str, mut report: RunReport) -> i32 {
    let path = dir.join(name);
    report.files.push(path.display().to_string());
    let write = fs::create_dir_all(dir).and_then(|_| {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text + "\n")
    });
    match write {
        Ok(()) => report.exit_code,
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", path.display());
            if report.exit_code == EXIT_OK {
                EXIT_OUTPUT
            } else {
                report.exit_code
            }
        }
    }
}

fn config_failure(command: &str, config: &Path, dir: &Path, err: &ConfigError) -> i32 {
    eprintln!("error: {err}");
    finish_report(dir, "report.json", RunReport::new(command, config).fail("config-error", EXIT_CONFIG, err))
}

/// Tolerance for bound checks: the configured value, or ten times the sup
/// difference against a solve on the grid with both resolutions halved.
pub fn bound_tolerance(
    cfg: &ValidatedConfig,
    u: &SpaceTimeField,
    m: Option<&SpaceTimeField>,
    eps: f64,
) -> (f64, String) {
    if let Some(t) = cfg.raw.diagnostics.bound_tolerance {
        return (t, "configured".into());
    }
    let g = cfg.grid;
    if g.nx % 2 != 0 || g.nt % 2 != 0 || g.nx / 2 < MIN_NX || g.nt / 2 < MIN_NT {
        return (FALLBACK_TOLERANCE, "fallback: grid too small to halve".into());
    }
    let coarse_grid = GridSpec::new(g.dim, g.nx / 2, g.nt / 2, g.horizon).expect("halved grid is valid");
    let coarse = coarse_solve(&cfg.spec, &coarse_grid, &cfg.raw.solver, eps);
    let Some((cu, cm)) = coarse else {
        return (FALLBACK_TOLERANCE, "fallback: coarse solve failed".into());
    };
    match calibrate_tolerance((u, m), (&cu, cm.as_ref())) {
        Some(t) => (t, format!("calibrated against {}x{}", coarse_grid.nx, coarse_grid.nt)),
        None => (FALLBACK_TOLERANCE, "fallback: calibration failed".into()),
    }
}

fn coarse_solve(
    spec: &crate::model::ProblemSpec,
    grid: &GridSpec,
    settings: &SolverSettings,
    eps: f64,
) -> Option<(SpaceTimeField, Option<SpaceTimeField>)> {
    let r = continuation_solve(spec, grid, settings, None);
    if !r.converged() {
        return None;
    }
    if r.epsilon == eps {
        return Some((r.u, r.m));
    }
    // bring the coarse solution to the same viscosity
    let out = newton_solve(spec, eps, &r.u, &settings.newton);
    if !out.converged() {
        return None;
    }
    let m = recover_density(spec, eps, &out.u).ok();
    Some((out.u, m))
}

pub fn cmd_solve(config: &Path, cli_out: &Option<PathBuf>) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return config_failure("solve", config, &out_dir(cli_out, None), &e),
    };
    let dir = out_dir(cli_out, Some(&cfg));
    let mut report = RunReport::new("solve", config);
    info!(
        "solving on {}x{} ({} unknowns)",
        cfg.grid.nx,
        cfg.grid.nt,
        cfg.grid.node_count()
    );
    let sol = continuation_solve(&cfg.spec, &cfg.grid, &cfg.raw.solver, None);
    report.solve = Some(SolveSummary::from_report(&sol));
    if let Err(e) = fs::create_dir_all(&dir) {
        return finish_report(&dir, "report.json", report.fail("io-error", EXIT_OUTPUT, e));
    }
    let csv_path = dir.join("solution.csv");
    if let Err(e) = write_fields_csv(&csv_path, &sol.u, sol.m.as_ref()) {
        return finish_report(&dir, "report.json", report.fail("io-error", EXIT_OUTPUT, e));
    }
    report.files.push(csv_path.display().to_string());
    let formats = PlotFormats {
        csv: cfg.raw.output.wants(OutputFormat::Csv),
        svg: cfg.raw.output.wants(OutputFormat::Svg),
    };
    match write_plots(&dir, &sol, formats) {
        Ok(files) => report.files.extend(files.iter().map(|p| p.display().to_string())),
        Err(e) => return finish_report(&dir, "report.json", report.fail("io-error", EXIT_OUTPUT, e)),
    }

    if !sol.converged() {
        let status = match sol.status {
            SolveStatus::DomainFailure => "domain-failure",
            _ => "stalled",
        };
        let msg = sol.message.clone().unwrap_or_else(|| "solver did not converge".into());
        eprintln!("error: {msg}");
        return finish_report(&dir, "report.json", report.fail(status, EXIT_STALLED, msg));
    }

    let (tol, source) = bound_tolerance(&cfg, &sol.u, sol.m.as_ref(), sol.epsilon);
    let diag = run_diagnostics(
        &DiagnosticsInput {
            spec: &cfg.spec,
            epsilon: sol.epsilon,
            u: &sol.u,
            m: sol.m.as_ref(),
            stages: &sol.stages,
            tolerance: tol,
        },
        &cfg.raw.diagnostics,
    );
    let failures = diag.failures();
    if failures.is_empty() {
        info!("converged; all gating diagnostics pass");
    } else {
        warn!("converged; failing diagnostics: {}", failures.join(", "));
    }
    report.status = "converged".into();
    report.tolerance_source = Some(source);
    report.diagnostics = Some(diag);
    finish_report(&dir, "report.json", report)
}

pub fn cmd_verify(solution: &Path, config: &Path, cli_out: &Option<PathBuf>) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return config_failure("verify", config, &out_dir(cli_out, None), &e),
    };
    let dir = out_dir(cli_out, Some(&cfg));
    let mut report = RunReport::new("verify", config);
    let (u, m) = match read_fields_csv(solution, &cfg.grid) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {}: {e}", solution.display());
            let status = match e {
                GridError::Io(_) => "input-error",
                _ => "config-error",
            };
            return finish_report(&dir, "verify_report.json", report.fail(status, EXIT_CONFIG, e));
        }
    };
    // The stored solution carries no viscosity level; recover it from the
    // density when possible, falling back to zero.
    let eps = infer_epsilon(&cfg, &u);
    let (tol, source) = bound_tolerance(&cfg, &u, m.as_ref(), eps);
    let diag = run_diagnostics(
        &DiagnosticsInput {
            spec: &cfg.spec,
            epsilon: eps,
            u: &u,
            m: m.as_ref(),
            stages: &[],
            tolerance: tol,
        },
        &cfg.raw.diagnostics,
    );
    report.tolerance_source = Some(source);
    let failures: Vec<String> = diag.failures().iter().map(|s| s.to_string()).collect();
    if failures.is_empty() {
        report.status = "verified".into();
        info!("all gating diagnostics pass");
    } else {
        for f in &failures {
            eprintln!("check failed: {f}");
        }
        report = report.fail("check-failed", EXIT_CHECK_FAILED, format!("failing checks: {}", failures.join(", ")));
    }
    report.diagnostics = Some(diag);
    finish_report(&dir, "verify_report.json", report)
}

/// Level of the configured viscosity sequence at which `u` has the smallest
/// discrete residual; zero under strict ellipticity.
fn infer_epsilon(cfg: &ValidatedConfig, u: &SpaceTimeField) -> f64 {
    use crate::model::Ellipticity;
    if cfg.spec.ellipticity() == Ellipticity::Strict {
        return 0.0;
    }
    let cs = &cfg.raw.solver.continuation;
    let mut best = (f64::INFINITY, cs.epsilon0);
    let mut eps = cs.epsilon0;
    while eps >= cs.epsilon_floor {
        if let Ok(f) = crate::solver::residual(&cfg.spec, eps, u) {
            let r = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if r < best.0 {
                best = (r, eps);
            }
        }
        eps *= cs.epsilon_ratio;
    }
    best.1
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub cauchy_increment: Option<f64>,
    pub max_gradient: f64,
    pub min_density: f64,
    pub mass_drift: f64,
    /// Smallest Lasry-Lions term against the previous row.
    pub lasry_lions_min: Option<f64>,
}

/// Viscosity sequence for a configuration. Degenerate problems reuse the
/// solver's own sequence; strictly elliptic ones are re-solved at each
/// `epsilon` of the configured schedule and at `epsilon = 0`.
pub fn sweep_stages(cfg: &ValidatedConfig) -> Result<Vec<EpsilonStage>, String> {
    let sol = continuation_solve(&cfg.spec, &cfg.grid, &cfg.raw.solver, None);
    if !sol.converged() {
        return Err(sol.message.unwrap_or_else(|| "solver did not converge".into()));
    }
    if !sol.stages.is_empty() {
        return Ok(sol.stages);
    }
    let cs = &cfg.raw.solver.continuation;
    let mut schedule = Vec::new();
    let mut eps = cs.epsilon0;
    while eps >= cs.epsilon_floor {
        schedule.push(eps);
        eps *= cs.epsilon_ratio;
    }
    // walk upwards from the unregularized solution, then report downwards
    let mut u = sol.u.clone();
    let mut solved = Vec::new();
    for &eps in schedule.iter().rev() {
        let out = newton_solve(&cfg.spec, eps, &u, &cfg.raw.solver.newton);
        if !out.converged() {
            return Err(format!("Newton failed at epsilon = {eps:e}"));
        }
        u = out.u;
        let m = recover_density(&cfg.spec, eps, &u).map_err(|e| e.to_string())?;
        solved.push(EpsilonStage {
            epsilon: eps,
            u: u.clone(),
            m,
            cauchy_increment: None,
        });
    }
    solved.reverse();
    solved.push(EpsilonStage {
        epsilon: 0.0,
        u: sol.u,
        m: sol.m.ok_or("density recovery failed")?,
        cauchy_increment: None,
    });
    for k in 1..solved.len() {
        let inc = l2_distance(&solved[k].m, &solved[k - 1].m);
        solved[k].cauchy_increment = Some(inc);
    }
    Ok(solved)
}

pub fn sweep_rows(cfg: &ValidatedConfig, stages: &[EpsilonStage]) -> Vec<SweepRow> {
    stages
        .iter()
        .enumerate()
        .map(|(k, s)| SweepRow {
            epsilon: s.epsilon,
            cauchy_increment: s.cauchy_increment,
            max_gradient: max_gradient(&s.u),
            min_density: s.m.values.iter().cloned().fold(f64::INFINITY, f64::min),
            mass_drift: fp_residual(&cfg.spec, &s.u, &s.m).mass_drift,
            lasry_lions_min: (k > 0).then(|| {
                let p = &stages[k - 1];
                lasry_lions_gap(&cfg.spec, (&p.u, &p.m), (&s.u, &s.m)).min_term()
            }),
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4e}"))
}

pub fn cmd_sweep(config: &Path, cli_out: &Option<PathBuf>) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return config_failure("sweep", config, &out_dir(cli_out, None), &e),
    };
    let dir = out_dir(cli_out, Some(&cfg));
    let stages = match sweep_stages(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return finish_report(&dir, "sweep_report.json", RunReport::new("sweep", config).fail("stalled", EXIT_STALLED, e));
        }
    };
    let rows = sweep_rows(&cfg, &stages);
    println!(
        "{:>11}  {:>11}  {:>11}  {:>11}  {:>11}  {:>11}",
        "epsilon", "increment", "max|Du|", "min m", "mass drift", "LL min"
    );
    for r in &rows {
        println!(
            "{:>11.4e}  {:>11}  {:>11.4e}  {:>11.4e}  {:>11.4e}  {:>11}",
            r.epsilon,
            opt(r.cauchy_increment),
            r.max_gradient,
            r.min_density,
            r.mass_drift,
            opt(r.lasry_lions_min)
        );
    }
    let write = || -> Result<PathBuf, Box<dyn std::error::Error>> {
        fs::create_dir_all(&dir)?;
        let p = dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(p)
    };
    match write() {
        Ok(p) => {
            info!("wrote {}", p.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: cannot write sweep table: {e}");
            EXIT_OUTPUT
        }
    }
}

pub fn cmd_selftest(quick: bool) -> i32 {
    let summary = run_selftest(quick);
    print!("{}", summary.table());
    if summary.all_passed() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("cannot configure {n} threads: {e}");
        }
    }
    match &cli.command {
        Command::Solve { config } => cmd_solve(config, &cli.out),
        Command::Verify { solution, config } => cmd_verify(solution, config, &cli.out),
        Command::Sweep { config } => cmd_sweep(config, &cli.out),
        Command::Selftest { quick } => cmd_selftest(*quick),
    }
}
