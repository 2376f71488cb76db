//! `ocvcap` command line.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 data or estimation
//! error, 3 oracle certificate failure. Standard output carries only the
//! result document; diagnostics go to standard error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ocvcap_core::estimator::{fraction_window, EstimationProblem, EstimationResult, SolverOptions};
use ocvcap_core::synth::REFERENCE_NOMINAL_CAPACITY_AH;
use ocvcap_core::{estimate, estimate_window, grid_oracle, OcvCurve};
use serde::{Deserialize, Serialize};

use crate::io::{self, IoError, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ocvcap",
    version,
    about = "Battery capacity estimation by OCV-SOC curve alignment"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate calibrated capacity and initial SOC from one trace.
    Estimate(EstimateArgs),
    /// Generate a synthetic aged-cell trace.
    Simulate(SimulateArgs),
    /// Estimate every trace of a manifest and score against actual capacity.
    Validate(ValidateArgs),
    /// Estimate, then write nominal and aligned series for plotting.
    PlotData(PlotDataArgs),
    /// Cross-check the estimate against a brute-force grid.
    Oracle(OracleArgs),
}

/// A `lo:hi` pair.
fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `lo:hi`, got `{s}`"))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<T>()
            .map_err(|_| format!("`{x}` is not a valid number"))
    };
    Ok((parse(a)?, parse(b)?))
}

fn parse_f64_pair(s: &str) -> Result<(f64, f64), String> {
    parse_pair(s)
}

fn parse_usize_pair(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s)
}

/// Estimation settings shared by every subcommand that fits a trace.
#[derive(Debug, Args)]
struct SolveArgs {
    /// Nominal OCV-SOC curve CSV (`soc,ocv_v`); built-in reference curve if omitted.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Repair a noisy, non-monotone nominal curve by isotonic regression.
    #[arg(long)]
    repair_curve: bool,
    /// Nominal capacity C_n in Ah.
    #[arg(long)]
    nominal_capacity: Option<f64>,
    /// Capacity search range in Ah, `lo:hi`.
    #[arg(long, value_parser = parse_f64_pair)]
    capacity_bounds: Option<(f64, f64)>,
    /// Initial-SOC search range, `lo:hi` within [0, 1].
    #[arg(long, value_parser = parse_f64_pair)]
    z0_bounds: Option<(f64, f64)>,
    /// Stage-1 grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Iteration budget per simplex run.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Keep every n-th sample (after Coulomb counting at full resolution).
    #[arg(long)]
    stride: Option<usize>,
    /// Fit only part of the trace, as fractions of the samples, e.g. `0.33:0.66`.
    #[arg(long, value_parser = parse_f64_pair, conflicts_with = "window_index")]
    window: Option<(f64, f64)>,
    /// Fit only samples `start:end` (end exclusive).
    #[arg(long, value_parser = parse_usize_pair)]
    window_index: Option<(usize, usize)>,
    /// TOML file with defaults for any of the options above; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Keys accepted in a `--config` file for the fitting subcommands.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub curve: Option<PathBuf>,
    pub repair_curve: Option<bool>,
    pub nominal_capacity_ah: Option<f64>,
    pub capacity_bounds: Option<(f64, f64)>,
    pub z0_bounds: Option<(f64, f64)>,
    pub grid: Option<usize>,
    pub max_iter: Option<usize>,
    pub stride: Option<usize>,
    pub window: Option<(f64, f64)>,
    pub window_index: Option<(usize, usize)>,
}

impl SolveConfig {
    fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if let (Some(curve), Some(dir)) = (&cfg.curve, path.parent()) {
            if curve.is_relative() {
                cfg.curve = Some(dir.join(curve));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum WindowSpec {
    Fraction(f64, f64),
    Index(usize, usize),
}

/// Flags merged over the config file over built-in defaults.
#[derive(Debug, Clone)]
struct Settings {
    curve: Option<PathBuf>,
    repair_curve: bool,
    nominal_capacity: f64,
    capacity_bounds: Option<(f64, f64)>,
    z0_bounds: Option<(f64, f64)>,
    options: SolverOptions,
    stride: usize,
    window: Option<WindowSpec>,
}

impl SolveArgs {
    fn resolve(&self) -> Result<Settings, CliError> {
        let cfg = match &self.config {
            Some(path) => SolveConfig::read(path)?,
            None => SolveConfig::default(),
        };
        let defaults = SolverOptions::default();
        let grid = self.grid.or(cfg.grid).unwrap_or(defaults.grid_capacity);
        if grid < 2 {
            return Err(CliError::usage("--grid must be at least 2"));
        }
        let window = match (self.window, self.window_index) {
            (Some((a, b)), _) => Some(WindowSpec::Fraction(a, b)),
            (None, Some((a, b))) => Some(WindowSpec::Index(a, b)),
            (None, None) => match (cfg.window, cfg.window_index) {
                (Some(_), Some(_)) => {
                    return Err(CliError::usage(
                        "config sets both `window` and `window_index`",
                    ))
                }
                (Some((a, b)), None) => Some(WindowSpec::Fraction(a, b)),
                (None, Some((a, b))) => Some(WindowSpec::Index(a, b)),
                (None, None) => None,
            },
        };
        if let Some(WindowSpec::Fraction(a, b)) = window {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
                return Err(CliError::usage(format!(
                    "window fractions must satisfy 0 <= start < end <= 1, got {a}:{b}"
                )));
            }
        }
        let stride = self.stride.or(cfg.stride).unwrap_or(1);
        if stride == 0 {
            return Err(CliError::usage("--stride must be at least 1"));
        }
        Ok(Settings {
            curve: self.curve.clone().or(cfg.curve),
            repair_curve: self.repair_curve || cfg.repair_curve.unwrap_or(false),
            nominal_capacity: self
                .nominal_capacity
                .or(cfg.nominal_capacity_ah)
                .unwrap_or(REFERENCE_NOMINAL_CAPACITY_AH),
            capacity_bounds: self.capacity_bounds.or(cfg.capacity_bounds),
            z0_bounds: self.z0_bounds.or(cfg.z0_bounds),
            options: SolverOptions {
                grid_capacity: grid,
                grid_z0: grid,
                max_iter: self.max_iter.or(cfg.max_iter).unwrap_or(defaults.max_iter),
                ..defaults
            },
            stride,
            window,
        })
    }
}

impl Settings {
    fn load_curve(&self) -> Result<OcvCurve, CliError> {
        match &self.curve {
            Some(path) => Ok(io::read_curve_csv(path, self.repair_curve)?),
            None => Ok(ocvcap_core::reference_nominal_curve()),
        }
    }

    fn problem(&self, curve: OcvCurve, trace_path: &Path) -> Result<EstimationProblem, CliError> {
        let trace = io::read_trace_csv(trace_path)?.resample(self.stride);
        let mut problem = EstimationProblem::from_trace(curve, &trace, self.nominal_capacity)?
            .with_options(self.options)?;
        if let Some((lo, hi)) = self.capacity_bounds {
            problem = problem.with_capacity_bounds(lo, hi)?;
        }
        if let Some((lo, hi)) = self.z0_bounds {
            problem = problem.with_z0_bounds(lo, hi)?;
        }
        Ok(problem)
    }

    fn window_indices(&self, n: usize) -> Option<(usize, usize)> {
        self.window.map(|w| match w {
            WindowSpec::Fraction(a, b) => fraction_window(n, a, b),
            WindowSpec::Index(a, b) => (a, b),
        })
    }

    /// Runs the (possibly windowed) estimate. Also returns the problem the
    /// result refers to, i.e. the window sub-problem when windowed.
    fn solve(
        &self,
        problem: &EstimationProblem,
    ) -> Result<(EstimationResult, EstimationProblem), CliError> {
        match self.window_indices(problem.n_residuals()) {
            Some((start, end)) => {
                let result = estimate_window(problem, (start, end))?;
                Ok((result, problem.window(start, end)?))
            }
            None => Ok((estimate(problem)?, problem.clone())),
        }
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Trace CSV (`time_s,current_a,ocv_v`).
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    /// Write the result document here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotDataArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    /// Plot-data CSV (`series,soc,ocv_v`).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    /// Oracle grid points per axis.
    #[arg(long, default_value_t = 200)]
    oracle_grid: usize,
    /// Allowed excess of the estimate objective over the oracle's, V².
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Manifest CSV (`cycle_id,trace_path,actual_capacity_ah`).
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    /// Write the report document here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the per-cycle table as CSV.
    #[arg(long)]
    report_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario TOML; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Nominal curve CSV; built-in reference curve if omitted.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// True capacity in Ah.
    #[arg(long)]
    capacity: Option<f64>,
    /// True initial SOC.
    #[arg(long)]
    z0: Option<f64>,
    /// Stop once the calibrated SOC reaches this value.
    #[arg(long, allow_hyphen_values = true)]
    soc_stop: Option<f64>,
    /// Constant load current in A (negative discharges).
    #[arg(long, allow_hyphen_values = true)]
    current: Option<f64>,
    /// OCV noise standard deviation in V.
    #[arg(long)]
    sigma: Option<f64>,
    /// Sample period in s.
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the trace here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = if e.is_parse() { EXIT_USAGE } else { EXIT_DATA };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ocvcap_core::Error> for CliError {
    fn from(e: ocvcap_core::Error) -> Self {
        Self::data(e.to_string())
    }
}

fn emit(
    output: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let result = match output {
        Some(path) => std::fs::File::create(path).and_then(|f| {
            let mut out = std::io::BufWriter::new(f);
            write(&mut out)?;
            out.flush()
        }),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).and_then(|_| lock.flush())
        }
    };
    result.map_err(|e| CliError::data(format!("write failed: {e}")))
}

fn json<T: Serialize>(value: &T) -> impl FnOnce(&mut dyn Write) -> std::io::Result<()> + '_ {
    move |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)
    }
}

fn warn_if_flat(result: &EstimationResult) {
    if result.is_weakly_identifiable() {
        eprintln!(
            "warning: flatness indicator {:.3e}; capacity and initial SOC are weakly identifiable from this data",
            result.flatness_indicator
        );
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<i32, CliError> {
    let settings = args.solve.resolve()?;
    let problem = settings.problem(settings.load_curve()?, &args.trace)?;
    let (result, _) = settings.solve(&problem)?;
    warn_if_flat(&result);
    emit(
        args.output.as_deref(),
        json(&io::ResultDocument::from(&result)),
    )?;
    if !result.converged {
        eprintln!(
            "error: simplex refinement hit its iteration budget ({} iterations) before converging",
            result.iterations
        );
        return Ok(EXIT_DATA);
    }
    Ok(EXIT_OK)
}

fn cmd_plot_data(args: &PlotDataArgs) -> Result<i32, CliError> {
    let settings = args.solve.resolve()?;
    let problem = settings.problem(settings.load_curve()?, &args.trace)?;
    let (result, fitted) = settings.solve(&problem)?;
    warn_if_flat(&result);
    io::write_alignment_plot_data(&result, &fitted, &args.output)?;
    emit(None, json(&io::ResultDocument::from(&result)))?;
    Ok(EXIT_OK)
}

fn cmd_oracle(args: &OracleArgs) -> Result<i32, CliError> {
    if args.oracle_grid < 2 {
        return Err(CliError::usage("--oracle-grid must be at least 2"));
    }
    let settings = args.solve.resolve()?;
    let problem = settings.problem(settings.load_curve()?, &args.trace)?;
    let (result, fitted) = settings.solve(&problem)?;
    let oracle = grid_oracle(&fitted, args.oracle_grid, args.oracle_grid)?;
    let doc = io::CertificateDocument::new(
        &result,
        &oracle,
        (args.oracle_grid, args.oracle_grid),
        args.tolerance,
    );
    eprintln!(
        "estimate objective {:.6e} V^2, oracle objective {:.6e} V^2 ({}x{} grid)",
        result.objective, oracle.objective, args.oracle_grid, args.oracle_grid
    );
    emit(None, json(&doc))?;
    if !doc.certified {
        eprintln!(
            "error: estimate is worse than the grid oracle by {:.3e} V^2",
            -doc.margin_v2
        );
        return Ok(EXIT_CERTIFICATE);
    }
    Ok(EXIT_OK)
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32, CliError> {
    let settings = args.solve.resolve()?;
    let curve = settings.load_curve()?;
    let rows = io::read_manifest_csv(&args.manifest)?;
    let mut scored = Vec::with_capacity(rows.len());
    for row in &rows {
        let fit = settings
            .problem(curve.clone(), &row.trace_path)
            .and_then(|p| settings.solve(&p));
        let (result, _) = fit.map_err(|e| CliError {
            code: e.code,
            message: format!("cycle {}: {}", row.cycle_id, e.message),
        })?;
        if !result.converged {
            eprintln!("warning: cycle {}: simplex did not converge", row.cycle_id);
        }
        scored.push((
            row.cycle_id.clone(),
            result.capacity,
            row.actual_capacity_ah,
        ));
    }
    let report = ocvcap_core::aggregate(scored)?;
    if let Some(path) = &args.report_csv {
        emit(Some(path), |out| io::write_report_csv(&report, out))?;
    }
    emit(
        args.output.as_deref(),
        json(&io::ReportDocument::from(&report)),
    )?;
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::read(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(curve) = &args.curve {
        cfg.nominal_curve = Some(curve.clone());
    }
    cfg.true_capacity_ah = args.capacity.or(cfg.true_capacity_ah);
    cfg.true_z0 = args.z0.or(cfg.true_z0);
    cfg.soc_stop = args.soc_stop.or(cfg.soc_stop);
    if let Some(i) = args.current {
        cfg.discharge_current_a = Some(i);
        cfg.current_program = None;
    }
    cfg.ocv_noise_sigma_v = args.sigma.or(cfg.ocv_noise_sigma_v);
    cfg.sample_period_s = args.period.or(cfg.sample_period_s);
    cfg.seed = args.seed.or(cfg.seed);

    let curve = match &cfg.nominal_curve {
        Some(path) => io::read_curve_csv(path, false)?,
        None => ocvcap_core::reference_nominal_curve(),
    };
    let scenario = cfg.to_scenario(curve).map_err(|e| match e {
        IoError::Validation(inner) => CliError::from(inner),
        other => other.into(),
    })?;
    let trace = ocvcap_core::generate(&scenario)?;
    emit(args.output.as_deref(), |out| {
        io::write_trace_csv(&trace, out)
    })?;
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs the subcommand; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::PlotData(a) => cmd_plot_data(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_f64_pair("0.33:0.66"), Ok((0.33, 0.66)));
        assert_eq!(parse_usize_pair("10:50"), Ok((10, 50)));
        assert!(parse_f64_pair("0.33").is_err());
        assert!(parse_f64_pair("a:1").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("solve.toml");
        std::fs::write(
            &cfg,
            "nominal_capacity_ah = 3.0\ngrid = 16\nwindow = [0.0, 0.5]\ncurve = \"nominal.csv\"\n",
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "ocvcap",
            "estimate",
            "--trace",
            "t.csv",
            "--grid",
            "32",
            "--config",
            cfg.to_str().unwrap(),
        ])
        .unwrap();
        let Command::Estimate(args) = cli.command else {
            panic!()
        };
        let s = args.solve.resolve().unwrap();
        assert_eq!(s.nominal_capacity, 3.0);
        assert_eq!(s.options.grid_capacity, 32);
        assert_eq!(s.window, Some(WindowSpec::Fraction(0.0, 0.5)));
        assert_eq!(s.curve, Some(dir.path().join("nominal.csv")));
    }

    #[test]
    fn window_flags_conflict() {
        let r = Cli::try_parse_from([
            "ocvcap",
            "estimate",
            "--trace",
            "t.csv",
            "--window",
            "0:0.5",
            "--window-index",
            "0:10",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn bad_window_fraction_is_usage_error() {
        let cli = Cli::try_parse_from([
            "ocvcap", "estimate", "--trace", "t.csv", "--window", "0.7:0.3",
        ])
        .unwrap();
        let Command::Estimate(args) = cli.command else {
            panic!()
        };
        assert_eq!(args.solve.resolve().unwrap_err().code, EXIT_USAGE);
    }
}
