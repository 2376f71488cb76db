//! File formats: curve, trace, manifest and plot CSVs, scenario TOML, and
//! the JSON result documents.
//!
//! CSV input is UTF-8 with a header row, columns matched by name (order and
//! extra columns don't matter), LF or CRLF line endings. Output is LF with
//! every float written to 17 significant digits so values survive a
//! write/read cycle bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ocvcap_core::curve::OcvCurve;
use ocvcap_core::estimator::{EstimationProblem, EstimationResult, OraclePoint};
use ocvcap_core::metrics::EvaluationReport;
use ocvcap_core::synth::{AgingScenario, CurrentProgram};
use ocvcap_core::DischargeTrace;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// `line` is 1-based and counts the header.
    #[error("line {line}, column `{column}`: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Validation(#[from] ocvcap_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IoError {
    /// True for malformed input (as opposed to well-formed but invalid data).
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            Self::Io { .. } | Self::Parse { .. } | Self::Config(_) | Self::Json(_)
        )
    }
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

/// Float formatting used by every writer here: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::Io {
            path: path.to_owned(),
            source,
        })
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Header-checked CSV table with named column lookup.
struct Table<R: Read> {
    reader: csv::Reader<R>,
    columns: Vec<String>,
}

impl<R: Read> Table<R> {
    fn new(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let columns = reader
            .headers()
            .map_err(|e| csv_error(e, "<header>"))?
            .iter()
            .map(|s| s.trim_start_matches('\u{feff}').to_owned())
            .collect();
        Ok(Self { reader, columns })
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index(name).ok_or_else(|| IoError::Parse {
            line: 1,
            column: name.to_owned(),
            message: format!("missing column in header `{}`", self.columns.join(",")),
        })
    }

    /// Calls `f(line, record)` for every data row.
    fn for_each(&mut self, mut f: impl FnMut(u64, &csv::StringRecord) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    f(line, &record)?;
                }
                Err(e) => return Err(csv_error(e, "<row>")),
            }
        }
    }
}

fn csv_error(e: csv::Error, column: &str) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    IoError::Parse {
        line,
        column: column.to_owned(),
        message: e.to_string(),
    }
}

fn field<'r>(record: &'r csv::StringRecord, line: u64, idx: usize, name: &str) -> Result<&'r str> {
    record
        .get(idx)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| IoError::Parse {
            line,
            column: name.to_owned(),
            message: "missing value".to_owned(),
        })
}

fn number(record: &csv::StringRecord, line: u64, idx: usize, name: &str) -> Result<f64> {
    let raw = field(record, line, idx, name)?;
    raw.parse::<f64>().map_err(|_| IoError::Parse {
        line,
        column: name.to_owned(),
        message: format!("`{raw}` is not a number"),
    })
}

/// Parses a `soc,ocv_v` table. With `repair`, noisy non-monotone samples
/// are fixed up with [`ocvcap_core::enforce_monotone`] before validation.
pub fn parse_curve_csv(input: impl Read, label: &str, repair: bool) -> Result<OcvCurve> {
    let mut table = Table::new(input)?;
    let soc_col = table.require("soc")?;
    let ocv_col = table.require("ocv_v")?;
    let mut soc = Vec::new();
    let mut ocv = Vec::new();
    table.for_each(|line, rec| {
        soc.push(number(rec, line, soc_col, "soc")?);
        ocv.push(number(rec, line, ocv_col, "ocv_v")?);
        Ok(())
    })?;
    let curve = if repair {
        OcvCurve::new_repaired(soc, ocv, label)?
    } else {
        OcvCurve::new(soc, ocv, label)?
    };
    Ok(curve)
}

pub fn read_curve_csv(path: &Path, repair: bool) -> Result<OcvCurve> {
    parse_curve_csv(open(path)?, &path.display().to_string(), repair)
}

pub fn write_curve_csv(curve: &OcvCurve, out: &mut (impl Write + ?Sized)) -> std::io::Result<()> {
    writeln!(out, "soc,ocv_v")?;
    for (z, v) in curve.soc().iter().zip(curve.ocv()) {
        writeln!(out, "{},{}", fmt_f64(*z), fmt_f64(*v))?;
    }
    Ok(())
}

/// Parses a `time_s,current_a[,ocv_v]` table and integrates its discharge
/// capacity.
pub fn parse_trace_csv(input: impl Read) -> Result<DischargeTrace> {
    let mut table = Table::new(input)?;
    let t_col = table.require("time_s")?;
    let i_col = table.require("current_a")?;
    let v_col = table.index("ocv_v");
    let mut time_s = Vec::new();
    let mut current_a = Vec::new();
    let mut ocv_v = Vec::new();
    table.for_each(|line, rec| {
        time_s.push(number(rec, line, t_col, "time_s")?);
        current_a.push(number(rec, line, i_col, "current_a")?);
        if let Some(c) = v_col {
            ocv_v.push(number(rec, line, c, "ocv_v")?);
        }
        Ok(())
    })?;
    Ok(DischargeTrace::new(
        time_s,
        current_a,
        v_col.map(|_| ocv_v),
    )?)
}

pub fn read_trace_csv(path: &Path) -> Result<DischargeTrace> {
    parse_trace_csv(open(path)?)
}

pub fn write_trace_csv(
    trace: &DischargeTrace,
    out: &mut (impl Write + ?Sized),
) -> std::io::Result<()> {
    match trace.ocv_v() {
        Some(ocv) => {
            writeln!(out, "time_s,current_a,ocv_v")?;
            for ((t, i), v) in trace.time_s().iter().zip(trace.current_a()).zip(ocv) {
                writeln!(out, "{},{},{}", fmt_f64(*t), fmt_f64(*i), fmt_f64(*v))?;
            }
        }
        None => {
            writeln!(out, "time_s,current_a")?;
            for (t, i) in trace.time_s().iter().zip(trace.current_a()) {
                writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*i))?;
            }
        }
    }
    Ok(())
}

pub fn write_trace_file(trace: &DischargeTrace, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    write_trace_csv(trace, &mut out)
        .and_then(|_| out.flush())
        .map_err(write_err(path))
}

/// One row of a `cycle_id,trace_path,actual_capacity_ah` manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub cycle_id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub trace_path: PathBuf,
    pub actual_capacity_ah: f64,
}

pub fn parse_manifest_csv(input: impl Read, base_dir: &Path) -> Result<Vec<ManifestRow>> {
    let mut table = Table::new(input)?;
    let id_col = table.require("cycle_id")?;
    let path_col = table.require("trace_path")?;
    let cap_col = table.require("actual_capacity_ah")?;
    let mut rows = Vec::new();
    table.for_each(|line, rec| {
        let trace_path = PathBuf::from(field(rec, line, path_col, "trace_path")?);
        rows.push(ManifestRow {
            cycle_id: field(rec, line, id_col, "cycle_id")?.to_owned(),
            trace_path: if trace_path.is_absolute() {
                trace_path
            } else {
                base_dir.join(trace_path)
            },
            actual_capacity_ah: number(rec, line, cap_col, "actual_capacity_ah")?,
        });
        Ok(())
    })?;
    Ok(rows)
}

pub fn read_manifest_csv(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest_csv(open(path)?, base)
}

/// Sample window as stored in result documents: `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDoc {
    pub start: usize,
    pub end: usize,
}

/// Serialized form of an [`EstimationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub capacity_ah: f64,
    pub z0: f64,
    pub rmse_v: f64,
    pub objective_v2: f64,
    pub k: f64,
    pub b: f64,
    pub n_residuals: usize,
    pub flatness_indicator: f64,
    pub weakly_identifiable: bool,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub window: Option<WindowDoc>,
}

impl From<&EstimationResult> for ResultDocument {
    fn from(r: &EstimationResult) -> Self {
        Self {
            capacity_ah: r.capacity,
            z0: r.z0,
            rmse_v: r.rmse,
            objective_v2: r.objective,
            k: r.transform.k,
            b: r.transform.b,
            n_residuals: r.n_residuals,
            flatness_indicator: r.flatness_indicator,
            weakly_identifiable: r.is_weakly_identifiable(),
            converged: r.converged,
            window: r.window.map(|(start, end)| WindowDoc { start, end }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDoc {
    pub capacity_ah: f64,
    pub z0: f64,
    pub objective_v2: f64,
    pub grid_capacity: usize,
    pub grid_z0: usize,
}

/// Output of the `oracle` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateDocument {
    pub estimate: ResultDocument,
    pub oracle: OracleDoc,
    /// Oracle objective minus estimate objective; the certificate holds
    /// when this is at least `-tolerance_v2`.
    pub margin_v2: f64,
    pub tolerance_v2: f64,
    pub certified: bool,
}

impl CertificateDocument {
    pub fn new(
        result: &EstimationResult,
        oracle: &OraclePoint,
        grid: (usize, usize),
        tolerance_v2: f64,
    ) -> Self {
        let margin_v2 = oracle.objective - result.objective;
        Self {
            estimate: result.into(),
            oracle: OracleDoc {
                capacity_ah: oracle.capacity,
                z0: oracle.z0,
                objective_v2: oracle.objective,
                grid_capacity: grid.0,
                grid_z0: grid.1,
            },
            margin_v2,
            tolerance_v2,
            certified: result.objective <= oracle.objective + tolerance_v2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDoc {
    pub cycle_id: String,
    pub estimated_ah: f64,
    pub actual_ah: f64,
    pub are_percent: f64,
}

/// Serialized form of an [`EvaluationReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub per_cycle: Vec<CycleDoc>,
    pub rmse_ah: f64,
    pub mae_ah: f64,
    pub mean_are_percent: f64,
}

impl From<&EvaluationReport> for ReportDocument {
    fn from(r: &EvaluationReport) -> Self {
        Self {
            per_cycle: r
                .per_cycle
                .iter()
                .map(|c| CycleDoc {
                    cycle_id: c.cycle_id.clone(),
                    estimated_ah: c.estimated_ah,
                    actual_ah: c.actual_ah,
                    are_percent: c.are_percent,
                })
                .collect(),
            rmse_ah: r.rmse_ah,
            mae_ah: r.mae_ah,
            mean_are_percent: r.mean_are_percent,
        }
    }
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(value: &T, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out).map_err(serde_json::Error::io)?;
    Ok(())
}

/// `cycle_id,estimated_ah,actual_ah,are_percent`; ARE rounded to 4 places
/// like a results table, the capacities at full precision.
pub fn write_report_csv(
    report: &EvaluationReport,
    out: &mut (impl Write + ?Sized),
) -> std::io::Result<()> {
    writeln!(out, "cycle_id,estimated_ah,actual_ah,are_percent")?;
    for row in &report.per_cycle {
        writeln!(
            out,
            "{},{},{},{:.4}",
            row.cycle_id,
            fmt_f64(row.estimated_ah),
            fmt_f64(row.actual_ah),
            row.are_percent
        )?;
    }
    Ok(())
}

/// A named `(x, y)` series with units, ready for any plotting tool.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub x_unit: String,
    pub y_unit: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PlotSeries {
    pub fn new(name: &str, x_unit: &str, y_unit: &str, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(ocvcap_core::Error::LengthMismatch {
                left: x.len(),
                right: y.len(),
            }
            .into());
        }
        if x_unit.is_empty() || y_unit.is_empty() {
            return Err(IoError::Config(
                "plot series units must be non-empty".into(),
            ));
        }
        Ok(Self {
            name: name.to_owned(),
            x_unit: x_unit.to_owned(),
            y_unit: y_unit.to_owned(),
            x,
            y,
        })
    }
}

/// The nominal curve and the aged samples placed at their fitted
/// calibrated SOC. For a good fit the second series lies on the first.
pub fn alignment_series(
    result: &EstimationResult,
    problem: &EstimationProblem,
) -> Result<[PlotSeries; 2]> {
    let curve = problem.nominal();
    let nominal = PlotSeries::new(
        "nominal",
        "soc",
        "ocv_v",
        curve.soc().to_vec(),
        curve.ocv().to_vec(),
    )?;
    let soc = problem
        .q_dc()
        .iter()
        .map(|q| {
            ocvcap_core::uncalibrated_soc(*q, problem.nominal_capacity())
                .map(|z| result.transform.apply(z))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let aligned = PlotSeries::new("aligned", "soc", "ocv_v", soc, problem.v_oc().to_vec())?;
    Ok([nominal, aligned])
}

/// Long format, one point per row. The header is `series,<x unit>,<y unit>`
/// taken from the first series; all series are expected to share units.
pub fn write_plot_csv(
    series: &[PlotSeries],
    out: &mut (impl Write + ?Sized),
) -> std::io::Result<()> {
    let (x_unit, y_unit) = series
        .first()
        .map(|s| (s.x_unit.as_str(), s.y_unit.as_str()))
        .unwrap_or(("x", "y"));
    writeln!(out, "series,{x_unit},{y_unit}")?;
    for s in series {
        for (x, y) in s.x.iter().zip(&s.y) {
            writeln!(out, "{},{},{}", s.name, fmt_f64(*x), fmt_f64(*y))?;
        }
    }
    Ok(())
}

/// Reads back what [`write_plot_csv`] wrote, grouping rows by series name
/// in order of first appearance.
pub fn parse_plot_csv(input: impl Read) -> Result<Vec<PlotSeries>> {
    let mut table = Table::new(input)?;
    if table.columns.len() < 3 || table.columns[0] != "series" {
        return Err(IoError::Parse {
            line: 1,
            column: "series".into(),
            message: "expected header `series,<x unit>,<y unit>`".into(),
        });
    }
    let x_unit = table.columns[1].clone();
    let y_unit = table.columns[2].clone();
    let mut series: Vec<PlotSeries> = Vec::new();
    table.for_each(|line, rec| {
        let name = field(rec, line, 0, "series")?;
        let x = number(rec, line, 1, &x_unit)?;
        let y = number(rec, line, 2, &y_unit)?;
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => {
                s.x.push(x);
                s.y.push(y);
            }
            None => series.push(PlotSeries {
                name: name.to_owned(),
                x_unit: x_unit.clone(),
                y_unit: y_unit.clone(),
                x: vec![x],
                y: vec![y],
            }),
        }
        Ok(())
    })?;
    Ok(series)
}

pub fn write_alignment_plot_data(
    result: &EstimationResult,
    problem: &EstimationProblem,
    path: &Path,
) -> Result<()> {
    let series = alignment_series(result, problem)?;
    let mut out = create(path)?;
    write_plot_csv(&series, &mut out)
        .and_then(|_| out.flush())
        .map_err(write_err(path))
}

/// Scenario file for `simulate`. Every key is optional so that flags can
/// fill or override any of them.
///
/// ```toml
/// nominal_curve = "curve.csv"   # omitted: built-in reference curve
/// true_capacity_ah = 4.2
/// true_z0 = 0.95
/// soc_stop = 0.05
/// discharge_current_a = -0.5    # or: current_program = [[0, -1.0], [1800, -0.25]]
/// ocv_noise_sigma_v = 0.005
/// sample_period_s = 60
/// seed = 7
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub nominal_curve: Option<PathBuf>,
    pub true_capacity_ah: Option<f64>,
    pub true_z0: Option<f64>,
    pub soc_stop: Option<f64>,
    pub discharge_current_a: Option<f64>,
    pub current_program: Option<Vec<(f64, f64)>>,
    pub ocv_noise_sigma_v: Option<f64>,
    pub sample_period_s: Option<f64>,
    pub seed: Option<u64>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(curve), Some(dir)) = (&cfg.nominal_curve, path.parent()) {
            if curve.is_relative() {
                cfg.nominal_curve = Some(dir.join(curve));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Builds a scenario; `nominal` is the curve already loaded by the caller.
    pub fn to_scenario(&self, nominal: OcvCurve) -> Result<AgingScenario> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| IoError::Config(format!("missing `{key}`")))
        };
        let true_capacity = need(self.true_capacity_ah, "true_capacity_ah")?;
        let mut scenario = AgingScenario::new(
            true_capacity,
            need(self.true_z0, "true_z0")?,
            self.soc_stop.unwrap_or(0.0),
        );
        scenario.nominal = nominal;
        scenario.current = match (&self.current_program, self.discharge_current_a) {
            (Some(_), Some(_)) => {
                return Err(IoError::Config(
                    "set either `discharge_current_a` or `current_program`, not both".into(),
                ))
            }
            (Some(steps), None) => CurrentProgram::Steps(steps.clone()),
            (None, Some(i)) => CurrentProgram::Constant(i),
            (None, None) => scenario.current,
        };
        if let Some(sigma) = self.ocv_noise_sigma_v {
            scenario.ocv_noise_sigma = sigma;
        }
        if let Some(period) = self.sample_period_s {
            scenario.sample_period = period;
        }
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        scenario.validate()?;
        Ok(scenario)
    }
}
