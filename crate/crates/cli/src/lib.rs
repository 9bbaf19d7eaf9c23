//! Commands behind the `prevalent` binary.
//!
//! Each command returns a [`RunReport`]; `main` serializes it as JSON and maps
//! errors to exit codes via [`CliError::exit_code`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prevalent_core::bootstrap::{bootstrap_lambda, BootstrapOptions, BootstrapResult, Estimator};
use prevalent_core::diagnostics::{exchangeability_test, DiagnosticResult};
use prevalent_core::incidence::{estimate_by_category, estimate_overall, IncidenceEstimate};
use prevalent_core::io::{read_age_distribution, read_records, write_records};
use prevalent_core::model::ScreeningFrame;
use prevalent_core::npmle::{EmOptions, NpmleFit, TailPolicy};
use prevalent_core::sim::{SimConfig, SimTruth};
use prevalent_core::Error;

pub const SCHEMA_VERSION: u32 = 1;
/// Rates are stored per person-year; tables show them per 1,000.
pub const DISPLAY_SCALE: f64 = 1000.0;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Flags that do not make sense together.
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "parse",
            3 => "validation",
            4 => "undefined-tail",
            5 => "insufficient-data",
            _ => "config",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 3,
            CliError::Core(e) => match e {
                Error::Parse { .. } | Error::Io(_) => 2,
                Error::UndefinedTail { .. } => 4,
                Error::NoEvents | Error::TooFewEvents { .. } | Error::TooFewValidReplicates { .. } => 5,
                Error::ConfigInvalid(_) | Error::PrevalenceOutOfRange(_) | Error::InfiniteMoment => 6,
                _ => 3,
            },
        }
    }

    /// Machine-readable error object written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Core(Error::Parse { line, column, .. }) = self {
            obj["line"] = (*line).into();
            obj["column"] = (*column).into();
        }
        serde_json::json!({ "error": obj })
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmleSummary {
    pub label: String,
    pub support_size: usize,
    pub iterations: usize,
    pub converged: bool,
    pub tail_policy: TailPolicy,
    pub biased_tail: bool,
    pub mu_hat: f64,
}

impl NpmleSummary {
    fn new(label: &str, fit: &NpmleFit, tail_policy: TailPolicy) -> Self {
        Self {
            label: label.to_owned(),
            support_size: fit.lb.support.len(),
            iterations: fit.iterations,
            converged: fit.converged,
            tail_policy,
            biased_tail: fit.biased_tail,
            mu_hat: fit.mu_hat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub data_path: String,
    pub truth_path: String,
    pub n_records: usize,
    pub n_events: usize,
    pub truth: SimTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    /// SHA-256 over the input files, in argument order.
    pub inputs_digest: String,
    pub display_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<IncidenceEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bootstrap: Vec<BootstrapResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub npmle_summary: Vec<NpmleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    /// Wall-clock seconds; not covered by the determinism guarantee.
    pub timing: f64,
}

impl RunReport {
    fn new(command: &str, inputs_digest: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_owned(),
            inputs_digest,
            display_scale: DISPLAY_SCALE,
            estimates: None,
            bootstrap: Vec::new(),
            diagnostics: None,
            npmle_summary: Vec::new(),
            simulation: None,
            timing: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}

/// Digest of a sequence of inputs; lengths are mixed in so that boundaries count.
pub fn digest(inputs: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for bytes in inputs {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmArgs {
    pub tail_policy: TailPolicy,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmArgs {
    fn default() -> Self {
        let d = EmOptions::default();
        Self { tail_policy: d.tail_policy, tol: d.tol, max_iter: d.max_iter }
    }
}

impl EmArgs {
    fn options(&self) -> EmOptions {
        EmOptions { tol: self.tol, max_iter: self.max_iter, tail_policy: self.tail_policy, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapArgs {
    pub replicates: Option<usize>,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapArgs {
    fn default() -> Self {
        Self { replicates: None, level: 0.95, seed: 0 }
    }
}

impl BootstrapArgs {
    fn options(&self, em: &EmArgs) -> Option<BootstrapOptions> {
        self.replicates.map(|b| BootstrapOptions { b, level: self.level, seed: self.seed, em: em.options() })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateArgs {
    pub csv: Option<PathBuf>,
    pub s: Option<u64>,
    pub prevalence: Option<f64>,
    pub mu: Option<f64>,
    pub em: EmArgs,
    pub bootstrap: BootstrapArgs,
}

fn load_frame(bytes: &[u8], s: Option<u64>) -> CliResult<ScreeningFrame> {
    let records = read_records(bytes)?;
    let s = s.ok_or_else(|| CliError::Usage("--s (number screened) is required with a data file".into()))?;
    if records.len() as u64 > s {
        return Err(Error::InvalidCounts { n: records.len() as u64, s }.into());
    }
    Ok(ScreeningFrame::new(s, records))
}

/// Overall incidence from a record file, or from `--mu`/`--prevalence` alone.
pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<RunReport> {
    let start = Instant::now();
    let report = match (&args.csv, args.mu) {
        (None, Some(mu)) => {
            let p = args
                .prevalence
                .ok_or_else(|| CliError::Usage("summary mode needs both --mu and --prevalence".into()))?;
            if args.bootstrap.replicates.is_some() {
                return Err(CliError::Usage("bootstrap needs record-level data".into()));
            }
            let mut report = RunReport::new("estimate", digest(&[]));
            report.estimates = Some(IncidenceEstimate::from_summary(p, mu)?);
            report
        }
        (Some(path), None) => {
            let bytes = read_input(path)?;
            let frame = load_frame(&bytes, args.s)?;
            let em = args.em.options();
            let (estimate, fit) = estimate_overall(&frame, args.prevalence, &em)?;
            let mut report = RunReport::new("estimate", digest(&[&bytes]));
            report.npmle_summary.push(NpmleSummary::new("overall", &fit, em.tail_policy));
            report.estimates = Some(estimate);
            if let Some(opts) = args.bootstrap.options(&args.em) {
                let est = Estimator::Overall { prevalence_override: args.prevalence };
                report.bootstrap = bootstrap_lambda(&frame, &opts, &est)?;
            }
            report
        }
        (Some(_), Some(_)) => return Err(CliError::Usage("give either a data file or --mu, not both".into())),
        (None, None) => return Err(CliError::Usage("give a data file, or --mu with --prevalence".into())),
    };
    Ok(RunReport { timing: start.elapsed().as_secs_f64(), ..report })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateAgeArgs {
    pub csv: PathBuf,
    pub age_csv: PathBuf,
    pub s: Option<u64>,
    pub tau_star: Option<f64>,
    pub em: EmArgs,
    pub bootstrap: BootstrapArgs,
}

/// Age-specific incidence.
pub fn cmd_estimate_age(args: &EstimateAgeArgs) -> CliResult<RunReport> {
    let start = Instant::now();
    let bytes = read_input(&args.csv)?;
    let age_bytes = read_input(&args.age_csv)?;
    let frame = load_frame(&bytes, args.s)?;
    let age = read_age_distribution(age_bytes.as_slice())?;
    let em = args.em.options();
    let analysis = estimate_by_category(&frame, &age, args.tau_star, &em)?;

    let mut report = RunReport::new("estimate-age", digest(&[&bytes, &age_bytes]));
    report.npmle_summary.push(NpmleSummary::new("overall", &analysis.overall_fit, em.tail_policy));
    for (name, fit) in age.categories().iter().zip(&analysis.category_fits) {
        if let Some(fit) = fit {
            report.npmle_summary.push(NpmleSummary::new(name, fit, em.tail_policy));
        }
    }
    report.estimates = Some(analysis.estimate);
    if let Some(opts) = args.bootstrap.options(&args.em) {
        let est = Estimator::ByCategory { age, tau_star: args.tau_star };
        report.bootstrap = bootstrap_lambda(&frame, &opts, &est)?;
    }
    report.timing = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Sidecar path for simulated data: `data.csv` → `data.truth.json`.
pub fn truth_path(out_csv: &Path) -> PathBuf {
    out_csv.with_extension("truth.json")
}

/// Simulate a frame from a TOML config; writes the CSV and a truth sidecar.
pub fn cmd_simulate(config_path: &Path, out_csv: &Path) -> CliResult<RunReport> {
    let start = Instant::now();
    let text = read_input(config_path)?;
    let text = String::from_utf8(text.clone()).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let config = SimConfig::from_toml(&text)?;
    let frame = config.run()?;

    let mut buf = Vec::new();
    write_records(&mut buf, &frame.records)?;
    fs::write(out_csv, &buf).map_err(Error::from)?;

    let n_events = frame.records.iter().filter(|r| r.event).count();
    let mut truth = config.truth()?;
    truth.n_records = Some(frame.records.len());
    truth.n_events = Some(n_events);
    let sidecar = truth_path(out_csv);
    fs::write(&sidecar, serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n")
        .map_err(Error::from)?;

    let mut report = RunReport::new("simulate", digest(&[text.as_bytes()]));
    report.simulation = Some(SimulationSummary {
        data_path: out_csv.display().to_string(),
        truth_path: sidecar.display().to_string(),
        n_records: frame.records.len(),
        n_events,
        truth,
    });
    report.timing = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Backward/forward exchangeability diagnostic.
pub fn cmd_diagnose(csv: &Path, permutations: usize, seed: u64) -> CliResult<RunReport> {
    let start = Instant::now();
    let bytes = read_input(csv)?;
    let records = read_records(bytes.as_slice())?;
    let mut report = RunReport::new("diagnose", digest(&[&bytes]));
    report.diagnostics = Some(exchangeability_test(&records, permutations, seed)?);
    report.timing = start.elapsed().as_secs_f64();
    Ok(report)
}
