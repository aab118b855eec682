//! Scenario runner behind the `opsys` binary.
//!
//! Every command reads its objects either from JSON files or from a
//! compiled-in gallery entry, runs the corresponding library operation and
//! produces a [`Report`].

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};

mod commands;
mod inputs;
mod report;

pub use inputs::GALLERY_KEYS;
pub use report::{emit, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    CheckKernel,
    QuotientNorms,
    QuotientCones,
    CpCheck,
    DualCompare,
    TensorMin,
    TensorMax,
    NuclearityProbe,
    EmbeddingCheck,
    Gallery,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckKernel => "check-kernel",
            Command::QuotientNorms => "quotient-norms",
            Command::QuotientCones => "quotient-cones",
            Command::CpCheck => "cp-check",
            Command::DualCompare => "dual-compare",
            Command::TensorMin => "tensor-min",
            Command::TensorMax => "tensor-max",
            Command::NuclearityProbe => "nuclearity-probe",
            Command::EmbeddingCheck => "embedding-check",
            Command::Gallery => "gallery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Markdown,
}

/// Operator system toolkit: kernels, quotients, duals and tensor products.
#[derive(Debug, Clone, Parser)]
#[command(name = "opsys", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// System JSON `{"name", "shape", "generators"}` (the left factor for tensor commands).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Kernel JSON `{"system", "basis"}`.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Element JSON: `{"system", "matrix"}`, `{"n", "entries"}`, or tensor coefficients.
    #[arg(long)]
    pub element: Option<PathBuf>,
    /// Map JSON `{"source", "k", "action"}`.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Right tensor factor, system JSON.
    #[arg(long)]
    pub right: Option<PathBuf>,
    #[arg(long)]
    pub gallery: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Block indices forming the ideal for `embedding-check`.
    #[arg(long, value_delimiter = ',')]
    pub ideal: Vec<usize>,
    /// Sample count for randomized commands.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Run the max-tensor hierarchy even where the nuclear-partner shortcut applies.
    #[arg(long)]
    pub audit: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<opsys::Error> for CliError {
    fn from(e: opsys::Error) -> Self {
        match e {
            opsys::Error::SolverFail(_) | opsys::Error::BracketInvalid(_) => CliError::Numeric(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Resolves the inputs, runs the command and assembles the report.
pub fn run(cli: &Cli) -> CliResult<Report> {
    let start = Instant::now();
    let tol = match cli.tol {
        Some(t) if t > 0.0 && t.is_finite() => opsys::linalg::TolerancePolicy::uniform(t),
        Some(t) => return Err(CliError::Invalid(format!("--tol must be positive, got {t}"))),
        None => opsys::linalg::TolerancePolicy::default(),
    };
    let inp = inputs::resolve(cli)?;
    let (anchor, results) = commands::dispatch(cli, &inp, &tol)?;
    Ok(Report {
        command: cli.command.name().to_string(),
        scenario: scenario_echo(cli, &tol),
        paper_anchor: anchor,
        results,
        timing: json!({ "elapsed_ms": start.elapsed().as_secs_f64() * 1e3 }),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

fn scenario_echo(cli: &Cli, tol: &opsys::linalg::TolerancePolicy) -> Value {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    json!({
        "audit": cli.audit,
        "budget": cli.budget,
        "element": path(&cli.element),
        "gallery": cli.gallery,
        "ideal": cli.ideal,
        "input": path(&cli.input),
        "kernel": path(&cli.kernel),
        "level": cli.level,
        "map": path(&cli.map),
        "n": cli.n,
        "right": path(&cli.right),
        "seed": cli.seed,
        "tolerances": tol,
    })
}
