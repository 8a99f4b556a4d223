//! Command implementations behind the `ridgeline` binary.
//!
//! Each command writes its artifacts into an output directory and returns the
//! process exit code: `run` gives 0 or 2 (oracle failure), `certify` gives 0
//! (critical), 1 (not critical) or 2 (error).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use ridgeline::exec::Exec;
use ridgeline::fractal::{self, FractalError, ProbeSettings, DEFAULT_PROBE};
use ridgeline::problems::{self, load_problem, ProblemError};
use ridgeline::ridge::{certify_po_critical, run_problem, AtomRule, RunConfig, RunError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Fractal(#[from] FractalError),
    #[error(transparent)]
    Oracle(#[from] ridgeline::oracles::OracleError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ridgeline", version, about = "Ridge method experiments for nonsmooth min-max problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the ridge iteration and write trajectory.jsonl and report.json.
    Run(RunArgs),
    /// Certify PO-criticality at a point and write certificate.json.
    Certify(CertifyArgs),
    /// Write fractal diagnostics as one CSV per diagnostic.
    Fractal(FractalArgs),
    /// List registered problems.
    ListProblems,
}

/// Flags shared by `run` and `certify`; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Registered id or problem file.
    #[arg(long)]
    pub problem: Option<String>,
    /// Starting point (run) or point to certify (certify), comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub tau_y: Option<f64>,
    #[arg(long)]
    pub delta_f: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// first, min_norm_atom or random.
    #[arg(long)]
    pub atom_rule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Diag {
    Projections,
    Tv,
    Probe,
    Po,
}

impl Diag {
    pub fn file_name(self) -> &'static str {
        match self {
            Diag::Projections => "projections.csv",
            Diag::Tv => "tv.csv",
            Diag::Probe => "probe.csv",
            Diag::Po => "po.csv",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FractalArgs {
    #[arg(long, default_value_t = 0)]
    pub depth_min: u32,
    #[arg(long, default_value_t = 8)]
    pub depth_max: u32,
    #[arg(long, default_value_t = 1)]
    pub depth_step: u32,
    /// Diagnostics to write (comma separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub diag: Vec<Diag>,
    /// Abscissa for the probe and PO diagnostics.
    #[arg(long, default_value_t = 0.5)]
    pub x: f64,
    #[arg(long, default_value_t = DEFAULT_PROBE.rho)]
    pub rho: f64,
    #[arg(long, default_value_t = DEFAULT_PROBE.n_dirs)]
    pub n_dirs: usize,
    /// y-residual threshold for fractal PO atoms.
    #[arg(long, default_value_t = 1e-7)]
    pub tau_y: f64,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Default for FractalArgs {
    fn default() -> Self {
        FractalArgs {
            depth_min: 0,
            depth_max: 8,
            depth_step: 1,
            diag: Vec::new(),
            x: 0.5,
            rho: DEFAULT_PROBE.rho,
            n_dirs: DEFAULT_PROBE.n_dirs,
            tau_y: 1e-7,
            sequential: false,
            out: PathBuf::from("out"),
        }
    }
}

fn base_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            toml::from_str(&text).map_err(|e| CliError::Config {
                path: path.clone(),
                message: e.to_string(),
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(p) = &common.problem {
        cfg.problem = p.clone();
    }
    if let Some(x0) = &common.x0 {
        cfg.x0 = x0.clone();
    }
    if let Some(t) = common.tol {
        cfg.tol = t;
    }
    if let Some(t) = common.tau_y {
        cfg.oracle.tau_y = t;
    }
    if let Some(d) = common.delta_f {
        cfg.oracle.delta_f = d;
    }
    if cfg.problem.is_empty() {
        return Err(CliError::Invalid("no problem given (use --problem or a config file)".into()));
    }
    Ok(cfg)
}

/// Config file plus flag overrides for `run`.
pub fn resolve_run_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = base_config(&args.common)?;
    if let Some(a) = args.alpha0 {
        cfg.alpha0 = a;
    }
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(n) = args.iters {
        cfg.iters = n;
    }
    if let Some(r) = &args.atom_rule {
        cfg.atom_rule = r.parse::<AtomRule>().map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn write_trajectory(path: &Path, traj: &ridgeline::Trajectory) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    traj.write_jsonl(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct FailureReport<'a> {
    problem: &'a str,
    config_hash: String,
    failed_at: usize,
    error: String,
}

/// Runs the solver; writes `trajectory.jsonl` and `report.json` (or a failure
/// report next to the partial trajectory). Returns the exit code.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let problem = load_problem(&cfg.problem)?;
    match run_problem(&problem, cfg) {
        Ok((traj, report)) => {
            write_trajectory(&out.join("trajectory.jsonl"), &traj)?;
            write_json(&out.join("report.json"), &report)?;
            Ok(0)
        }
        Err(RunError::Oracle { k, source, trajectory }) => {
            write_trajectory(&out.join("trajectory.jsonl"), &trajectory)?;
            write_json(
                &out.join("report.json"),
                &FailureReport {
                    problem: &problem.id,
                    config_hash: cfg.hash(),
                    failed_at: k,
                    error: source.to_string(),
                },
            )?;
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

/// Certifies the point `cfg.x0`; writes `certificate.json`. Returns 0 when
/// critical and 1 otherwise.
pub fn cmd_certify(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let problem = load_problem(&cfg.problem)?;
    if cfg.x0.len() != problem.dim_x() {
        return Err(CliError::Invalid(format!(
            "point has {} coordinates, problem has {}",
            cfg.x0.len(),
            problem.dim_x()
        )));
    }
    let cert = certify_po_critical(&problem, &cfg.x0, &cfg.oracle, cfg.tol)?;
    write_json(&out.join("certificate.json"), &cert)?;
    Ok(if cert.verdict { 0 } else { 1 })
}

pub fn resolve_certify_config(args: &CertifyArgs) -> Result<RunConfig, CliError> {
    let cfg = base_config(&args.common)?;
    if !(cfg.tol > 0.0) {
        return Err(CliError::Invalid("tol must be positive".into()));
    }
    cfg.oracle.validate()?;
    Ok(cfg)
}

pub fn depths(args: &FractalArgs) -> Result<Vec<u32>, CliError> {
    if args.depth_max > fractal::MAX_DEPTH || args.depth_min > args.depth_max || args.depth_step == 0 {
        return Err(CliError::Invalid(format!(
            "need depth_min <= depth_max <= {} and depth_step >= 1",
            fractal::MAX_DEPTH
        )));
    }
    Ok((args.depth_min..=args.depth_max).step_by(args.depth_step as usize).collect())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes one CSV per requested diagnostic, rows in depth order.
pub fn cmd_fractal(args: &FractalArgs) -> Result<i32, CliError> {
    let depths = depths(args)?;
    let exec = if args.sequential { Exec::Sequential } else { Exec::default() };
    let diags = if args.diag.is_empty() {
        vec![Diag::Projections, Diag::Tv, Diag::Probe, Diag::Po]
    } else {
        args.diag.clone()
    };
    let probe = ProbeSettings {
        rho: args.rho,
        n_dirs: args.n_dirs,
    };
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    for diag in diags {
        let path = args.out.join(diag.file_name());
        match diag {
            Diag::Projections => {
                let rows = exec.map(&depths, |&d| fractal::projection_row(d, exec));
                write_csv(&path, &rows.into_iter().collect::<Result<Vec<_>, _>>()?)?;
            }
            Diag::Tv => {
                let rows = exec.map(&depths, |&d| fractal::tv_row(d, exec));
                write_csv(&path, &rows.into_iter().collect::<Result<Vec<_>, _>>()?)?;
            }
            Diag::Probe => {
                let rows = exec.map(&depths, |&d| fractal::probe_rows(d, args.x, probe, exec));
                let rows: Vec<_> = rows.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect();
                write_csv(&path, &rows)?;
            }
            Diag::Po => {
                let rows = exec.map(&depths, |&d| fractal::po_row(d, args.x, probe, args.tau_y, exec));
                write_csv(&path, &rows.into_iter().collect::<Result<Vec<_>, _>>()?)?;
            }
        }
    }
    Ok(0)
}

pub fn cmd_list_problems<W: Write>(mut w: W) -> std::io::Result<i32> {
    for (id, notes) in problems::list_problems() {
        writeln!(w, "{id}\t{notes}")?;
    }
    Ok(0)
}

/// Dispatches a parsed command line; errors map to exit code 2.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => resolve_run_config(&args).and_then(|cfg| cmd_run(&cfg, &args.common.out)),
        Command::Certify(args) => resolve_certify_config(&args).and_then(|cfg| cmd_certify(&cfg, &args.common.out)),
        Command::Fractal(args) => cmd_fractal(&args),
        Command::ListProblems => cmd_list_problems(std::io::stdout().lock()).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
