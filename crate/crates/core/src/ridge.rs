//! The ridge iteration
//!
//! ```text
//! y_k ∈ argmax_y F(x_k, y),   (u_k, 0) ∈ ∂F(x_k, y_k),   x_{k+1} = x_k - α_k u_k
//! ```
//!
//! with `α_k = α₀ (k + 1)^(-γ)`, plus PO-criticality certificates.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hull::{self, caratheodory_reduce, hull_contains_zero, MinNormCertificate};
use crate::oracles::{po_atoms, OracleError, OracleSettings, POSample};
use crate::problems::{load_problem, ProblemError, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub alpha0: f64,
    pub gamma: f64,
}

impl StepSchedule {
    pub fn new(alpha0: f64, gamma: f64) -> Result<Self, ConfigError> {
        let s = StepSchedule { alpha0, gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(ConfigError(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ConfigError(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// `α₀ (k + 1)^(-γ)`.
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha0 * ((k + 1) as f64).powf(-self.gamma)
    }
}

/// Which PO atom the step uses when several are available.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomRule {
    /// First atom in sorted order.
    First,
    /// Smallest Euclidean norm, lowest index on ties.
    #[default]
    MinNormAtom,
    /// Uniform pick from a generator keyed by `(seed, k)`.
    Random,
}

impl std::str::FromStr for AtomRule {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(AtomRule::First),
            "min_norm_atom" | "min-norm-atom" => Ok(AtomRule::MinNormAtom),
            "random" => Ok(AtomRule::Random),
            other => Err(ConfigError(format!("unknown atom rule `{other}` (first, min_norm_atom, random)"))),
        }
    }
}

impl AtomRule {
    pub fn pick(self, sample: &POSample, seed: u64, k: usize) -> usize {
        let atoms = sample.atoms.atoms();
        match self {
            AtomRule::First => 0,
            AtomRule::MinNormAtom => (0..atoms.len())
                .min_by(|&a, &b| hull::norm(&atoms[a]).total_cmp(&hull::norm(&atoms[b])).then(a.cmp(&b)))
                .unwrap_or(0),
            AtomRule::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                rng.random_range(0..atoms.len())
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid run configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Registered id or path to a problem file.
    pub problem: String,
    pub x0: Vec<f64>,
    pub alpha0: f64,
    pub gamma: f64,
    pub iters: usize,
    pub atom_rule: AtomRule,
    pub seed: u64,
    /// Certification tolerance on the min-norm.
    pub tol: f64,
    pub oracle: OracleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: String::new(),
            x0: vec![0.0],
            alpha0: 0.5,
            gamma: 1.0,
            iters: 500,
            atom_rule: AtomRule::default(),
            seed: 0,
            tol: hull::DEFAULT_TOL,
            oracle: OracleSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            alpha0: self.alpha0,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.schedule().validate()?;
        if self.iters < 1 {
            return Err(ConfigError("iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(ConfigError("tol must be positive".into()));
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError("x0 must be a nonempty finite vector".into()));
        }
        self.oracle.validate().map_err(|e| ConfigError(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// One iterate: `{"k", "x", "y", "u", "alpha", "f"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub alpha: f64,
    pub f: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub seed: u64,
    pub config_hash: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line, in iterate order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }

    /// `max - min` of `f` over the last `ceil(len / 10)` iterates.
    pub fn last_decile_oscillation(&self) -> f64 {
        let n = self.records.len();
        if n == 0 {
            return 0.0;
        }
        let tail = &self.records[n - n.div_ceil(10)..];
        let hi = tail.iter().map(|r| r.f).fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

/// Side information from one step that does not go into the trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub boundary_flag: bool,
    pub incomplete_flag: bool,
    pub n_atoms: usize,
}

/// One ridge step from `x` with step size `schedule.alpha(k)`.
pub fn ridge_step(
    problem: &ProblemSpec,
    x: &[f64],
    settings: &OracleSettings,
    schedule: &StepSchedule,
    k: usize,
    rule: AtomRule,
    seed: u64,
) -> Result<(Vec<f64>, StepRecord, StepInfo), OracleError> {
    let (am, sample) = po_atoms(problem, x, settings)?;
    let i = rule.pick(&sample, seed, k);
    let u = sample.atoms.atoms()[i].clone();
    let y = sample.provenance[i].y.clone();
    let alpha = schedule.alpha(k);
    let next: Vec<f64> = x.iter().zip(&u).map(|(xi, ui)| xi - alpha * ui).collect();
    let record = StepRecord {
        k,
        x: x.to_vec(),
        y,
        u,
        alpha,
        f: am.value,
    };
    let info = StepInfo {
        boundary_flag: am.boundary_flag,
        incomplete_flag: sample.incomplete_flag,
        n_atoms: sample.atoms.len(),
    };
    Ok((next, record, info))
}

/// One `(y, u, λ)` triple of a Carathéodory witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessTriple {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalityCertificate {
    pub x: Vec<f64>,
    pub tol: f64,
    pub verdict: bool,
    pub maximizers: Vec<Vec<f64>>,
    pub atoms: Vec<Vec<f64>>,
    pub certificate: MinNormCertificate,
    /// At most `p + 1` triples with positive weight reproducing the hull point.
    pub witness: Vec<WitnessTriple>,
    /// Smallest atom norm, i.e. the answer without taking the hull.
    pub vertex_min_norm: f64,
    pub boundary_flag: bool,
    pub incomplete_flag: bool,
}

/// Decides `0 ∈ conv(PO atoms at x)` up to `tol`.
pub fn certify_po_critical(
    problem: &ProblemSpec,
    x: &[f64],
    settings: &OracleSettings,
    tol: f64,
) -> Result<CriticalityCertificate, OracleError> {
    let (am, sample) = po_atoms(problem, x, settings)?;
    let (verdict, cert) = hull_contains_zero(&sample.atoms, tol);
    let reduced = caratheodory_reduce(&cert, x.len());
    let witness = reduced
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, &lambda)| WitnessTriple {
            y: sample.provenance[i].y.clone(),
            u: reduced.atoms[i].clone(),
            lambda,
        })
        .collect();
    Ok(CriticalityCertificate {
        x: x.to_vec(),
        tol,
        verdict,
        maximizers: am.maximizers,
        atoms: sample.atoms.atoms().to_vec(),
        vertex_min_norm: sample.atoms.vertex_min_norm(),
        certificate: reduced,
        witness,
        boundary_flag: am.boundary_flag,
        incomplete_flag: sample.incomplete_flag,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    /// Every step in the last window moved `x` by less than the floor.
    Stalled,
    /// `x` or `f` became non-finite, or `|x|` exceeded the escape radius.
    Escaped,
}

/// Certification of the end of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalCertification {
    /// Certificate at the last iterate.
    pub terminal: CriticalityCertificate,
    /// First critical point among the last iterate and dyadic roundings of the
    /// tail mean that stay within the tail radius of that mean.
    pub nearest_certified: Option<CriticalityCertificate>,
    /// Distance from the last iterate to `nearest_certified`.
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub config_hash: String,
    pub seed: u64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub x_final: Vec<f64>,
    pub f_final: f64,
    pub min_norm_x: f64,
    pub oscillation: f64,
    pub alpha_final: f64,
    pub boundary_iterates: usize,
    pub incomplete_iterates: usize,
    pub warnings: Vec<String>,
    pub certification: Option<TerminalCertification>,
}

pub const STALL_WINDOW: usize = 50;
pub const STALL_FLOOR: f64 = 1e-12;
pub const ESCAPE_RADIUS: f64 = 1e12;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    /// An oracle failure at iterate `k`; `trajectory` holds the steps before it.
    #[error("oracle failure at iterate {k}: {source}")]
    Oracle {
        k: usize,
        #[source]
        source: OracleError,
        trajectory: Box<Trajectory>,
    },
}

/// Loads the configured problem and runs it.
pub fn run(config: &RunConfig) -> Result<(Trajectory, RunReport), RunError> {
    config.validate()?;
    let problem = load_problem(&config.problem)?;
    run_problem(&problem, config)
}

pub fn run_problem(problem: &ProblemSpec, config: &RunConfig) -> Result<(Trajectory, RunReport), RunError> {
    config.validate()?;
    if config.x0.len() != problem.dim_x() {
        return Err(ConfigError(format!("x0 has {} coordinates, problem has {}", config.x0.len(), problem.dim_x())).into());
    }
    let schedule = config.schedule();
    let mut traj = Trajectory {
        records: Vec::with_capacity(config.iters),
        seed: config.seed,
        config_hash: config.hash(),
    };
    let mut x = config.x0.clone();
    let mut still = 0usize;
    let mut stop = StopReason::Budget;
    let (mut boundary, mut incomplete) = (0usize, 0usize);
    for k in 0..config.iters {
        let (next, record, info) = match ridge_step(problem, &x, &config.oracle, &schedule, k, config.atom_rule, config.seed) {
            Ok(step) => step,
            Err(source) => {
                return Err(RunError::Oracle {
                    k,
                    source,
                    trajectory: Box::new(traj),
                })
            }
        };
        boundary += info.boundary_flag as usize;
        incomplete += info.incomplete_flag as usize;
        let f_ok = record.f.is_finite();
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        traj.records.push(record);
        if !f_ok || next.iter().any(|v| !v.is_finite()) || hull::norm(&next) > ESCAPE_RADIUS {
            x = next;
            stop = StopReason::Escaped;
            break;
        }
        x = next;
        still = if moved < STALL_FLOOR { still + 1 } else { 0 };
        if still >= STALL_WINDOW {
            stop = StopReason::Stalled;
            break;
        }
    }

    let mut warnings = Vec::new();
    if boundary > 0 {
        warnings.push(format!(
            "{boundary} iterate(s) had a maximizer within delta_box of the y-box: \
             the argmax may not be locally bounded"
        ));
    }
    if incomplete > 0 {
        warnings.push(format!("{incomplete} iterate(s) had more active kinks than max_branches covers"));
    }
    if stop == StopReason::Escaped {
        warnings.push("iterates escaped (non-finite or beyond the escape radius); no certification".into());
    }

    let certification = match stop {
        StopReason::Escaped => None,
        _ => match nearest_certified(problem, &traj, &x, config) {
            Ok(c) => Some(c),
            Err(e) => {
                warnings.push(format!("terminal certification failed: {e}"));
                None
            }
        },
    };
    let f_final = traj.records.last().map(|r| r.f).unwrap_or(f64::NAN);
    let report = RunReport {
        problem: problem.id.clone(),
        config_hash: traj.config_hash.clone(),
        seed: config.seed,
        iterations: traj.len(),
        stop_reason: stop,
        min_norm_x: traj.records.iter().map(|r| hull::norm(&r.x)).fold(f64::INFINITY, f64::min),
        oscillation: traj.last_decile_oscillation(),
        alpha_final: traj.records.last().map(|r| r.alpha).unwrap_or(f64::NAN),
        x_final: x,
        f_final,
        boundary_iterates: boundary,
        incomplete_iterates: incomplete,
        warnings,
        certification,
    };
    Ok((traj, report))
}

fn nearest_certified(
    problem: &ProblemSpec,
    traj: &Trajectory,
    x_final: &[f64],
    config: &RunConfig,
) -> Result<TerminalCertification, OracleError> {
    let terminal = certify_po_critical(problem, x_final, &config.oracle, config.tol)?;
    if terminal.verdict {
        return Ok(TerminalCertification {
            nearest_certified: Some(terminal.clone()),
            distance: Some(0.0),
            terminal,
        });
    }
    let n = traj.records.len();
    let tail: Vec<&[f64]> = traj.records[n - n.div_ceil(10)..]
        .iter()
        .map(|r| r.x.as_slice())
        .chain(std::iter::once(x_final))
        .collect();
    let p = x_final.len();
    let mean: Vec<f64> = (0..p).map(|d| tail.iter().map(|x| x[d]).sum::<f64>() / tail.len() as f64).collect();
    let radius = tail.iter().map(|x| dist(x, &mean)).fold(0.0, f64::max);
    let mut tried: Vec<Vec<f64>> = Vec::new();
    for m in 0..=30 {
        let scale = (1u64 << m) as f64;
        let cand: Vec<f64> = mean.iter().map(|v| (v * scale).round() / scale).collect();
        if dist(&cand, &mean) > radius || tried.contains(&cand) {
            continue;
        }
        tried.push(cand.clone());
        let cert = certify_po_critical(problem, &cand, &config.oracle, config.tol)?;
        if cert.verdict {
            return Ok(TerminalCertification {
                terminal,
                distance: Some(dist(&cand, x_final)),
                nearest_certified: Some(cert),
            });
        }
    }
    Ok(TerminalCertification {
        terminal,
        nearest_certified: None,
        distance: None,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
