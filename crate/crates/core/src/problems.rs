//! Benchmark registry and problem files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, ExprError, ExprProgram};
use crate::oracles::{argmax_grid_refine, ArgmaxResult, OracleError, OracleSettings, YBox};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem `{0}` (not a registered id or an existing file)")]
    Unknown(String),
    #[error("cannot read problem file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse problem file: {0}")]
    Format(String),
    #[error("in field `{field}`: {source}")]
    Expr {
        field: &'static str,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("validation failed for `{id}`: {message}")]
    Validation { id: String, message: String },
}

/// Analytic maximizers of the registered benchmarks (one x and one y coordinate).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    SmoothSaddle,
    ConvexHullNecessary,
    EnvelopeGap,
    PoFailure,
}

impl ClosedForm {
    pub fn argmax(self, x: &[f64], ybox: &YBox, settings: &OracleSettings) -> ArgmaxResult {
        let (l, u) = (ybox.lower[0], ybox.upper[0]);
        let x = x[0];
        let single = |y: f64, value: f64| (vec![vec![y]], vec![], value);
        let (points, segments, value): (Vec<Vec<f64>>, Vec<(Vec<f64>, Vec<f64>)>, f64) = match self {
            ClosedForm::SmoothSaddle => {
                let y = x.clamp(l, u);
                single(y, x * y - 0.5 * y * y)
            }
            ClosedForm::ConvexHullNecessary => {
                let c = x.clamp(-1.0, 1.0);
                let f = |y: f64| c * y - 2.0 * (y.abs() - 1.0).abs();
                let cands: Vec<f64> = [-1.0, 1.0, l, u, 0.0].into_iter().filter(|y| *y >= l && *y <= u).collect();
                let best = cands.iter().map(|&y| f(y)).fold(f64::NEG_INFINITY, f64::max);
                let mut ys: Vec<Vec<f64>> = cands.iter().filter(|&&y| f(y) == best).map(|&y| vec![y]).collect();
                ys.dedup();
                (ys, vec![], best)
            }
            ClosedForm::EnvelopeGap => {
                let y = x.clamp(l, u);
                single(y, -(x - y).abs())
            }
            ClosedForm::PoFailure => {
                // F(x, y) = y (1 - m) for y < 0 and -y m for y >= 0, m = min(|x|, 1).
                let m = x.abs().min(1.0);
                let f = |y: f64| y.min(0.0) - y * m;
                if m == 0.0 && u > 0.0 {
                    let lo = l.max(0.0);
                    (vec![vec![lo], vec![u]], vec![(vec![lo], vec![u])], 0.0)
                } else if m == 1.0 && l < 0.0 {
                    let hi = u.min(0.0);
                    (vec![vec![l], vec![hi]], vec![(vec![l], vec![hi])], 0.0)
                } else {
                    let y = 0.0f64.clamp(l, u);
                    single(y, f(y))
                }
            }
        };
        ArgmaxResult::from_points(points, segments, value, ybox, settings)
    }
}

/// Value function given as a DSL expression in `x` alone.
#[derive(Clone, Debug, PartialEq)]
pub struct KnownValue {
    pub text: String,
    prog: ExprProgram,
}

impl KnownValue {
    pub fn new(text: &str, dim_x: usize) -> Result<Self, ExprError> {
        let prog = parse(text, dim_x, 1)?;
        Ok(KnownValue {
            text: text.to_string(),
            prog,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.prog.eval(x, &[0.0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub id: String,
    pub expr: String,
    pub prog: ExprProgram,
    pub ybox: YBox,
    pub closed_form: Option<ClosedForm>,
    pub known_value: Option<KnownValue>,
    pub known_critical_points: Vec<Vec<f64>>,
    pub notes: String,
}

impl ProblemSpec {
    pub fn dim_x(&self) -> usize {
        self.prog.dim_x()
    }
}

/// On-disk problem description (TOML).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub id: String,
    pub dim_x: usize,
    pub dim_y: usize,
    pub expr: String,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    #[serde(default)]
    pub known_value_expr: Option<String>,
    #[serde(default)]
    pub known_critical_points: Vec<Vec<f64>>,
    #[serde(default)]
    pub notes: String,
}

impl ProblemFile {
    pub fn into_spec(self) -> Result<ProblemSpec, ProblemError> {
        let prog = parse(&self.expr, self.dim_x, self.dim_y).map_err(|source| ProblemError::Expr { field: "expr", source })?;
        let ybox = YBox::new(self.box_lower, self.box_upper)?;
        if ybox.dim() != self.dim_y {
            return Err(ProblemError::Validation {
                id: self.id,
                message: format!("box has {} coordinates but dim_y = {}", ybox.dim(), self.dim_y),
            });
        }
        let known_value = self
            .known_value_expr
            .as_deref()
            .map(|t| KnownValue::new(t, self.dim_x))
            .transpose()
            .map_err(|source| ProblemError::Expr {
                field: "known_value_expr",
                source,
            })?;
        Ok(ProblemSpec {
            id: self.id,
            expr: self.expr,
            prog,
            ybox,
            closed_form: None,
            known_value,
            known_critical_points: self.known_critical_points,
            notes: self.notes,
        })
    }
}

struct Entry {
    id: &'static str,
    expr: &'static str,
    lower: f64,
    upper: f64,
    known: &'static str,
    critical: &'static [f64],
    closed_form: ClosedForm,
    notes: &'static str,
}

const REGISTRY: &[Entry] = &[
    Entry {
        id: "convex_hull_necessary",
        expr: "max(-1, min(1, x0))*y0 - 2*abs(abs(y0) - 1)",
        lower: -2.0,
        upper: 2.0,
        known: "min(abs(x0), 1)",
        critical: &[0.0],
        closed_form: ClosedForm::ConvexHullNecessary,
        notes: "F = clamp(x) y - 2||y| - 1|, f = |x| on [-1, 1] and 1 outside; \
                PO-critical at 0 only through the hull of the atoms {1, -1}",
    },
    Entry {
        id: "envelope_gap",
        expr: "-abs(x0 - y0)",
        lower: -10.0,
        upper: 10.0,
        known: "0",
        critical: &[],
        closed_form: ClosedForm::EnvelopeGap,
        notes: "F = -|x - y|, f = 0; the PO set is {0} while the envelope set is [-1, 1]",
    },
    Entry {
        id: "po_failure",
        expr: "min(0, y0) - y0*min(abs(x0), 1)",
        lower: 0.0,
        upper: 3.0,
        known: "0",
        critical: &[0.0],
        closed_form: ClosedForm::PoFailure,
        notes: "F = min(0, y) - y min(|x|, 1), f = 0 near 0; at x = 0 every y >= 0 is a maximizer \
                and the PO hull spans the box, so maximizers touch the box boundary",
    },
    Entry {
        id: "smooth_saddle",
        expr: "x0*y0 - 0.5*pow(y0, 2)",
        lower: -10.0,
        upper: 10.0,
        known: "0.5*pow(x0, 2)",
        critical: &[0.0],
        closed_form: ClosedForm::SmoothSaddle,
        notes: "smooth baseline F = xy - y^2/2, y* = x, f = x^2/2",
    },
];

/// Registered ids with their notes, sorted by id.
pub fn list_problems() -> Vec<(&'static str, &'static str)> {
    REGISTRY.iter().map(|e| (e.id, e.notes)).collect()
}

/// A registered benchmark, without running the registration checks.
pub fn builtin(id: &str) -> Result<ProblemSpec, ProblemError> {
    let e = REGISTRY
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| ProblemError::Unknown(id.to_string()))?;
    let prog = parse(e.expr, 1, 1).expect("registered expression parses");
    Ok(ProblemSpec {
        id: e.id.to_string(),
        expr: e.expr.to_string(),
        prog,
        ybox: YBox::new(vec![e.lower], vec![e.upper]).expect("registered box is valid"),
        closed_form: Some(e.closed_form),
        known_value: Some(KnownValue::new(e.known, 1).expect("registered value function parses")),
        known_critical_points: e.critical.iter().map(|c| vec![*c]).collect(),
        notes: e.notes.to_string(),
    })
}

/// Loads a registered id, or a TOML problem file, and validates it.
pub fn load_problem(id_or_path: &str) -> Result<ProblemSpec, ProblemError> {
    let spec = match builtin(id_or_path) {
        Ok(spec) => spec,
        Err(ProblemError::Unknown(_)) if Path::new(id_or_path).is_file() => {
            let text = std::fs::read_to_string(id_or_path).map_err(|source| ProblemError::Io {
                path: id_or_path.to_string(),
                source,
            })?;
            parse_problem_file(&text)?
        }
        Err(e) => return Err(e),
    };
    validate(&spec, &OracleSettings::default(), 100)?;
    Ok(spec)
}

pub fn parse_problem_file(text: &str) -> Result<ProblemSpec, ProblemError> {
    let file: ProblemFile = toml::from_str(text).map_err(|e| ProblemError::Format(e.to_string()))?;
    file.into_spec()
}

/// Registration checks on `samples` seeded points `x` in `[-2, 2]^p`: the
/// closed form (if any) agrees with the grid oracle within `delta_f`, and the
/// known value function (if any) is within `1e-6` of the grid value.
pub fn validate(spec: &ProblemSpec, settings: &OracleSettings, samples: usize) -> Result<(), ProblemError> {
    if spec.closed_form.is_none() && spec.known_value.is_none() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let xs: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..spec.dim_x()).map(|_| rng.random_range(-2.0..=2.0)).collect())
        .collect();
    let checks = settings.exec.map(&xs, |x| -> Result<Option<String>, ProblemError> {
        let grid = argmax_grid_refine(&spec.prog, x, &spec.ybox, settings)?;
        if let Some(form) = spec.closed_form {
            let exact = form.argmax(x, &spec.ybox, settings);
            if (exact.value - grid.value).abs() > settings.delta_f {
                return Ok(Some(format!(
                    "closed form value {} vs grid {} at x = {x:?}",
                    exact.value, grid.value
                )));
            }
            let fy = spec.prog.eval(x, &exact.maximizers[0]).map_err(OracleError::from)?;
            if (fy - exact.value).abs() > settings.delta_f {
                return Ok(Some(format!("closed form maximizer is off the value at x = {x:?}")));
            }
        }
        if let Some(known) = &spec.known_value {
            let f = known.eval(x).map_err(OracleError::from)?;
            if (f - grid.value).abs() > 1e-6 {
                return Ok(Some(format!("known value {f} vs grid {} at x = {x:?}", grid.value)));
            }
        }
        Ok(None)
    });
    for c in checks {
        if let Some(message) = c? {
            return Err(ProblemError::Validation {
                id: spec.id.clone(),
                message,
            });
        }
    }
    Ok(())
}
