//! Partial maximization oracles `P(x) = argmax_y F(x, y)` and extraction of
//! parametric-optimality (PO) atoms: x-blocks `u` of gradient elements
//! `(u, 0)` of `F` at maximizers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::expr::{ExprError, ExprProgram};
use crate::hull::{self, AtomSet};
use crate::problems::ProblemSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid oracle supports at most 3 y-coordinates, got {0}")]
    TooManyYDims(usize),
    #[error("objective is not finite at y = {y:?}")]
    NonFinite { y: Vec<f64> },
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("problem `{0}` has no closed-form maximizer")]
    NoClosedForm(String),
    #[error("no PO atom with y-residual <= {tau_y:e} at x = {x:?}")]
    EmptyPOSample { x: Vec<f64>, tau_y: f64 },
    #[error("invalid y-box: {0}")]
    InvalidBox(String),
    #[error("invalid oracle settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Per-coordinate search box for the y-block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl YBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OracleError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(OracleError::InvalidBox(format!(
                "bound lengths {} and {} must match and be positive",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(OracleError::InvalidBox(format!("coordinate {i}: need finite lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(YBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    /// True if `y` is within `delta` of some face of the box.
    pub fn near_boundary(&self, y: &[f64], delta: f64) -> bool {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .any(|(v, (l, u))| v - l <= delta || u - v <= delta)
    }
}

/// Maximizers of `F(x, ·)` over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxResult {
    /// Deduplicated maximizers, sorted lexicographically. Segment endpoints are included.
    pub maximizers: Vec<Vec<f64>>,
    /// The attained maximum `f(x)`.
    pub value: f64,
    /// Some maximizer lies within `delta_box` of the box boundary.
    pub boundary_flag: bool,
    /// Near-tie tolerance `delta_f` used to decide multiplicity.
    pub multiplicity_tol: f64,
    /// Set when the maximizers contain a continuum, reported by endpoints.
    pub segment_flag: bool,
    pub segments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ArgmaxResult {
    pub(crate) fn from_points(
        mut maximizers: Vec<Vec<f64>>,
        segments: Vec<(Vec<f64>, Vec<f64>)>,
        value: f64,
        ybox: &YBox,
        settings: &OracleSettings,
    ) -> Self {
        sort_points(&mut maximizers);
        dedup_points(&mut maximizers, settings.delta_y);
        let boundary_flag = maximizers.iter().any(|y| ybox.near_boundary(y, settings.delta_box));
        ArgmaxResult {
            maximizers,
            value,
            boundary_flag,
            multiplicity_tol: settings.delta_f,
            segment_flag: !segments.is_empty(),
            segments,
        }
    }
}

/// Which maximization oracle to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Closed form when the problem registers one, grid otherwise.
    #[default]
    Auto,
    Registry,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSettings {
    pub oracle: OracleKind,
    pub grid_n: usize,
    pub n_starts: usize,
    /// Golden-section bracket width at which a coordinate search stops.
    pub tol_y: f64,
    /// Admission threshold on the y-block residual of a PO atom.
    pub tau_y: f64,
    pub delta_f: f64,
    pub delta_y: f64,
    pub delta_box: f64,
    pub max_branches: usize,
    /// Kink band for closed-form maximizers (exact kinks by default).
    pub kink_eps: f64,
    /// Kink band for grid maximizers, which sit within `tol_y` of a kink.
    pub grid_kink_band: f64,
    /// Interior samples taken along each maximizer segment.
    pub segment_samples: usize,
    /// Tolerance of the min-norm solve that zeroes the y-block.
    pub hull_tol: f64,
    /// Execution mode; not part of the serialized settings.
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            oracle: OracleKind::Auto,
            grid_n: 64,
            n_starts: 8,
            tol_y: 1e-12,
            tau_y: 1e-7,
            delta_f: 1e-8,
            delta_y: 1e-6,
            delta_box: 1e-6,
            max_branches: 64,
            kink_eps: 0.0,
            grid_kink_band: 1e-9,
            segment_samples: 3,
            hull_tol: 1e-12,
            exec: Exec::default(),
        }
    }
}

impl OracleSettings {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::InvalidSettings(m.to_string()));
        if self.grid_n < 2 {
            return bad("grid_n must be at least 2");
        }
        if self.n_starts < 1 {
            return bad("n_starts must be at least 1");
        }
        if self.max_branches < 1 {
            return bad("max_branches must be at least 1");
        }
        for (name, v) in [
            ("tol_y", self.tol_y),
            ("tau_y", self.tau_y),
            ("delta_f", self.delta_f),
            ("delta_y", self.delta_y),
            ("hull_tol", self.hull_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.kink_eps < 0.0 || self.grid_kink_band < 0.0 || self.delta_box < 0.0 {
            return bad("kink bands and delta_box must be nonnegative");
        }
        Ok(())
    }
}

fn sort_points(points: &mut [Vec<f64>]) {
    points.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Keeps the first of any group of points within `tol` of an earlier kept point.
fn dedup_points(points: &mut Vec<Vec<f64>>, tol: f64) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for p in points.drain(..) {
        if !kept.iter().any(|k| dist(k, &p) <= tol) {
            kept.push(p);
        }
    }
    *points = kept;
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximizes `g` on `[a, b]` by golden-section search, never returning a point
/// worse than `start`.
fn golden_max(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, start: (f64, f64), tol: f64) -> (f64, f64) {
    let mut best = start;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    for (t, v) in [(c, gc), (d, gd), (a, g(a)), (b, g(b))] {
        if v > best.1 {
            best = (t, v);
        }
    }
    best
}

/// Grid scan of `F(x, ·)` on a `grid_n^r` lattice followed by coordinate-wise
/// golden-section ascent from the best `n_starts` lattice local maxima.
///
/// All local optima within `delta_f` of the best value are returned. For
/// `r = 1`, runs of at least three lattice points within `delta_f` of the best
/// are reported as a segment whose endpoints are refined by bisection.
pub fn argmax_grid_refine(
    prog: &ExprProgram,
    x: &[f64],
    ybox: &YBox,
    settings: &OracleSettings,
) -> Result<ArgmaxResult, OracleError> {
    settings.validate()?;
    let r = prog.dim_y();
    if r > 3 {
        return Err(OracleError::TooManyYDims(r));
    }
    if ybox.dim() != r {
        return Err(OracleError::InvalidBox(format!("box has {} coordinates, objective has {r}", ybox.dim())));
    }
    if x.len() != prog.dim_x() {
        return Err(ExprError::DimensionMismatch {
            expected_x: prog.dim_x(),
            expected_y: r,
            got_x: x.len(),
            got_y: r,
        }
        .into());
    }
    let n = settings.grid_n;
    let total = n.pow(r as u32);
    let step: Vec<f64> = (0..r).map(|d| (ybox.upper[d] - ybox.lower[d]) / (n - 1) as f64).collect();
    let coords = |idx: usize| -> Vec<usize> {
        let mut rem = idx;
        let mut c = vec![0; r];
        for d in (0..r).rev() {
            c[d] = rem % n;
            rem /= n;
        }
        c
    };
    let point = |c: &[usize]| -> Vec<f64> {
        (0..r)
            .map(|d| if c[d] == n - 1 { ybox.upper[d] } else { ybox.lower[d] + step[d] * c[d] as f64 })
            .collect()
    };
    let f = |y: &[f64]| prog.eval(x, y).expect("dimensions checked");

    let values = settings.exec.map_range(total, |idx| f(&point(&coords(idx))));
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(OracleError::NonFinite { y: point(&coords(idx)) });
    }

    // Lattice local maxima over axis neighbours.
    let mut candidates: Vec<usize> = (0..total)
        .filter(|&idx| {
            let c = coords(idx);
            (0..r).all(|d| {
                let mut ok = true;
                let mut nb = c.clone();
                if c[d] > 0 {
                    nb[d] = c[d] - 1;
                    ok &= values[idx] >= values[index_of(&nb, n)];
                }
                if c[d] + 1 < n {
                    nb[d] = c[d] + 1;
                    ok &= values[idx] >= values[index_of(&nb, n)];
                }
                ok
            })
        })
        .collect();
    candidates.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    candidates.truncate(settings.n_starts);

    let refined: Vec<(Vec<f64>, f64)> = settings.exec.map(&candidates, |&idx| {
        let mut y = point(&coords(idx));
        let mut val = values[idx];
        for _sweep in 0..50 {
            let mut moved = 0.0f64;
            for d in 0..r {
                let lo = (y[d] - step[d]).max(ybox.lower[d]);
                let hi = (y[d] + step[d]).min(ybox.upper[d]);
                let mut probe = y.clone();
                let line = |t: f64| {
                    let mut q = probe.clone();
                    q[d] = t;
                    f(&q)
                };
                let (t, v) = golden_max(&line, lo, hi, (y[d], val), settings.tol_y);
                moved = moved.max((t - y[d]).abs());
                probe[d] = t;
                y = probe;
                val = v;
            }
            if moved <= settings.tol_y {
                break;
            }
        }
        (y, val)
    });

    let grid_best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = refined.iter().map(|(_, v)| *v).fold(grid_best, f64::max);

    let mut segments = Vec::new();
    if r == 1 {
        let on = |i: usize| values[i] >= best - settings.delta_f;
        let mut i = 0;
        while i < n {
            if !on(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i + 1 < n && on(i + 1) {
                i += 1;
            }
            if i - start + 1 >= 3 {
                let level = best - settings.tol_y;
                let edge = |inside: f64, outside: f64| -> f64 {
                    let (mut a, mut b) = (inside, outside);
                    for _ in 0..60 {
                        let m = 0.5 * (a + b);
                        if f(&[m]) >= level {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    a
                };
                let lo_in = point(&[start])[0];
                let hi_in = point(&[i])[0];
                let lo = if start == 0 { lo_in } else { edge(lo_in, point(&[start - 1])[0]) };
                let hi = if i == n - 1 { hi_in } else { edge(hi_in, point(&[i + 1])[0]) };
                segments.push((vec![lo], vec![hi]));
            }
            i += 1;
        }
    }

    let inside_segment =
        |y: &[f64]| segments.iter().any(|(lo, hi)| y[0] > lo[0] + settings.delta_y && y[0] < hi[0] - settings.delta_y);
    let mut ranked: Vec<&(Vec<f64>, f64)> = refined.iter().filter(|(_, v)| *v >= best - settings.delta_f).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut maximizers: Vec<Vec<f64>> = Vec::new();
    for (y, _) in ranked {
        if !inside_segment(y) && !maximizers.iter().any(|m| dist(m, y) <= settings.delta_y) {
            maximizers.push(y.clone());
        }
    }
    for (lo, hi) in &segments {
        maximizers.push(lo.clone());
        maximizers.push(hi.clone());
    }
    if maximizers.is_empty() {
        let idx = (0..total).max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a))).unwrap_or(0);
        maximizers.push(point(&coords(idx)));
    }
    Ok(ArgmaxResult::from_points(maximizers, segments, best, ybox, settings))
}

fn index_of(c: &[usize], n: usize) -> usize {
    c.iter().fold(0, |acc, &v| acc * n + v)
}

/// Closed-form maximizers for a registered benchmark.
pub fn argmax_registry(problem: &ProblemSpec, x: &[f64], settings: &OracleSettings) -> Result<ArgmaxResult, OracleError> {
    let form = problem
        .closed_form
        .ok_or_else(|| OracleError::NoClosedForm(problem.id.clone()))?;
    Ok(form.argmax(x, &problem.ybox, settings))
}

/// Closed-form maximizers for a registered benchmark, looked up by id.
pub fn argmax_registry_by_id(id: &str, x: &[f64], settings: &OracleSettings) -> Result<ArgmaxResult, OracleError> {
    let problem = crate::problems::builtin(id).map_err(|_| OracleError::UnknownProblem(id.to_string()))?;
    argmax_registry(&problem, x, settings)
}

/// Which oracle produced an [`ArgmaxResult`]; decides the kink band used for atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleUsed {
    Registry,
    Grid,
}

/// Runs the oracle selected by `settings.oracle`.
pub fn maximize(problem: &ProblemSpec, x: &[f64], settings: &OracleSettings) -> Result<(ArgmaxResult, OracleUsed), OracleError> {
    let use_registry = match settings.oracle {
        OracleKind::Registry => true,
        OracleKind::Grid => false,
        OracleKind::Auto => problem.closed_form.is_some(),
    };
    if use_registry {
        Ok((argmax_registry(problem, x, settings)?, OracleUsed::Registry))
    } else {
        Ok((argmax_grid_refine(&problem.prog, x, &problem.ybox, settings)?, OracleUsed::Grid))
    }
}

/// Where an atom came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomProvenance {
    /// The maximizer the atom was taken at.
    pub y: Vec<f64>,
    /// `|v|` of the gradient element `(u, v)` the atom represents.
    pub residual: f64,
    /// Branch id for a pure branch, or `hull` for a y-zeroing combination.
    pub source: String,
}

/// Finite sample of the PO set `{u : (u, 0) ∈ ∂F(x, y), y ∈ P(x)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct POSample {
    pub atoms: AtomSet,
    pub provenance: Vec<AtomProvenance>,
    /// Some maximizer had more active kinks than `max_branches` could cover.
    pub incomplete_flag: bool,
}

/// Collects PO atoms at every maximizer (and at interior samples of every
/// maximizer segment).
///
/// At each point the branch gradients `(u_j, v_j)` are enumerated; pure
/// branches with `|v_j| <= tau_y` are atoms, and the simplex weights `μ`
/// minimizing `|Σ μ_j v_j|` give one more atom `Σ μ_j u_j` when that minimum
/// is at most `tau_y`. Atoms are sorted and deduplicated, so the result does
/// not depend on the order of the maximizers.
pub fn po_sample(
    prog: &ExprProgram,
    x: &[f64],
    am: &ArgmaxResult,
    settings: &OracleSettings,
    kink_eps: f64,
) -> Result<POSample, OracleError> {
    let mut points: Vec<Vec<f64>> = am.maximizers.clone();
    let k = settings.segment_samples;
    for (lo, hi) in &am.segments {
        for s in 1..=k {
            let t = s as f64 / (k + 1) as f64;
            points.push(lo.iter().zip(hi).map(|(a, b)| a + t * (b - a)).collect());
        }
    }

    let mut found: Vec<(Vec<f64>, AtomProvenance)> = Vec::new();
    let mut incomplete = false;
    for y in &points {
        let sample = prog.subdiff_sample(x, y, settings.max_branches, kink_eps)?;
        incomplete |= sample.incomplete;
        for el in &sample.elements {
            let residual = hull::norm(&el.v);
            if residual <= settings.tau_y {
                found.push((
                    el.u.clone(),
                    AtomProvenance {
                        y: y.clone(),
                        residual,
                        source: el.branch_id.clone(),
                    },
                ));
            }
        }
        if sample.elements.len() >= 2 {
            let vs = AtomSet::new(sample.elements.iter().map(|e| e.v.clone()).collect())
                .expect("branch gradients share the y dimension");
            let cert = hull::min_norm_point(&vs, settings.hull_tol);
            if cert.norm <= settings.tau_y {
                let mut u = vec![0.0; prog.dim_x()];
                for (el, w) in sample.elements.iter().zip(&cert.weights) {
                    for (o, c) in u.iter_mut().zip(&el.u) {
                        *o += w * c;
                    }
                }
                found.push((
                    u,
                    AtomProvenance {
                        y: y.clone(),
                        residual: cert.norm,
                        source: "hull".into(),
                    },
                ));
            }
        }
    }

    found.sort_by(|a, b| {
        let key = |u: &[f64]| u.to_vec();
        let (ka, kb) = (key(&a.0), key(&b.0));
        ka.iter()
            .zip(&kb)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.residual.total_cmp(&b.1.residual))
    });
    let mut atoms: Vec<Vec<f64>> = Vec::new();
    let mut provenance = Vec::new();
    for (u, prov) in found {
        let dup = atoms
            .iter()
            .any(|a| a.iter().zip(&u).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + p.abs())));
        if !dup {
            atoms.push(u);
            provenance.push(prov);
        }
    }
    if atoms.is_empty() {
        return Err(OracleError::EmptyPOSample {
            x: x.to_vec(),
            tau_y: settings.tau_y,
        });
    }
    Ok(POSample {
        atoms: AtomSet::new(atoms).expect("atoms share the x dimension"),
        provenance,
        incomplete_flag: incomplete,
    })
}

/// Maximizes, then samples PO atoms with the kink band matching the oracle.
pub fn po_atoms(problem: &ProblemSpec, x: &[f64], settings: &OracleSettings) -> Result<(ArgmaxResult, POSample), OracleError> {
    let (am, used) = maximize(problem, x, settings)?;
    let eps = match used {
        OracleUsed::Registry => settings.kink_eps,
        OracleUsed::Grid => settings.kink_eps.max(settings.grid_kink_band),
    };
    let sample = po_sample(&problem.prog, x, &am, settings, eps)?;
    Ok((am, sample))
}
