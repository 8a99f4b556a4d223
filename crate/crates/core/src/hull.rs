//! Minimum-norm points of finite convex hulls.
//!
//! [`min_norm_point`] runs Wolfe's algorithm (major cycles add the atom most
//! aligned against the current point, minor cycles move to the affine
//! minimizer of the active set and drop atoms whose weight would go negative).
//! [`caratheodory_reduce`] then removes affine dependencies until at most
//! `p + 1` atoms carry weight.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default certification tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HullError {
    #[error("atom set is empty")]
    Empty,
    #[error("atoms must have positive dimension")]
    ZeroDimension,
    #[error("atom {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
}

/// Nonempty list of equal-length vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AtomSet {
    atoms: Vec<Vec<f64>>,
}

impl AtomSet {
    pub fn new(atoms: Vec<Vec<f64>>) -> Result<Self, HullError> {
        let first = atoms.first().ok_or(HullError::Empty)?;
        let expected = first.len();
        if expected == 0 {
            return Err(HullError::ZeroDimension);
        }
        if let Some((index, a)) = atoms.iter().enumerate().find(|(_, a)| a.len() != expected) {
            return Err(HullError::DimensionMismatch {
                index,
                expected,
                got: a.len(),
            });
        }
        Ok(AtomSet { atoms })
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    /// Smallest atom norm, i.e. the min-norm over the vertex set without hulling.
    pub fn vertex_min_norm(&self) -> f64 {
        self.atoms.iter().map(|a| norm(a)).fold(f64::INFINITY, f64::min)
    }
}

/// Simplex weights over an atom list and the hull point they produce.
///
/// Serializes to `{atoms, weights, point, norm, gap}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinNormCertificate {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub point: Vec<f64>,
    pub norm: f64,
    /// Upper bound on `norm - dist(0, hull)`:
    /// `norm - max(0, min_i <point, atom_i> / norm)`.
    pub gap: f64,
    #[serde(skip)]
    pub iterations: usize,
    /// Set when the iteration cap stopped the solver before `gap <= tol`.
    #[serde(skip)]
    pub capped: bool,
}

impl MinNormCertificate {
    /// Number of strictly positive weights.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    fn from_weights(atoms: Vec<Vec<f64>>, weights: Vec<f64>, iterations: usize, capped: bool) -> Self {
        let point = combine(&atoms, &weights);
        let nrm = norm(&point);
        let gap = duality_gap(&atoms, &point, nrm);
        MinNormCertificate {
            atoms,
            weights,
            point,
            norm: nrm,
            gap,
            iterations,
            capped,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn combine(atoms: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; atoms[0].len()];
    for (a, &w) in atoms.iter().zip(weights) {
        if w != 0.0 {
            for (o, c) in out.iter_mut().zip(a) {
                *o += w * c;
            }
        }
    }
    out
}

fn duality_gap(atoms: &[Vec<f64>], point: &[f64], nrm: f64) -> f64 {
    if nrm == 0.0 {
        return 0.0;
    }
    let lower = atoms
        .iter()
        .map(|a| dot(point, a) / nrm)
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    (nrm - lower).max(0.0)
}

/// Weights of the point of minimum norm on the affine hull of `pts`.
///
/// Solves `(G + 1 1ᵀ) w = 1` with `G` the Gram matrix, then normalizes; this
/// is the KKT system of `min |Σ wᵢ pᵢ|²` s.t. `Σ wᵢ = 1`. Falls back to an SVD
/// pseudo-inverse when the set is numerically affinely dependent.
fn affine_minimizer(pts: &[&[f64]]) -> Option<Vec<f64>> {
    let k = pts.len();
    let m = DMatrix::from_fn(k, k, |i, j| dot(pts[i], pts[j]) + 1.0);
    let rhs = DVector::from_element(k, 1.0);
    let sol = m
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .or_else(|| m.svd(true, true).solve(&rhs, 1e-14).ok())?;
    let total: f64 = sol.iter().sum();
    if !total.is_finite() || total.abs() < f64::EPSILON {
        return None;
    }
    Some(sol.iter().map(|v| v / total).collect())
}

/// Nearest point of `conv(atoms)` to the origin.
///
/// Exact duplicate atoms are merged before solving (weight goes to the first
/// occurrence). Stops when `gap <= tol`, when the most aligned atom is already
/// active, or after `10 (n + p)²` cycles (flagged as `capped`).
pub fn min_norm_point(atoms: &AtomSet, tol: f64) -> MinNormCertificate {
    let tol = if tol > 0.0 { tol } else { f64::EPSILON };
    let all = atoms.atoms();
    let mut unique: Vec<usize> = Vec::new();
    for (i, a) in all.iter().enumerate() {
        if !unique.iter().any(|&u| all[u] == *a) {
            unique.push(i);
        }
    }
    let pts: Vec<&[f64]> = unique.iter().map(|&i| all[i].as_slice()).collect();
    let (n, p) = (pts.len(), atoms.dim());
    let cap = 10 * (n + p) * (n + p);

    let start = (0..n)
        .min_by(|&a, &b| dot(pts[a], pts[a]).total_cmp(&dot(pts[b], pts[b])).then(a.cmp(&b)))
        .expect("atom set is nonempty");
    let mut active: Vec<usize> = vec![start];
    let mut lambda: Vec<f64> = vec![1.0];
    let mut iterations = 0;
    let mut capped = false;

    'major: loop {
        let x = combine_active(&pts, &active, &lambda, p);
        let nx = norm(&x);
        let (j, best) = (0..n)
            .map(|i| (i, dot(&x, pts[i])))
            .fold((usize::MAX, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        let gap = if nx == 0.0 { 0.0 } else { (nx - (best / nx).max(0.0)).max(0.0) };
        if gap <= tol || active.contains(&j) {
            break;
        }
        let scale = pts.iter().map(|q| dot(q, q)).fold(0.0, f64::max);
        if dot(&x, &x) - best <= 1e-15 * scale {
            break;
        }
        active.push(j);
        lambda.push(0.0);

        loop {
            iterations += 1;
            if iterations > cap {
                capped = true;
                break 'major;
            }
            let sub: Vec<&[f64]> = active.iter().map(|&i| pts[i]).collect();
            let Some(mu) = affine_minimizer(&sub) else {
                // Numerically dependent: the new atom adds nothing.
                active.pop();
                lambda.pop();
                break 'major;
            };
            if mu.iter().all(|&m| m > 0.0) {
                lambda = mu;
                break;
            }
            let mut theta = 1.0f64;
            for (&l, &m) in lambda.iter().zip(&mu) {
                if m <= 0.0 && l - m > 0.0 {
                    theta = theta.min(l / (l - m));
                }
            }
            for (l, &m) in lambda.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * m;
            }
            // Drop the blocking atom(s) and anything numerically zero.
            let mut keep_active = Vec::with_capacity(active.len());
            let mut keep_lambda = Vec::with_capacity(active.len());
            for (&a, &l) in active.iter().zip(&lambda) {
                if l > 1e-15 {
                    keep_active.push(a);
                    keep_lambda.push(l);
                }
            }
            if keep_active.is_empty() {
                let best = lambda
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                keep_active.push(active[best]);
                keep_lambda.push(1.0);
            }
            let total: f64 = keep_lambda.iter().sum();
            active = keep_active;
            lambda = keep_lambda.into_iter().map(|l| l / total).collect();
        }
    }

    let mut weights = vec![0.0; all.len()];
    for (&a, &l) in active.iter().zip(&lambda) {
        weights[unique[a]] = l;
    }
    MinNormCertificate::from_weights(all.to_vec(), weights, iterations, capped)
}

fn combine_active(pts: &[&[f64]], active: &[usize], lambda: &[f64], p: usize) -> Vec<f64> {
    let mut x = vec![0.0; p];
    for (&a, &l) in active.iter().zip(lambda) {
        for (o, c) in x.iter_mut().zip(pts[a]) {
            *o += l * c;
        }
    }
    x
}

/// `(min-norm <= tol, certificate)`.
pub fn hull_contains_zero(atoms: &AtomSet, tol: f64) -> (bool, MinNormCertificate) {
    let cert = min_norm_point(atoms, tol);
    (cert.norm <= tol, cert)
}

/// Rewrites the certificate on at most `p + 1` atoms with the same hull point.
///
/// While more than `p + 1` weights are positive, a null vector `c` of the
/// lifted columns `(aᵢ, 1)` gives `Σ cᵢ aᵢ = 0`, `Σ cᵢ = 0`; moving the weights
/// along `-c` until one hits zero keeps the point and the simplex constraint.
pub fn caratheodory_reduce(cert: &MinNormCertificate, p: usize) -> MinNormCertificate {
    let mut weights = cert.weights.clone();
    for w in weights.iter_mut() {
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    loop {
        let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        if support.len() <= p + 1 {
            break;
        }
        let cols: Vec<Vec<f64>> = support
            .iter()
            .map(|&i| {
                let mut c = cert.atoms[i].clone();
                c.push(1.0);
                c
            })
            .collect();
        let mut c = null_vector(&cols);
        if !c.iter().any(|v| *v > 0.0) {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        let (mut t, mut hit) = (f64::INFINITY, 0);
        for (idx, &ci) in c.iter().enumerate() {
            if ci > 0.0 {
                let r = weights[support[idx]] / ci;
                if r < t {
                    t = r;
                    hit = idx;
                }
            }
        }
        for (idx, &ci) in c.iter().enumerate() {
            let w = &mut weights[support[idx]];
            *w -= t * ci;
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        weights[support[hit]] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total != 1.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    MinNormCertificate::from_weights(cert.atoms.clone(), weights, cert.iterations, cert.capped)
}

/// Nonzero `c` with `Σ cⱼ colⱼ = 0`, for more columns than rows.
fn null_vector(cols: &[Vec<f64>]) -> Vec<f64> {
    let k = cols.len();
    let rows = cols[0].len();
    let mut m: Vec<Vec<f64>> = (0..rows).map(|r| (0..k).map(|c| cols[c][r]).collect()).collect();
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut row = 0;
    for col in 0..k {
        if row == rows {
            break;
        }
        let (best, val) = (row..rows)
            .map(|r| (r, m[r][col].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-12 * scale {
            continue;
        }
        m.swap(row, best);
        let piv = m[row][col];
        for v in m[row].iter_mut() {
            *v /= piv;
        }
        for r in 0..rows {
            if r != row && m[r][col] != 0.0 {
                let f = m[r][col];
                for c in 0..k {
                    m[r][c] -= f * m[row][c];
                }
            }
        }
        pivots.push((row, col));
        row += 1;
    }
    let free = (0..k)
        .find(|c| !pivots.iter().any(|&(_, pc)| pc == *c))
        .expect("more columns than rows leaves a free column");
    let mut out = vec![0.0; k];
    out[free] = 1.0;
    for &(r, pc) in &pivots {
        out[pc] = -m[r][free];
    }
    out
}
