//! The self-similar set `C = ∩ C_i` in the unit square, with `C_i` a union of
//! `4^i` squares of side `4^-i`.
//!
//! Each square is split into a 4x4 grid and keeps one cell per column: child
//! `j` (column `j`, left to right) sits in row `σ(j)` with `σ = (1, 3, 0, 2)`.
//! The level-`m` square in column `a` therefore has row `b(a)`, obtained by
//! applying `σ` to each base-4 digit of `a`. All set operations use these
//! integer coordinates; floats only enter for distances and probes.
//!
//! The value function `f(z) = -dist(z, C)` and `g(x, y) = 2 f(x, y) + x` are
//! only available through certified bounds computed from `C_i`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::hull::{self, AtomSet};
use crate::oracles::{AtomProvenance, POSample};

pub const SIGMA: [u64; 4] = [1, 3, 0, 2];
pub const MAX_DEPTH: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FractalError {
    #[error("depth {0} is outside 0..={MAX_DEPTH}")]
    DepthOutOfRange(u32),
    #[error("abscissa {0} is outside [0, 1]")]
    AbscissaOutOfRange(f64),
    #[error("every probe point at radius {rho} lies inside C_{depth}")]
    AllProbesInterior { rho: f64, depth: u32 },
    #[error("invalid probe settings: {0}")]
    InvalidProbe(String),
}

/// Row index of the level-`level` square in column `a`.
pub fn row_of(a: u64, level: u32) -> u64 {
    let mut b = 0;
    let mut scale = 1;
    let mut rest = a;
    for _ in 0..level {
        b += SIGMA[(rest % 4) as usize] * scale;
        rest /= 4;
        scale *= 4;
    }
    b
}

/// Axis-aligned square `[a, a+1] x [b, b+1]` in units of `4^-level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Square {
    pub level: u32,
    pub a: u64,
    pub b: u64,
}

impl Square {
    pub fn side(&self) -> f64 {
        0.25f64.powi(self.level as i32)
    }

    /// `(x0, x1, y0, y1)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let s = self.side();
        (self.a as f64 * s, (self.a + 1) as f64 * s, self.b as f64 * s, (self.b + 1) as f64 * s)
    }

    pub fn children(&self) -> [Square; 4] {
        std::array::from_fn(|j| Square {
            level: self.level + 1,
            a: 4 * self.a + j as u64,
            b: 4 * self.b + SIGMA[j],
        })
    }

    pub fn parent(&self) -> Option<Square> {
        (self.level > 0).then(|| Square {
            level: self.level - 1,
            a: self.a / 4,
            b: self.b / 4,
        })
    }

    /// Exact containment of `other` (at a finer or equal level) in `self`.
    pub fn contains(&self, other: &Square) -> bool {
        if other.level < self.level {
            return false;
        }
        let shift = 2 * (other.level - self.level);
        other.a >> shift == self.a && other.b >> shift == self.b
    }

    /// Nearest point of the square to `z`.
    pub fn clamp(&self, z: [f64; 2]) -> [f64; 2] {
        let (x0, x1, y0, y1) = self.bounds();
        [z[0].clamp(x0, x1), z[1].clamp(y0, y1)]
    }

    pub fn dist(&self, z: [f64; 2]) -> f64 {
        let p = self.clamp(z);
        (z[0] - p[0]).hypot(z[1] - p[1])
    }
}

/// `C_depth`, stored implicitly: squares are generated from their column index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FractalSet {
    depth: u32,
}

pub fn build_fractal(depth: u32) -> Result<FractalSet, FractalError> {
    if depth > MAX_DEPTH {
        return Err(FractalError::DepthOutOfRange(depth));
    }
    Ok(FractalSet { depth })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// Unit directions `(1, 2)/√5` and `(2, 1)/√5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    OneTwo,
    TwoOne,
}

/// Certified bracket on `dist(z, C)` and the nearest depth-`i` square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistBounds {
    pub lo: f64,
    pub hi: f64,
    pub nearest: Square,
}

/// One nested column chain: the columns containing `x` at levels `0..=depth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub squares: Vec<Square>,
}

impl Chain {
    pub fn finest(&self) -> Square {
        *self.squares.last().expect("chains start at the unit square")
    }

    /// `[y0, y1]` of the finest square.
    pub fn y_interval(&self) -> (f64, f64) {
        let (_, _, y0, y1) = self.finest().bounds();
        (y0, y1)
    }

    pub fn y_mid(&self) -> f64 {
        let (y0, y1) = self.y_interval();
        0.5 * (y0 + y1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnChain {
    pub x: f64,
    pub depth: u32,
    /// One chain, or two (left then right) when `x` is an interior column boundary.
    pub chains: Vec<Chain>,
}

/// Directions sampled around a point of `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub center: [f64; 2],
    pub rho: f64,
    /// Unit vectors `(z' - proj(z')) / dist(z', C_i)` for exterior probe points `z'`.
    pub directions: Vec<[f64; 2]>,
    /// Largest angle between circularly consecutive directions (`2π` for one direction).
    pub max_gap: f64,
    pub n_exterior: usize,
}

/// Probe fan parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub rho: f64,
    pub n_dirs: usize,
}

/// Measure of a union of integer intervals.
fn union_length(mut intervals: Vec<(u64, u64)>, exec: Exec) -> u64 {
    exec.sort_by_key(&mut intervals, |iv| *iv);
    let mut total = 0;
    let mut current: Option<(u64, u64)> = None;
    for (s, e) in intervals {
        match current {
            Some((cs, ce)) if s <= ce => current = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                current = Some((s, e));
            }
            None => current = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = current {
        total += ce - cs;
    }
    total
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    sq: Square,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Min-heap on distance; deeper squares first, then smaller column.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(self.sq.level.cmp(&other.sq.level))
            .then(other.sq.a.cmp(&self.sq.a))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FractalSet {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// `4^depth`.
    pub fn n_columns(&self) -> u64 {
        1u64 << (2 * self.depth)
    }

    pub fn square(&self, a: u64) -> Square {
        Square {
            level: self.depth,
            a,
            b: row_of(a, self.depth),
        }
    }

    /// All depth-`i` squares in column order.
    pub fn squares(&self) -> impl Iterator<Item = Square> + '_ {
        (0..self.n_columns()).map(|a| self.square(a))
    }

    /// `dist(z, C_i)` by best-first search over the quadtree, and
    /// `hi = lo + √2 4^-i`, since every depth-`i` square meets `C`.
    pub fn dist_bounds(&self, z: [f64; 2]) -> DistBounds {
        let root = Square { level: 0, a: 0, b: 0 };
        let mut heap = BinaryHeap::new();
        heap.push(Candidate { dist: root.dist(z), sq: root });
        while let Some(Candidate { dist, sq }) = heap.pop() {
            if sq.level == self.depth {
                return DistBounds {
                    lo: dist,
                    hi: dist + SQRT_2 * sq.side(),
                    nearest: sq,
                };
            }
            for child in sq.children() {
                heap.push(Candidate { dist: child.dist(z), sq: child });
            }
        }
        unreachable!("the heap always reaches the finest level")
    }

    /// Bracket on `g(x, y) = x - 2 dist((x, y), C)`.
    pub fn g_eval_bounds(&self, x: f64, y: f64) -> (f64, f64) {
        let d = self.dist_bounds([x, y]);
        (x - 2.0 * d.hi, x - 2.0 * d.lo)
    }

    /// Nested squares whose x-interval contains `x`.
    pub fn column_chains(&self, x: f64) -> Result<ColumnChain, FractalError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(FractalError::AbscissaOutOfRange(x));
        }
        let n = self.n_columns();
        // x 4^i is exact for dyadic-friendly inputs and exact enough to be
        // decided by floor/ceil otherwise.
        let scaled = x * n as f64;
        let right = (scaled.floor() as u64).min(n - 1);
        let left = (scaled.ceil() as u64).max(1) - 1;
        let chain_for = |col: u64| Chain {
            squares: (0..=self.depth)
                .map(|m| {
                    let a = col >> (2 * (self.depth - m));
                    Square {
                        level: m,
                        a,
                        b: row_of(a, m),
                    }
                })
                .collect(),
        };
        let chains = if left == right { vec![chain_for(left)] } else { vec![chain_for(left), chain_for(right)] };
        Ok(ColumnChain {
            x,
            depth: self.depth,
            chains,
        })
    }

    /// Projection of `C_i` onto an axis, in units of `4^-i`.
    pub fn axis_projection_units(&self, axis: Axis, exec: Exec) -> u64 {
        let n = self.n_columns();
        let intervals = exec.map_range(n as usize, |a| {
            let s = self.square(a as u64);
            let lo = match axis {
                Axis::X => s.a,
                Axis::Y => s.b,
            };
            (lo, lo + 1)
        });
        union_length(intervals, exec)
    }

    pub fn axis_projection_length(&self, axis: Axis, exec: Exec) -> f64 {
        self.axis_projection_units(axis, exec) as f64 / self.n_columns() as f64
    }

    /// Projection onto `(1, 2)/√5` or `(2, 1)/√5`, in units of `4^-i / √5`.
    /// A square `[a, a+1] x [b, b+1]` projects to `[a + 2b, a + 2b + 3]` or `[2a + b, 2a + b + 3]`.
    pub fn rotated_projection_units(&self, dir: Direction, exec: Exec) -> u64 {
        let intervals = exec.map_range(self.n_columns() as usize, |a| {
            let s = self.square(a as u64);
            let lo = match dir {
                Direction::OneTwo => s.a + 2 * s.b,
                Direction::TwoOne => 2 * s.a + s.b,
            };
            (lo, lo + 3)
        });
        union_length(intervals, exec)
    }

    pub fn rotated_projection_length(&self, dir: Direction, exec: Exec) -> f64 {
        self.rotated_projection_units(dir, exec) as f64 / (self.n_columns() as f64 * 5f64.sqrt())
    }

    /// Sum over consecutive columns of the vertical gap between their squares,
    /// in units of `4^-i`. Any function whose graph lies in `C_i` must cross
    /// every gap, so this bounds its total variation from below.
    pub fn min_total_variation_units(&self, exec: Exec) -> u64 {
        let n = self.n_columns();
        if n < 2 {
            return 0;
        }
        exec.sum_range_u64((n - 1) as usize, |a| {
            let (b0, b1) = (row_of(a as u64, self.depth), row_of(a as u64 + 1, self.depth));
            b0.abs_diff(b1).saturating_sub(1)
        })
    }

    pub fn min_total_variation(&self, exec: Exec) -> f64 {
        self.min_total_variation_units(exec) as f64 / self.n_columns() as f64
    }

    /// Nearest-point directions from a fan of `n_dirs` points on the circle of
    /// radius `rho` around `z`; points inside `C_i` are skipped.
    pub fn subdiff_probe(&self, z: [f64; 2], probe: ProbeSettings, exec: Exec) -> Result<ProbeResult, FractalError> {
        if probe.n_dirs < 8 {
            return Err(FractalError::InvalidProbe(format!("n_dirs must be at least 8, got {}", probe.n_dirs)));
        }
        if !(probe.rho > 0.0 && probe.rho.is_finite()) {
            return Err(FractalError::InvalidProbe(format!("rho must be positive, got {}", probe.rho)));
        }
        let found: Vec<Option<[f64; 2]>> = exec.map_range(probe.n_dirs, |j| {
            let theta = 2.0 * PI * j as f64 / probe.n_dirs as f64;
            let zp = [z[0] + probe.rho * theta.cos(), z[1] + probe.rho * theta.sin()];
            let d = self.dist_bounds(zp);
            if d.lo <= 0.0 {
                return None;
            }
            let p = d.nearest.clamp(zp);
            Some([(zp[0] - p[0]) / d.lo, (zp[1] - p[1]) / d.lo])
        });
        let directions: Vec<[f64; 2]> = found.into_iter().flatten().collect();
        if directions.is_empty() {
            return Err(FractalError::AllProbesInterior {
                rho: probe.rho,
                depth: self.depth,
            });
        }
        Ok(ProbeResult {
            center: z,
            rho: probe.rho,
            max_gap: max_angular_gap(&directions),
            n_exterior: directions.len(),
            directions,
        })
    }

    /// PO atoms of `g` at abscissa `x`: at each chain point `z = (x, y)`, the
    /// probe directions `n` give Clarke elements `2 w + (1, 0)` of `g` with
    /// `w = -n` a gradient of `f = -dist`. Elements with `|2 w_y| <= tau` are
    /// atoms; pairs with opposite y-blocks are combined to zero the y-block.
    pub fn g_po_sample(&self, x: f64, probe: ProbeSettings, tau: f64, exec: Exec) -> Result<POSample, FractalError> {
        let cc = self.column_chains(x)?;
        let mut found: Vec<(f64, AtomProvenance)> = Vec::new();
        for chain in &cc.chains {
            let y = chain.y_mid();
            let z = [x, y];
            if self.disc_inside(z, probe.rho) {
                // f vanishes near z, so g is smooth there with gradient (1, 0).
                found.push((
                    1.0,
                    AtomProvenance {
                        y: vec![y],
                        residual: 0.0,
                        source: "interior".into(),
                    },
                ));
                continue;
            }
            let pr = self.subdiff_probe(z, probe, exec)?;
            let elems: Vec<(f64, f64)> = pr.directions.iter().map(|n| (1.0 - 2.0 * n[0], -2.0 * n[1])).collect();
            for &(u, v) in &elems {
                if v.abs() <= tau {
                    found.push((
                        u,
                        AtomProvenance {
                            y: vec![y],
                            residual: v.abs(),
                            source: "probe".into(),
                        },
                    ));
                }
            }
            for (i, &(u1, v1)) in elems.iter().enumerate() {
                for &(u2, v2) in &elems[i + 1..] {
                    if v1 * v2 < 0.0 {
                        let mu = v2 / (v2 - v1);
                        found.push((
                            mu * u1 + (1.0 - mu) * u2,
                            AtomProvenance {
                                y: vec![y],
                                residual: (mu * v1 + (1.0 - mu) * v2).abs(),
                                source: "pair".into(),
                            },
                        ));
                    }
                }
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        // The hull of scalar atoms is the interval [min, max]; keep its ends.
        let mut kept: Vec<(f64, AtomProvenance)> = Vec::new();
        if let (Some(first), Some(last)) = (found.first(), found.last()) {
            kept.push(first.clone());
            if last.0 != first.0 {
                kept.push(last.clone());
            }
        }
        if kept.is_empty() {
            return Err(FractalError::AllProbesInterior {
                rho: probe.rho,
                depth: self.depth,
            });
        }
        let (atoms, provenance): (Vec<Vec<f64>>, Vec<AtomProvenance>) = kept.into_iter().map(|(u, p)| (vec![u], p)).unzip();
        Ok(POSample {
            atoms: AtomSet::new(atoms).expect("scalar atoms"),
            provenance,
            incomplete_flag: false,
        })
    }

    /// True when the closed disc of radius `rho` around `z` lies inside `C_i`.
    fn disc_inside(&self, z: [f64; 2], rho: f64) -> bool {
        let s = self.dist_bounds(z).nearest;
        let (x0, x1, y0, y1) = s.bounds();
        z[0] - rho > x0 && z[0] + rho < x1 && z[1] - rho > y0 && z[1] + rho < y1
    }
}

/// Largest gap between circularly consecutive angles of the given unit vectors.
pub fn max_angular_gap(directions: &[[f64; 2]]) -> f64 {
    let mut angles: Vec<f64> = directions.iter().map(|d| d[1].atan2(d[0])).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if angles.len() < 2 {
        return 2.0 * PI;
    }
    let wrap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    angles.windows(2).map(|w| w[1] - w[0]).fold(wrap, f64::max)
}

/// Min-norm of the hull of a PO sample.
pub fn po_min_norm(sample: &POSample) -> f64 {
    hull::min_norm_point(&sample.atoms, hull::DEFAULT_TOL).norm
}

/// Default probe fan: radius above the finest side of every depth from 2 on,
/// one direction per degree.
pub const DEFAULT_PROBE: ProbeSettings = ProbeSettings { rho: 0.1, n_dirs: 360 };

/// A point of `C` on the vertical line at `x`: the centre of the depth-12
/// square of the chosen chain (within `4^-12` of `C`).
pub fn chain_point(x: f64, chain: usize) -> Result<[f64; 2], FractalError> {
    let cc = build_fractal(MAX_DEPTH)?.column_chains(x)?;
    let ch = cc.chains.get(chain).unwrap_or(&cc.chains[0]);
    Ok([x, ch.y_mid()])
}

impl FractalSet {
    /// Bracket on `max_y g(x, y)` from the chain points of `C_i` at `x`.
    pub fn g_chain_max_bounds(&self, x: f64) -> Result<(f64, f64), FractalError> {
        let cc = self.column_chains(x)?;
        Ok(cc
            .chains
            .iter()
            .map(|c| self.g_eval_bounds(x, c.y_mid()))
            .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |acc, b| (acc.0.max(b.0), acc.1.max(b.1))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub depth: u32,
    pub axis_x: f64,
    pub axis_y: f64,
    pub rotated_1_2: f64,
    pub rotated_2_1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvRow {
    pub depth: u32,
    pub tv_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub depth: u32,
    pub chain: usize,
    pub z_x: f64,
    pub z_y: f64,
    pub rho: f64,
    pub n_dirs: usize,
    pub n_exterior: usize,
    pub max_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoRow {
    pub depth: u32,
    pub x: f64,
    pub hull_lo: f64,
    pub hull_hi: f64,
    pub min_norm: f64,
    pub g_max_lo: f64,
    pub g_max_hi: f64,
}

pub fn projection_row(depth: u32, exec: Exec) -> Result<ProjectionRow, FractalError> {
    let f = build_fractal(depth)?;
    Ok(ProjectionRow {
        depth,
        axis_x: f.axis_projection_length(Axis::X, exec),
        axis_y: f.axis_projection_length(Axis::Y, exec),
        rotated_1_2: f.rotated_projection_length(Direction::OneTwo, exec),
        rotated_2_1: f.rotated_projection_length(Direction::TwoOne, exec),
    })
}

pub fn tv_row(depth: u32, exec: Exec) -> Result<TvRow, FractalError> {
    let f = build_fractal(depth)?;
    Ok(TvRow {
        depth,
        tv_bound: f.min_total_variation(exec),
    })
}

/// Probe rows at the fixed chain points over `x`, one per chain.
pub fn probe_rows(depth: u32, x: f64, probe: ProbeSettings, exec: Exec) -> Result<Vec<ProbeRow>, FractalError> {
    let f = build_fractal(depth)?;
    let n_chains = build_fractal(MAX_DEPTH)?.column_chains(x)?.chains.len();
    (0..n_chains)
        .map(|chain| {
            let z = chain_point(x, chain)?;
            let pr = f.subdiff_probe(z, probe, exec)?;
            Ok(ProbeRow {
                depth,
                chain,
                z_x: z[0],
                z_y: z[1],
                rho: probe.rho,
                n_dirs: probe.n_dirs,
                n_exterior: pr.n_exterior,
                max_gap: pr.max_gap,
            })
        })
        .collect()
}

pub fn po_row(depth: u32, x: f64, probe: ProbeSettings, tau: f64, exec: Exec) -> Result<PoRow, FractalError> {
    let f = build_fractal(depth)?;
    let sample = f.g_po_sample(x, probe, tau, exec)?;
    let us: Vec<f64> = sample.atoms.atoms().iter().map(|a| a[0]).collect();
    let (g_max_lo, g_max_hi) = f.g_chain_max_bounds(x)?;
    Ok(PoRow {
        depth,
        x,
        hull_lo: us.iter().copied().fold(f64::INFINITY, f64::min),
        hull_hi: us.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_norm: po_min_norm(&sample),
        g_max_lo,
        g_max_hi,
    })
}
