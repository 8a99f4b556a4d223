//! Flat evaluation tape with forward-mode branch gradients.

use super::{GradElement, Node, SubdiffSample};
use crate::hull;

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    X(usize),
    Y(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Pow(usize, u32),
    Abs(usize),
    Min(usize, usize),
    Max(usize, usize),
}

#[derive(Clone, Debug)]
pub(crate) struct Tape {
    ops: Vec<Op>,
    /// Slots holding `abs`, `min` or `max`, in tape order.
    kinks: Vec<usize>,
}

impl Tape {
    pub(crate) fn compile(root: &Node) -> Tape {
        let mut tape = Tape {
            ops: Vec::new(),
            kinks: Vec::new(),
        };
        tape.push_node(root);
        tape
    }

    fn push(&mut self, op: Op) -> usize {
        if matches!(op, Op::Abs(_) | Op::Min(..) | Op::Max(..)) {
            self.kinks.push(self.ops.len());
        }
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn push_node(&mut self, node: &Node) -> usize {
        let op = match node {
            Node::Const(c) => Op::Const(*c),
            Node::X(i) => Op::X(*i),
            Node::Y(j) => Op::Y(*j),
            Node::Add(a, b) => Op::Add(self.push_node(a), self.push_node(b)),
            Node::Sub(a, b) => Op::Sub(self.push_node(a), self.push_node(b)),
            Node::Mul(a, b) => Op::Mul(self.push_node(a), self.push_node(b)),
            Node::Neg(a) => Op::Neg(self.push_node(a)),
            Node::Pow(a, n) => Op::Pow(self.push_node(a), *n),
            Node::Abs(a) => Op::Abs(self.push_node(a)),
            Node::Min(a, b) => Op::Min(self.push_node(a), self.push_node(b)),
            Node::Max(a, b) => Op::Max(self.push_node(a), self.push_node(b)),
        };
        self.push(op)
    }

    pub(crate) fn values(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let val = match *op {
                Op::Const(c) => c,
                Op::X(i) => x[i],
                Op::Y(j) => y[j],
                Op::Add(a, b) => v[a] + v[b],
                Op::Sub(a, b) => v[a] - v[b],
                Op::Mul(a, b) => v[a] * v[b],
                Op::Neg(a) => -v[a],
                Op::Pow(a, n) => powi(v[a], n),
                Op::Abs(a) => f64::abs(v[a]),
                Op::Min(a, b) => f64::min(v[a], v[b]),
                Op::Max(a, b) => f64::max(v[a], v[b]),
            };
            v.push(val);
        }
        v
    }

    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        *self.values(x, y).last().expect("tape is never empty")
    }

    pub(crate) fn kink_arguments(&self, values: &[f64]) -> Vec<f64> {
        self.kinks
            .iter()
            .map(|&slot| match self.ops[slot] {
                Op::Abs(a) => values[a],
                Op::Min(a, b) | Op::Max(a, b) => values[a] - values[b],
                _ => unreachable!("kink slot holds a kink op"),
            })
            .collect()
    }

    /// Forward tangents of every slot, with `signs[k]` used at the k-th kink.
    /// Returns the flat tangent table (`ops.len() * n`).
    fn tangents(&self, values: &[f64], signs: &[i8], p: usize, n: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.ops.len() * n];
        let mut kink = 0;
        for (slot, op) in self.ops.iter().enumerate() {
            let (head, tail) = t.split_at_mut(slot * n);
            let out = &mut tail[..n];
            let row = |i: usize| &head[i * n..(i + 1) * n];
            match *op {
                Op::Const(_) => {}
                Op::X(i) => out[i] = 1.0,
                Op::Y(j) => out[p + j] = 1.0,
                Op::Add(a, b) => zip2(out, row(a), row(b), |da, db| da + db),
                Op::Sub(a, b) => zip2(out, row(a), row(b), |da, db| da - db),
                Op::Mul(a, b) => {
                    let (va, vb) = (values[a], values[b]);
                    zip2(out, row(a), row(b), |da, db| vb * da + va * db)
                }
                Op::Neg(a) => zip1(out, row(a), |da| -da),
                Op::Pow(a, k) => {
                    let scale = k as f64 * powi(values[a], k - 1);
                    zip1(out, row(a), |da| scale * da)
                }
                Op::Abs(a) => {
                    let s = signs[kink] as f64;
                    kink += 1;
                    zip1(out, row(a), |da| s * da)
                }
                Op::Min(a, b) => {
                    let s = signs[kink] as f64;
                    kink += 1;
                    zip2(out, row(a), row(b), |da, db| 0.5 * (da + db - s * (da - db)))
                }
                Op::Max(a, b) => {
                    let s = signs[kink] as f64;
                    kink += 1;
                    zip2(out, row(a), row(b), |da, db| 0.5 * (da + db + s * (da - db)))
                }
            }
        }
        t
    }

    fn argument_tangent(&self, t: &[f64], kink: usize, n: usize) -> Vec<f64> {
        let row = |i: usize| &t[i * n..(i + 1) * n];
        match self.ops[self.kinks[kink]] {
            Op::Abs(a) => row(a).to_vec(),
            Op::Min(a, b) | Op::Max(a, b) => row(a).iter().zip(row(b)).map(|(da, db)| da - db).collect(),
            _ => unreachable!("kink slot holds a kink op"),
        }
    }

    fn element(&self, t: &[f64], p: usize, n: usize, branch_id: String) -> GradElement {
        let last = &t[(self.ops.len() - 1) * n..];
        GradElement {
            u: last[..p].to_vec(),
            v: last[p..].to_vec(),
            branch_id,
        }
    }

    /// Signs for inactive kinks and the indices of active ones.
    fn classify(&self, values: &[f64], eps: f64) -> (Vec<i8>, Vec<usize>) {
        let args = self.kink_arguments(values);
        let mut signs = Vec::with_capacity(args.len());
        let mut active = Vec::new();
        for (k, a) in args.iter().enumerate() {
            if a.abs() <= eps {
                active.push(k);
                signs.push(1);
            } else {
                signs.push(if *a > 0.0 { 1 } else { -1 });
            }
        }
        (signs, active)
    }

    pub(crate) fn grad_select(&self, x: &[f64], y: &[f64], p: usize, tie: i8, eps: f64) -> GradElement {
        let n = p + y.len();
        let values = self.values(x, y);
        let (mut signs, active) = self.classify(&values, eps);
        for &k in &active {
            signs[k] = tie;
        }
        let t = self.tangents(&values, &signs, p, n);
        self.element(&t, p, n, branch_string(&signs, &active))
    }

    pub(crate) fn enumerate_branches(
        &self,
        x: &[f64],
        y: &[f64],
        p: usize,
        max_branches: usize,
        eps: f64,
    ) -> SubdiffSample {
        let n = p + y.len();
        let values = self.values(x, y);
        let (mut signs, active) = self.classify(&values, eps);
        let k = active.len();

        let t = self.tangents(&values, &signs, p, n);
        let mut elements = vec![self.element(&t, p, n, branch_string(&signs, &active))];
        if k == 0 {
            return SubdiffSample {
                elements,
                active_kinks: 0,
                incomplete: false,
            };
        }

        let total: u128 = if k >= 127 { u128::MAX } else { 1u128 << k };
        let examine_cap = (max_branches as u128).saturating_mul(64).max(1024);
        let mut pattern: u128 = 1;
        let mut incomplete = false;
        while pattern < total {
            if elements.len() >= max_branches || pattern >= examine_cap {
                incomplete = true;
                break;
            }
            for (idx, &kink) in active.iter().enumerate() {
                let bit = (pattern >> (k - 1 - idx)) & 1;
                signs[kink] = if bit == 1 { -1 } else { 1 };
            }
            pattern += 1;
            let t = self.tangents(&values, &signs, p, n);
            if !self.realizable(&t, &signs, &active, n) {
                continue;
            }
            let el = self.element(&t, p, n, branch_string(&signs, &active));
            if !elements.iter().any(|e| e.u == el.u && e.v == el.v) {
                elements.push(el);
            }
        }
        SubdiffSample {
            elements,
            active_kinks: k,
            incomplete,
        }
    }

    /// A sign pattern is kept when some direction `d` satisfies
    /// `sign_k * <grad arg_k, d> > 0` for every active kink with a nonzero
    /// argument gradient. By Gordan's alternative this holds iff the origin is
    /// outside the hull of the signed argument gradients. A negative sign on a
    /// kink with zero argument gradient duplicates the positive one and is skipped.
    fn realizable(&self, t: &[f64], signs: &[i8], active: &[usize], n: usize) -> bool {
        let mut normals = Vec::new();
        for &kink in active {
            let g = self.argument_tangent(t, kink, n);
            if g.iter().all(|c| *c == 0.0) {
                if signs[kink] < 0 {
                    return false;
                }
                continue;
            }
            let s = signs[kink] as f64;
            normals.push(g.into_iter().map(|c| s * c).collect::<Vec<_>>());
        }
        if normals.is_empty() {
            return true;
        }
        let scale = normals
            .iter()
            .map(|g| g.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let atoms = hull::AtomSet::new(normals).expect("normals share the tangent dimension");
        let cert = hull::min_norm_point(&atoms, 1e-12 * scale);
        cert.norm > 1e-9 * scale
    }
}

fn branch_string(signs: &[i8], active: &[usize]) -> String {
    active
        .iter()
        .map(|&k| match signs[k] {
            1 => '+',
            -1 => '-',
            _ => '0',
        })
        .collect()
}

fn powi(base: f64, n: u32) -> f64 {
    match i32::try_from(n) {
        Ok(k) => base.powi(k),
        Err(_) => base.powf(n as f64),
    }
}

fn zip1(out: &mut [f64], a: &[f64], f: impl Fn(f64) -> f64) {
    for (o, &da) in out.iter_mut().zip(a) {
        *o = f(da);
    }
}

fn zip2(out: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((o, &da), &db) in out.iter_mut().zip(a).zip(b) {
        *o = f(da, db);
    }
}
