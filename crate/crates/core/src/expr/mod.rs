//! Piecewise-smooth objectives `F(x, y)`.
//!
//! Expressions are built from constants, the variables `x0..x{p-1}` and
//! `y0..y{r-1}`, `+ - *`, unary minus, integer powers, `abs`, `min` and `max`.
//! Division and fractional powers are not part of the language, so every
//! expressible `F` is locally Lipschitz and semialgebraic.
//!
//! Every nonsmooth primitive is treated as an absolute value of a *kink
//! argument*: `abs(a)` has argument `a`, and `min(a, b) = (a + b - |a - b|) / 2`,
//! `max(a, b) = (a + b + |a - b|) / 2` both have argument `a - b`. A kink is
//! active when its argument is within `kink_eps` of zero; fixing a sign for each
//! active kink selects one smooth piece, whose gradient is a [`GradElement`].

mod parse;
mod tape;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse;
use tape::Tape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("variable {block}{index} out of range (dimension {dim}) at line {line}, column {col}")]
    IndexOutOfRange {
        block: char,
        index: usize,
        dim: usize,
        line: usize,
        col: usize,
    },
    #[error("exponent `{text}` at line {line}, column {col} is not a positive integer")]
    NonIntegerExponent {
        text: String,
        line: usize,
        col: usize,
    },
    #[error("dimension mismatch: program expects (x: {expected_x}, y: {expected_y}), got (x: {got_x}, y: {got_y})")]
    DimensionMismatch {
        expected_x: usize,
        expected_y: usize,
        got_x: usize,
        got_y: usize,
    },
    #[error("block dimensions must be positive (got x: {dim_x}, y: {dim_y})")]
    EmptyBlock { dim_x: usize, dim_y: usize },
}

/// Expression tree node.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    X(usize),
    Y(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, u32),
    Abs(Box<Node>),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
}

impl Node {
    fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a Node)) {
        visit(self);
        match self {
            Node::Const(_) | Node::X(_) | Node::Y(_) => {}
            Node::Neg(a) | Node::Pow(a, _) | Node::Abs(a) => a.walk(visit),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Min(a, b) | Node::Max(a, b) => {
                a.walk(visit);
                b.walk(visit);
            }
        }
    }
}

/// Prints in the DSL. Binary operators are fully parenthesized so that
/// reparsing yields the identical tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::X(i) => write!(f, "x{i}"),
            Node::Y(j) => write!(f, "y{j}"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Neg(a) => write!(f, "-({a})"),
            Node::Pow(a, n) => write!(f, "pow({a}, {n})"),
            Node::Abs(a) => write!(f, "abs({a})"),
            Node::Min(a, b) => write!(f, "min({a}, {b})"),
            Node::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

/// How a gradient is selected at an active kink.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Negative side of the kink argument (sign -1).
    Left,
    /// Positive side of the kink argument (sign +1).
    Right,
    /// Average of both sides (sign 0).
    #[default]
    Zero,
}

impl TiePolicy {
    fn sign(self) -> i8 {
        match self {
            TiePolicy::Left => -1,
            TiePolicy::Right => 1,
            TiePolicy::Zero => 0,
        }
    }
}

/// Gradient of one smooth selection of `F` at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradElement {
    /// Partial gradient with respect to `x`.
    pub u: Vec<f64>,
    /// Partial gradient with respect to `y`.
    pub v: Vec<f64>,
    /// One character per active kink in tape order: `+`, `-` or `0`.
    pub branch_id: String,
}

/// Result of enumerating branch gradients at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdiffSample {
    pub elements: Vec<GradElement>,
    /// Number of active kinks at the point.
    pub active_kinks: usize,
    /// Set when not every sign pattern could be examined within `max_branches`.
    pub incomplete: bool,
}

/// A validated objective over `dim_x` + `dim_y` variables.
#[derive(Clone, Debug)]
pub struct ExprProgram {
    root: Node,
    dim_x: usize,
    dim_y: usize,
    tape: Tape,
}

impl PartialEq for ExprProgram {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.dim_x == other.dim_x && self.dim_y == other.dim_y
    }
}

impl ExprProgram {
    /// Builds a program from a tree, checking variable indices and exponents.
    pub fn new(root: Node, dim_x: usize, dim_y: usize) -> Result<Self, ExprError> {
        if dim_x == 0 || dim_y == 0 {
            return Err(ExprError::EmptyBlock { dim_x, dim_y });
        }
        let mut bad = None;
        root.walk(&mut |n| {
            if bad.is_some() {
                return;
            }
            match *n {
                Node::X(i) if i >= dim_x => bad = Some(('x', i, dim_x)),
                Node::Y(j) if j >= dim_y => bad = Some(('y', j, dim_y)),
                _ => {}
            }
        });
        if let Some((block, index, dim)) = bad {
            return Err(ExprError::IndexOutOfRange {
                block,
                index,
                dim,
                line: 0,
                col: 0,
            });
        }
        let mut zero_pow = false;
        root.walk(&mut |n| {
            if let Node::Pow(_, 0) = n {
                zero_pow = true;
            }
        });
        if zero_pow {
            return Err(ExprError::NonIntegerExponent {
                text: "0".into(),
                line: 0,
                col: 0,
            });
        }
        let tape = Tape::compile(&root);
        Ok(ExprProgram {
            root,
            dim_x,
            dim_y,
            tape,
        })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    /// True if any `y` variable appears.
    pub fn uses_y(&self) -> bool {
        let mut found = false;
        self.root.walk(&mut |n| found |= matches!(n, Node::Y(_)));
        found
    }

    fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.dim_x || y.len() != self.dim_y {
            return Err(ExprError::DimensionMismatch {
                expected_x: self.dim_x,
                expected_y: self.dim_y,
                got_x: x.len(),
                got_y: y.len(),
            });
        }
        Ok(())
    }

    /// `F(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, ExprError> {
        self.check_dims(x, y)?;
        Ok(self.tape.eval(x, y))
    }

    /// Kink arguments in tape order, for callers that need to stay off kinks.
    pub fn kink_arguments(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.check_dims(x, y)?;
        let values = self.tape.values(x, y);
        Ok(self.tape.kink_arguments(&values))
    }

    /// One element of a conservative gradient: the AD gradient with the given
    /// sign convention at active kinks (exact kinks when `kink_eps = 0`).
    pub fn grad_select(
        &self,
        x: &[f64],
        y: &[f64],
        tie: TiePolicy,
        kink_eps: f64,
    ) -> Result<GradElement, ExprError> {
        self.check_dims(x, y)?;
        Ok(self.tape.grad_select(x, y, self.dim_x, tie.sign(), kink_eps))
    }

    /// Gradients of every realizable smooth selection at `(x, y)`.
    ///
    /// The first element is always the `Right` tie-policy gradient. The rest
    /// follow sign patterns in binary order (`+` before `-`, first kink most
    /// significant), keeping only patterns with a direction that puts every
    /// active kink argument strictly on its chosen side, and dropping exact
    /// duplicates.
    pub fn subdiff_sample(
        &self,
        x: &[f64],
        y: &[f64],
        max_branches: usize,
        kink_eps: f64,
    ) -> Result<SubdiffSample, ExprError> {
        self.check_dims(x, y)?;
        Ok(self
            .tape
            .enumerate_branches(x, y, self.dim_x, max_branches.max(1), kink_eps))
    }

    /// Largest relative gap `|g - fd| / max(1, |g|)` between the `Zero`-policy
    /// gradient and central differences with step `h`, over all coordinates.
    pub fn fd_check(&self, x: &[f64], y: &[f64], h: f64) -> Result<f64, ExprError> {
        let g = self.grad_select(x, y, TiePolicy::Zero, 0.0)?;
        let analytic: Vec<f64> = g.u.iter().chain(g.v.iter()).copied().collect();
        let mut z: Vec<f64> = x.iter().chain(y.iter()).copied().collect();
        let p = self.dim_x;
        let mut worst = 0.0f64;
        for (i, &gi) in analytic.iter().enumerate() {
            let orig = z[i];
            z[i] = orig + h;
            let fp = self.tape.eval(&z[..p], &z[p..]);
            z[i] = orig - h;
            let fm = self.tape.eval(&z[..p], &z[p..]);
            z[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((gi - fd).abs() / gi.abs().max(1.0));
        }
        Ok(worst)
    }

    /// True when no kink argument changes sign (or touches zero) on the
    /// central-difference stencil of radius `h` around `(x, y)`.
    pub fn is_smooth_around(&self, x: &[f64], y: &[f64], h: f64) -> Result<bool, ExprError> {
        self.check_dims(x, y)?;
        let mut z: Vec<f64> = x.iter().chain(y.iter()).copied().collect();
        let p = self.dim_x;
        let base = self.tape.kink_arguments(&self.tape.values(&z[..p], &z[p..]));
        if base.contains(&0.0) {
            return Ok(false);
        }
        for i in 0..z.len() {
            let orig = z[i];
            for step in [h, -h] {
                z[i] = orig + step;
                let args = self.tape.kink_arguments(&self.tape.values(&z[..p], &z[p..]));
                if args.iter().zip(&base).any(|(a, b)| a.signum() != b.signum() || *a == 0.0) {
                    return Ok(false);
                }
            }
            z[i] = orig;
        }
        Ok(true)
    }
}

impl fmt::Display for ExprProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
