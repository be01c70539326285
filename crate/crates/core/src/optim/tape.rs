//! Reverse-mode automatic differentiation on a flat tape, plus the scalar
//! abstraction that lets the model objectives run either on plain `f64`
//! (evaluation, finite-difference oracles) or on tape variables (training).
//!
//! Each tape node stores at most two parent indices together with the local
//! partial derivatives computed during the forward pass, so the reverse sweep
//! is a single backwards loop of fused multiply-adds. The tape is rebuilt for
//! every objective evaluation; [`Tape::reset`] keeps the allocation.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Node {
    d1: f64,
    d2: f64,
    p1: u32,
    p2: u32,
}

/// Flat gradient tape. One objective evaluation per `reset`.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(cap)),
        }
    }

    /// Clears all nodes but keeps the allocation for the next evaluation.
    pub fn reset(&mut self) {
        self.nodes.borrow_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < u32::MAX as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// Introduces an independent variable.
    pub fn leaf(&self, val: f64) -> Var<'_> {
        let idx = self.push(Node {
            d1: 0.0,
            d2: 0.0,
            p1: 0,
            p2: 0,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    fn unary<'t>(&'t self, p: Var<'t>, val: f64, d: f64) -> Var<'t> {
        let idx = self.push(Node {
            d1: d,
            d2: 0.0,
            p1: p.idx,
            p2: 0,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    fn binary<'t>(&'t self, a: Var<'t>, b: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
        let idx = self.push(Node {
            d1: da,
            d2: db,
            p1: a.idx,
            p2: b.idx,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// Reverse sweep from `output`; returns the adjoint of every node.
    ///
    /// Leaves are created first, so the caller reads the gradient of the
    /// i-th leaf at index i.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let n = output.idx as usize + 1;
        let mut adj = vec![0.0; n];
        adj[output.idx as usize] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a != 0.0 {
                let node = nodes[i];
                adj[node.p1 as usize] += node.d1 * a;
                adj[node.p2 as usize] += node.d2 * a;
            }
        }
        adj
    }
}

/// Value tracked on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape
            .binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.val;
        self.tape
            .binary(self, rhs, self.val * inv, inv, -self.val * inv * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(self, -self.val, -1.0)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar type the model objectives are written against: either `f64` or a
/// tape variable. Control flow (clamps, jitter escalation) reads `val()` so
/// both instantiations follow the same branch at a given point.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn val(self) -> f64;
    /// A constant in the same computation context as `self`.
    fn lift(self, c: f64) -> Self;
    fn add_const(self, c: f64) -> Self;
    fn mul_const(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn softplus(self) -> Self;
    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn val(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn add_const(self, c: f64) -> Self {
        self + c
    }
    fn mul_const(self, c: f64) -> Self {
        self * c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
}

impl<'t> Real for Var<'t> {
    fn val(self) -> f64 {
        self.val
    }
    fn lift(self, c: f64) -> Self {
        // Constant node: no parents contribute gradient.
        self.tape.unary(self, c, 0.0)
    }
    fn add_const(self, c: f64) -> Self {
        self.tape.unary(self, self.val + c, 1.0)
    }
    fn mul_const(self, c: f64) -> Self {
        self.tape.unary(self, self.val * c, c)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.tape.unary(self, e, e)
    }
    fn ln(self) -> Self {
        self.tape.unary(self, self.val.ln(), 1.0 / self.val)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.tape.unary(self, s, 0.5 / s)
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.tape.unary(self, t, 1.0 - t * t)
    }
    fn softplus(self) -> Self {
        self.tape
            .unary(self, softplus_f64(self.val), sigmoid_f64(self.val))
    }
}

/// Dense row-major matrix over a [`Real`] scalar. Only the small dense
/// operations the variational objectives need.
#[derive(Clone, Debug)]
pub struct Mat<R> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<R>,
}

impl<R: Real> Mat<R> {
    pub fn from_rows(rows: Vec<Vec<R>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn filled_like(proto: R, rows: usize, cols: usize, c: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![proto.lift(c); rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> R {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let mut acc = a[0] * b[0];
    for k in 1..a.len() {
        acc = acc + a[k] * b[k];
    }
    acc
}

/// Cholesky factorization with the same jitter escalation ladder as
/// `kernel::chol_psd`: jitter 0 first, then `jitter_start * 10^k` for
/// k = 0..=8. Branching is on values only, so the f64 and tape
/// instantiations factor identically.
pub fn cholesky_jitter<R: Real>(a: &Mat<R>, jitter_start: f64, role: &str) -> Result<(Mat<R>, f64)> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut ladder = vec![0.0];
    for k in 0..=8 {
        ladder.push(jitter_start * 10f64.powi(k));
    }
    'ladder: for &jitter in &ladder {
        let mut l = Mat::filled_like(a.data[0], n, n, 0.0);
        for i in 0..n {
            for j in 0..=i {
                let mut s = a.at(i, j);
                if i == j && jitter > 0.0 {
                    s = s.add_const(jitter);
                }
                for k in 0..j {
                    s = s - l.at(i, k) * l.at(j, k);
                }
                if i == j {
                    if s.val() <= 0.0 || !s.val().is_finite() {
                        continue 'ladder;
                    }
                    l.set(i, j, s.sqrt());
                } else {
                    l.set(i, j, s / l.at(j, j));
                }
            }
        }
        return Ok((l, jitter));
    }
    Err(Error::SingularMatrix {
        role: role.to_string(),
        max_jitter: jitter_start * 1e8,
    })
}

/// Solves L x = b for lower-triangular L.
pub fn solve_lower<R: Real>(l: &Mat<R>, b: &[R]) -> Vec<R> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s = s - l.at(i, k) * x[k];
        }
        x[i] = s / l.at(i, i);
    }
    x
}

/// Solves Lᵀ x = b for lower-triangular L.
pub fn solve_lower_transpose<R: Real>(l: &Mat<R>, b: &[R]) -> Vec<R> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s = s - l.at(k, i) * x[k];
        }
        x[i] = s / l.at(i, i);
    }
    x
}
