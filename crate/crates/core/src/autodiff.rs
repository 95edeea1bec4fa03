//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive as a node whose operands precede it, so
//! the node list is already a topological order and the backward sweep is a
//! single reverse pass. Scalars are 1x1 matrices. Leaves created with
//! [`Tape::leaf`] receive gradients; [`Tape::constant`] nodes and everything
//! computed only from constants do not.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Tanh(usize),
    Sum(usize),
    Scale(usize, f64),
    /// Matrix times a 1x1 node.
    ScaleBy(usize, usize),
    /// Square matrix plus a 1x1 node times the identity.
    AddDiag(usize, usize),
    /// Each column `k` multiplied by entry `k` of a 1xc row.
    ColScale(usize, usize),
    ConcatCols(usize, usize),
    /// Pairwise squared Euclidean distances between the rows of two matrices.
    SqDist(usize, usize),
    /// Diagonal of a square matrix as a column.
    Diag(usize),
    PosPart(usize),
    /// Elementwise map whose pointwise derivative was stored at forward time.
    Elementwise(usize, Matrix),
    Cholesky(usize),
    SolveLower(usize, usize),
    /// Largest singular value, with the converged singular vectors.
    SpectralNorm(usize, Vec<f64>, Vec<f64>),
}

impl Op {
    fn operands(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | ScaleBy(a, b) | AddDiag(a, b)
            | ColScale(a, b) | ConcatCols(a, b) | SqDist(a, b) | SolveLower(a, b) => vec![a, b],
            Transpose(a) | Neg(a) | Exp(a) | Log(a) | Sqrt(a) | Tanh(a) | Sum(a) | Scale(a, _)
            | Diag(a) | PosPart(a) | Elementwise(a, _) | Cholesky(a) | SpectralNorm(a, ..) => {
                vec![a]
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Record of primitive operations for one objective evaluation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn require_scalar(op: &'static str, m: &Matrix) -> Result<f64> {
    m.to_scalar()
        .ok_or_else(|| Error::shape(op, format!("expected a 1x1 operand, got {:?}", m.shape())))
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.index].value
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.index].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, leaf_tracked: bool) -> Var {
        let tracked = match op {
            Op::Leaf => leaf_tracked,
            Op::Constant => false,
            ref op => op.operands().iter().any(|&i| self.nodes[i].tracked),
        };
        self.nodes.push(Node { value, op, tracked });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Contract("variable belongs to a different tape".into()));
        }
        Ok(v.index)
    }

    fn check2(&self, a: Var, b: Var) -> Result<(usize, usize)> {
        Ok((self.check(a)?, self.check(b)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.check2(a, b)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        same_shape("add", va, vb)?;
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(out, Op::Add(ia, ib), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.check2(a, b)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        same_shape("sub", va, vb)?;
        let out = va.zip_map(vb, |x, y| x - y);
        Ok(self.push(out, Op::Sub(ia, ib), false))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.check2(a, b)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        same_shape("mul", va, vb)?;
        let out = va.zip_map(vb, |x, y| x * y);
        Ok(self.push(out, Op::Mul(ia, ib), false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.check2(a, b)?;
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::MatMul(ia, ib), false))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.transpose();
        Ok(self.push(out, Op::Transpose(ia), false))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| -x);
        Ok(self.push(out, Op::Neg(ia), false))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(f64::exp);
        Ok(self.push(out, Op::Exp(ia), false))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if let Some(bad) = va.as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain("log", format!("non-positive entry {bad}")));
        }
        let out = va.map(f64::ln);
        Ok(self.push(out, Op::Log(ia), false))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if let Some(bad) = va.as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain("sqrt", format!("non-positive entry {bad}")));
        }
        let out = va.map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(ia), false))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(f64::tanh);
        Ok(self.push(out, Op::Tanh(ia), false))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = Matrix::scalar(self.nodes[ia].value.as_slice().iter().sum());
        Ok(self.push(out, Op::Sum(ia), false))
    }

    /// Multiplication by a fixed real number.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| s * x);
        Ok(self.push(out, Op::Scale(ia, s), false))
    }

    /// Multiplication of a matrix by a scalar node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = self.check2(a, s)?;
        let sv = require_scalar("scale_by", &self.nodes[is].value)?;
        let out = self.nodes[ia].value.map(|x| sv * x);
        Ok(self.push(out, Op::ScaleBy(ia, is), false))
    }

    /// `a + s·I` for square `a` and scalar node `s`.
    pub fn add_diag(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = self.check2(a, s)?;
        let sv = require_scalar("add_diag", &self.nodes[is].value)?;
        let va = &self.nodes[ia].value;
        if !va.is_square() {
            return Err(Error::shape("add_diag", format!("{:?} is not square", va.shape())));
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            out[(i, i)] += sv;
        }
        Ok(self.push(out, Op::AddDiag(ia, is), false))
    }

    /// Scales column `k` of `a` by entry `k` of the row vector `s`.
    pub fn col_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = self.check2(a, s)?;
        let (va, vs) = (&self.nodes[ia].value, &self.nodes[is].value);
        if vs.rows() != 1 || vs.cols() != va.cols() {
            return Err(Error::shape(
                "col_scale",
                format!("{:?} scaled by {:?}", va.shape(), vs.shape()),
            ));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (x, &k) in out.row_mut(r).iter_mut().zip(vs.as_slice()) {
                *x *= k;
            }
        }
        Ok(self.push(out, Op::ColScale(ia, is), false))
    }

    /// `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.check2(a, b)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.rows() != vb.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} beside {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = Matrix::zeros(va.rows(), va.cols() + vb.cols());
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            row[..va.cols()].copy_from_slice(va.row(r));
            row[va.cols()..].copy_from_slice(vb.row(r));
        }
        Ok(self.push(out, Op::ConcatCols(ia, ib), false))
    }

    /// `D[r, c] = ‖a_r − b_c‖²` over the rows of `a` and `b`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.check2(a, b)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.cols() != vb.cols() {
            return Err(Error::shape(
                "sq_dist",
                format!("{:?} against {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = Matrix::from_fn(va.rows(), vb.rows(), |r, c| {
            va.row(r)
                .iter()
                .zip(vb.row(c))
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        });
        Ok(self.push(out, Op::SqDist(ia, ib), false))
    }

    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if !va.is_square() {
            return Err(Error::shape("diag", format!("{:?} is not square", va.shape())));
        }
        let out = Matrix::column(&va.diagonal());
        Ok(self.push(out, Op::Diag(ia), false))
    }

    /// `max(0, x)` elementwise.
    pub fn pos_part(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x.max(0.0));
        Ok(self.push(out, Op::PosPart(ia), false))
    }

    /// Applies `f` elementwise, where `f(x)` returns the value and its
    /// derivative at `x`.
    pub fn elementwise(&mut self, a: Var, f: impl Fn(f64) -> (f64, f64)) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let mut out = Matrix::zeros(va.rows(), va.cols());
        let mut deriv = Matrix::zeros(va.rows(), va.cols());
        for ((o, d), &x) in out
            .as_mut_slice()
            .iter_mut()
            .zip(deriv.as_mut_slice())
            .zip(va.as_slice())
        {
            (*o, *d) = f(x);
        }
        Ok(self.push(out, Op::Elementwise(ia, deriv), false))
    }

    /// Lower Cholesky factor of a symmetric positive definite node.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = matrix::cholesky(&self.nodes[ia].value)?;
        Ok(self.push(out, Op::Cholesky(ia), false))
    }

    /// Solves `L·Z = B` for lower-triangular `L`.
    pub fn triangular_solve(&mut self, l: Var, b: Var) -> Result<Var> {
        let (il, ib) = self.check2(l, b)?;
        let out = matrix::solve_lower(&self.nodes[il].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::SolveLower(il, ib), false))
    }

    /// Largest singular value of a matrix node.
    pub fn spectral_norm(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let est = matrix::power_iteration(&self.nodes[ia].value, SPECTRAL_GRAD_ITERS);
        Ok(self.push(
            Matrix::scalar(est.sigma),
            Op::SpectralNorm(ia, est.left, est.right),
            false,
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let io = self.check(output)?;
        if self.nodes[io].value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {:?}",
                self.nodes[io].value.shape()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[io] = Some(Matrix::scalar(1.0));

        for i in (0..=io).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.tracked {
                self.propagate(i, &g, &mut adj)?;
            }
            adj[i] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let val = |k: usize| &self.nodes[k].value;
        let y = &self.nodes[i].value;
        let mut acc = |k: usize, m: Matrix| {
            if !self.nodes[k].tracked {
                return;
            }
            match &mut adj[k] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => *slot = Some(m),
            }
        };
        match self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(a, g.zip_map(val(b), |x, y| x * y));
                acc(b, g.zip_map(val(a), |x, y| x * y));
            }
            Op::MatMul(a, b) => {
                acc(a, g.matmul_transposed(val(b))?);
                acc(b, val(a).transpose().matmul(g)?);
            }
            Op::Transpose(a) => acc(a, g.transpose()),
            Op::Neg(a) => acc(a, g.map(|x| -x)),
            Op::Exp(a) => acc(a, g.zip_map(y, |x, e| x * e)),
            Op::Log(a) => acc(a, g.zip_map(val(a), |x, v| x / v)),
            Op::Sqrt(a) => acc(a, g.zip_map(y, |x, s| x / (2.0 * s))),
            Op::Tanh(a) => acc(a, g.zip_map(y, |x, t| x * (1.0 - t * t))),
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                acc(a, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Scale(a, s) => acc(a, g.map(|x| s * x)),
            Op::ScaleBy(a, s) => {
                let sv = val(s).as_slice()[0];
                acc(a, g.map(|x| sv * x));
                acc(s, Matrix::scalar(matrix::dot(g.as_slice(), val(a).as_slice())));
            }
            Op::AddDiag(a, s) => {
                acc(a, g.clone());
                acc(s, Matrix::scalar(g.diagonal().iter().sum()));
            }
            Op::ColScale(a, s) => {
                let (va, vs) = (val(a), val(s));
                let mut ga = g.clone();
                let mut gs = Matrix::zeros(1, vs.cols());
                for r in 0..va.rows() {
                    for (k, x) in ga.row_mut(r).iter_mut().enumerate() {
                        gs.as_mut_slice()[k] += *x * va[(r, k)];
                        *x *= vs.as_slice()[k];
                    }
                }
                acc(a, ga);
                acc(s, gs);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let cb = val(b).cols();
                acc(a, Matrix::from_fn(g.rows(), ca, |r, c| g[(r, c)]));
                acc(b, Matrix::from_fn(g.rows(), cb, |r, c| g[(r, ca + c)]));
            }
            Op::SqDist(a, b) => {
                let (va, vb) = (val(a), val(b));
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                for r in 0..va.rows() {
                    let ar = va.row(r);
                    for c in 0..vb.rows() {
                        let w = 2.0 * g[(r, c)];
                        if w == 0.0 {
                            continue;
                        }
                        let bc = vb.row(c);
                        for k in 0..va.cols() {
                            let d = w * (ar[k] - bc[k]);
                            ga[(r, k)] += d;
                            gb[(c, k)] -= d;
                        }
                    }
                }
                acc(a, ga);
                acc(b, gb);
            }
            Op::Diag(a) => {
                let n = val(a).rows();
                let mut ga = Matrix::zeros(n, n);
                for k in 0..n {
                    ga[(k, k)] = g.as_slice()[k];
                }
                acc(a, ga);
            }
            Op::PosPart(a) => acc(a, g.zip_map(val(a), |x, v| if v > 0.0 { x } else { 0.0 })),
            Op::Elementwise(a, ref deriv) => acc(a, g.zip_map(deriv, |x, d| x * d)),
            Op::Cholesky(a) => acc(a, cholesky_adjoint(y, g)?),
            Op::SolveLower(l, b) => {
                // Z = L⁻¹B:  B̄ = L⁻ᵀ Z̄,  L̄ = −tril(B̄ Zᵀ)
                let lv = val(l);
                let gb = matrix::solve_lower_transposed(lv, g)?;
                let mut gl = gb.matmul_transposed(y)?;
                for r in 0..gl.rows() {
                    for c in 0..gl.cols() {
                        gl[(r, c)] = if c <= r { -gl[(r, c)] } else { 0.0 };
                    }
                }
                acc(l, gl);
                acc(b, gb);
            }
            Op::SpectralNorm(a, ref u, ref v) => {
                let s = g.as_slice()[0];
                let (r, c) = val(a).shape();
                acc(a, Matrix::from_fn(r, c, |i, j| s * u[i] * v[j]));
            }
        }
        Ok(())
    }
}

/// Iteration cap for spectral norms recorded on a tape; gradients need the
/// singular vectors converged well past what a norm estimate needs.
const SPECTRAL_GRAD_ITERS: usize = 2000;

/// Reverse rule for `L = chol(A)`:
/// `Ā = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹)` where Φ keeps the lower triangle and halves
/// the diagonal.
fn cholesky_adjoint(l: &Matrix, l_bar: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    let mut lower_bar = l_bar.clone();
    for r in 0..n {
        for c in r + 1..n {
            lower_bar[(r, c)] = 0.0;
        }
    }
    let mut p = l.transpose().matmul(&lower_bar)?;
    for r in 0..n {
        for c in 0..n {
            if c > r {
                p[(r, c)] = 0.0;
            } else if c == r {
                p[(r, c)] *= 0.5;
            }
        }
    }
    // X = L⁻ᵀ P, then S = X L⁻¹ = (L⁻ᵀ Xᵀ)ᵀ
    let x = matrix::solve_lower_transposed(l, &p)?;
    let st = matrix::solve_lower_transposed(l, &x.transpose())?;
    Ok(Matrix::from_fn(n, n, |r, c| 0.5 * (st[(r, c)] + st[(c, r)])))
}

/// Adjoints of every node after a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; exactly zero when `v` does not influence
    /// the output or is a constant.
    pub fn wrt(&self, v: Var) -> Matrix {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        match &self.adjoints[v.index] {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[v.index];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn scalar_wrt(&self, v: Var) -> f64 {
        self.wrt(v).as_slice()[0]
    }
}
