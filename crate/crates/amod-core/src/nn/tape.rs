//! Reverse-mode automatic differentiation over dense matrices.
//!
//! The tape records operations in evaluation order; `backward` walks the
//! record once in reverse. Gradients accumulate across backward calls until
//! `reset_gradients`.

use crate::error::{AmodError, Result};
use crate::mat::{Mat, SparseMat};
use crate::nn::special::{digamma, lgamma, trigamma};

pub type TensorId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    /// (N x F) + broadcast of a (1 x F) row.
    AddRowBroadcast(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    Relu(TensorId),
    Softplus(TensorId),
    Log(TensorId),
    Mul(TensorId, TensorId),
    /// Sparse neighbor aggregation: S * X with S held constant.
    SpMm(usize, TensorId),
    /// Column-wise sum over rows: (N x F) -> (1 x F).
    SumRows(TensorId),
    SumAll(TensorId),
    DirichletLogProb {
        alpha: TensorId,
        action: Vec<f64>,
    },
    DirichletEntropy(TensorId),
}

struct Node {
    value: Mat,
    grad: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sparse: Vec<SparseMat>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: TensorId) -> &Mat {
        &self.nodes[id].grad
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.shape(), (1, 1));
        self.nodes[id].value[(0, 0)]
    }

    /// Register a constant sparse matrix for `spmm`.
    pub fn sparse(&mut self, s: SparseMat) -> usize {
        self.sparse.push(s);
        self.sparse.len() - 1
    }

    pub fn leaf(&mut self, value: Mat) -> TensorId {
        self.push(value, Op::Leaf).expect("leaf values are not checked")
    }

    fn push(&mut self, value: Mat, op: Op) -> Result<TensorId> {
        if value.has_non_finite() {
            let name = match op {
                Op::Leaf => "leaf",
                Op::MatMul(..) => "matmul",
                Op::Add(..) => "add",
                Op::AddRowBroadcast(..) => "add_row_broadcast",
                Op::Scale(..) => "scale",
                Op::AddConst(..) => "add_const",
                Op::Relu(..) => "relu",
                Op::Softplus(..) => "softplus",
                Op::Log(..) => "log",
                Op::Mul(..) => "mul",
                Op::SpMm(..) => "spmm",
                Op::SumRows(..) => "sum_rows",
                Op::SumAll(..) => "sum_all",
                Op::DirichletLogProb { .. } => "dirichlet_log_prob",
                Op::DirichletEntropy(..) => "dirichlet_entropy",
            };
            return Err(AmodError::Numeric {
                op: name,
                detail: "non-finite value in forward pass".into(),
            });
        }
        let grad = Mat::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        Ok(self.nodes.len() - 1)
    }

    fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id].value.shape()
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(AmodError::InvalidArgument(format!(
                "matmul shape mismatch: {ar}x{ac} * {br}x{bc}"
            )));
        }
        let value = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(AmodError::InvalidArgument("add shape mismatch".into()));
        }
        let mut value = self.nodes[a].value.clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.nodes[b].value.data()) {
            *x += y;
        }
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (_, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(AmodError::InvalidArgument(
                "add_row_broadcast expects a 1 x cols row".into(),
            ));
        }
        let b = self.nodes[row].value.clone();
        let mut value = self.nodes[a].value.clone();
        let cols = value.cols();
        for i in 0..value.rows() {
            for j in 0..cols {
                value[(i, j)] += b[(0, j)];
            }
        }
        self.push(value, Op::AddRowBroadcast(a, row))
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> Result<TensorId> {
        let value = self.nodes[a].value.map(|x| k * x);
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let value = self.nodes[a].value.map(|x| x + c);
        self.push(value, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.nodes[a].value.map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.nodes[a].value.map(softplus_scalar);
        self.push(value, Op::Softplus(a))
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.nodes[a].value.map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(AmodError::InvalidArgument("mul shape mismatch".into()));
        }
        let mut value = self.nodes[a].value.clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.nodes[b].value.data()) {
            *x *= y;
        }
        self.push(value, Op::Mul(a, b))
    }

    /// Neighbor aggregation through a registered sparse matrix.
    pub fn spmm(&mut self, s: usize, x: TensorId) -> Result<TensorId> {
        if self.sparse[s].n != self.shape(x).0 {
            return Err(AmodError::InvalidArgument("spmm shape mismatch".into()));
        }
        let value = self.sparse[s].matmul_dense(&self.nodes[x].value);
        self.push(value, Op::SpMm(s, x))
    }

    /// Global sum pool: (N x F) -> (1 x F).
    pub fn global_sum_pool(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, f) = self.shape(a);
        let mut value = Mat::zeros(1, f);
        for i in 0..n {
            for j in 0..f {
                value[(0, j)] += self.nodes[a].value[(i, j)];
            }
        }
        self.push(value, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let total: f64 = self.nodes[a].value.data().iter().sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::SumAll(a))
    }

    /// Differentiable Dirichlet log-density at a fixed simplex point.
    /// `alpha` must be a positive column or row vector; the action is
    /// clamped into the open simplex before evaluation.
    pub fn dirichlet_log_prob(&mut self, alpha: TensorId, action: &[f64]) -> Result<TensorId> {
        let a_vals = self.nodes[alpha].value.data().to_vec();
        if a_vals.len() != action.len() {
            return Err(AmodError::InvalidArgument(
                "alpha and action length mismatch".into(),
            ));
        }
        if a_vals.iter().any(|&x| x <= 0.0) {
            return Err(AmodError::Domain("alpha must be strictly positive".into()));
        }
        let action = clamp_to_open_simplex(action);
        let alpha0: f64 = a_vals.iter().sum();
        let mut lp = lgamma(alpha0)?;
        for (&ai, &xi) in a_vals.iter().zip(&action) {
            lp += (ai - 1.0) * xi.ln() - lgamma(ai)?;
        }
        self.push(
            Mat::from_vec(1, 1, vec![lp]),
            Op::DirichletLogProb { alpha, action },
        )
    }

    /// Differentiable entropy of Dir(alpha).
    pub fn dirichlet_entropy(&mut self, alpha: TensorId) -> Result<TensorId> {
        let a_vals = self.nodes[alpha].value.data().to_vec();
        if a_vals.iter().any(|&x| x <= 0.0) {
            return Err(AmodError::Domain("alpha must be strictly positive".into()));
        }
        let k = a_vals.len() as f64;
        let alpha0: f64 = a_vals.iter().sum();
        let mut h = -lgamma(alpha0)? + (alpha0 - k) * digamma(alpha0)?;
        for &ai in &a_vals {
            h += lgamma(ai)? - (ai - 1.0) * digamma(ai)?;
        }
        self.push(Mat::from_vec(1, 1, vec![h]), Op::DirichletEntropy(alpha))
    }

    pub fn reset_gradients(&mut self) {
        for node in &mut self.nodes {
            for g in node.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Accumulate gradients of a scalar output into every node's grad slot.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(AmodError::InvalidArgument(
                "backward root must be a scalar".into(),
            ));
        }
        self.nodes[root].grad[(0, 0)] += 1.0;
        for id in (0..=root).rev() {
            let op = self.nodes[id].op.clone();
            let grad = self.nodes[id].grad.clone();
            if grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = grad.matmul(&self.nodes[b].value.transpose());
                    let gb = self.nodes[a].value.transpose().matmul(&grad);
                    accumulate(&mut self.nodes[a].grad, &ga);
                    accumulate(&mut self.nodes[b].grad, &gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut self.nodes[a].grad, &grad);
                    accumulate(&mut self.nodes[b].grad, &grad);
                }
                Op::AddRowBroadcast(a, row) => {
                    accumulate(&mut self.nodes[a].grad, &grad);
                    let cols = grad.cols();
                    for i in 0..grad.rows() {
                        for j in 0..cols {
                            self.nodes[row].grad[(0, j)] += grad[(i, j)];
                        }
                    }
                }
                Op::Scale(a, k) => {
                    let ga = grad.map(|g| k * g);
                    accumulate(&mut self.nodes[a].grad, &ga);
                }
                Op::AddConst(a) => {
                    accumulate(&mut self.nodes[a].grad, &grad);
                }
                Op::Relu(a) => {
                    let input = self.nodes[a].value.clone();
                    for (idx, g) in grad.data().iter().enumerate() {
                        if input.data()[idx] > 0.0 {
                            self.nodes[a].grad.data_mut()[idx] += g;
                        }
                    }
                }
                Op::Softplus(a) => {
                    let input = self.nodes[a].value.clone();
                    for (idx, g) in grad.data().iter().enumerate() {
                        self.nodes[a].grad.data_mut()[idx] += g * sigmoid(input.data()[idx]);
                    }
                }
                Op::Log(a) => {
                    let input = self.nodes[a].value.clone();
                    for (idx, g) in grad.data().iter().enumerate() {
                        self.nodes[a].grad.data_mut()[idx] += g / input.data()[idx];
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    for (idx, g) in grad.data().iter().enumerate() {
                        self.nodes[a].grad.data_mut()[idx] += g * bv.data()[idx];
                        self.nodes[b].grad.data_mut()[idx] += g * av.data()[idx];
                    }
                }
                Op::SpMm(s, x) => {
                    let gx = self.sparse[s].t_matmul_dense(&grad);
                    accumulate(&mut self.nodes[x].grad, &gx);
                }
                Op::SumRows(a) => {
                    let (n, f) = self.nodes[a].value.shape();
                    for i in 0..n {
                        for j in 0..f {
                            self.nodes[a].grad[(i, j)] += grad[(0, j)];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let g = grad[(0, 0)];
                    for x in self.nodes[a].grad.data_mut() {
                        *x += g;
                    }
                }
                Op::DirichletLogProb { alpha, action } => {
                    let g = grad[(0, 0)];
                    let a_vals = self.nodes[alpha].value.data().to_vec();
                    let alpha0: f64 = a_vals.iter().sum();
                    let psi0 = digamma(alpha0)?;
                    for (idx, (&ai, &xi)) in a_vals.iter().zip(&action).enumerate() {
                        self.nodes[alpha].grad.data_mut()[idx] +=
                            g * (xi.ln() + psi0 - digamma(ai)?);
                    }
                }
                Op::DirichletEntropy(alpha) => {
                    let g = grad[(0, 0)];
                    let a_vals = self.nodes[alpha].value.data().to_vec();
                    let k = a_vals.len() as f64;
                    let alpha0: f64 = a_vals.iter().sum();
                    let tri0 = trigamma(alpha0)?;
                    for (idx, &ai) in a_vals.iter().enumerate() {
                        self.nodes[alpha].grad.data_mut()[idx] +=
                            g * ((alpha0 - k) * tri0 - (ai - 1.0) * trigamma(ai)?);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(dst: &mut Mat, src: &Mat) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe softplus: log(1 + exp(x)).
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub const SIMPLEX_CLAMP: f64 = 1e-8;

/// Clamp entries into [1e-8, 1 - 1e-8] and renormalize to sum 1.
pub fn clamp_to_open_simplex(a: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = a
        .iter()
        .map(|&x| x.clamp(SIMPLEX_CLAMP, 1.0 - SIMPLEX_CLAMP))
        .collect();
    let total: f64 = clamped.iter().sum();
    clamped.into_iter().map(|x| x / total).collect()
}
