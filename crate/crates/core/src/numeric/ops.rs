//! The closed set of differentiable operations and the [`Ops`] trait that
//! lets model code run either eagerly or on a recording [`Graph`].
//!
//! [`Graph`]: super::Graph

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Every operation the model needs. Forward kernels live in [`OpKind::forward`],
/// shared by the eager and recording backends so both produce identical bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    MatVec,
    Add,
    Sub,
    Mul,
    AddN,
    Concat,
    Slice { start: usize, len: usize },
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    /// scalar × tensor
    Scale,
    Dot,
    /// uᵀ W v with inputs (u, W, v)
    Bilinear,
    UnitNormalize,
    /// scalars → vector
    Stack,
    Softmax,
    Index(usize),
    LogSumExp,
    Sum,
}

/// Norms below this are treated as zero by `UnitNormalize`.
pub const MIN_NORM: Real = 1e-12;

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(xs: &[Real]) -> Vec<Real> {
    let max = xs.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub(crate) fn log_sum_exp_slice(xs: &[Real]) -> Real {
    let max = xs.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<Real>().ln()
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatVec => "matvec",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddN => "add_n",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Scale => "scale",
            OpKind::Dot => "dot",
            OpKind::Bilinear => "bilinear",
            OpKind::UnitNormalize => "unit_normalize",
            OpKind::Stack => "stack",
            OpKind::Softmax => "softmax",
            OpKind::Index(_) => "index",
            OpKind::LogSumExp => "log_sum_exp",
            OpKind::Sum => "sum",
        }
    }

    fn arity(self) -> Option<usize> {
        match self {
            OpKind::AddN | OpKind::Concat | OpKind::Stack => None,
            OpKind::MatVec | OpKind::Add | OpKind::Sub | OpKind::Mul => Some(2),
            OpKind::Scale | OpKind::Dot => Some(2),
            OpKind::Bilinear => Some(3),
            _ => Some(1),
        }
    }

    /// Computes the op's output. Fails on shape errors and non-finite results.
    pub fn forward(self, xs: &[&Tensor]) -> Result<Tensor> {
        let op = self.name();
        if let Some(n) = self.arity() {
            if xs.len() != n {
                return Err(Error::shape(op, format!("{} operands, got {}", n, xs.len())));
            }
        } else if xs.is_empty() {
            return Err(Error::shape(op, "no operands"));
        }
        let out = match self {
            OpKind::MatVec => xs[0].matvec(xs[1])?,
            OpKind::Add => xs[0].zip_with(xs[1], op, |a, b| a + b)?,
            OpKind::Sub => xs[0].zip_with(xs[1], op, |a, b| a - b)?,
            OpKind::Mul => xs[0].zip_with(xs[1], op, |a, b| a * b)?,
            OpKind::AddN => {
                let mut acc = xs[0].clone();
                for x in &xs[1..] {
                    acc.same_shape(x, op)?;
                    for (a, b) in acc.data_mut().iter_mut().zip(x.data()) {
                        *a += b;
                    }
                }
                acc
            }
            OpKind::Concat => {
                let mut data = Vec::new();
                for x in xs {
                    x.expect_vector(op)?;
                    data.extend_from_slice(x.data());
                }
                Tensor::vector(data)
            }
            OpKind::Slice { start, len } => {
                let n = xs[0].expect_vector(op)?;
                if start + len > n {
                    return Err(Error::shape(
                        op,
                        format!("[{}..{}) of length {}", start, start + len, n),
                    ));
                }
                Tensor::vector(xs[0].data()[start..start + len].to_vec())
            }
            OpKind::Sigmoid => xs[0].map(sigmoid),
            OpKind::Tanh => xs[0].map(Real::tanh),
            OpKind::Relu => xs[0].map(|x| x.max(0.0)),
            OpKind::Exp => xs[0].map(Real::exp),
            OpKind::Log => xs[0].map(Real::ln),
            OpKind::Scale => {
                let s = xs[0].expect_scalar(op)?;
                xs[1].map(|x| s * x)
            }
            OpKind::Dot => {
                xs[0].expect_vector(op)?;
                xs[0].same_shape(xs[1], op)?;
                Tensor::scalar(xs[0].dot(xs[1]))
            }
            OpKind::Bilinear => {
                let (r, c) = xs[1].expect_matrix(op)?;
                let nu = xs[0].expect_vector(op)?;
                let nv = xs[2].expect_vector(op)?;
                if nu != r || nv != c {
                    return Err(Error::shape(
                        op,
                        format!("u[{}]ᵀ W[{}, {}] v[{}]", nu, r, c, nv),
                    ));
                }
                let wv = xs[1].matvec(xs[2])?;
                Tensor::scalar(xs[0].dot(&wv))
            }
            OpKind::UnitNormalize => {
                xs[0].expect_vector(op)?;
                let n = xs[0].norm();
                if !(n >= MIN_NORM) {
                    return Err(Error::Invalid(format!(
                        "unit_normalize: norm {n:e} is below {MIN_NORM:e}"
                    )));
                }
                xs[0].map(|x| x / n)
            }
            OpKind::Stack => {
                let mut data = Vec::with_capacity(xs.len());
                for x in xs {
                    data.push(x.expect_scalar(op)?);
                }
                Tensor::vector(data)
            }
            OpKind::Softmax => {
                xs[0].expect_vector(op)?;
                if xs[0].is_empty() {
                    return Err(Error::shape(op, "empty input"));
                }
                Tensor::vector(softmax_slice(xs[0].data()))
            }
            OpKind::Index(i) => {
                let n = xs[0].expect_vector(op)?;
                if i >= n {
                    return Err(Error::shape(op, format!("index {} of length {}", i, n)));
                }
                Tensor::scalar(xs[0].data()[i])
            }
            OpKind::LogSumExp => {
                xs[0].expect_vector(op)?;
                if xs[0].is_empty() {
                    return Err(Error::shape(op, "empty input"));
                }
                Tensor::scalar(log_sum_exp_slice(xs[0].data()))
            }
            OpKind::Sum => Tensor::scalar(xs[0].data().iter().sum()),
        };
        if !out.is_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(out)
    }
}

/// Shared interface over the eager evaluator and the recording graph.
///
/// Model code is written once against this trait. `V` is a cheap handle:
/// a shared tensor for [`Eager`], a node id for [`Graph`](super::Graph).
pub trait Ops {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn param(&mut self, id: ParamId) -> Self::V;
    fn apply(&mut self, op: OpKind, xs: &[&Self::V]) -> Result<Self::V>;

    fn matvec(&mut self, m: &Self::V, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::MatVec, &[m, x])
    }
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Mul, &[a, b])
    }
    fn add_n(&mut self, xs: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Self::V> = xs.iter().collect();
        self.apply(OpKind::AddN, &refs)
    }
    fn concat(&mut self, xs: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Self::V> = xs.iter().collect();
        self.apply(OpKind::Concat, &refs)
    }
    fn slice(&mut self, x: &Self::V, start: usize, len: usize) -> Result<Self::V> {
        self.apply(OpKind::Slice { start, len }, &[x])
    }
    fn sigmoid(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Sigmoid, &[x])
    }
    fn tanh(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Tanh, &[x])
    }
    fn relu(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Relu, &[x])
    }
    fn exp(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Exp, &[x])
    }
    fn log(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Log, &[x])
    }
    fn scale(&mut self, s: &Self::V, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Scale, &[s, x])
    }
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Dot, &[a, b])
    }
    fn bilinear(&mut self, u: &Self::V, w: &Self::V, v: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Bilinear, &[u, w, v])
    }
    fn unit_normalize(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::UnitNormalize, &[x])
    }
    fn stack(&mut self, xs: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Self::V> = xs.iter().collect();
        self.apply(OpKind::Stack, &refs)
    }
    fn softmax(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Softmax, &[x])
    }
    fn index(&mut self, x: &Self::V, i: usize) -> Result<Self::V> {
        self.apply(OpKind::Index(i), &[x])
    }
    fn log_sum_exp(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::LogSumExp, &[x])
    }
    fn sum(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(OpKind::Sum, &[x])
    }
}

/// Evaluates ops immediately without recording anything.
///
/// `Eager` is `Copy + Send + Sync`, so independent cells can be computed
/// on separate threads against the same parameters.
#[derive(Clone, Copy)]
pub struct Eager<'a> {
    params: &'a ParamStore,
}

impl<'a> Eager<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Eager { params }
    }
}

impl Ops for Eager<'_> {
    type V = Arc<Tensor>;

    fn value<'b>(&'b self, v: &'b Self::V) -> &'b Tensor {
        v
    }

    fn constant(&mut self, t: Tensor) -> Self::V {
        Arc::new(t)
    }

    fn param(&mut self, id: ParamId) -> Self::V {
        self.params.shared(id)
    }

    fn apply(&mut self, op: OpKind, xs: &[&Self::V]) -> Result<Self::V> {
        let ts: Vec<&Tensor> = xs.iter().map(|x| x.as_ref()).collect();
        op.forward(&ts).map(Arc::new)
    }
}
