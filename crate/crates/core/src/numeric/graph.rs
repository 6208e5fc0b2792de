use std::sync::Arc;

use super::ops::{OpKind, Ops};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Source {
    Constant,
    Param(ParamId),
    Op(OpKind, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    source: Source,
}

/// Tape of recorded operations over one parameter store.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order and `backward` is a single reverse sweep.
pub struct Graph<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shared(&self, id: NodeId) -> Arc<Tensor> {
        Arc::clone(&self.nodes[id.0].value)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Parameters that do not influence the loss get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Backward(
                "loss node is not on this graph (backward before forward?)".into(),
            ));
        };
        if !node.value.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut grads = Gradients::zeros(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.source {
                Source::Constant => {}
                Source::Param(p) => grads.grads[p.index()].add_assign(&g)?,
                Source::Op(op, inputs) => {
                    self.backprop_op(*op, inputs, &node.value, &g, &mut adj)?;
                }
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(grads)
    }

    fn backprop_op(
        &self,
        op: OpKind,
        inputs: &[usize],
        out: &Tensor,
        g: &Tensor,
        adj: &mut [Option<Tensor>],
    ) -> Result<()> {
        let val = |i: usize| -> &Tensor { &self.nodes[inputs[i]].value };
        let mut acc = |i: usize, d: Tensor| -> Result<()> {
            let slot = &mut adj[inputs[i]];
            match slot {
                Some(t) => t.add_assign(&d),
                None => {
                    *slot = Some(d);
                    Ok(())
                }
            }
        };
        match op {
            OpKind::MatVec => {
                let m = val(0);
                let x = val(1);
                acc(0, Tensor::outer(g, x))?;
                acc(1, m.matvec_t(g)?)?;
            }
            OpKind::Add => {
                acc(0, g.clone())?;
                acc(1, g.clone())?;
            }
            OpKind::Sub => {
                acc(0, g.clone())?;
                acc(1, g.map(|x| -x))?;
            }
            OpKind::Mul => {
                let da = g.zip_with(val(1), "mul_grad", |a, b| a * b)?;
                let db = g.zip_with(val(0), "mul_grad", |a, b| a * b)?;
                acc(0, da)?;
                acc(1, db)?;
            }
            OpKind::AddN => {
                for i in 0..inputs.len() {
                    acc(i, g.clone())?;
                }
            }
            OpKind::Concat => {
                let mut off = 0;
                for i in 0..inputs.len() {
                    let n = val(i).len();
                    acc(i, Tensor::vector(g.data()[off..off + n].to_vec()))?;
                    off += n;
                }
            }
            OpKind::Slice { start, len } => {
                let mut d = Tensor::zeros(val(0).shape());
                d.data_mut()[start..start + len].copy_from_slice(g.data());
                acc(0, d)?;
            }
            OpKind::Sigmoid => {
                acc(0, g.zip_with(out, "sigmoid_grad", |g, y| g * y * (1.0 - y))?)?;
            }
            OpKind::Tanh => {
                acc(0, g.zip_with(out, "tanh_grad", |g, y| g * (1.0 - y * y))?)?;
            }
            OpKind::Relu => {
                let d = g.zip_with(val(0), "relu_grad", |g, x| if x > 0.0 { g } else { 0.0 })?;
                acc(0, d)?;
            }
            OpKind::Exp => acc(0, g.zip_with(out, "exp_grad", |g, y| g * y)?)?,
            OpKind::Log => acc(0, g.zip_with(val(0), "log_grad", |g, x| g / x)?)?,
            OpKind::Scale => {
                let s = val(0).item();
                let x = val(1);
                acc(0, Tensor::scalar(g.dot(x)))?;
                acc(1, g.map(|v| v * s))?;
            }
            OpKind::Dot => {
                let gs = g.item();
                acc(0, val(1).map(|v| v * gs))?;
                acc(1, val(0).map(|v| v * gs))?;
            }
            OpKind::Bilinear => {
                let gs = g.item();
                let u = val(0);
                let w = val(1);
                let v = val(2);
                let mut du = w.matvec(v)?;
                du.scale_in_place(gs);
                let mut dw = Tensor::outer(u, v);
                dw.scale_in_place(gs);
                let mut dv = w.matvec_t(u)?;
                dv.scale_in_place(gs);
                acc(0, du)?;
                acc(1, dw)?;
                acc(2, dv)?;
            }
            OpKind::UnitNormalize => {
                let n = val(0).norm();
                let proj = g.dot(out);
                let d = g.zip_with(out, "normalize_grad", |g, y| (g - y * proj) / n)?;
                acc(0, d)?;
            }
            OpKind::Stack => {
                for i in 0..inputs.len() {
                    acc(i, Tensor::scalar(g.data()[i]))?;
                }
            }
            OpKind::Softmax => {
                let gy = g.dot(out);
                acc(0, g.zip_with(out, "softmax_grad", |g, y| y * (g - gy))?)?;
            }
            OpKind::Index(i) => {
                let mut d = Tensor::zeros(val(0).shape());
                d.data_mut()[i] = g.item();
                acc(0, d)?;
            }
            OpKind::LogSumExp => {
                let gs = g.item();
                let p = super::ops::softmax_slice(val(0).data());
                acc(0, Tensor::vector(p.into_iter().map(|p| p * gs).collect()))?;
            }
            OpKind::Sum => {
                let gs = g.item();
                acc(0, Tensor::filled(val(0).shape(), gs))?;
            }
        }
        Ok(())
    }
}

impl Ops for Graph<'_> {
    type V = NodeId;

    fn value<'b>(&'b self, v: &'b NodeId) -> &'b Tensor {
        &self.nodes[v.0].value
    }

    fn constant(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: Arc::new(t),
            source: Source::Constant,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return NodeId(n);
        }
        self.nodes.push(Node {
            value: self.params.shared(id),
            source: Source::Param(id),
        });
        let n = self.nodes.len() - 1;
        self.param_nodes[id.index()] = Some(n);
        NodeId(n)
    }

    fn apply(&mut self, op: OpKind, xs: &[&NodeId]) -> Result<NodeId> {
        let value = {
            let ts: Vec<&Tensor> = xs.iter().map(|x| self.nodes[x.0].value.as_ref()).collect();
            op.forward(&ts)?
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            source: Source::Op(op, xs.iter().map(|x| x.0).collect()),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }
}

/// Scalar value of a recorded node.
pub fn scalar_value(g: &Graph<'_>, id: NodeId) -> Real {
    g.tensor(id).item()
}
