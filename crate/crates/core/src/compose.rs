//! Leaf transform, composition functions and the bilinear compatibility score.
//!
//! Everything here is generic over [`Ops`], so the same code runs eagerly
//! for parsing and on a recording graph for training.

use crate::error::{Error, Result};
use crate::model::{ComposeIds, ComposeKind, GateOutput, MlpActivation, ModelParams, Side};
use crate::numeric::{Ops, Tensor};

/// Hidden vector `h` plus the TreeLSTM cell state `c` (absent for MLP).
#[derive(Clone, Debug)]
pub struct Cell<V> {
    pub h: V,
    pub c: Option<V>,
}

fn check_dim<B: Ops>(b: &B, v: &B::V, expect: usize, op: &'static str) -> Result<()> {
    let t = b.value(v);
    if t.shape() != [expect] {
        return Err(Error::Shape {
            op,
            detail: format!("expected a vector of length {expect}, got {:?}", t.shape()),
        });
    }
    Ok(())
}

fn gate_output<B: Ops>(b: &mut B, mode: GateOutput, o: &B::V, c: &B::V) -> Result<B::V> {
    let tc = b.tanh(c)?;
    match mode {
        GateOutput::Additive => b.add(o, &tc),
        GateOutput::Multiplicative => b.mul(o, &tc),
    }
}

/// `[x; o; u] = [σ; σ; tanh](U v + b)`, `c = x ⊙ u`, `h = o + tanh(c)`.
///
/// The leaf score is identically zero and is not returned. The bias is
/// the TreeLSTM gate bias rows for `x`, `o` and `u` when composing with a
/// TreeLSTM, and a dedicated vector for the MLP.
pub fn leaf_transform<B: Ops>(b: &mut B, params: &ModelParams, v: &B::V) -> Result<Cell<B::V>> {
    let d = params.hidden_dim();
    check_dim(b, v, params.config.input_dim, "leaf_transform")?;
    let w = b.param(params.leaf_weight);
    let bias = match (params.leaf_bias, params.inside) {
        (Some(id), _) => b.param(id),
        (None, ComposeIds::TreeLstm { b: gate_bias, .. }) => {
            let gb = b.param(gate_bias);
            let x = b.slice(&gb, 0, d)?;
            let o = b.slice(&gb, 3 * d, d)?;
            let u = b.slice(&gb, 4 * d, d)?;
            b.concat(&[x, o, u])?
        }
        (None, ComposeIds::Mlp { .. }) => {
            return Err(Error::Invalid("MLP model is missing its leaf bias".into()))
        }
    };
    let pre = b.matvec(&w, v)?;
    let pre = b.add(&pre, &bias)?;
    let x = b.slice(&pre, 0, d)?;
    let x = b.sigmoid(&x)?;
    let o = b.slice(&pre, d, d)?;
    let o = b.sigmoid(&o)?;
    let u = b.slice(&pre, 2 * d, d)?;
    let u = b.tanh(&u)?;
    let c = b.mul(&x, &u)?;
    let h = gate_output(b, params.config.gate_output, &o, &c)?;
    let c = match params.config.compose {
        ComposeKind::TreeLstm => Some(c),
        ComposeKind::Mlp => None,
    };
    Ok(Cell { h, c })
}

/// `h = W1 act(W0 ⟨hi, hj⟩ + b0) + b1`.
pub fn compose_mlp<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    side: Side,
    hi: &B::V,
    hj: &B::V,
) -> Result<Cell<B::V>> {
    let d = params.hidden_dim();
    check_dim(b, hi, d, "compose_mlp")?;
    check_dim(b, hj, d, "compose_mlp")?;
    let ComposeIds::Mlp { w0, b0, w1, b1 } = params.compose_ids(side) else {
        return Err(Error::Invalid("compose_mlp called on a TreeLSTM model".into()));
    };
    let input = if params.config.kernel {
        let prod = b.mul(hi, hj)?;
        let diff = b.sub(hi, hj)?;
        b.concat(&[hi.clone(), hj.clone(), prod, diff])?
    } else {
        b.concat(&[hi.clone(), hj.clone()])?
    };
    let (w0, b0, w1, b1) = (b.param(w0), b.param(b0), b.param(w1), b.param(b1));
    let z = b.matvec(&w0, &input)?;
    let z = b.add(&z, &b0)?;
    let z = match params.config.mlp_activation {
        MlpActivation::Tanh => b.tanh(&z)?,
        MlpActivation::Linear => z,
    };
    let h = b.matvec(&w1, &z)?;
    let h = b.add(&h, &b1)?;
    Ok(Cell { h, c: None })
}

/// Binary TreeLSTM with forget-gate offset ω (1 inside, 0 outside).
///
/// Missing child cell states are treated as zero.
pub fn compose_treelstm<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    side: Side,
    left: &Cell<B::V>,
    right: &Cell<B::V>,
) -> Result<Cell<B::V>> {
    let d = params.hidden_dim();
    check_dim(b, &left.h, d, "compose_treelstm")?;
    check_dim(b, &right.h, d, "compose_treelstm")?;
    let ComposeIds::TreeLstm { u, b: bias } = params.compose_ids(side) else {
        return Err(Error::Invalid("compose_treelstm called on an MLP model".into()));
    };
    let (u, bias) = (b.param(u), b.param(bias));
    let input = b.concat(&[left.h.clone(), right.h.clone()])?;
    let pre = b.matvec(&u, &input)?;
    let mut pre = b.add(&pre, &bias)?;
    let omega = side.forget_bias();
    if omega != 0.0 {
        let mut off = Tensor::zeros(&[5 * d]);
        off.data_mut()[d..3 * d].fill(omega);
        let off = b.constant(off);
        pre = b.add(&pre, &off)?;
    }
    let gate = |b: &mut B, k: usize| -> Result<B::V> {
        let s = b.slice(&pre, k * d, d)?;
        if k == 4 {
            b.tanh(&s)
        } else {
            b.sigmoid(&s)
        }
    };
    let x = gate(b, 0)?;
    let fi = gate(b, 1)?;
    let fj = gate(b, 2)?;
    let o = gate(b, 3)?;
    let ug = gate(b, 4)?;
    let mut terms = vec![b.mul(&x, &ug)?];
    for (child, f) in [(left, &fi), (right, &fj)] {
        if let Some(c) = &child.c {
            check_dim(b, c, d, "compose_treelstm")?;
            terms.push(b.mul(c, f)?);
        }
    }
    let c = b.add_n(&terms)?;
    let h = gate_output(b, params.config.gate_output, &o, &c)?;
    Ok(Cell { h, c: Some(c) })
}

/// Dispatches on the configured composition function.
pub fn compose<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    side: Side,
    left: &Cell<B::V>,
    right: &Cell<B::V>,
) -> Result<Cell<B::V>> {
    match params.config.compose {
        ComposeKind::Mlp => compose_mlp(b, params, side, &left.h, &right.h),
        ComposeKind::TreeLstm => compose_treelstm(b, params, side, left, right),
    }
}

/// `φ(u, v; S) + score_u + score_v` with `φ(u, v; S) = uᵀ S v`.
pub fn compatibility<B: Ops>(
    b: &mut B,
    u: &B::V,
    v: &B::V,
    s: &B::V,
    score_u: &B::V,
    score_v: &B::V,
) -> Result<B::V> {
    let phi = b.bilinear(u, s, v)?;
    b.add_n(&[phi, score_u.clone(), score_v.clone()])
}

/// Softmax over the compatibility scores of one span's pairs or contexts.
pub fn normalize_weights<B: Ops>(b: &mut B, scores: &[B::V]) -> Result<B::V> {
    if scores.is_empty() {
        return Err(Error::Invalid("normalize_weights: empty pair set".into()));
    }
    let stacked = b.stack(scores)?;
    b.softmax(&stacked)
}
