//! Reconstruction losses: each leaf's outside vector must pick out its own
//! leaf inside vector over a set of sampled negatives.

use serde::{Deserialize, Serialize};

use crate::chart::{ChartCells, Span};
use crate::compose;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::{Ops, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `Σ_i Σ_n max(0, margin − b̄(i)·ā(i) + b̄(i)·ā(n))`
    Margin,
    /// `−Σ_i log softmax` of the true token against the negatives.
    Softmax,
}

#[derive(Clone, Debug)]
pub struct LossReport<V> {
    /// Sentence loss (sum over tokens).
    pub loss: V,
    /// Per token: 1 + number of negatives scoring strictly above the true token.
    pub ranks: Vec<usize>,
}

fn check_counts<B: Ops>(b: &B, outside: &[B::V], targets: &[B::V], negatives: &[B::V]) -> Result<()> {
    if outside.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "{} outside vectors but {} targets",
            outside.len(),
            targets.len()
        )));
    }
    if outside.is_empty() || negatives.is_empty() {
        return Err(Error::Invalid("loss needs at least one token and one negative".into()));
    }
    let d = b.value(&outside[0]).shape().to_vec();
    if targets.iter().chain(negatives).any(|v| b.value(v).shape() != d.as_slice()) {
        return Err(Error::Shape {
            op: "loss",
            detail: "target and negative vectors must match the outside vectors".into(),
        });
    }
    Ok(())
}

/// Scores of the true token and of each negative for one leaf.
fn leaf_scores<B: Ops>(
    b: &mut B,
    outside: &B::V,
    target: &B::V,
    negatives: &[B::V],
) -> Result<(B::V, Vec<B::V>, usize)> {
    let pos = b.dot(outside, target)?;
    let negs = negatives
        .iter()
        .map(|n| b.dot(outside, n))
        .collect::<Result<Vec<_>>>()?;
    let p = b.value(&pos).item();
    let rank = 1 + negs.iter().filter(|n| b.value(n).item() > p).count();
    Ok((pos, negs, rank))
}

pub fn margin_loss<B: Ops>(
    b: &mut B,
    outside: &[B::V],
    targets: &[B::V],
    negatives: &[B::V],
    margin: Real,
) -> Result<LossReport<B::V>> {
    check_counts(b, outside, targets, negatives)?;
    let ones = b.constant(Tensor::filled(&[negatives.len()], 1.0));
    let margin = b.constant(Tensor::scalar(margin));
    let mut terms = Vec::with_capacity(outside.len());
    let mut ranks = Vec::with_capacity(outside.len());
    for (o, t) in outside.iter().zip(targets) {
        let (pos, negs, rank) = leaf_scores(b, o, t, negatives)?;
        let offset = b.sub(&margin, &pos)?;
        let offset = b.scale(&offset, &ones)?;
        let negs = b.stack(&negs)?;
        let hinge = b.add(&offset, &negs)?;
        let hinge = b.relu(&hinge)?;
        terms.push(b.sum(&hinge)?);
        ranks.push(rank);
    }
    Ok(LossReport {
        loss: b.add_n(&terms)?,
        ranks,
    })
}

/// Cross-entropy over `[true; negatives]`, computed as `logsumexp − true`.
pub fn softmax_loss<B: Ops>(
    b: &mut B,
    outside: &[B::V],
    targets: &[B::V],
    negatives: &[B::V],
) -> Result<LossReport<B::V>> {
    check_counts(b, outside, targets, negatives)?;
    let mut terms = Vec::with_capacity(outside.len());
    let mut ranks = Vec::with_capacity(outside.len());
    for (o, t) in outside.iter().zip(targets) {
        let (pos, mut negs, rank) = leaf_scores(b, o, t, negatives)?;
        negs.insert(0, pos.clone());
        let logits = b.stack(&negs)?;
        let lse = b.log_sum_exp(&logits)?;
        terms.push(b.sub(&lse, &pos)?);
        ranks.push(rank);
    }
    Ok(LossReport {
        loss: b.add_n(&terms)?,
        ranks,
    })
}

/// Unit-normalized leaf-transformed vectors ā(n) for negative-token embeddings.
pub fn negative_vectors<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    embeddings: &[B::V],
) -> Result<Vec<B::V>> {
    embeddings
        .iter()
        .map(|v| {
            let cell = compose::leaf_transform(b, params, v)?;
            b.unit_normalize(&cell.h)
        })
        .collect()
}

/// Reconstruction loss of a filled chart against its own leaves.
pub fn chart_loss<B: Ops>(
    b: &mut B,
    chart: &ChartCells<B::V>,
    negatives: &[B::V],
    kind: LossKind,
    margin: Real,
) -> Result<LossReport<B::V>> {
    if !chart.has_outside() {
        return Err(Error::Invalid("loss requires the outside pass".into()));
    }
    let leaves: Vec<Span> = (0..chart.len).map(|i| Span::new(i, 1)).collect();
    let outside: Vec<B::V> = leaves.iter().map(|&s| chart.outside_at(s).h.clone()).collect();
    let targets: Vec<B::V> = leaves.iter().map(|&s| chart.inside_at(s).h.clone()).collect();
    match kind {
        LossKind::Margin => margin_loss(b, &outside, &targets, negatives, margin),
        LossKind::Softmax => softmax_loss(b, &outside, &targets, negatives),
    }
}
