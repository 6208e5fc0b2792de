//! Span indexing and the inside and outside passes.
//!
//! Cells are stored level by level: all spans of length 1 (left to right),
//! then length 2, and so on up to the root. Inside cells at level `ℓ` read
//! only levels below `ℓ`; outside cells read only levels above, so every
//! level can be computed in parallel.

use std::sync::Arc;

use rayon::prelude::*;

use crate::compose::{self, Cell};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Side};
use crate::numeric::{Eager, Graph, NodeId, Ops, Real, Tensor, MIN_NORM};

/// Contiguous token range `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn new(start: usize, len: usize) -> Self {
        Span { start, len }
    }

    pub fn end(self) -> usize {
        self.start + self.len
    }

    pub fn is_leaf(self) -> bool {
        self.len == 1
    }
}

/// Number of spans over a sentence of `t` tokens.
pub fn cell_count(t: usize) -> usize {
    t * (t + 1) / 2
}

fn level_offset(t: usize, len: usize) -> usize {
    // Σ_{m=1}^{len-1} (t - m + 1)
    let m = len - 1;
    m * (t + 1) - m * (m + 1) / 2
}

/// Position of `span` in level-major storage for a sentence of `t` tokens.
pub fn span_index(t: usize, span: Span) -> usize {
    debug_assert!(span.len >= 1 && span.end() <= t);
    level_offset(t, span.len) + span.start
}

/// All spans of one length, left to right.
pub fn level(t: usize, len: usize) -> impl Iterator<Item = Span> {
    (0..=t - len).map(move |s| Span::new(s, len))
}

/// Every span in storage order.
pub fn all_spans(t: usize) -> impl Iterator<Item = Span> {
    (1..=t).flat_map(move |len| level(t, len))
}

/// The pairs of adjacent sub-spans that exactly cover `span`, ordered by split point.
pub fn span_pairs(span: Span) -> Result<Vec<(Span, Span)>> {
    if span.len < 2 {
        return Err(Error::Invalid(format!(
            "span ({}, {}) is a leaf and has no pairs",
            span.start, span.len
        )));
    }
    Ok((1..span.len)
        .map(|s| {
            (
                Span::new(span.start, s),
                Span::new(span.start + s, span.len - s),
            )
        })
        .collect())
}

/// Where the sibling sits relative to the span whose outside is being computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiblingSide {
    Left,
    Right,
}

/// One outside context: the parent's outside cell plus the sibling's inside cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Context {
    pub parent: Span,
    pub sibling: Span,
    pub side: SiblingSide,
}

/// Outside contexts of `span` in a sentence of `t` tokens: left siblings
/// (nearest parent last), then right siblings (smallest parent first).
pub fn outside_contexts(span: Span, t: usize) -> Result<Vec<Context>> {
    if span.end() > t || span.len == 0 {
        return Err(Error::Invalid(format!(
            "span ({}, {}) is outside a sentence of {} tokens",
            span.start, span.len, t
        )));
    }
    if span.len == t {
        return Err(Error::Invalid("the root span has no outside context".into()));
    }
    let mut out = Vec::with_capacity(span.start + t - span.end());
    for ps in 0..span.start {
        out.push(Context {
            parent: Span::new(ps, span.end() - ps),
            sibling: Span::new(ps, span.start - ps),
            side: SiblingSide::Left,
        });
    }
    for pe in span.end() + 1..=t {
        out.push(Context {
            parent: Span::new(span.start, pe - span.start),
            sibling: Span::new(span.end(), pe - span.end()),
            side: SiblingSide::Right,
        });
    }
    Ok(out)
}

/// Divides by the L2 norm. Fails on (near-)zero vectors.
pub fn unit_normalize(v: &Tensor) -> Result<Tensor> {
    let n = v.norm();
    if !(n >= MIN_NORM) {
        return Err(Error::Invalid(format!("cannot normalize a vector of norm {n:e}")));
    }
    Ok(v.map(|x| x / n))
}

#[derive(Clone, Debug)]
pub struct InsideCell<V> {
    /// Unit-norm inside vector ā(k).
    pub h: V,
    pub c: Option<V>,
    /// Inside score ē(k), a scalar.
    pub score: V,
    /// Raw pair scores ê(i, j) in [`span_pairs`] order; `None` for leaves.
    pub pair_scores: Option<V>,
    /// Normalized pair weights e(i, j); `None` for leaves.
    pub weights: Option<V>,
}

#[derive(Clone, Debug)]
pub struct OutsideCell<V> {
    /// Unit-norm outside vector b̄(k).
    pub h: V,
    pub c: Option<V>,
    /// Outside score f̄(k), a scalar.
    pub score: V,
    /// Raw context scores f̂ in [`outside_contexts`] order; `None` for the root.
    pub context_scores: Option<V>,
    pub weights: Option<V>,
}

/// A filled chart. `V` is a tensor handle for eager charts or a node id for
/// charts recorded on a training graph.
#[derive(Clone, Debug)]
pub struct ChartCells<V> {
    pub len: usize,
    pub inside: Vec<InsideCell<V>>,
    /// Empty until the outside pass has run.
    pub outside: Vec<OutsideCell<V>>,
    /// Pair compositions performed by the inside pass.
    pub inside_ops: usize,
    /// Context compositions performed by the outside pass.
    pub outside_ops: usize,
}

/// Chart with concrete tensor values.
pub type Chart = ChartCells<Arc<Tensor>>;

impl<V> ChartCells<V> {
    pub fn inside_at(&self, span: Span) -> &InsideCell<V> {
        &self.inside[span_index(self.len, span)]
    }

    pub fn outside_at(&self, span: Span) -> &OutsideCell<V> {
        &self.outside[span_index(self.len, span)]
    }

    pub fn root(&self) -> Span {
        Span::new(0, self.len)
    }

    pub fn has_outside(&self) -> bool {
        !self.outside.is_empty()
    }

    pub fn map<W>(&self, f: impl Fn(&V) -> W) -> ChartCells<W> {
        ChartCells {
            len: self.len,
            inside: self
                .inside
                .iter()
                .map(|c| InsideCell {
                    h: f(&c.h),
                    c: c.c.as_ref().map(&f),
                    score: f(&c.score),
                    pair_scores: c.pair_scores.as_ref().map(&f),
                    weights: c.weights.as_ref().map(&f),
                })
                .collect(),
            outside: self
                .outside
                .iter()
                .map(|c| OutsideCell {
                    h: f(&c.h),
                    c: c.c.as_ref().map(&f),
                    score: f(&c.score),
                    context_scores: c.context_scores.as_ref().map(&f),
                    weights: c.weights.as_ref().map(&f),
                })
                .collect(),
            inside_ops: self.inside_ops,
            outside_ops: self.outside_ops,
        }
    }
}

impl ChartCells<NodeId> {
    /// Copies the recorded values out of a training graph.
    pub fn materialize(&self, g: &Graph<'_>) -> Chart {
        self.map(|&id| g.shared(id))
    }
}

fn leaf_cell<B: Ops>(b: &mut B, params: &ModelParams, input: &B::V) -> Result<InsideCell<B::V>> {
    let Cell { h, c } = compose::leaf_transform(b, params, input)?;
    let h = b.unit_normalize(&h)?;
    let score = b.constant(Tensor::scalar(0.0));
    Ok(InsideCell {
        h,
        c,
        score,
        pair_scores: None,
        weights: None,
    })
}

/// Weighted sum `Σ w_p x_p` for a weight vector and matching items.
fn weighted_sum<B: Ops>(b: &mut B, weights: &B::V, items: &[B::V]) -> Result<B::V> {
    let mut terms = Vec::with_capacity(items.len());
    for (p, x) in items.iter().enumerate() {
        let w = b.index(weights, p)?;
        terms.push(b.scale(&w, x)?);
    }
    b.add_n(&terms)
}

fn inside_cell<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    t: usize,
    lower: &[InsideCell<B::V>],
    span: Span,
) -> Result<InsideCell<B::V>> {
    let s_alpha = b.param(params.inside_score);
    let pairs = span_pairs(span)?;
    let mut hs = Vec::with_capacity(pairs.len());
    let mut cs = Vec::new();
    let mut scores = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let ci = &lower[span_index(t, i)];
        let cj = &lower[span_index(t, j)];
        let left = Cell { h: ci.h.clone(), c: ci.c.clone() };
        let right = Cell { h: cj.h.clone(), c: cj.c.clone() };
        let a = compose::compose(b, params, Side::Inside, &left, &right)?;
        scores.push(compose::compatibility(b, &ci.h, &cj.h, &s_alpha, &ci.score, &cj.score)?);
        hs.push(a.h);
        if let Some(c) = a.c {
            cs.push(c);
        }
    }
    let pair_scores = b.stack(&scores)?;
    let weights = b.softmax(&pair_scores)?;
    let h = weighted_sum(b, &weights, &hs)?;
    let h = b.unit_normalize(&h)?;
    let c = if cs.is_empty() { None } else { Some(weighted_sum(b, &weights, &cs)?) };
    let score = b.dot(&weights, &pair_scores)?;
    Ok(InsideCell {
        h,
        c,
        score,
        pair_scores: Some(pair_scores),
        weights: Some(weights),
    })
}

fn root_outside<B: Ops>(b: &mut B, params: &ModelParams) -> Result<OutsideCell<B::V>> {
    let bias = b.param(params.root_bias);
    let h = b.unit_normalize(&bias)?;
    let score = b.constant(Tensor::scalar(0.0));
    let c = match params.config.compose {
        crate::model::ComposeKind::TreeLstm => {
            Some(b.constant(Tensor::zeros(&[params.hidden_dim()])))
        }
        crate::model::ComposeKind::Mlp => None,
    };
    Ok(OutsideCell {
        h,
        c,
        score,
        context_scores: None,
        weights: None,
    })
}

fn outside_cell<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    t: usize,
    inside: &[InsideCell<B::V>],
    outside: &[Option<OutsideCell<B::V>>],
    span: Span,
) -> Result<OutsideCell<B::V>> {
    let s_beta = b.param(params.outside_score);
    let contexts = outside_contexts(span, t)?;
    let mut hs = Vec::with_capacity(contexts.len());
    let mut cs = Vec::new();
    let mut scores = Vec::with_capacity(contexts.len());
    for ctx in contexts {
        let sib = &inside[span_index(t, ctx.sibling)];
        let par = outside[span_index(t, ctx.parent)]
            .as_ref()
            .ok_or_else(|| Error::Invalid("outside parent computed out of order".into()))?;
        let sibling = Cell { h: sib.h.clone(), c: sib.c.clone() };
        let parent = Cell { h: par.h.clone(), c: par.c.clone() };
        let out = compose::compose(b, params, Side::Outside, &sibling, &parent)?;
        scores.push(compose::compatibility(b, &sib.h, &par.h, &s_beta, &sib.score, &par.score)?);
        hs.push(out.h);
        if let Some(c) = out.c {
            cs.push(c);
        }
    }
    let context_scores = b.stack(&scores)?;
    let weights = b.softmax(&context_scores)?;
    let h = weighted_sum(b, &weights, &hs)?;
    let h = b.unit_normalize(&h)?;
    let c = if cs.is_empty() { None } else { Some(weighted_sum(b, &weights, &cs)?) };
    let score = b.dot(&weights, &context_scores)?;
    Ok(OutsideCell {
        h,
        c,
        score,
        context_scores: Some(context_scores),
        weights: Some(weights),
    })
}

/// Fills the inside half of the chart from per-token input vectors.
pub fn inside_pass<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    inputs: &[B::V],
) -> Result<ChartCells<B::V>> {
    let t = inputs.len();
    if t == 0 {
        return Err(Error::Invalid("cannot build a chart over zero tokens".into()));
    }
    let mut inside = Vec::with_capacity(cell_count(t));
    for v in inputs {
        inside.push(leaf_cell(b, params, v)?);
    }
    let mut ops = 0;
    for len in 2..=t {
        for span in level(t, len) {
            let cell = inside_cell(b, params, t, &inside, span)?;
            inside.push(cell);
            ops += len - 1;
        }
    }
    Ok(ChartCells {
        len: t,
        inside,
        outside: Vec::new(),
        inside_ops: ops,
        outside_ops: 0,
    })
}

/// Fills the outside half of a chart whose inside half is complete.
pub fn outside_pass<B: Ops>(
    b: &mut B,
    params: &ModelParams,
    chart: &mut ChartCells<B::V>,
) -> Result<()> {
    let t = chart.len;
    if chart.inside.len() != cell_count(t) {
        return Err(Error::Invalid("outside pass requires a complete inside pass".into()));
    }
    let mut outside: Vec<Option<OutsideCell<B::V>>> = vec![None; cell_count(t)];
    outside[span_index(t, Span::new(0, t))] = Some(root_outside(b, params)?);
    let mut ops = 0;
    for len in (1..t).rev() {
        for span in level(t, len) {
            let cell = outside_cell(b, params, t, &chart.inside, &outside, span)?;
            ops += span.start + t - span.end();
            outside[span_index(t, span)] = Some(cell);
        }
    }
    chart.outside = outside.into_iter().map(|c| c.expect("every span filled")).collect();
    chart.outside_ops = ops;
    Ok(())
}

/// Both passes on any backend, serially.
pub fn fill<B: Ops>(b: &mut B, params: &ModelParams, inputs: &[B::V]) -> Result<ChartCells<B::V>> {
    let mut chart = inside_pass(b, params, inputs)?;
    outside_pass(b, params, &mut chart)?;
    Ok(chart)
}

/// Both passes evaluated eagerly. With `parallel`, spans of equal length are
/// computed concurrently on the current rayon pool; results are bitwise
/// identical to the serial order because each cell is computed independently.
pub fn fill_eager(params: &ModelParams, inputs: &[Tensor], parallel: bool) -> Result<Chart> {
    if !parallel {
        let mut b = Eager::new(&params.store);
        let inputs: Vec<_> = inputs.iter().cloned().map(Arc::new).collect();
        return fill(&mut b, params, &inputs);
    }
    let t = inputs.len();
    if t == 0 {
        return Err(Error::Invalid("cannot build a chart over zero tokens".into()));
    }
    let eager = Eager::new(&params.store);
    let mut inside: Vec<InsideCell<Arc<Tensor>>> = inputs
        .par_iter()
        .map(|v| leaf_cell(&mut eager.clone(), params, &Arc::new(v.clone())))
        .collect::<Result<_>>()?;
    let mut inside_ops = 0;
    for len in 2..=t {
        let spans: Vec<Span> = level(t, len).collect();
        let cells: Vec<_> = spans
            .par_iter()
            .map(|&s| inside_cell(&mut eager.clone(), params, t, &inside, s))
            .collect::<Result<_>>()?;
        inside.extend(cells);
        inside_ops += (len - 1) * spans.len();
    }
    let mut outside: Vec<Option<OutsideCell<Arc<Tensor>>>> = vec![None; cell_count(t)];
    outside[span_index(t, Span::new(0, t))] = Some(root_outside(&mut eager.clone(), params)?);
    let mut outside_ops = 0;
    for len in (1..t).rev() {
        let spans: Vec<Span> = level(t, len).collect();
        let cells: Vec<_> = spans
            .par_iter()
            .map(|&s| outside_cell(&mut eager.clone(), params, t, &inside, &outside, s))
            .collect::<Result<_>>()?;
        for (s, c) in spans.into_iter().zip(cells) {
            outside_ops += s.start + t - s.end();
            outside[span_index(t, s)] = Some(c);
        }
    }
    Ok(ChartCells {
        len: t,
        inside,
        outside: outside.into_iter().map(|c| c.expect("every span filled")).collect(),
        inside_ops,
        outside_ops,
    })
}

impl Chart {
    /// Normalized inside pair weights for every span, in storage order
    /// (empty for leaves).
    pub fn pair_weights(&self) -> Vec<Vec<Real>> {
        self.inside
            .iter()
            .map(|c| c.weights.as_ref().map(|w| w.data().to_vec()).unwrap_or_default())
            .collect()
    }

    /// Raw inside pair scores ê for every span, in storage order.
    pub fn pair_scores(&self) -> Vec<Vec<Real>> {
        self.inside
            .iter()
            .map(|c| c.pair_scores.as_ref().map(|w| w.data().to_vec()).unwrap_or_default())
            .collect()
    }

    /// `[ā(k); b̄(k)]` for a span.
    pub fn span_representation(&self, span: Span) -> Result<Vec<Real>> {
        if !self.has_outside() {
            return Err(Error::Invalid("span representation needs the outside pass".into()));
        }
        let mut v = self.inside_at(span).h.data().to_vec();
        v.extend_from_slice(self.outside_at(span).h.data());
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComposeKind, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn span_pairs_enumeration() {
        assert_eq!(
            span_pairs(Span::new(0, 2)).unwrap(),
            vec![(Span::new(0, 1), Span::new(1, 1))]
        );
        assert_eq!(
            span_pairs(Span::new(0, 3)).unwrap(),
            vec![
                (Span::new(0, 1), Span::new(1, 2)),
                (Span::new(0, 2), Span::new(2, 1))
            ]
        );
        assert_eq!(span_pairs(Span::new(3, 10)).unwrap().len(), 9);
        assert!(span_pairs(Span::new(2, 1)).is_err());
    }

    #[test]
    fn outside_context_enumeration() {
        let got = outside_contexts(Span::new(1, 1), 3).unwrap();
        assert_eq!(
            got,
            vec![
                Context {
                    parent: Span::new(0, 2),
                    sibling: Span::new(0, 1),
                    side: SiblingSide::Left
                },
                Context {
                    parent: Span::new(1, 2),
                    sibling: Span::new(2, 1),
                    side: SiblingSide::Right
                },
            ]
        );
        assert_eq!(outside_contexts(Span::new(0, 1), 2).unwrap().len(), 1);
        assert!(outside_contexts(Span::new(0, 4), 4).is_err());
    }

    #[test]
    fn outside_contexts_match_adjacency_brute_force() {
        let t = 6;
        for k in all_spans(t).filter(|s| s.len < t) {
            // Every (parent, sibling) with parent = sibling ∪ k and sibling adjacent to k.
            let mut brute = Vec::new();
            for p in all_spans(t) {
                for s in all_spans(t) {
                    let left = s.end() == k.start && p == Span::new(s.start, s.len + k.len);
                    let right = k.end() == s.start && p == Span::new(k.start, s.len + k.len);
                    if left || right {
                        brute.push((p, s));
                    }
                }
            }
            let mut got: Vec<_> = outside_contexts(k, t)
                .unwrap()
                .into_iter()
                .map(|c| (c.parent, c.sibling))
                .collect();
            brute.sort();
            got.sort();
            assert_eq!(got, brute, "span {k:?}");
            assert_eq!(got.len(), k.start + t - k.end());
        }
    }

    #[test]
    fn span_index_is_dense() {
        for t in 1..12 {
            let idx: Vec<usize> = all_spans(t).map(|s| span_index(t, s)).collect();
            assert_eq!(idx, (0..cell_count(t)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn unit_normalize_cases() {
        assert_eq!(unit_normalize(&Tensor::vector(vec![3.0, 4.0])).unwrap().data(), &[0.6, 0.8]);
        let u = Tensor::vector(vec![0.6, 0.8]);
        assert_eq!(unit_normalize(&u).unwrap(), u);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = Tensor::vector((0..800).map(|_| rng.gen_range(-1.0..1.0)).collect());
        assert!((unit_normalize(&v).unwrap().norm() - 1.0).abs() < 1e-9);
        assert!(unit_normalize(&Tensor::zeros(&[3])).is_err());
    }

    fn setup(compose: ComposeKind, t: usize, seed: u64) -> (ModelParams, Vec<Tensor>) {
        let cfg = ModelConfig {
            input_dim: 3,
            hidden_dim: 4,
            compose,
            share: false,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let inputs = (0..t)
            .map(|_| Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        (p, inputs)
    }

    #[test]
    fn single_token_chart() {
        let (p, x) = setup(ComposeKind::Mlp, 1, 0);
        let chart = fill_eager(&p, &x, false).unwrap();
        assert_eq!(chart.inside.len(), 1);
        let root_bias = unit_normalize(p.store.get(p.root_bias)).unwrap();
        assert_eq!(chart.outside[0].h.as_ref(), &root_bias);
        assert_eq!(chart.inside[0].score.item(), 0.0);
    }

    #[test]
    fn two_token_chart() {
        let (p, x) = setup(ComposeKind::Mlp, 2, 1);
        let chart = fill_eager(&p, &x, false).unwrap();
        let root = chart.inside_at(Span::new(0, 2));
        assert_eq!(root.weights.as_ref().unwrap().data(), &[1.0]);
        let mut b = Eager::new(&p.store);
        let l = chart.inside_at(Span::new(0, 1));
        let r = chart.inside_at(Span::new(1, 1));
        let a = compose::compose(
            &mut b,
            &p,
            Side::Inside,
            &Cell { h: l.h.clone(), c: None },
            &Cell { h: r.h.clone(), c: None },
        )
        .unwrap();
        let expect = unit_normalize(&a.h).unwrap();
        for (x, y) in root.h.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let s = p.store.get(p.inside_score);
        let e_hat = l.h.dot(&s.matvec(&r.h).unwrap());
        assert!((root.score.item() - e_hat).abs() < 1e-12);
        // each leaf has one context with weight 1
        for k in 0..2 {
            let o = chart.outside_at(Span::new(k, 1));
            assert_eq!(o.weights.as_ref().unwrap().data(), &[1.0]);
        }
    }

    /// Recomputes every inside cell recursively with plain loops over span pairs.
    fn inside_oracle(
        p: &ModelParams,
        x: &[Tensor],
        span: Span,
        memo: &mut std::collections::HashMap<Span, (Tensor, Real)>,
    ) -> (Tensor, Real) {
        if let Some(v) = memo.get(&span) {
            return v.clone();
        }
        let mut b = Eager::new(&p.store);
        let out = if span.len == 1 {
            let v = b.constant(x[span.start].clone());
            let leaf = compose::leaf_transform(&mut b, p, &v).unwrap();
            (unit_normalize(&leaf.h).unwrap(), 0.0)
        } else {
            let s = p.store.get(p.inside_score);
            let mut comps = Vec::new();
            let mut scores = Vec::new();
            for split in 1..span.len {
                let (hi, ei) = inside_oracle(p, x, Span::new(span.start, split), memo);
                let (hj, ej) = inside_oracle(p, x, Span::new(span.start + split, span.len - split), memo);
                scores.push(hi.dot(&s.matvec(&hj).unwrap()) + ei + ej);
                let (ci, cj) = (b.constant(hi), b.constant(hj));
                comps.push(compose::compose_mlp(&mut b, p, Side::Inside, &ci, &cj).unwrap().h);
            }
            let m = scores.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let z: Real = scores.iter().map(|s| (s - m).exp()).sum();
            let w: Vec<Real> = scores.iter().map(|s| (s - m).exp() / z).collect();
            let mut h = vec![0.0; 4];
            for (wp, c) in w.iter().zip(&comps) {
                for (hk, ck) in h.iter_mut().zip(c.data()) {
                    *hk += wp * ck;
                }
            }
            let e: Real = w.iter().zip(&scores).map(|(a, b)| a * b).sum();
            (unit_normalize(&Tensor::vector(h)).unwrap(), e)
        };
        memo.insert(span, out.clone());
        out
    }

    #[test]
    fn inside_pass_matches_recursive_oracle() {
        let (p, x) = setup(ComposeKind::Mlp, 4, 7);
        let chart = fill_eager(&p, &x, false).unwrap();
        let mut memo = Default::default();
        for span in all_spans(4) {
            let (h, e) = inside_oracle(&p, &x, span, &mut memo);
            let cell = chart.inside_at(span);
            for (a, b) in cell.h.data().iter().zip(h.data()) {
                assert!((a - b).abs() < 1e-12, "{span:?}");
            }
            assert!((cell.score.item() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn charts_are_normalized_and_weights_sum_to_one() {
        for compose in [ComposeKind::Mlp, ComposeKind::TreeLstm] {
            let (p, x) = setup(compose, 6, 3);
            let chart = fill_eager(&p, &x, false).unwrap();
            assert_eq!(chart.inside.len(), cell_count(6));
            for span in all_spans(6) {
                let i = chart.inside_at(span);
                let o = chart.outside_at(span);
                assert!((i.h.norm() - 1.0).abs() < 1e-6);
                assert!((o.h.norm() - 1.0).abs() < 1e-6);
                assert_eq!(i.c.is_some(), compose == ComposeKind::TreeLstm);
                for w in [&i.weights, &o.weights].into_iter().flatten() {
                    assert!((w.data().iter().sum::<Real>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn parallel_levels_match_serial() {
        for compose in [ComposeKind::Mlp, ComposeKind::TreeLstm] {
            let (p, x) = setup(compose, 7, 11);
            let a = fill_eager(&p, &x, false).unwrap();
            let b = fill_eager(&p, &x, true).unwrap();
            for (ca, cb) in a.inside.iter().zip(&b.inside) {
                assert_eq!(ca.h, cb.h);
                assert_eq!(ca.score, cb.score);
            }
            for (ca, cb) in a.outside.iter().zip(&b.outside) {
                assert_eq!(ca.h, cb.h);
                assert_eq!(ca.score, cb.score);
            }
            assert_eq!((a.inside_ops, a.outside_ops), (b.inside_ops, b.outside_ops));
        }
    }

    #[test]
    fn graph_and_eager_charts_agree() {
        let (p, x) = setup(ComposeKind::TreeLstm, 5, 2);
        let eager = fill_eager(&p, &x, false).unwrap();
        let mut g = Graph::new(&p.store);
        let inputs: Vec<_> = x.iter().map(|v| g.constant(v.clone())).collect();
        let recorded = fill(&mut g, &p, &inputs).unwrap().materialize(&g);
        for (a, b) in eager.outside.iter().zip(&recorded.outside) {
            assert_eq!(a.h, b.h);
        }
    }

    #[test]
    fn outside_before_inside_is_an_error() {
        let (p, _) = setup(ComposeKind::Mlp, 3, 0);
        let mut b = Eager::new(&p.store);
        let mut empty = ChartCells {
            len: 3,
            inside: vec![],
            outside: vec![],
            inside_ops: 0,
            outside_ops: 0,
        };
        assert!(outside_pass(&mut b, &p, &mut empty).is_err());
    }
}
