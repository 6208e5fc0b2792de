//! Maximum-score binary tree extraction and trailing punctuation handling.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chart::{all_spans, cell_count, span_index, Chart, Span};
use crate::error::{Error, Result};
use crate::numeric::Real;
use crate::tree::Tree;

/// Which per-pair quantity the decoder sums along a tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CkyScoring {
    /// Normalized weights `e`, summed as probabilities.
    #[default]
    Normalized,
    /// `ln e`, so a tree's score is its log-product of weights.
    Log,
    /// Unnormalized compatibility scores `ê`.
    Raw,
}

/// Per-span pair weights in chart storage order, indexed by split point.
#[derive(Clone, Debug, PartialEq)]
pub struct PairWeights {
    len: usize,
    cells: Vec<Vec<Real>>,
}

impl PairWeights {
    /// `cells[span_index(t, span)]` holds `span.len - 1` weights, one per split.
    pub fn new(len: usize, cells: Vec<Vec<Real>>) -> Result<Self> {
        if len == 0 {
            return Err(Error::Invalid("cannot decode an empty sentence".into()));
        }
        if cells.len() != cell_count(len) {
            return Err(Error::Invalid(format!(
                "expected {} span cells for {len} tokens, got {}",
                cell_count(len),
                cells.len()
            )));
        }
        for span in all_spans(len) {
            let got = cells[span_index(len, span)].len();
            if got != span.len - 1 {
                return Err(Error::Invalid(format!(
                    "span ({}, {}) needs {} pair weights, has {got}",
                    span.start,
                    span.len,
                    span.len - 1
                )));
            }
        }
        Ok(PairWeights { len, cells })
    }

    /// Builds weights by calling `f(span, split)` for every pair.
    pub fn from_fn(len: usize, mut f: impl FnMut(Span, usize) -> Real) -> Result<Self> {
        let cells = all_spans(len)
            .map(|span| (1..span.len).map(|s| f(span, s)).collect())
            .collect();
        PairWeights::new(len, cells)
    }

    pub fn from_chart(chart: &Chart, scoring: CkyScoring) -> Result<Self> {
        let cells = match scoring {
            CkyScoring::Normalized => chart.pair_weights(),
            CkyScoring::Raw => chart.pair_scores(),
            CkyScoring::Log => chart
                .pair_weights()
                .into_iter()
                .map(|c| c.into_iter().map(|w| w.max(Real::MIN_POSITIVE).ln()).collect())
                .collect(),
        };
        PairWeights::new(chart.len, cells)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Weight of splitting `span` after its first `split` tokens.
    pub fn get(&self, span: Span, split: usize) -> Real {
        self.cells[span_index(self.len, span)][split - 1]
    }
}

/// Best score and best split for every span after the forward sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BacktrackTable {
    len: usize,
    scores: Vec<Real>,
    splits: Vec<Option<usize>>,
}

impl BacktrackTable {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn score(&self, span: Span) -> Real {
        self.scores[span_index(self.len, span)]
    }

    /// Left-child length of the best split; `None` for leaves.
    pub fn split(&self, span: Span) -> Option<usize> {
        self.splits[span_index(self.len, span)]
    }

    pub fn best_score(&self) -> Real {
        self.score(Span::new(0, self.len))
    }

    pub fn tree(&self, tokens: &[String]) -> Result<Tree> {
        self.build(tokens, false)
    }

    /// Like [`BacktrackTable::tree`] with each internal node labeled by its score.
    pub fn tree_with_scores(&self, tokens: &[String]) -> Result<Tree> {
        self.build(tokens, true)
    }

    fn build(&self, tokens: &[String], annotate: bool) -> Result<Tree> {
        if tokens.len() != self.len {
            return Err(Error::Invalid(format!(
                "{} tokens for a table over {}",
                tokens.len(),
                self.len
            )));
        }
        Ok(self.backtrack(Span::new(0, self.len), tokens, annotate))
    }

    fn backtrack(&self, span: Span, tokens: &[String], annotate: bool) -> Tree {
        match self.split(span) {
            None => Tree::leaf(span.start, tokens[span.start].clone()),
            Some(s) => {
                let left = self.backtrack(Span::new(span.start, s), tokens, annotate);
                let right = self.backtrack(Span::new(span.start + s, span.len - s), tokens, annotate);
                let label = annotate.then(|| format!("{:.4}", self.score(span)));
                Tree::Node {
                    label,
                    children: vec![left, right],
                }
            }
        }
    }
}

/// Forward sweep: `x_k = max over splits of x_left + x_right + e`, leaves 0.
/// The smallest split wins ties.
pub fn cky_table(weights: &PairWeights) -> BacktrackTable {
    let t = weights.len;
    let mut scores = vec![0.0; cell_count(t)];
    let mut splits = vec![None; cell_count(t)];
    for span in all_spans(t).filter(|s| !s.is_leaf()) {
        let mut best: Option<(Real, usize)> = None;
        for s in 1..span.len {
            let x = scores[span_index(t, Span::new(span.start, s))]
                + scores[span_index(t, Span::new(span.start + s, span.len - s))]
                + weights.get(span, s);
            if best.is_none_or(|(b, _)| x > b) {
                best = Some((x, s));
            }
        }
        let (x, s) = best.expect("non-leaf span has a split");
        let k = span_index(t, span);
        scores[k] = x;
        splits[k] = Some(s);
    }
    BacktrackTable { len: t, scores, splits }
}

/// Highest-scoring binary tree over `tokens`.
pub fn cky(weights: &PairWeights, tokens: &[String]) -> Result<Tree> {
    cky_table(weights).tree(tokens)
}

/// Sum of pair weights over a binary tree's internal nodes, accumulated
/// as `score(left) + score(right) + e`.
pub fn tree_score(tree: &Tree, weights: &PairWeights) -> Result<Real> {
    match tree {
        Tree::Leaf { .. } => Ok(0.0),
        Tree::Node { children, .. } => {
            let [l, r] = children.as_slice() else {
                return Err(Error::Invalid("tree_score needs a binary tree".into()));
            };
            let (start, end) = tree.span();
            if end > weights.len {
                return Err(Error::Invalid("tree extends past the weight table".into()));
            }
            let split = l.span().1 - start;
            Ok(tree_score(l, weights)? + tree_score(r, weights)? + weights.get(Span::new(start, end - start), split))
        }
    }
}

pub const BRUTE_FORCE_MAX_LEN: usize = 12;

/// Every binary tree over `span`, ordered by root split, then left subtree, then right.
fn enumerate(span: Span, tokens: &[String]) -> Vec<Tree> {
    if span.is_leaf() {
        return vec![Tree::leaf(span.start, tokens[span.start].clone())];
    }
    let mut out = Vec::new();
    for s in 1..span.len {
        let lefts = enumerate(Span::new(span.start, s), tokens);
        let rights = enumerate(Span::new(span.start + s, span.len - s), tokens);
        for l in &lefts {
            for r in &rights {
                out.push(Tree::binary(l.clone(), r.clone()));
            }
        }
    }
    out
}

/// All binary trees over `tokens` in enumeration order.
pub fn all_binary_trees(tokens: &[String]) -> Result<Vec<Tree>> {
    if tokens.is_empty() || tokens.len() > BRUTE_FORCE_MAX_LEN {
        return Err(Error::Invalid(format!(
            "enumeration supports 1..={BRUTE_FORCE_MAX_LEN} tokens, got {}",
            tokens.len()
        )));
    }
    Ok(enumerate(Span::new(0, tokens.len()), tokens))
}

/// Exhaustive argmax over all binary trees; the first maximum in
/// enumeration order wins, which matches the decoder's tie-break.
pub fn brute_force_best_tree(weights: &PairWeights, tokens: &[String]) -> Result<(Tree, Real)> {
    if tokens.len() != weights.len {
        return Err(Error::Invalid("token count does not match the weight table".into()));
    }
    let mut best: Option<(Tree, Real)> = None;
    for tree in all_binary_trees(tokens)? {
        let score = tree_score(&tree, weights)?;
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((tree, score));
        }
    }
    Ok(best.expect("at least one tree"))
}

/// Token strings "0", "1", … for index-only trees.
pub fn index_tokens(len: usize) -> Vec<String> {
    (0..len).map(|i| i.to_string()).collect()
}

pub const DEFAULT_PUNCTUATION: &[&str] = &[
    ".", ",", ";", ":", "!", "?", "''", "``", "\"", "'", "--", "...", "-RRB-", "-LRB-", "(", ")",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PunctSet(HashSet<String>);

impl Default for PunctSet {
    fn default() -> Self {
        PunctSet::new(DEFAULT_PUNCTUATION.iter().copied())
    }
}

impl PunctSet {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        PunctSet(tokens.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }
}

fn last_leaf(tree: &Tree) -> &Tree {
    match tree {
        Tree::Leaf { .. } => tree,
        Tree::Node { children, .. } => last_leaf(children.last().expect("nodes have children")),
    }
}

/// Removes the rightmost leaf; a node left with one child is replaced by it.
fn drop_last_leaf(tree: &Tree) -> Option<Tree> {
    match tree {
        Tree::Leaf { .. } => None,
        Tree::Node { label, children } => {
            let mut kept: Vec<Tree> = children[..children.len() - 1].to_vec();
            if let Some(rest) = drop_last_leaf(children.last().expect("nodes have children")) {
                kept.push(rest);
            }
            match kept.len() {
                0 => None,
                1 => kept.pop(),
                _ => Some(Tree::Node {
                    label: label.clone(),
                    children: kept,
                }),
            }
        }
    }
}

/// Makes each trailing punctuation token the right child of a new root,
/// rightmost first: `(x (y .))` becomes `((x y) .)`.
pub fn attach_trailing_punct(tree: &Tree, punct: &PunctSet) -> Tree {
    let last = last_leaf(tree);
    let Tree::Leaf { token, .. } = last else { unreachable!() };
    if tree.is_leaf() || !punct.contains(token) {
        return tree.clone();
    }
    let rest = drop_last_leaf(tree).expect("a node keeps at least one leaf");
    Tree::binary(attach_trailing_punct(&rest, punct), last.clone())
}
