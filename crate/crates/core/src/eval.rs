//! Bracketing F1, segment recall, tree statistics, baselines, and phrase retrieval.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Real;
use crate::parser::PunctSet;
use crate::tree::{SpanRange, Tree};

/// Unlabeled bracketing evaluation regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Evaluate on the test section only (otherwise on all data). The caller
    /// selects the treebank file; this records which regime it represents.
    pub use_test_split_only: bool,
    pub keep_punctuation: bool,
    pub max_length: Option<usize>,
    pub binarize_gold: bool,
    /// Count the whole-sentence span as a constituent.
    pub count_trivial_spans: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings::wsj()
    }
}

impl EvalSettings {
    pub fn wsj() -> Self {
        EvalSettings {
            use_test_split_only: true,
            keep_punctuation: true,
            max_length: None,
            binarize_gold: true,
            count_trivial_spans: true,
        }
    }

    pub fn wsj10() -> Self {
        EvalSettings {
            use_test_split_only: false,
            keep_punctuation: false,
            max_length: Some(10),
            binarize_gold: false,
            count_trivial_spans: false,
        }
    }

    pub fn wsj40() -> Self {
        EvalSettings {
            use_test_split_only: true,
            keep_punctuation: false,
            max_length: Some(40),
            binarize_gold: false,
            count_trivial_spans: false,
        }
    }

    pub const PRESETS: [&'static str; 3] = ["wsj", "wsj10", "wsj40"];

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "").as_str() {
            "wsj" => Ok(Self::wsj()),
            "wsj10" => Ok(Self::wsj10()),
            "wsj40" => Ok(Self::wsj40()),
            _ => Err(Error::Invalid(format!(
                "unknown preset {name:?}; expected one of wsj, wsj10, wsj40"
            ))),
        }
    }

    /// Human-readable settings rows: split, punctuation, max length, binarized, trivial spans.
    pub fn table_cells(&self) -> [(&'static str, String); 5] {
        let yn = |b: bool| if b { "Yes" } else { "No" }.to_string();
        [
            ("Split", if self.use_test_split_only { "Test" } else { "All" }.to_string()),
            ("w/ Punctuation", yn(self.keep_punctuation)),
            (
                "Max Length",
                self.max_length.map_or("∞".to_string(), |n| n.to_string()),
            ),
            ("Binarized", yn(self.binarize_gold)),
            ("Trivial Spans", yn(self.count_trivial_spans)),
        ]
    }
}

/// Internal-node spans longer than one token.
pub fn span_set(tree: &Tree, count_trivial: bool) -> BTreeSet<SpanRange> {
    let whole = tree.span();
    tree.constituents()
        .into_iter()
        .map(|(s, _)| s)
        .filter(|&(a, b)| b - a > 1 && (count_trivial || (a, b) != whole))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prf {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den > 0 {
                num as Real / den as Real
            } else if predicted == gold {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
        }
    }
}

fn check_same_length(pred: &Tree, gold: &Tree) -> Result<()> {
    let (p, g) = (pred.num_leaves(), gold.num_leaves());
    if p != g {
        return Err(Error::Invalid(format!(
            "predicted tree has {p} tokens, gold has {g}"
        )));
    }
    Ok(())
}

/// P/R/F1 between two trees over the same tokens; only trivial-span counting
/// is read from `settings` (see [`prepare_pair`] for the rest).
pub fn bracketing_f1(pred: &Tree, gold: &Tree, settings: &EvalSettings) -> Result<Prf> {
    check_same_length(pred, gold)?;
    let p = span_set(pred, settings.count_trivial_spans);
    let g = span_set(gold, settings.count_trivial_spans);
    Ok(Prf::from_counts(p.intersection(&g).count(), p.len(), g.len()))
}

/// Applies punctuation stripping, the length bound, and gold binarization.
/// `None` means the sentence is excluded under these settings.
pub fn prepare_pair(
    pred: &Tree,
    gold: &Tree,
    settings: &EvalSettings,
    punct: &PunctSet,
) -> Result<Option<(Tree, Tree)>> {
    check_same_length(pred, gold)?;
    let (pred, gold) = if settings.keep_punctuation {
        (pred.clone(), gold.clone())
    } else {
        match (strip_punct(pred, punct), strip_punct(gold, punct)) {
            (Some(p), Some(g)) => (p, g),
            _ => return Ok(None),
        }
    };
    if settings.max_length.is_some_and(|m| gold.num_leaves() > m) {
        return Ok(None);
    }
    let gold = if settings.binarize_gold {
        binarize(&gold, BinarizeDirection::Right)
    } else {
        gold
    };
    Ok(Some((pred, gold)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Span counts pooled over the corpus before taking ratios.
    #[default]
    Micro,
    /// Mean of per-sentence scores.
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusF1 {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    /// Sentences that entered the average.
    pub evaluated: usize,
    /// Sentences excluded by length or punctuation-only content.
    pub skipped: usize,
    pub per_sentence: Vec<Prf>,
}

pub fn corpus_f1(
    preds: &[Tree],
    golds: &[Tree],
    settings: &EvalSettings,
    averaging: Averaging,
    punct: &PunctSet,
) -> Result<CorpusF1> {
    if preds.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "{} predicted trees but {} gold trees",
            preds.len(),
            golds.len()
        )));
    }
    let mut per_sentence = Vec::new();
    let mut skipped = 0;
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        let pair = prepare_pair(p, g, settings, punct)
            .map_err(|e| Error::Invalid(format!("sentence {}: {e}", i + 1)))?;
        match pair {
            Some((p, g)) => per_sentence.push(bracketing_f1(&p, &g, settings)?),
            None => skipped += 1,
        }
    }
    let (precision, recall, f1) = match averaging {
        Averaging::Micro => {
            let sum = |f: fn(&Prf) -> usize| per_sentence.iter().map(f).sum::<usize>();
            let pooled = Prf::from_counts(sum(|s| s.matched), sum(|s| s.predicted), sum(|s| s.gold));
            (pooled.precision, pooled.recall, pooled.f1)
        }
        Averaging::Macro => {
            let n = per_sentence.len().max(1) as Real;
            let mean = |f: fn(&Prf) -> Real| per_sentence.iter().map(f).sum::<Real>() / n;
            (mean(|s| s.precision), mean(|s| s.recall), mean(|s| s.f1))
        }
    };
    Ok(CorpusF1 {
        precision,
        recall,
        f1,
        evaluated: per_sentence.len(),
        skipped,
        per_sentence,
    })
}

/// Mean, median, and max of one metric across independent runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub mean: Real,
    pub median: Real,
    pub max: Real,
}

pub fn summarize_runs(values: &[Real]) -> Result<RunSummary> {
    if values.is_empty() {
        return Err(Error::Invalid("no runs to summarize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(RunSummary {
        mean: sorted.iter().sum::<Real>() / n as Real,
        median,
        max: sorted[n - 1],
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LabelCount {
    pub hits: usize,
    pub total: usize,
}

impl LabelCount {
    pub fn recall(&self) -> Real {
        if self.total == 0 {
            0.0
        } else {
            self.hits as Real / self.total as Real
        }
    }
}

/// Label used for unlabeled gold nodes in per-label reports.
pub const NO_LABEL: &str = "<none>";

/// For every labeled gold span longer than one token, whether the prediction contains it.
pub fn label_recall(pred: &Tree, gold: &Tree) -> Result<BTreeMap<String, LabelCount>> {
    check_same_length(pred, gold)?;
    let predicted = span_set(pred, true);
    let mut out: BTreeMap<String, LabelCount> = BTreeMap::new();
    for ((a, b), label) in gold.constituents() {
        if b - a < 2 {
            continue;
        }
        let entry = out.entry(label.unwrap_or(NO_LABEL).to_string()).or_default();
        entry.total += 1;
        entry.hits += predicted.contains(&(a, b)) as usize;
    }
    Ok(out)
}

pub fn merge_label_counts(into: &mut BTreeMap<String, LabelCount>, from: &BTreeMap<String, LabelCount>) {
    for (label, c) in from {
        let e = into.entry(label.clone()).or_default();
        e.hits += c.hits;
        e.total += c.total;
    }
}

pub fn tree_depth(tree: &Tree) -> usize {
    tree.depth()
}

pub fn mean_depth(trees: &[Tree]) -> Real {
    if trees.is_empty() {
        return 0.0;
    }
    trees.iter().map(|t| t.depth() as Real).sum::<Real>() / trees.len() as Real
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    LeftBranching,
    RightBranching,
    Balanced,
    Random { seed: u64 },
}

fn leaves(tokens: &[String], start: usize, len: usize) -> impl DoubleEndedIterator<Item = Tree> + '_ {
    (start..start + len).map(move |i| Tree::leaf(i, tokens[i].clone()))
}

fn balanced(tokens: &[String], start: usize, len: usize) -> Tree {
    if len == 1 {
        return Tree::leaf(start, tokens[start].clone());
    }
    let left = len.div_ceil(2);
    Tree::binary(balanced(tokens, start, left), balanced(tokens, start + left, len - left))
}

fn ln_catalan(n: usize) -> Real {
    (2..=n).map(|k| (((n + k) as Real) / k as Real).ln()).sum()
}

fn random_span(tokens: &[String], start: usize, len: usize, rng: &mut impl Rng) -> Tree {
    if len == 1 {
        return Tree::leaf(start, tokens[start].clone());
    }
    // Left size s has probability C(s-1) C(len-s-1) / C(len-1).
    let logs: Vec<Real> = (1..len)
        .map(|s| ln_catalan(s - 1) + ln_catalan(len - s - 1))
        .collect();
    let top = logs.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let weights: Vec<Real> = logs.iter().map(|l| (l - top).exp()).collect();
    let mut u = rng.gen::<Real>() * weights.iter().sum::<Real>();
    let mut split = len - 1;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            split = i + 1;
            break;
        }
        u -= w;
    }
    Tree::binary(
        random_span(tokens, start, split, rng),
        random_span(tokens, start + split, len - split, rng),
    )
}

/// A tree drawn uniformly from all binary trees over `tokens`.
pub fn random_tree(tokens: &[String], rng: &mut impl Rng) -> Result<Tree> {
    if tokens.is_empty() {
        return Err(Error::Invalid("baseline trees need at least one token".into()));
    }
    Ok(random_span(tokens, 0, tokens.len(), rng))
}

pub fn baseline_tree(kind: Baseline, tokens: &[String]) -> Result<Tree> {
    let t = tokens.len();
    if t == 0 {
        return Err(Error::Invalid("baseline trees need at least one token".into()));
    }
    Ok(match kind {
        Baseline::LeftBranching => leaves(tokens, 1, t - 1)
            .fold(Tree::leaf(0, tokens[0].clone()), Tree::binary),
        Baseline::RightBranching => leaves(tokens, 0, t - 1)
            .rev()
            .fold(Tree::leaf(t - 1, tokens[t - 1].clone()), |acc, l| Tree::binary(l, acc)),
        Baseline::Balanced => balanced(tokens, 0, t),
        Baseline::Random { seed } => random_span(tokens, 0, t, &mut ChaCha8Rng::seed_from_u64(seed)),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinarizeDirection {
    #[default]
    Right,
    Left,
}

/// Splits n-ary nodes into nested binary ones and collapses unary chains,
/// keeping the outermost label. New intermediate nodes are unlabeled.
pub fn binarize(tree: &Tree, direction: BinarizeDirection) -> Tree {
    match tree {
        Tree::Leaf { .. } => tree.clone(),
        Tree::Node { label, children } => {
            let mut kids: Vec<Tree> = children.iter().map(|c| binarize(c, direction)).collect();
            if kids.len() == 1 {
                let only = kids.pop().expect("one child");
                return relabel(only, label.clone());
            }
            let nested = match direction {
                BinarizeDirection::Right => {
                    let last = kids.pop().expect("children");
                    kids.into_iter().rev().fold(last, |acc, c| Tree::binary(c, acc))
                }
                BinarizeDirection::Left => {
                    let mut it = kids.into_iter();
                    let first = it.next().expect("children");
                    it.fold(first, Tree::binary)
                }
            };
            relabel(nested, label.clone())
        }
    }
}

fn relabel(tree: Tree, label: Option<String>) -> Tree {
    match tree {
        Tree::Node { children, label: inner } => Tree::Node {
            label: label.or(inner),
            children,
        },
        leaf => leaf,
    }
}

fn strip(tree: &Tree, punct: &PunctSet) -> Option<Tree> {
    match tree {
        Tree::Leaf { token, .. } => (!punct.contains(token)).then(|| tree.clone()),
        Tree::Node { label, children } => {
            let mut kept: Vec<Tree> = children.iter().filter_map(|c| strip(c, punct)).collect();
            match kept.len() {
                0 => None,
                1 => Some(relabel(kept.pop().expect("one child"), label.clone())),
                _ => Some(Tree::Node {
                    label: label.clone(),
                    children: kept,
                }),
            }
        }
    }
}

/// Removes punctuation leaves, deletes emptied constituents, collapses unary
/// chains (keeping the outer label), and renumbers leaves. `None` when every
/// token is punctuation.
pub fn strip_punct(tree: &Tree, punct: &PunctSet) -> Option<Tree> {
    let mut out = strip(tree, punct)?;
    out.reindex();
    Some(out)
}

/// Best F1 a binary prediction can reach against this gold tree: that of its
/// own right-binarization, which keeps every gold span.
pub fn upper_bound_f1(gold: &Tree, settings: &EvalSettings) -> Result<Prf> {
    bracketing_f1(&binarize(gold, BinarizeDirection::Right), gold, settings)
}

/// Labeled spans longer than one token, in pre-order, for phrase retrieval.
pub fn labeled_spans(gold: &Tree) -> Vec<(SpanRange, String)> {
    let mut seen = BTreeSet::new();
    gold.constituents()
        .into_iter()
        .filter(|((a, b), l)| b - a > 1 && l.is_some())
        .filter(|(s, _)| seen.insert(*s))
        .map(|(s, l)| (s, l.expect("filtered").to_string()))
        .collect()
}

fn cosine(a: &[Real], b: &[Real]) -> Real {
    let dot: Real = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<Real>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<Real>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fraction of each query's `k` most cosine-similar other spans that share
/// its label, averaged over queries. Ties go to the lower index.
pub fn phrase_precision_at_k(reps: &[Vec<Real>], labels: &[String], k: usize) -> Result<Real> {
    if reps.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} representations but {} labels",
            reps.len(),
            labels.len()
        )));
    }
    if k == 0 || k + 1 > reps.len() {
        return Err(Error::Invalid(format!(
            "K = {k} needs at least {} labeled spans, have {}",
            k + 1,
            reps.len()
        )));
    }
    let mut total = 0.0;
    for (i, q) in reps.iter().enumerate() {
        let mut sims: Vec<(Real, usize)> = reps
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, r)| (cosine(q, r), j))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let same = sims[..k].iter().filter(|(_, j)| labels[*j] == labels[i]).count();
        total += same as Real / k as Real;
    }
    Ok(total / reps.len() as Real)
}
