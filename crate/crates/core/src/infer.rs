//! Parsing and scoring with a trained parameter set.

use std::sync::Arc;

use crate::chart::{fill_eager, Chart};
use crate::data::EmbeddingSource;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::{Eager, Ops, Real, Tensor};
use crate::objective::{chart_loss, negative_vectors, LossKind};
use crate::parser::{attach_trailing_punct, cky_table, CkyScoring, PairWeights, PunctSet};
use crate::tree::Tree;

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    pub scoring: CkyScoring,
    /// Reattach trailing punctuation at the root.
    pub pp: bool,
    pub punct: PunctSet,
    /// Label internal nodes with their decoder scores.
    pub show_scores: bool,
    /// Fill each chart level in parallel on the current rayon pool.
    pub parallel: bool,
}

pub fn check_embedding_dim(params: &ModelParams, source: &EmbeddingSource) -> Result<()> {
    if params.config.input_dim != source.dim() {
        return Err(Error::Data(format!(
            "model expects {}-dimensional inputs but embeddings are {}-dimensional",
            params.config.input_dim,
            source.dim()
        )));
    }
    Ok(())
}

pub fn embed_tokens(source: &EmbeddingSource, tokens: &[String]) -> Vec<Tensor> {
    tokens.iter().map(|t| source.lookup(t)).collect()
}

pub fn chart_for(
    params: &ModelParams,
    source: &EmbeddingSource,
    tokens: &[String],
    parallel: bool,
) -> Result<Chart> {
    check_embedding_dim(params, source)?;
    fill_eager(params, &embed_tokens(source, tokens), parallel)
}

pub fn parse_chart(chart: &Chart, tokens: &[String], opts: &ParseOptions) -> Result<Tree> {
    let table = cky_table(&PairWeights::from_chart(chart, opts.scoring)?);
    let tree = if opts.show_scores {
        table.tree_with_scores(tokens)?
    } else {
        table.tree(tokens)?
    };
    Ok(if opts.pp {
        attach_trailing_punct(&tree, &opts.punct)
    } else {
        tree
    })
}

pub fn parse_tokens(
    params: &ModelParams,
    source: &EmbeddingSource,
    tokens: &[String],
    opts: &ParseOptions,
) -> Result<Tree> {
    let chart = chart_for(params, source, tokens, opts.parallel)?;
    parse_chart(&chart, tokens, opts)
}

/// Sentence loss and the rank of each leaf's true token among itself and
/// `negatives` (1 is best).
pub fn reconstruction(
    params: &ModelParams,
    inputs: &[Tensor],
    negatives: &[Tensor],
    kind: LossKind,
    margin: Real,
) -> Result<(Real, Vec<usize>)> {
    let chart = fill_eager(params, inputs, false)?;
    let mut b = Eager::new(&params.store);
    let negs: Vec<Arc<Tensor>> = negatives.iter().map(|n| b.constant(n.clone())).collect();
    let negs = negative_vectors(&mut b, params, &negs)?;
    let report = chart_loss(&mut b, &chart, &negs, kind, margin)?;
    Ok((report.loss.item(), report.ranks))
}

pub fn reconstruction_ranks(
    params: &ModelParams,
    inputs: &[Tensor],
    negatives: &[Tensor],
) -> Result<Vec<usize>> {
    Ok(reconstruction(params, inputs, negatives, LossKind::Margin, 1.0)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn two_tokens_and_pp() {
        let cfg = ModelConfig {
            input_dim: 6,
            hidden_dim: 4,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let src = EmbeddingSource::fallback_only(6, 3);
        let opts = ParseOptions::default();
        assert_eq!(parse_tokens(&params, &src, &toks("w0 w1"), &opts).unwrap().render(), "(w0 w1)");
        let pp = ParseOptions { pp: true, ..ParseOptions::default() };
        let tree = parse_tokens(&params, &src, &toks("a b c d ."), &pp).unwrap();
        assert_eq!(tree.children()[1], Tree::leaf(4, "."));
        let wrong = EmbeddingSource::fallback_only(5, 3);
        assert!(matches!(parse_tokens(&params, &wrong, &toks("a b"), &opts), Err(Error::Data(_))));
    }

    #[test]
    fn ranks_are_bounded() {
        let cfg = ModelConfig {
            input_dim: 6,
            hidden_dim: 4,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let src = EmbeddingSource::fallback_only(6, 3);
        let inputs = embed_tokens(&src, &toks("a b c"));
        let negs = embed_tokens(&src, &toks("x y z w"));
        let ranks = reconstruction_ranks(&params, &inputs, &negs).unwrap();
        assert_eq!(ranks.len(), 3);
        assert!(ranks.iter().all(|&r| (1..=5).contains(&r)));
    }
}
