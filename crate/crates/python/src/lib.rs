//! Python bindings: `import diora`.

use std::collections::HashMap;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::diora::chart::{all_spans, Span};
use ::diora::checkpoint;
use ::diora::data::{parse_corpus, EmbeddingSource};
use ::diora::eval::{self, Baseline, EvalSettings};
use ::diora::infer::{chart_for, parse_chart, ParseOptions};
use ::diora::model::ComposeKind;
use ::diora::objective::LossKind;
use ::diora::parser::{self, CkyScoring, PairWeights};
use ::diora::trainer::{fit, TrainConfig, TrainState};
use ::diora::tree::{self, Tree};
use ::diora::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid(_) | Error::TreeSyntax { .. } | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn tokens_of(words: Vec<String>) -> PyResult<Vec<String>> {
    if words.is_empty() {
        return Err(PyValueError::new_err("need at least one token"));
    }
    Ok(words)
}

fn scoring(name: &str) -> PyResult<CkyScoring> {
    match name {
        "normalized" => Ok(CkyScoring::Normalized),
        "log" => Ok(CkyScoring::Log),
        "raw" => Ok(CkyScoring::Raw),
        _ => Err(PyValueError::new_err(format!("unknown scoring {name:?}"))),
    }
}

fn parse_tree(text: &str) -> PyResult<Tree> {
    tree::parse_sexpr(text).map_err(py_err)
}

/// A DIORA parameter set plus the embedding source it reads tokens through.
#[pyclass(module = "diora")]
struct Model {
    state: TrainState,
    source: EmbeddingSource,
}

impl Model {
    fn fill(&self, tokens: &[String]) -> PyResult<::diora::chart::Chart> {
        chart_for(&self.state.params, &self.source, tokens, false).map_err(py_err)
    }
}

#[pymethods]
impl Model {
    /// Fresh, untrained parameters.
    #[new]
    #[pyo3(signature = (input_dim=64, hidden_dim=400, compose="mlp", kernel=false, share=true, seed=0))]
    fn new(input_dim: usize, hidden_dim: usize, compose: &str, kernel: bool, share: bool, seed: u64) -> PyResult<Self> {
        let mut cfg = TrainConfig::default();
        cfg.model.input_dim = input_dim;
        cfg.model.hidden_dim = hidden_dim;
        cfg.model.compose = match compose {
            "mlp" => ComposeKind::Mlp,
            "treelstm" => ComposeKind::TreeLstm,
            _ => return Err(PyValueError::new_err(format!("unknown composition {compose:?}"))),
        };
        cfg.model.kernel = kernel;
        cfg.model.share = share;
        cfg.seed = seed;
        let state = TrainState::init(&cfg).map_err(py_err)?;
        let source = state.fallback_source();
        Ok(Model { state, source })
    }

    /// Load a checkpoint, optionally reading tokens through a word-vector file.
    #[staticmethod]
    #[pyo3(signature = (path, embeddings=None))]
    fn load(path: &str, embeddings: Option<&str>) -> PyResult<Self> {
        let state = checkpoint::load(path).map_err(py_err)?;
        let source = match embeddings {
            Some(p) => EmbeddingSource::load(p, None, state.config.seed).map_err(py_err)?,
            None => state.fallback_source(),
        };
        Ok(Model { state, source })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.state, path).map_err(py_err)
    }

    #[getter]
    fn step(&self) -> u64 {
        self.state.step
    }

    /// The training configuration as a JSON string.
    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.state.config).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Best binary tree for a whitespace-separated sentence, as an s-expression.
    #[pyo3(signature = (sentence, pp=false, scoring="normalized", show_scores=false))]
    fn parse(&self, py: Python<'_>, sentence: &str, pp: bool, scoring: &str, show_scores: bool) -> PyResult<String> {
        let tokens = tokens_of(sentence.split_whitespace().map(String::from).collect())?;
        let opts = ParseOptions {
            scoring: self::scoring(scoring)?,
            pp,
            show_scores,
            ..ParseOptions::default()
        };
        py.detach(|| {
            let chart = chart_for(&self.state.params, &self.source, &tokens, false)?;
            parse_chart(&chart, &tokens, &opts)
        })
        .map(|t| t.render())
        .map_err(py_err)
    }

    /// Chart contents keyed by `(start, end)`: `weights` (split weights),
    /// `scores` (raw pair scores), `inside`/`outside` (unit vectors).
    #[pyo3(name = "chart")]
    fn chart_cells<'py>(&self, py: Python<'py>, sentence: &str) -> PyResult<Bound<'py, PyDict>> {
        let tokens = tokens_of(sentence.split_whitespace().map(String::from).collect())?;
        let chart = self.fill(&tokens)?;
        let mut weights = HashMap::new();
        let mut scores = HashMap::new();
        let mut inside = HashMap::new();
        let mut outside = HashMap::new();
        for span in all_spans(tokens.len()) {
            let key = (span.start, span.end());
            let cell = chart.inside_at(span);
            if let (Some(w), Some(s)) = (&cell.weights, &cell.pair_scores) {
                weights.insert(key, w.data().to_vec());
                scores.insert(key, s.data().to_vec());
            }
            inside.insert(key, cell.h.data().to_vec());
            outside.insert(key, chart.outside_at(span).h.data().to_vec());
        }
        let out = PyDict::new(py);
        out.set_item("weights", weights)?;
        out.set_item("scores", scores)?;
        out.set_item("inside", inside)?;
        out.set_item("outside", outside)?;
        Ok(out)
    }

    /// `[inside; outside]` representation of the span `[start, end)`.
    fn span_representation(&self, sentence: &str, start: usize, end: usize) -> PyResult<Vec<f64>> {
        let tokens = tokens_of(sentence.split_whitespace().map(String::from).collect())?;
        if start >= end || end > tokens.len() {
            return Err(PyValueError::new_err(format!("bad span [{start}, {end})")));
        }
        let chart = self.fill(&tokens)?;
        let rep = chart.span_representation(Span::new(start, end - start)).map_err(py_err)?;
        Ok(rep.into_iter().map(|x| x as f64).collect())
    }

    fn __repr__(&self) -> String {
        let m = &self.state.config.model;
        format!(
            "Model(input_dim={}, hidden_dim={}, compose={:?}, kernel={}, share={}, step={})",
            m.input_dim, m.hidden_dim, m.compose, m.kernel, m.share, self.state.step
        )
    }
}

/// Train on a list of sentences and return the final model.
#[pyfunction]
#[pyo3(signature = (
    corpus, steps=100, hidden_dim=400, input_dim=64, compose="mlp", kernel=false, share=true,
    loss="margin", learning_rate=1e-3, batch_size=16, negatives=100, seed=0, embeddings=None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    corpus: Vec<String>,
    steps: u64,
    hidden_dim: usize,
    input_dim: usize,
    compose: &str,
    kernel: bool,
    share: bool,
    loss: &str,
    learning_rate: f64,
    batch_size: usize,
    negatives: usize,
    seed: u64,
    embeddings: Option<&str>,
) -> PyResult<Model> {
    let mut model = Model::new(input_dim, hidden_dim, compose, kernel, share, seed)?;
    let cfg = &mut model.state.config;
    cfg.loss = match loss {
        "margin" => LossKind::Margin,
        "softmax" => LossKind::Softmax,
        _ => return Err(PyValueError::new_err(format!("unknown loss {loss:?}"))),
    };
    cfg.learning_rate = learning_rate as _;
    cfg.batch_size = batch_size;
    cfg.negatives = negatives;
    cfg.max_steps = steps;
    let cfg = cfg.clone();
    let sentences = parse_corpus(&corpus.join("\n")).map_err(py_err)?;
    let source = match embeddings {
        Some(p) => EmbeddingSource::load(p, Some(input_dim), seed).map_err(py_err)?,
        None => EmbeddingSource::fallback_only(input_dim, seed),
    };
    let outcome = py
        .detach(|| fit(&cfg, &sentences, &source, None, &mut std::io::sink(), false))
        .map_err(py_err)?;
    Ok(Model {
        state: outcome.selected,
        source,
    })
}

/// Unlabeled bracketing precision, recall and F1 of one tree pair.
#[pyfunction]
#[pyo3(signature = (pred, gold, preset="wsj"))]
fn bracketing_f1<'py>(py: Python<'py>, pred: &str, gold: &str, preset: &str) -> PyResult<Bound<'py, PyDict>> {
    let settings = EvalSettings::preset(preset).map_err(py_err)?;
    let prf = eval::bracketing_f1(&parse_tree(pred)?, &parse_tree(gold)?, &settings).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("precision", prf.precision as f64)?;
    out.set_item("recall", prf.recall as f64)?;
    out.set_item("f1", prf.f1 as f64)?;
    out.set_item("matched", prf.matched)?;
    out.set_item("predicted", prf.predicted)?;
    out.set_item("gold", prf.gold)?;
    Ok(out)
}

/// Left-branching, right-branching, balanced or uniformly random tree.
#[pyfunction]
#[pyo3(signature = (kind, sentence, seed=0))]
fn baseline_tree(kind: &str, sentence: &str, seed: u64) -> PyResult<String> {
    let kind = match kind {
        "left" => Baseline::LeftBranching,
        "right" => Baseline::RightBranching,
        "balanced" => Baseline::Balanced,
        "random" => Baseline::Random { seed },
        _ => return Err(PyValueError::new_err(format!("unknown baseline {kind:?}"))),
    };
    let tokens: Vec<String> = sentence.split_whitespace().map(String::from).collect();
    eval::baseline_tree(kind, &tokens).map(|t| t.render()).map_err(py_err)
}

/// Highest-scoring binary tree given `weights[(start, end)] = [w(split) ...]`
/// for every span longer than one token, splits in increasing order.
#[pyfunction]
fn cky(sentence: &str, weights: HashMap<(usize, usize), Vec<f64>>) -> PyResult<(String, f64)> {
    let tokens = tokens_of(sentence.split_whitespace().map(String::from).collect())?;
    let t = tokens.len();
    for span in all_spans(t).filter(|s| !s.is_leaf()) {
        match weights.get(&(span.start, span.end())) {
            Some(w) if w.len() == span.len - 1 => {}
            Some(w) => {
                return Err(PyValueError::new_err(format!(
                    "span ({}, {}) needs {} weights, got {}",
                    span.start,
                    span.end(),
                    span.len - 1,
                    w.len()
                )))
            }
            None => return Err(PyValueError::new_err(format!("missing span ({}, {})", span.start, span.end()))),
        }
    }
    let table = PairWeights::from_fn(t, |span, split| weights[&(span.start, span.end())][split - 1] as _)
        .map_err(py_err)?;
    let tree = parser::cky(&table, &tokens).map_err(py_err)?;
    Ok((tree.render(), parser::cky_table(&table).best_score() as f64))
}

/// Tokens and constituents `(start, end, label)` of a bracketed tree.
#[pyfunction]
fn parse_sexpr(text: &str) -> PyResult<(Vec<String>, Vec<(usize, usize, Option<String>)>)> {
    let tree = parse_tree(text)?;
    let spans = tree
        .constituents()
        .into_iter()
        .map(|((a, b), l)| (a, b, l.map(String::from)))
        .collect();
    Ok((tree.tokens(), spans))
}

#[pymodule]
#[pyo3(name = "diora")]
fn diora_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(bracketing_f1, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_tree, m)?)?;
    m.add_function(wrap_pyfunction!(cky, m)?)?;
    m.add_function(wrap_pyfunction!(parse_sexpr, m)?)?;
    Ok(())
}
