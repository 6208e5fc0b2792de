use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use diora::chart::Span;
use diora::checkpoint;
use diora::data::{read_corpus, EmbeddingSource, Sentence};
use diora::eval::{
    corpus_f1, label_recall, labeled_spans, mean_depth, merge_label_counts, phrase_precision_at_k, Averaging,
    EvalSettings, LabelCount,
};
use diora::infer::{chart_for, parse_chart, ParseOptions};
use diora::model::ComposeKind;
use diora::numeric::Real;
use diora::objective::LossKind;
use diora::parser::{CkyScoring, PunctSet};
use diora::synth::{generate, SynthConfig};
use diora::trainer::{fit, TrainConfig, TrainState};
use diora::tree::{parse_treebank, Tree, TreeFormat};
use diora::Error;

#[derive(Parser)]
#[command(name = "diora", version, about = "Unsupervised constituency parsing with inside-outside recursive autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a raw text corpus and write a checkpoint.
    Train(TrainArgs),
    /// Print the highest-scoring binary tree for each corpus line.
    Parse(ParseArgs),
    /// Bracketing F1 of predicted trees against a gold treebank.
    Eval(EvalArgs),
    /// Phrase retrieval precision@K over labeled gold spans.
    Phrases(PhrasesArgs),
    /// Write a synthetic corpus and its gold trees.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// One whitespace-tokenized sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Text embeddings, `token v1 … vD` per line; missing tokens get hashed vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Validation treebank for model selection by F1.
    #[arg(long)]
    treebank: Option<PathBuf>,
    /// Where to write the checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// TOML file with training settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cell dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Input dimension when no embedding file is given.
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_enum)]
    compose: Option<ComposeArg>,
    /// Feed [hi; hj; hi*hj; hi-hj] to the MLP composition.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    kernel: Option<bool>,
    /// Share composition and score parameters between the passes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    share: Option<bool>,
    /// Negative samples per batch.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Validation regime.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Training log (tab-separated step, loss, grad_norm, val_f1); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Reattach trailing punctuation at the root.
    #[arg(long)]
    pp: bool,
    /// Label internal nodes with their decoder scores.
    #[arg(long)]
    show_scores: bool,
    #[arg(long, value_enum, default_value_t = ScoringArg::Normalized)]
    scoring: ScoringArg,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold trees, one per line.
    #[arg(long)]
    treebank: PathBuf,
    /// Predicted trees, aligned with the gold file.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_enum, default_value_t = PresetArg::Wsj)]
    preset: PresetArg,
    #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
    averaging: AveragingArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhrasesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled gold trees; every labeled span longer than one token is a query.
    #[arg(long)]
    treebank: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Neighbourhood sizes to report.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 10, 100])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    sentences: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives corpus.txt and gold.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Margin,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComposeArg {
    Mlp,
    Treelstm,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Wsj,
    Wsj10,
    Wsj40,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoringArg {
    Normalized,
    Log,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tsv,
    Json,
}

impl PresetArg {
    fn settings(self) -> EvalSettings {
        match self {
            PresetArg::Wsj => EvalSettings::wsj(),
            PresetArg::Wsj10 => EvalSettings::wsj10(),
            PresetArg::Wsj40 => EvalSettings::wsj40(),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFinite { .. } => 3,
        Error::Invalid(_) => 1,
        _ => 2,
    }
}

fn set_threads(n: usize) -> CliResult<bool> {
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot start {n} threads: {e}")))?;
    Ok(n > 1)
}

fn output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_err(path: &Option<PathBuf>) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.clone().unwrap_or_else(|| "<stdout>".into()),
        source: e,
    }
}

fn read_trees(path: &Path, format: TreeFormat) -> CliResult<Vec<Tree>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_treebank(&text, format)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())).into())
}

fn embedding_source(path: &Option<PathBuf>, dim: usize, seed: u64) -> CliResult<EmbeddingSource> {
    Ok(match path {
        Some(p) => EmbeddingSource::load(p, Some(dim), seed)?,
        None => EmbeddingSource::fallback_only(dim, seed),
    })
}

fn resolve_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    let m = &mut cfg.model;
    if let Some(d) = a.dim {
        m.hidden_dim = d;
    }
    if let Some(d) = a.embed_dim {
        m.input_dim = d;
    }
    if let Some(c) = a.compose {
        m.compose = match c {
            ComposeArg::Mlp => ComposeKind::Mlp,
            ComposeArg::Treelstm => ComposeKind::TreeLstm,
        };
    }
    if let Some(k) = a.kernel {
        m.kernel = k;
    }
    if let Some(s) = a.share {
        m.share = s;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(s) = a.steps {
        cfg.max_steps = s;
    }
    if let Some(l) = a.loss {
        cfg.loss = match l {
            LossArg::Margin => LossKind::Margin,
            LossArg::Softmax => LossKind::Softmax,
        };
    }
    if let Some(n) = a.negatives {
        cfg.negatives = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.preset {
        cfg.validation = p.settings();
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let parallel = set_threads(a.threads)?;
    let mut cfg = resolve_config(&a)?;
    let corpus = read_corpus(&a.corpus)?;
    let source = match &a.embeddings {
        Some(p) => {
            let s = EmbeddingSource::load(p, None, cfg.seed)?;
            if a.embed_dim.is_some_and(|d| d != s.dim()) {
                return Err(Error::Data(format!(
                    "{}: vectors are {}-dimensional but --embed-dim is {}",
                    p.display(),
                    s.dim(),
                    cfg.model.input_dim
                ))
                .into());
            }
            cfg.model.input_dim = s.dim();
            s
        }
        None => EmbeddingSource::fallback_only(cfg.model.input_dim, cfg.seed),
    };
    let validation = a
        .treebank
        .as_deref()
        .map(|p| read_trees(p, TreeFormat::Auto))
        .transpose()?;
    let mut log = output(&a.out)?;
    let outcome = fit(&cfg, &corpus, &source, validation.as_deref(), &mut log, parallel)?;
    log.flush().map_err(write_err(&a.out))?;
    checkpoint::save(&outcome.selected, &a.checkpoint)?;
    Ok(())
}

fn load_model(path: &Path, embeddings: &Option<PathBuf>) -> CliResult<(TrainState, EmbeddingSource)> {
    let state = checkpoint::load(path)?;
    let source = embedding_source(embeddings, state.config.model.input_dim, state.config.seed)?;
    Ok((state, source))
}

fn cmd_parse(a: ParseArgs) -> CliResult {
    let parallel = set_threads(a.threads)?;
    let (state, source) = load_model(&a.checkpoint, &a.embeddings)?;
    let corpus = read_corpus(&a.corpus)?;
    let opts = ParseOptions {
        scoring: match a.scoring {
            ScoringArg::Normalized => CkyScoring::Normalized,
            ScoringArg::Log => CkyScoring::Log,
            ScoringArg::Raw => CkyScoring::Raw,
        },
        pp: a.pp,
        punct: PunctSet::default(),
        show_scores: a.show_scores,
        parallel,
    };
    let parse = |s: &Sentence| -> diora::Result<String> {
        let chart = chart_for(&state.params, &source, s.tokens(), false)?;
        Ok(parse_chart(&chart, s.tokens(), &opts)?.render())
    };
    let lines: Vec<String> = if parallel {
        corpus.par_iter().map(parse).collect::<diora::Result<_>>()?
    } else {
        corpus.iter().map(parse).collect::<diora::Result<_>>()?
    };
    let mut out = output(&a.out)?;
    for l in lines {
        writeln!(out, "{l}").map_err(write_err(&a.out))?;
    }
    out.flush().map_err(write_err(&a.out))?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    sentences: usize,
    evaluated: usize,
    skipped: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    mean_depth: f64,
    label_recall: Vec<(String, LabelCount)>,
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let gold = read_trees(&a.treebank, TreeFormat::Auto)?;
    let preds = read_trees(&a.predictions, TreeFormat::Unlabeled)?;
    let settings = a.preset.settings();
    let averaging = match a.averaging {
        AveragingArg::Micro => Averaging::Micro,
        AveragingArg::Macro => Averaging::Macro,
    };
    let punct = PunctSet::default();
    let data = |e: Error| Error::Data(e.to_string());
    let r = corpus_f1(&preds, &gold, &settings, averaging, &punct).map_err(data)?;
    let mut labels = Default::default();
    if gold.iter().any(|g| g.constituents().iter().any(|(_, l)| l.is_some())) {
        for (p, g) in preds.iter().zip(&gold) {
            merge_label_counts(&mut labels, &label_recall(p, g).map_err(data)?);
        }
    }
    let report = EvalReport {
        sentences: gold.len(),
        evaluated: r.evaluated,
        skipped: r.skipped,
        precision: r.precision as f64,
        recall: r.recall as f64,
        f1: r.f1 as f64,
        mean_depth: mean_depth(&preds) as f64,
        label_recall: labels.into_iter().collect(),
    };
    let mut out = output(&a.out)?;
    let text = match a.format {
        FormatArg::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        FormatArg::Tsv => {
            let mut s = String::from("metric\tvalue\n");
            for (k, v) in [
                ("sentences", report.sentences.to_string()),
                ("evaluated", report.evaluated.to_string()),
                ("skipped", report.skipped.to_string()),
                ("precision", format!("{:.6}", report.precision)),
                ("recall", format!("{:.6}", report.recall)),
                ("f1", format!("{:.6}", report.f1)),
                ("mean_depth", format!("{:.6}", report.mean_depth)),
            ] {
                s.push_str(&format!("{k}\t{v}\n"));
            }
            for (label, c) in &report.label_recall {
                s.push_str(&format!("recall:{label}\t{:.6}\t{}/{}\n", c.recall(), c.hits, c.total));
            }
            s
        }
    };
    out.write_all(text.as_bytes()).map_err(write_err(&a.out))?;
    out.flush().map_err(write_err(&a.out))?;
    Ok(())
}

fn cmd_phrases(a: PhrasesArgs) -> CliResult {
    let parallel = set_threads(a.threads)?;
    let (state, source) = load_model(&a.checkpoint, &a.embeddings)?;
    let gold = read_trees(&a.treebank, TreeFormat::Labeled)?;
    let per_tree = |g: &Tree| -> diora::Result<Vec<(Vec<Real>, String)>> {
        let spans = labeled_spans(g);
        if spans.is_empty() {
            return Ok(Vec::new());
        }
        let chart = chart_for(&state.params, &source, &g.tokens(), false)?;
        spans
            .into_iter()
            .map(|((a, b), label)| {
                Ok((chart.span_representation(Span::new(a, b - a))?, label))
            })
            .collect()
    };
    let rows: Vec<Vec<(Vec<Real>, String)>> = if parallel {
        gold.par_iter().map(per_tree).collect::<diora::Result<_>>()?
    } else {
        gold.iter().map(per_tree).collect::<diora::Result<_>>()?
    };
    let (reps, labels): (Vec<Vec<Real>>, Vec<String>) = rows.into_iter().flatten().unzip();
    let mut out = output(&a.out)?;
    writeln!(out, "k\tprecision").map_err(write_err(&a.out))?;
    for k in &a.k {
        let p = phrase_precision_at_k(&reps, &labels, *k).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{k}\t{p:.6}").map_err(write_err(&a.out))?;
    }
    out.flush().map_err(write_err(&a.out))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let trees = generate(&SynthConfig {
        sentences: a.sentences,
        max_len: a.max_len,
        seed: a.seed,
    })
    .map_err(|e| Failure::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let corpus: String = trees.iter().map(|t| t.tokens().join(" ") + "\n").collect();
    let gold: String = trees.iter().map(|t| t.render() + "\n").collect();
    for (name, text) in [("corpus.txt", corpus), ("gold.txt", gold)] {
        let p = a.out.join(name);
        fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Phrases(a) => cmd_phrases(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
