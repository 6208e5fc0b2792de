use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use diora::checkpoint;
use diora::model::ComposeKind;
use diora::objective::LossKind;

fn diora(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diora"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = diora(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC_FLAGS: &[&str] = &[
    "--corpus",
    "--embeddings",
    "--treebank",
    "--checkpoint",
    "--dim",
    "--lr",
    "--batch",
    "--steps",
    "--loss",
    "--compose",
    "--kernel",
    "--share",
    "--negatives",
    "--seed",
    "--preset",
    "--pp",
    "--threads",
    "--out",
];

#[test]
fn help_lists_every_flag() {
    let subcommands = ["train", "parse", "eval", "phrases", "synth"];
    let help: String = subcommands.iter().map(|c| ok(&[c, "--help"])).collect();
    // Every long option declared in the binary's source shows up in some help page.
    let source = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/bin/diora.rs")).unwrap();
    let mut declared = BTreeSet::new();
    let mut lines = source.lines().peekable();
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("#[arg(long") {
            let field = lines
                .find(|l| !l.trim_start().starts_with("///") && !l.trim_start().starts_with("#["))
                .unwrap();
            let name = field.trim().split(':').next().unwrap().replace('_', "-");
            declared.insert(format!("--{name}"));
        }
    }
    assert!(declared.len() >= SPEC_FLAGS.len());
    for flag in declared.iter().map(String::as_str).chain(SPEC_FLAGS.iter().copied()) {
        assert!(help.contains(flag), "{flag} missing from --help");
    }
    assert!(ok(&["--help"]).contains("synth"));
}

#[test]
fn usage_and_data_errors() {
    let out = diora(&["train"]);
    assert_eq!(out.status.code(), Some(1));
    let out = diora(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let ckpt = dir.path().join("m.ckpt");
    let out = diora(&["train", "--corpus", s(&missing), "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
    fs::write(dir.path().join("c.txt"), "a b\n").unwrap();
    let out = diora(&[
        "train",
        "--corpus",
        s(&dir.path().join("c.txt")),
        "--checkpoint",
        s(&ckpt),
        "--compose",
        "treelstm",
        "--kernel",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let ckpt = dir.join(name);
    let corpus = dir.join("corpus.txt");
    let mut args = vec![
        "train",
        "--corpus",
        s(&corpus),
        "--checkpoint",
        s(&ckpt),
        "--dim",
        "6",
        "--embed-dim",
        "8",
        "--negatives",
        "5",
        "--batch",
        "2",
        "--steps",
        "10",
        "--seed",
        "7",
        "--out",
    ];
    let log = dir.join(format!("{name}.log"));
    args.push(s(&log));
    args.extend_from_slice(extra);
    ok(&args);
    ckpt
}

fn corpus_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("corpus.txt"),
        "the cat sat .\nthe dog ran away .\nw0 w1\na bird flew\n",
    )
    .unwrap();
    dir
}

#[test]
fn train_is_deterministic_and_echoes_config() {
    let dir = corpus_dir();
    let a = train(dir.path(), "a.ckpt", &[]);
    let b = train(dir.path(), "b.ckpt", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.ckpt.log")).unwrap(),
        fs::read(dir.path().join("b.ckpt.log")).unwrap()
    );
    let log = fs::read_to_string(dir.path().join("a.ckpt.log")).unwrap();
    assert_eq!(log.lines().count(), 10);
    assert_eq!(log.lines().next().unwrap().split('\t').count(), 3);

    let c = train(
        dir.path(),
        "c.ckpt",
        &["--compose", "mlp", "--kernel", "--loss", "softmax", "--share", "--threads", "2"],
    );
    let state = checkpoint::load(&c).unwrap();
    let cfg = &state.config;
    assert_eq!(cfg.model.compose, ComposeKind::Mlp);
    assert!(cfg.model.kernel && cfg.model.share);
    assert_eq!(cfg.loss, LossKind::Softmax);
    assert_eq!((cfg.model.hidden_dim, cfg.model.input_dim, cfg.seed), (6, 8, 7));
    assert_eq!(state.step, 10);
}

#[test]
fn config_file_precedence() {
    let dir = corpus_dir();
    let toml = dir.path().join("run.toml");
    fs::write(
        &toml,
        "learning_rate = 0.01\nnegatives = 3\n[model]\nhidden_dim = 5\ncompose = \"treelstm\"\nshare = false\n",
    )
    .unwrap();
    let ckpt = train(dir.path(), "t.ckpt", &["--config", s(&toml)]);
    let cfg = checkpoint::load(&ckpt).unwrap().config;
    assert_eq!(cfg.learning_rate, 0.01);
    assert_eq!(cfg.model.compose, ComposeKind::TreeLstm);
    assert!(!cfg.model.share);
    // flags beat the file
    assert_eq!(cfg.model.hidden_dim, 6);
    assert_eq!(cfg.negatives, 5);
    fs::write(&toml, "bogus = 1\n").unwrap();
    let out = diora(&[
        "train",
        "--corpus",
        s(&dir.path().join("corpus.txt")),
        "--checkpoint",
        s(&ckpt),
        "--config",
        s(&toml),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn parse_outputs() {
    let dir = corpus_dir();
    let ckpt = train(dir.path(), "m.ckpt", &[]);
    let corpus = dir.path().join("corpus.txt");
    let args = ["parse", "--checkpoint", s(&ckpt), "--corpus", s(&corpus)];
    let plain = ok(&args);
    let lines: Vec<&str> = plain.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[2], "(w0 w1)");
    assert_eq!(plain, ok(&args));
    let threaded = ok(&[&args[..], &["--threads", "3"]].concat());
    assert_eq!(plain, threaded);

    let pp = ok(&[&args[..], &["--pp"]].concat());
    for line in pp.lines().filter(|l| l.ends_with(".)")) {
        assert!(line.ends_with(" .)"), "{line}");
        let tree = diora::tree::parse_sexpr(line).unwrap();
        assert_eq!(tree.children()[1].tokens(), vec!["."]);
    }
    let scored = ok(&[&args[..], &["--show-scores"]].concat());
    assert!(scored.lines().nth(2).unwrap().starts_with("(1.0000 w0 w1"));

    let mut wrong = fs::File::create(dir.path().join("emb.txt")).unwrap();
    use std::io::Write;
    writeln!(wrong, "the 0.1 0.2 0.3").unwrap();
    let out = diora(&[&args[..], &["--embeddings", s(&dir.path().join("emb.txt"))]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.txt");
    let pred = dir.path().join("pred.txt");
    fs::write(&gold, "((a b) c)\n(a (b (c d)))\n((x y) (z w))\n").unwrap();
    let g = s(&gold);
    let out = ok(&["eval", "--treebank", g, "--predictions", g, "--preset", "wsj"]);
    assert!(out.contains("f1\t1.000000"), "{out}");

    // spans with trivial: sentence 1 pred {(0,3),(1,3)} vs gold {(0,3),(0,2)}: 1 of 2
    // sentence 2 identical: 3 of 3; sentence 3 pred RB {(0,4),(1,4),(2,4)} vs gold {(0,4),(0,2),(2,4)}: 2 of 3
    fs::write(&pred, "(a (b c))\n(a (b (c d)))\n(x (y (z w)))\n").unwrap();
    let out = ok(&["eval", "--treebank", g, "--predictions", s(&pred), "--format", "json"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((report["f1"].as_f64().unwrap() - 6.0 / 8.0).abs() < 1e-12);
    assert!((report["mean_depth"].as_f64().unwrap() - 8.0 / 3.0).abs() < 1e-12);

    fs::write(&gold, "(S (NP a b) (VP c d) (. .))\n(S a b c d e f g h i j k .)\n").unwrap();
    fs::write(&pred, "((a b) ((c d) .))\n(a (b (c (d (e (f (g (h (i (j (k .)))))))))))\n").unwrap();
    let out = ok(&["eval", "--treebank", g, "--predictions", s(&pred), "--preset", "wsj10"]);
    assert!(out.contains("evaluated\t1\n") && out.contains("skipped\t1\n"), "{out}");
    assert!(out.contains("recall:NP\t1.000000\t1/1"), "{out}");

    fs::write(&pred, "(a b)\n").unwrap();
    assert_eq!(diora(&["eval", "--treebank", g, "--predictions", s(&pred)]).status.code(), Some(2));
}

#[test]
fn phrases_report() {
    let dir = corpus_dir();
    let ckpt = train(dir.path(), "m.ckpt", &[]);
    let bank = dir.path().join("bank.txt");
    fs::write(&bank, "(S (NP the cat) (VP sat down))\n").unwrap();
    let args = ["phrases", "--checkpoint", s(&ckpt), "--treebank", s(&bank), "--k", "1"];
    let out = ok(&args);
    // S, NP and VP each occur once: no same-label neighbour exists
    assert_eq!(out, "k\tprecision\n1\t0.000000\n");
    fs::write(&bank, "(S (NP the cat) (VP sat down))\n(S (NP the cat) (VP sat down))\n").unwrap();
    assert_eq!(ok(&args), "k\tprecision\n1\t1.000000\n");
    let out = diora(&["phrases", "--checkpoint", s(&ckpt), "--treebank", s(&bank), "--k", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_writes_corpus_and_gold() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--sentences", "30", "--seed", "3", "--out", s(dir.path())]);
    let corpus = fs::read_to_string(dir.path().join("corpus.txt")).unwrap();
    let gold = fs::read_to_string(dir.path().join("gold.txt")).unwrap();
    assert_eq!(corpus.lines().count(), 30);
    for (c, g) in corpus.lines().zip(gold.lines()) {
        assert_eq!(diora::tree::parse_sexpr(g).unwrap().tokens().join(" "), c);
    }
}
