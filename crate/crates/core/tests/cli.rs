mod common;

use std::fs;
use std::path::Path;

use codemix::checkpoint;
use codemix::cli::{run_with, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use codemix::config::TrainConfig;
use codemix::corpus::parse_any;
use codemix::metrics::{macro_f1, Averaging, Report};
use codemix::pipeline::{load_vocab, prepare, rules_for};
use codemix::training::evaluate;

use common::{args, toy_dims, write_toy_files, ToyFiles};

fn run(argv: Vec<String>) -> (i32, String) {
    let mut out = Vec::new();
    let code = run_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train_toy(dir: &Path, files: &ToyFiles) -> std::path::PathBuf {
    let model = dir.join("model.bin");
    let vectors = format!("glove_text:{}", p(&files.vectors));
    let mut argv = args(&[
        "train", "--train", p(&files.train), "--dev", p(&files.dev), "--out", p(&model),
        "--embeddings", &vectors, "--epochs", "3", "--batch-size", "4", "--seed", "5",
    ]);
    argv.extend(toy_dims());
    let (code, stdout) = run(argv);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.starts_with("best epoch"), "{stdout}");
    model
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    for sub in ["preprocess", "stats", "train", "evaluate", "predict", "gradcheck", "sweep"] {
        assert_eq!(run(args(&[sub, "--help"])).0, EXIT_OK, "{sub}");
    }
    assert_eq!(run(args(&["--help"])).0, EXIT_OK);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(args(&["frobnicate"])).0, EXIT_USAGE);
    assert_eq!(run(args(&["stats", "--bogus-flag"])).0, EXIT_USAGE);
    assert_eq!(run(args(&[])).0, EXIT_USAGE);
    assert_eq!(run(args(&["gradcheck", "--mode", "sideways"])).0, EXIT_USAGE);
}

#[test]
fn missing_files_exit_two() {
    assert_eq!(run(args(&["stats", "--data", "/nonexistent/x.conll"])).0, EXIT_DATA);
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a model").unwrap();
    let out = dir.path().join("o.txt");
    assert_eq!(
        run(args(&["predict", "--model", p(&junk), "--input", p(&junk), "--out", p(&out)])).0,
        EXIT_DATA
    );
}

#[test]
fn gradcheck_passes_and_prints_error() {
    let (code, out) = run(args(&["gradcheck", "--seed", "1"]));
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("max relative error"), "{out}");
    assert!(out.contains("gate.w"));
}

#[test]
fn stats_table_counts() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_toy_files(dir.path(), 12);
    let (code, out) = run(args(&["stats", "--data", p(&files.train), p(&files.dev)]));
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains("(train)") && lines[1].contains("12"), "{out}");
    assert!(lines[2].contains("(dev)") && lines[2].contains(" 9 "), "{out}");
}

#[test]
fn predict_then_evaluate_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_toy_files(dir.path(), 15);
    let model = train_toy(dir.path(), &files);
    assert!(dir.path().join("model.bin.history.csv").exists());

    let preds = dir.path().join("preds.txt");
    let argv = args(&["predict", "--model", p(&model), "--input", p(&files.dev), "--out", p(&preds)]);
    assert_eq!(run(argv.clone()).0, EXIT_OK);
    let first = fs::read(&preds).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 9);
    assert_eq!(run(argv).0, EXIT_OK);
    assert_eq!(fs::read(&preds).unwrap(), first, "predict is not repeatable");

    let csv = dir.path().join("scores.csv");
    let (code, from_file) = run(args(&[
        "evaluate", "--data", p(&files.dev), "--predictions", p(&preds), "--csv", p(&csv),
    ]));
    assert_eq!(code, EXIT_OK);
    let (code, from_model) = run(args(&["evaluate", "--data", p(&files.dev), "--model", p(&model)]));
    assert_eq!(code, EXIT_OK);
    assert_eq!(from_file, from_model);

    let (m, cfg): (_, TrainConfig) = checkpoint::load(&model).unwrap();
    let dev = prepare(&parse_any(&files.dev).unwrap(), &cfg, &rules_for(&cfg).unwrap());
    let vocab = load_vocab(&cfg, &[&dev]).unwrap().table;
    let e = evaluate(&m, &dev, &vocab).unwrap();
    assert_eq!(from_file, Report::new(&e.confusion).to_table(Averaging::Macro));
    assert!(from_file.contains(&format!("{:.4}", macro_f1(&e.confusion))));
    assert!(fs::read_to_string(&csv).unwrap().starts_with("class,precision,recall,f1,support"));
}

#[test]
fn predict_on_empty_input_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_toy_files(dir.path(), 9);
    let model = train_toy(dir.path(), &files);
    let empty = dir.path().join("empty.conll");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("preds.txt");
    let argv = args(&["predict", "--model", p(&model), "--input", p(&empty), "--out", p(&out)]);
    assert_eq!(run(argv).0, EXIT_OK);
    assert_eq!(fs::read(&out).unwrap(), b"");
}

#[test]
fn predictions_with_custom_delimiter() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_toy_files(dir.path(), 9);
    let model = train_toy(dir.path(), &files);
    let out = dir.path().join("preds.tsv");
    let argv = args(&[
        "predict", "--model", p(&model), "--input", p(&files.dev), "--out", p(&out), "--delimiter", "\t",
    ]);
    assert_eq!(run(argv).0, EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().all(|l| l.split('\t').count() == 2), "{text}");
    let (code, _) = run(args(&[
        "evaluate", "--data", p(&files.dev), "--predictions", p(&out), "--delimiter", "\t", "--weighted",
    ]));
    assert_eq!(code, EXIT_OK);
}

#[test]
fn config_file_and_env_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_toy_files(dir.path(), 9);
    let cfg_path = dir.path().join("toy.cfg");
    fs::write(
        &cfg_path,
        format!(
            "# toy\nchar_dim = 6\nchar_hidden = 4\nword_dim = 8\nsent_hidden = 5\nepochs = 9\nbatch_size = 4\nembeddings = glove_text:{}\n",
            p(&files.vectors)
        ),
    )
    .unwrap();
    let model = dir.path().join("m.bin");
    let history = dir.path().join("h.csv");
    let (code, _) = run(args(&[
        "train", "--config", p(&cfg_path), "--train", p(&files.train), "--dev", p(&files.dev),
        "--out", p(&model), "--history", p(&history), "--epochs", "2", "--set", "dropout=0.1",
    ]));
    assert_eq!(code, EXIT_OK);
    let (_, cfg) = checkpoint::load(&model).unwrap();
    assert_eq!((cfg.epochs, cfg.batch_size, cfg.dropout), (2, 4, 0.1));
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 3);

    let bad = run(args(&[
        "train", "--config", p(&cfg_path), "--train", p(&files.train), "--dev", p(&files.dev),
        "--out", p(&model), "--set", "colour=blue",
    ]));
    assert_eq!(bad.0, EXIT_USAGE);
}

#[test]
fn mismatched_vectors_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_toy_files(dir.path(), 9);
    let vectors = format!("glove_text:{}", p(&files.vectors));
    let model = dir.path().join("m.bin");
    // 8-d vectors, 10-d word layer
    let argv = args(&[
        "train", "--train", p(&files.train), "--dev", p(&files.dev), "--out", p(&model), "--embeddings", &vectors,
        "--set", "char_hidden=5", "--set", "word_dim=10", "--set", "char_dim=4", "--set", "sent_hidden=3",
    ]);
    assert_eq!(run(argv).0, EXIT_DATA);
}

#[test]
fn sweep_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_toy_files(dir.path(), 9);
    let vectors = format!("glove_text:{}", p(&files.vectors));
    let mut argv = args(&[
        "sweep", "--train", p(&files.train), "--dev", p(&files.dev), "--embeddings", &vectors,
        "--epoch-grid", "1,2", "--batch-grid", "3,9",
    ]);
    argv.extend(toy_dims());
    let (code, out) = run(argv);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 5, "{out}");
}
