//! `codemix` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numeric failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::{TrainConfig, CONFIG_ENV};
use crate::corpus::{format_stats_table, parse_any, stats, Dataset, Sentiment};
use crate::embeddings::{load_cache, oov_rate, save_cache, EmbeddingSource, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{confusion, Averaging, Report};
use crate::model::FusionMode;
use crate::pipeline::{fresh_model, gradcheck_tiny, load_vocab, prepare, rules_for};
use crate::preprocess::normalize;
use crate::training::{evaluate, sweep, sweep_csv, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "codemix", version, about = "Gated char/word sentiment classifier for code-mixed text")]
struct Cli {
    /// RNG seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalise a raw file, one tweet per line.
    Preprocess(PreprocessArgs),
    /// Print sentence and label counts per file.
    Stats(StatsArgs),
    /// Train a model and write checkpoint plus history CSV.
    Train(TrainArgs),
    /// Score a model or a predictions file against gold labels.
    Evaluate(EvaluateArgs),
    /// Write one "<id>,<label>" line per input sentence.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients of a small model.
    Gradcheck(GradcheckArgs),
    /// Retrain over an epochs x batch-size grid and report dev scores.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Config file (`key = value` lines). Defaults to $CODEMIX_CONFIG if set.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set dropout=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// gated, word_only or char_only.
    #[arg(long)]
    mode: Option<FusionMode>,
    /// Word vectors as `format:path` (glove_text or fasttext_vec). Repeatable;
    /// earlier files win on shared words.
    #[arg(long = "embeddings", value_name = "FORMAT:PATH")]
    embeddings: Vec<EmbeddingSource>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Slang dictionary TSV; the bundled one when omitted.
    #[arg(long)]
    slang: Option<PathBuf>,
    /// Emoji dictionary TSV.
    #[arg(long)]
    emoji: Option<PathBuf>,
    /// Contraction dictionary TSV.
    #[arg(long)]
    contractions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// CoNLL or TSV files; split is inferred from each file name.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// History CSV; `<out>.history.csv` when omitted.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Binary cache of the filtered word vectors, read if present and
    /// written otherwise.
    #[arg(long)]
    embedding_cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Gold-labelled CoNLL or TSV file.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to run over the data.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    model: Option<PathBuf>,
    /// Predictions file from `predict`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Field separator of the predictions file.
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Also write per-class scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Report weighted instead of macro F1 as the headline.
    #[arg(long)]
    weighted: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Replace the word-vector sources recorded in the checkpoint.
    #[arg(long = "embeddings", value_name = "FORMAT:PATH")]
    embeddings: Vec<EmbeddingSource>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value = "gated")]
    mode: FusionMode,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Epoch budgets, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
    epoch_grid: Vec<usize>,
    /// Batch sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    batch_grid: Vec<usize>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (without the program name) and runs the subcommand,
/// writing data output to stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut io::stdout().lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = std::iter::once(OsString::from("codemix")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_numeric() => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let seed = cli.seed;
    match cli.command {
        Command::Preprocess(a) => preprocess(a, out),
        Command::Stats(a) => stats_cmd(a, out),
        Command::Train(a) => train_cmd(a, seed, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Predict(a) => predict_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a, seed.unwrap_or(1), out),
        Command::Sweep(a) => sweep_cmd(a, seed, out),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn resolve_config(a: &ConfigArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if !a.embeddings.is_empty() {
        cfg.embeddings = a.embeddings.clone();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn preprocess(a: PreprocessArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = TrainConfig {
        slang: a.slang,
        emoji: a.emoji,
        contractions: a.contractions,
        ..TrainConfig::default()
    };
    let rules = rules_for(&cfg)?;
    let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut normalized = String::with_capacity(text.len());
    let mut lines = 0;
    for line in text.lines() {
        normalized.push_str(&normalize(line, &rules).join(" "));
        normalized.push('\n');
        lines += 1;
    }
    write_file(&a.output, normalized.as_bytes())?;
    emit(out, &format!("normalized {lines} lines into {}\n", a.output.display()))?;
    Ok(EXIT_OK)
}

fn stats_cmd(a: StatsArgs, out: &mut dyn Write) -> Result<i32> {
    let mut rows = Vec::with_capacity(a.data.len());
    for p in &a.data {
        let d = parse_any(p)?;
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        rows.push((format!("{name} ({})", d.split.as_str()), stats(&d)));
    }
    emit(out, &format_stats_table(&rows))?;
    Ok(EXIT_OK)
}

fn load_prepared(path: &Path, cfg: &TrainConfig) -> Result<Dataset> {
    let rules = rules_for(cfg)?;
    Ok(prepare(&parse_any(path)?, cfg, &rules))
}

fn train_cmd(a: TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    let cfg = resolve_config(&a.config, seed)?;
    let train_set = load_prepared(&a.train, &cfg)?;
    let dev = load_prepared(&a.dev, &cfg)?;
    let vocab: EmbeddingTable = match &a.embedding_cache {
        Some(p) if p.exists() => load_cache(p)?,
        cache => {
            let table = load_vocab(&cfg, &[&train_set, &dev])?.table;
            if let Some(p) = cache {
                save_cache(&table, p)?;
            }
            table
        }
    };
    if vocab.dim() != cfg.word_dim {
        return Err(Error::dim("word vectors vs word_dim", vocab.dim(), cfg.word_dim));
    }
    log::info!(
        "{} train / {} dev sentences; {} word vectors; dev OOV rate {:.3}",
        train_set.len(),
        dev.len(),
        vocab.len(),
        oov_rate(&vocab, &dev.sentences)
    );
    let model = fresh_model(&cfg, &train_set)?;
    let outcome = train(&train_set, &dev, &cfg, &vocab, model)?;
    checkpoint::save(&outcome.model, &cfg, &a.out)?;
    let history_path = a
        .history
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", a.out.display())));
    write_file(&history_path, outcome.history.to_csv().as_bytes())?;
    let best = outcome
        .history
        .epochs
        .iter()
        .find(|r| r.epoch == outcome.history.best_epoch);
    if let Some(b) = best {
        emit(
            out,
            &format!(
                "best epoch {} of {}: dev_loss {:.6} dev_macro_f1 {:.4}\n",
                b.epoch,
                outcome.history.epochs.len(),
                b.dev_loss,
                b.dev_f1
            ),
        )?;
    }
    Ok(EXIT_OK)
}

/// The checkpoint's model and config plus word vectors covering `data`.
fn load_for_inference(
    model_path: &Path,
    data_path: &Path,
    sources: &[EmbeddingSource],
) -> Result<(crate::model::Model, TrainConfig, Dataset, EmbeddingTable)> {
    let (model, mut cfg) = checkpoint::load(model_path)?;
    if !sources.is_empty() {
        cfg.embeddings = sources.to_vec();
    }
    let data = load_prepared(data_path, &cfg)?;
    let vocab = load_vocab(&cfg, &[&data])?.table;
    Ok((model, cfg, data, vocab))
}

fn report_out(report: &Report, a: &EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let avg = if a.weighted {
        Averaging::Weighted
    } else {
        Averaging::Macro
    };
    emit(out, &report.to_table(avg))?;
    if let Some(p) = &a.csv {
        write_file(p, report.to_csv().as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    if let Some(model_path) = &a.model {
        let (model, _, data, vocab) = load_for_inference(model_path, &a.data, &[])?;
        let e = evaluate(&model, &data, &vocab)?;
        return report_out(&Report::new(&e.confusion), &a, out);
    }
    let pred_path = a.predictions.as_ref().expect("clap requires model or predictions");
    let gold = parse_any(&a.data)?;
    let preds = read_predictions(pred_path, &a.delimiter)?;
    let mut p = Vec::with_capacity(gold.len());
    let mut g = Vec::with_capacity(gold.len());
    for s in &gold.sentences {
        let label = s
            .label
            .ok_or_else(|| Error::Label(format!("sentence {:?} in {} has no gold label", s.id, a.data.display())))?;
        let pred = preds
            .get(&s.id)
            .ok_or_else(|| Error::Label(format!("no prediction for sentence {:?}", s.id)))?;
        p.push(pred.index());
        g.push(label.index());
    }
    if preds.len() != gold.len() {
        return Err(Error::Label(format!(
            "{} predictions for {} gold sentences",
            preds.len(),
            gold.len()
        )));
    }
    report_out(&Report::new(&confusion(&p, &g)?), &a, out)
}

fn read_predictions(path: &Path, delimiter: &str) -> Result<HashMap<String, Sentiment>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut preds = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line
            .rsplit_once(delimiter)
            .ok_or_else(|| Error::parse(path, n + 1, format!("expected <id>{delimiter}<label>")))?;
        let label: Sentiment = label.trim().parse().map_err(|e| Error::parse(path, n + 1, format!("{e}")))?;
        if preds.insert(id.trim().to_string(), label).is_some() {
            return Err(Error::parse(path, n + 1, format!("duplicate id {id:?}")));
        }
    }
    Ok(preds)
}

/// Writes one `<id><delimiter><label>` line per sentence of `input`, in
/// input order.
pub fn predict(
    model_path: &Path,
    input_path: &Path,
    out_path: &Path,
    delimiter: &str,
    sources: &[EmbeddingSource],
) -> Result<()> {
    let (model, _, data, vocab) = load_for_inference(model_path, input_path, sources)?;
    let mut lines = String::new();
    for s in &data.sentences {
        let class = model.predict(s, &vocab)?;
        lines.push_str(&s.id);
        lines.push_str(delimiter);
        lines.push_str(Sentiment::from_index(class)?.as_str());
        lines.push('\n');
    }
    write_file(out_path, lines.as_bytes())
}

fn predict_cmd(a: PredictArgs) -> Result<i32> {
    predict(&a.model, &a.input, &a.out, &a.delimiter, &a.embeddings)?;
    Ok(EXIT_OK)
}

fn gradcheck_cmd(a: GradcheckArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let start = Instant::now();
    let run = gradcheck_tiny(seed, a.eps, a.mode)?;
    let r = &run.report;
    let mut text = String::new();
    for (name, err) in &r.per_tensor {
        text.push_str(&format!("{name:<16} {err:.3e}\n"));
    }
    let worst = r
        .worst
        .map(|(n, i)| format!(" at {n}[{i}]"))
        .unwrap_or_default();
    text.push_str(&format!(
        "max relative error {:.3e}{worst} over {} entries\n",
        r.max_relative_error, r.entries_checked
    ));
    emit(out, &text)?;
    log::info!("gradcheck took {:.2?}", start.elapsed());
    Ok(if r.max_relative_error < 1e-4 {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    })
}

fn sweep_cmd(a: SweepArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    let cfg = resolve_config(&a.config, seed)?;
    let train_set = load_prepared(&a.train, &cfg)?;
    let dev = load_prepared(&a.dev, &cfg)?;
    let vocab = load_vocab(&cfg, &[&train_set, &dev])?.table;
    let rows = sweep(&train_set, &dev, &cfg, &vocab, &a.epoch_grid, &a.batch_grid, || {
        fresh_model(&cfg, &train_set)
    })?;
    let csv = sweep_csv(&rows);
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => emit(out, &csv)?,
    }
    Ok(EXIT_OK)
}
