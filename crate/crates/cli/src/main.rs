//! `connective`: the extraction, dataset, training and evaluation pipeline
//! as subcommands.

mod config;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use connective_core::corpus::{
    build_splits, class_histogram, extract_pairs, read_examples, read_jsonl_articles, write_dataset, write_examples,
    LabeledExample, DATASET_FORMAT_VERSION, SPLIT_FILES,
};
use connective_core::da::{self, TrainedModel};
use connective_core::eval::{consensus_stats, evaluate, rater_analysis, read_annotations, read_labels, write_labels};
use connective_core::nn::{CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC};
use connective_core::text::{tokenize, LEXICON_FORMAT_VERSION};
use connective_core::wordpairs::{self, LoadedWordPairs};
use connective_core::{ConnectiveLexicon, LabelId};
use log::info;
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "connective",
    about = "Discourse connective prediction pipeline",
    disable_version_flag = true
)]
struct Cli {
    /// Seed for every random choice (splits, initialization, shuffling, dropout).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file: JSON, or `section.key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Connective list (`surface<TAB>comma_required`); defaults to the bundled one.
    #[arg(long, global = true, value_name = "PATH")]
    lexicon: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Print the version and file format versions.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Harvest labeled adjacent-sentence pairs from JSON-lines articles.
    Extract(ExtractArgs),
    /// Sample balanced, article-disjoint train/dev/test splits.
    BuildDataset(BuildArgs),
    /// Train the decomposable attention classifier.
    TrainDa(TrainDaArgs),
    /// Train the word-pair logistic regression baseline.
    TrainWordpairs(TrainWpArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Rank connectives for a sentence pair or a dataset file.
    Predict(PredictArgs),
    /// Attention alignments of a trained attention model for one pair.
    Explain(ExplainArgs),
    /// Compare human raters and a model under the three agreement settings.
    RaterAnalysis(RaterArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// JSON-lines articles (`{"id": ..., "paragraphs": [[sentence, ...], ...]}`), `-` for stdin.
    #[arg(long)]
    input: PathBuf,
    /// Dataset TSV of every pair, `-` for stdout.
    #[arg(long)]
    output: PathBuf,
    /// Also write `label<TAB>count` rows.
    #[arg(long, value_name = "PATH")]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Dataset TSV from `extract`.
    #[arg(long)]
    input: PathBuf,
    /// Receives train.tsv, dev.tsv, test.tsv and split_report.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    dev_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("data").required(true).args(["data_dir", "train"])))]
struct DataArgs {
    /// Directory holding train.tsv and dev.tsv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Training TSV (overrides --data-dir).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Development TSV (overrides --data-dir).
    #[arg(long)]
    dev: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Keep {
    Best,
    Final,
}

#[derive(Args)]
struct TrainDaArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint path.
    #[arg(long)]
    output: PathBuf,
    /// JSON-lines training log; stdout when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Cap on training steps.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Text embedding file (`token v1 ... vd` per line) for initialization.
    #[arg(long, value_name = "PATH")]
    embeddings: Option<PathBuf>,
    /// Which model to save when a dev set is available.
    #[arg(long, value_enum, default_value = "best")]
    keep: Keep,
}

#[derive(Args)]
struct TrainWpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    output: PathBuf,
    /// Export the feature dictionary as TSV.
    #[arg(long, value_name = "PATH")]
    dict_tsv: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    min_support: Option<usize>,
    /// Add Arg1 single-word features.
    #[arg(long)]
    arg1_singles: bool,
    /// Hash features instead of keeping a dictionary.
    #[arg(long)]
    hashed: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "gold"])))]
struct EvaluateArgs {
    /// Trained model; predicts on --data.
    #[arg(long, requires = "data", conflicts_with = "gold")]
    model: Option<PathBuf>,
    /// Dataset TSV to predict on and score.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Gold labels (`id<TAB>label`, or a dataset TSV).
    #[arg(long, requires = "predictions")]
    gold: Option<PathBuf>,
    /// Predicted labels (`id<TAB>label`).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Confusion matrix CSV.
    #[arg(long, value_name = "PATH")]
    confusion: Option<PathBuf>,
    /// Write the model's predictions as `id<TAB>label`.
    #[arg(long, value_name = "PATH")]
    predictions_out: Option<PathBuf>,
    /// JSON report; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("pair").required(true).args(["arg1", "input"])))]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// First sentence (raw text).
    #[arg(long, requires = "arg2")]
    arg1: Option<String>,
    /// Second sentence, without its connective.
    #[arg(long)]
    arg2: Option<String>,
    /// Dataset TSV; writes `id<TAB>label` rows.
    #[arg(long, conflicts_with = "arg1")]
    input: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Keep only the best k labels in the ranked list.
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    arg1: String,
    #[arg(long)]
    arg2: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RaterArgs {
    /// Gold labels (`id<TAB>label`).
    #[arg(long)]
    gold: PathBuf,
    /// Model labels (`id<TAB>label`).
    #[arg(long)]
    predictions: PathBuf,
    /// Rater labels (`id<TAB>label1<TAB>label2<TAB>label3`).
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Bad combinations of otherwise well-formed flags; exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage_error = e.chain().any(|c| c.is::<UsageError>());
            let report = json!({"error": {"kind": error_kind(&e), "message": format!("{e:#}")}});
            eprintln!("{report}");
            ExitCode::from(if usage_error { 2 } else { 1 })
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use connective_core::Error as E;
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return "usage";
        }
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::EmptyInput | E::EmptyRemainder => "empty_input",
                E::Lexicon { .. } => "lexicon",
                E::Schema { .. } => "schema",
                E::InsufficientClassData { .. } => "insufficient_class_data",
                E::DimensionMismatch { .. } | E::StaleCache(_) => "internal",
                E::NonFiniteGradient(_) | E::NonFiniteLoss { .. } => "divergence",
                E::Checkpoint(_) => "checkpoint",
                E::LengthMismatch { .. } | E::MisalignedItems(_) => "misaligned",
                E::LabelOutOfRange { .. } | E::UnknownLabel(_) => "label",
                E::EmptyTrainingSet => "empty_training_set",
                E::InvalidConfig(_) => "invalid_config",
                E::Io(_) => "io",
                E::Json(_) => "json",
            };
        }
        if cause.is::<io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
    }
    "error"
}

fn print_version() {
    println!("connective {}", env!("CARGO_PKG_VERSION"));
    println!("lexicon format {LEXICON_FORMAT_VERSION}");
    println!("dataset tsv format {DATASET_FORMAT_VERSION}");
    println!(
        "checkpoint format {} ({})",
        CHECKPOINT_FORMAT_VERSION,
        String::from_utf8_lossy(CHECKPOINT_MAGIC)
    );
    println!(
        "word-pair model format {}",
        String::from_utf8_lossy(wordpairs::MODEL_MAGIC)
    );
}

fn run(cli: Cli) -> Result<()> {
    if cli.version {
        print_version();
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    cfg.resolve_seed(cli.seed);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let Some(command) = cli.command else {
        if cli.print_config {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(());
        }
        return Err(usage("no subcommand given; see --help"));
    };
    apply_flags(&mut cfg, &command)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    info!("resolved config {}", serde_json::to_string(&cfg)?);
    let lex = match &cli.lexicon {
        Some(p) => ConnectiveLexicon::from_path(p).with_context(|| format!("lexicon {}", p.display()))?,
        None => ConnectiveLexicon::default(),
    };

    match command {
        Command::Extract(a) => extract(&a, &lex),
        Command::BuildDataset(a) => build_dataset(&a, &lex, &cfg),
        Command::TrainDa(a) => train_da(&a, &lex, &cfg),
        Command::TrainWordpairs(a) => train_wordpairs(&a, &lex, &cfg),
        Command::Evaluate(a) => evaluate_cmd(&a, &lex),
        Command::Predict(a) => predict_cmd(&a, &lex),
        Command::Explain(a) => explain_cmd(&a),
        Command::RaterAnalysis(a) => rater_cmd(&a, &lex),
    }
}

/// Command-line flags take precedence over the config file.
fn apply_flags(cfg: &mut RunConfig, command: &Command) -> Result<()> {
    fn set<T: Copy>(slot: &mut T, flag: Option<T>) {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    match command {
        Command::BuildDataset(a) => {
            set(&mut cfg.split.dev_per_class, a.dev_per_class);
            set(&mut cfg.split.test_per_class, a.test_per_class);
            set(&mut cfg.split.train_per_class, a.train_per_class);
        }
        Command::TrainDa(a) => {
            let d = &mut cfg.da;
            set(&mut d.learning_rate, a.learning_rate);
            set(&mut d.batch_size, a.batch_size);
            set(&mut d.embedding_dim, a.embedding_dim);
            set(&mut d.hidden_dim, a.hidden_dim);
            set(&mut d.eval_every, a.eval_every);
            if let Some(max) = a.max_steps {
                d.steps = d.steps.min(max);
            }
            d.validate().map_err(|e| usage(e.to_string()))?;
        }
        Command::TrainWordpairs(a) => {
            let w = &mut cfg.wordpairs;
            set(&mut w.epochs, a.epochs);
            set(&mut w.learning_rate, a.learning_rate);
            set(&mut w.l2, a.l2);
            set(&mut w.min_support, a.min_support);
            w.arg1_singles |= a.arg1_singles;
            w.hashed |= a.hashed;
        }
        _ => {}
    }
    Ok(())
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn create_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(BufWriter::new(io::stdout()))),
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let mut out = create_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn extract(a: &ExtractArgs, lex: &ConnectiveLexicon) -> Result<()> {
    let records = read_jsonl_articles(open_input(&a.input)?);
    let extraction = extract_pairs(records, lex);
    info!("extraction {}", serde_json::to_string(&extraction.stats)?);
    let mut out = create_output(Some(&a.output))?;
    write_examples(&mut out, &extraction.examples, lex)?;
    out.flush()?;
    if let Some(path) = &a.histogram {
        let mut h = create_output(Some(path))?;
        for (label, n) in class_histogram(&extraction.examples, lex.num_labels())
            .iter()
            .enumerate()
        {
            writeln!(h, "{}\t{n}", lex.name(label))?;
        }
        h.flush()?;
    }
    Ok(())
}

fn read_dataset_file(path: &Path, lex: &ConnectiveLexicon) -> Result<Vec<LabeledExample>> {
    if path.as_os_str() == "-" {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text)?;
        return Ok(connective_core::corpus::parse_examples(
            text.as_bytes(),
            Path::new("<stdin>"),
            lex,
        )?);
    }
    read_examples(path, lex).with_context(|| format!("reading dataset {}", path.display()))
}

fn build_dataset(a: &BuildArgs, lex: &ConnectiveLexicon, cfg: &RunConfig) -> Result<()> {
    let examples = read_dataset_file(&a.input, lex)?;
    let (split, report) = build_splits(&examples, lex, &cfg.split)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_dataset(&a.out_dir, &split, lex)?;
    let summary = json!({
        "spec": cfg.split,
        "sizes": {"train": split.train.len(), "dev": split.dev.len(), "test": split.test.len()},
        "report": report,
    });
    write_json(Some(&a.out_dir.join("split_report.json")), &summary)?;
    info!(
        "wrote {} train, {} dev, {} test examples to {}",
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn load_train_dev(d: &DataArgs, lex: &ConnectiveLexicon) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let train_path = d
        .train
        .clone()
        .or_else(|| d.data_dir.as_ref().map(|p| p.join(SPLIT_FILES[0])))
        .expect("clap requires --train or --data-dir");
    let dev_path = d
        .dev
        .clone()
        .or_else(|| d.data_dir.as_ref().map(|p| p.join(SPLIT_FILES[1])));
    let train = read_dataset_file(&train_path, lex)?;
    let dev = match dev_path {
        Some(p) => read_dataset_file(&p, lex)?,
        None => Vec::new(),
    };
    Ok((train, dev))
}

fn train_da(a: &TrainDaArgs, lex: &ConnectiveLexicon, cfg: &RunConfig) -> Result<()> {
    let (train, dev) = load_train_dev(&a.data, lex)?;
    let mut log = create_output(a.log.as_deref())?;
    let mut log_err = None;
    let mut embeddings = a.embeddings.as_deref().map(open_input).transpose()?;
    let tm = da::fit(
        &train,
        &dev,
        lex.label_names().to_vec(),
        &cfg.da,
        embeddings.as_mut().map(|e| e as &mut dyn BufRead),
        matches!(a.keep, Keep::Best),
        |record| {
            let line = serde_json::to_string(record).expect("log records serialize");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                log_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e).context("writing training log");
    }
    let mut out = create_output(Some(&a.output))?;
    da::save_checkpoint(&mut out, &tm)?;
    out.flush()?;
    info!("saved checkpoint to {}", a.output.display());
    Ok(())
}

fn train_wordpairs(a: &TrainWpArgs, lex: &ConnectiveLexicon, cfg: &RunConfig) -> Result<()> {
    let (train, dev) = load_train_dev(&a.data, lex)?;
    let (dict, model) = wordpairs::fit(&train, lex.num_labels(), &cfg.wordpairs)?;
    info!("{} features", dict.len());
    if !dev.is_empty() {
        let preds: Vec<LabelId> = dev.iter().map(|e| model.predict_label(&dict.featurize(e))).collect();
        let gold: Vec<LabelId> = dev.iter().map(|e| e.label).collect();
        let r = evaluate(&preds, &gold, lex.num_labels())?;
        info!("dev accuracy {:.2} macro-F1 {:.2}", r.accuracy, r.macro_f1);
    }
    let mut out = create_output(Some(&a.output))?;
    wordpairs::save_model(&mut out, &dict, &model, lex.label_names(), &cfg.wordpairs)?;
    out.flush()?;
    if let Some(path) = &a.dict_tsv {
        let mut w = create_output(Some(path))?;
        dict.write_tsv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

enum Model {
    Da(Box<TrainedModel>),
    WordPairs(Box<LoadedWordPairs>),
}

impl Model {
    fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
        let model = if bytes.starts_with(CHECKPOINT_MAGIC) {
            Model::Da(Box::new(da::load_checkpoint(bytes.as_slice())?))
        } else if bytes.starts_with(wordpairs::MODEL_MAGIC) {
            Model::WordPairs(Box::new(wordpairs::load_model(bytes.as_slice())?))
        } else {
            return Err(connective_core::Error::Checkpoint(format!("{} is not a model file", path.display())).into());
        };
        Ok(model)
    }

    fn labels(&self) -> &[String] {
        match self {
            Model::Da(m) => &m.labels,
            Model::WordPairs(m) => &m.labels,
        }
    }

    fn ranked(&self, arg1: &[String], arg2: &[String]) -> Result<Vec<(LabelId, f64)>> {
        Ok(match self {
            Model::Da(m) => da::predict(m, arg1, arg2)?.ranked,
            Model::WordPairs(m) => m.predict(arg1, arg2),
        })
    }

    fn check_labels(&self, lex: &ConnectiveLexicon) -> Result<()> {
        if self.labels() != lex.label_names() {
            return Err(connective_core::Error::Checkpoint("model label set differs from the lexicon".into()).into());
        }
        Ok(())
    }
}

fn predict_all(model: &Model, data: &[LabeledExample]) -> Result<Vec<LabelId>> {
    use rayon::prelude::*;
    data.par_iter()
        .map(|e| Ok(model.ranked(&e.arg1, &e.arg2)?[0].0))
        .collect()
}

type LabelRows = Vec<(String, LabelId)>;

fn evaluate_cmd(a: &EvaluateArgs, lex: &ConnectiveLexicon) -> Result<()> {
    let (gold, preds): (LabelRows, LabelRows) = match (&a.model, &a.gold) {
        (Some(model_path), None) => {
            let model = Model::load(model_path)?;
            model.check_labels(lex)?;
            let data = read_dataset_file(a.data.as_deref().expect("clap requires --data"), lex)?;
            let preds = predict_all(&model, &data)?;
            let ids = (0..data.len()).map(|i| i.to_string());
            (
                ids.clone().zip(data.iter().map(|e| e.label)).collect(),
                ids.zip(preds).collect(),
            )
        }
        (None, Some(gold_path)) => {
            let pred_path = a.predictions.as_deref().expect("clap requires --predictions");
            (
                read_labels(open_input(gold_path)?, gold_path, lex)?,
                read_labels(open_input(pred_path)?, pred_path, lex)?,
            )
        }
        _ => return Err(usage("give either --model with --data, or --gold with --predictions")),
    };
    let pred_by_id: std::collections::HashMap<&str, LabelId> = preds.iter().map(|(i, l)| (i.as_str(), *l)).collect();
    if pred_by_id.len() != gold.len() {
        return Err(connective_core::Error::MisalignedItems(format!(
            "{} predictions for {} gold items",
            preds.len(),
            gold.len()
        ))
        .into());
    }
    let mut p = Vec::with_capacity(gold.len());
    for (id, _) in &gold {
        let l = pred_by_id
            .get(id.as_str())
            .ok_or_else(|| connective_core::Error::MisalignedItems(format!("no prediction for item {id:?}")))?;
        p.push(*l);
    }
    let g: Vec<LabelId> = gold.iter().map(|r| r.1).collect();
    let report = evaluate(&p, &g, lex.num_labels())?;
    if let Some(path) = &a.confusion {
        let mut w = create_output(Some(path))?;
        report.confusion.write_csv(&mut w, lex.label_names())?;
        w.flush()?;
    }
    if let Some(path) = &a.predictions_out {
        let mut w = create_output(Some(path))?;
        write_labels(&mut w, &preds, lex)?;
        w.flush()?;
    }
    write_json(a.output.as_deref(), &report.to_json(lex.label_names()))
}

fn tokens(text: &str) -> Result<Vec<String>> {
    Ok(tokenize(text)?.tokens)
}

fn ranked_json(model: &Model, ranked: &[(LabelId, f64)]) -> serde_json::Value {
    let rows: Vec<_> = ranked
        .iter()
        .map(|&(l, s)| json!({"label": model.labels()[l], "score": (s * 1e6).round() / 1e6}))
        .collect();
    json!(rows)
}

fn predict_cmd(a: &PredictArgs, lex: &ConnectiveLexicon) -> Result<()> {
    let model = Model::load(&a.model)?;
    let top = a.top.unwrap_or(usize::MAX);
    if top == 0 {
        return Err(usage("--top must be at least 1"));
    }
    if let (Some(arg1), Some(arg2)) = (&a.arg1, &a.arg2) {
        let (t1, t2) = (tokens(arg1)?, tokens(arg2)?);
        let ranked = model.ranked(&t1, &t2)?;
        let ranked = &ranked[..ranked.len().min(top)];
        let value = json!({
            "arg1": t1,
            "arg2": t2,
            "predicted": model.labels()[ranked[0].0],
            "ranked": ranked_json(&model, ranked),
        });
        return write_json(a.output.as_deref(), &value);
    }
    let input = a.input.as_deref().expect("clap requires --arg1 or --input");
    model.check_labels(lex)?;
    let data = read_dataset_file(input, lex)?;
    let preds = predict_all(&model, &data)?;
    let rows: Vec<(String, LabelId)> = preds.into_iter().enumerate().map(|(i, l)| (i.to_string(), l)).collect();
    let mut out = create_output(a.output.as_deref())?;
    write_labels(&mut out, &rows, lex)?;
    out.flush()?;
    Ok(())
}

fn explain_cmd(a: &ExplainArgs) -> Result<()> {
    let Model::Da(model) = Model::load(&a.model)? else {
        return Err(usage("explain needs an attention model checkpoint"));
    };
    let alignment = da::explain(&model, &tokens(&a.arg1)?, &tokens(&a.arg2)?)?;
    write_json(a.output.as_deref(), &serde_json::to_value(alignment)?)
}

fn rater_cmd(a: &RaterArgs, lex: &ConnectiveLexicon) -> Result<()> {
    let gold = read_labels(open_input(&a.gold)?, &a.gold, lex)?;
    let model = read_labels(open_input(&a.predictions)?, &a.predictions, lex)?;
    let ann = read_annotations(open_input(&a.annotations)?, &a.annotations, lex)?;
    let analysis = rater_analysis(&gold, &model, &ann, lex.num_labels(), lex.no_connective())?;
    let raw: Vec<[LabelId; 3]> = ann.iter().map(|r| r.1).collect();
    let mut value = analysis.to_json(lex.label_names());
    value["consensus"] = serde_json::to_value(consensus_stats(&raw))?;
    write_json(a.output.as_deref(), &value)
}
