//! Command-line front end.
//!
//! Every command writes a deterministic run log to stderr (and to `--log`
//! when given). Settings may come from a flat `key = value` file passed with
//! `--config`; flags on the command line take precedence over it.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, CategoricalDataset, SynthSpec, VadDataset};
use crate::encoder::{
    self, EncodedExample, EncoderParams, EpochStats, Model, OptimizerKind, TrainConfig, VadExample,
    Vocabulary,
};
use crate::error::Error;
use crate::eval::{f1_scores, CorrelationReport};
use crate::labelspace::{AnnotationKind, AnnotationVector, Dim, LabelSpace};
use crate::lexicon::{min_max_rescale, VadLexicon, VadPoint};
use crate::prediction::{self, Prediction};

/// A problem with the invocation itself; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(
    name = "vad-emd",
    version,
    about = "Predict valence, arousal and dominance from categorically labeled text"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on categorical labels and write a checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Fine-tune a checkpoint on continuous VAD annotations.
    #[command(name = "finetune-vad", args_override_self = true)]
    FinetuneVad(FinetuneArgs),
    /// Decode VAD scores and labels for a text file.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Score a predictions file against VAD or categorical gold annotations.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Nearest lexicon words to a word or a VAD point.
    #[command(args_override_self = true)]
    Neighbors(NeighborsArgs),
    /// Generate a planted corpus with ground-truth VAD.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the run log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

impl OptimArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Word VAD lexicon (word, valence, arousal, dominance).
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Categorical training corpus.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated canonical label order.
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    /// Train, validation and test ratios.
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split: String,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FinetuneArgs {
    /// Stage-one checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// VAD corpus (id, text, V, A, D).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Source scale of the VAD scores as `lo,hi`.
    #[arg(long, default_value = "1,5")]
    pub vad_range: String,
    /// Share of the training split to use, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    /// Keep the checkpoint's vocabulary and labels but discard its weights.
    #[arg(long, action = ArgAction::SetTrue)]
    pub random_init: bool,
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split: String,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Texts: one per line, or a delimited file with `id` and `text` columns.
    #[arg(long, visible_alias = "input")]
    pub dataset: PathBuf,
    /// Predictions file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multi-label cutoff on the joint probability [default: 0.5^(1/3)].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Skip mass normalization of multi-label expectations.
    #[arg(long, action = ArgAction::SetTrue)]
    pub raw_expectation: bool,
    /// Also list this many nearest lexicon words per record.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Lexicon for `--neighbors`.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Output of `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold annotations, VAD or categorical.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "1,5")]
    pub vad_range: String,
    /// Report file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct NeighborsArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Query word, looked up in the lexicon.
    #[arg(long, conflicts_with = "point")]
    pub word: Option<String>,
    /// Query point as `v,a,d`.
    #[arg(long)]
    pub point: Option<String>,
    #[arg(long, short, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Lexicon supplying label coordinates.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Comma-separated label names.
    #[arg(long)]
    pub labels: String,
    /// Dataset path; the VAD sidecar goes next to it as `<stem>.vad.<ext>`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub max_labels: usize,
    #[arg(long, default_value_t = 8)]
    pub tokens_per_example: usize,
    #[arg(long, default_value_t = 8)]
    pub signal_vocab: usize,
    #[arg(long, default_value_t = 40)]
    pub noise_vocab: usize,
    /// Scale of the sidecar VAD scores.
    #[arg(long, default_value = "1,5")]
    pub vad_range: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Deterministic run log: stderr plus an optional file.
struct RunLog {
    text: String,
    file: Option<PathBuf>,
}

impl RunLog {
    fn new(file: Option<PathBuf>) -> Self {
        Self {
            text: String::new(),
            file,
        }
    }

    fn line(&mut self, line: impl AsRef<str>) {
        eprintln!("{}", line.as_ref());
        self.text.push_str(line.as_ref());
        self.text.push('\n');
    }

    fn finish(self) -> anyhow::Result<()> {
        if let Some(path) = &self.file {
            std::fs::write(path, &self.text)
                .with_context(|| format!("writing run log {}", path.display()))?;
        }
        Ok(())
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (cli, echo) = match parse(&args) {
        Ok(parsed) => parsed,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
        Err(ParseFailure::Config(msg)) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    match execute(cli, &echo) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

enum ParseFailure {
    Clap(clap::Error),
    Config(String),
}

/// Returns the parsed command plus `key = value` lines for every effective setting.
fn parse(args: &[OsString]) -> Result<(Cli, Vec<String>), ParseFailure> {
    let merged = merge_config(args).map_err(ParseFailure::Config)?;
    let matches = Cli::command()
        .try_get_matches_from(&merged)
        .map_err(ParseFailure::Clap)?;
    let cli = Cli::from_arg_matches(&matches).map_err(ParseFailure::Clap)?;
    let mut echo = Vec::new();
    if let Some((name, sub)) = matches.subcommand() {
        echo.push(format!("command = {name}"));
        let cmd = Cli::command();
        let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
        for arg in sub_cmd.get_arguments() {
            let id = arg.get_id().as_str();
            if matches!(id, "help" | "version") {
                continue;
            }
            let value = match arg.get_action() {
                ArgAction::SetTrue => sub.get_flag(id).to_string(),
                _ => match sub.get_raw(id) {
                    Some(vals) => vals
                        .map(|v| v.to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join(","),
                    None => continue,
                },
            };
            echo.push(format!("{} = {value}", id.replace('_', "-")));
        }
    }
    Ok((cli, echo))
}

/// Splices settings from `--config` in front of the user's own flags.
fn merge_config(args: &[OsString]) -> Result<Vec<OsString>, String> {
    let strs: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let Some(sub_pos) = strs
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map(|p| p + 1)
    else {
        return Ok(args.to_vec());
    };
    let mut config_path = None;
    for (i, a) in strs.iter().enumerate().skip(sub_pos + 1) {
        if a == "--config" {
            config_path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(p.to_string());
        }
    }
    let Some(path) = config_path else {
        return Ok(args.to_vec());
    };
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&strs[sub_pos]) else {
        return Ok(args.to_vec());
    };
    let text =
        std::fs::read_to_string(&path).map_err(|e| format!("cannot read --config {path}: {e}"))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("{path}:{}: expected 'key = value'", n + 1));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help");
        let Some(arg) = arg else {
            return Err(format!("{path}:{}: unknown key '{key}'", n + 1));
        };
        match arg.get_action() {
            ArgAction::SetTrue => match value {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(format!(
                        "{path}:{}: '{key}' expects true or false, got '{other}'",
                        n + 1
                    ))
                }
            },
            _ => injected.push(format!("--{key}={value}").into()),
        }
    }
    let mut merged = args[..=sub_pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[sub_pos + 1..]);
    Ok(merged)
}

fn require_file(path: &Path, flag: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(usage(format!(
            "--{flag}: file not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn parse_pair(s: &str, flag: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(usage(format!("--{flag}: expected two numbers, got '{s}'"))),
        },
        _ => Err(usage(format!("--{flag}: expected 'lo,hi', got '{s}'"))),
    }
}

fn parse_ratios(s: &str) -> anyhow::Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--split: expected three numbers, got '{s}'")))?;
    let ratios: [f64; 3] = parts
        .try_into()
        .map_err(|_| usage(format!("--split: expected three numbers, got '{s}'")))?;
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(usage(format!(
            "--split: ratios must be non-negative and sum to 1, got '{s}'"
        )));
    }
    Ok(ratios)
}

fn parse_labels(s: &str) -> Vec<String> {
    s.split(',')
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

fn start_log(common: &CommonArgs, echo: &[String]) -> RunLog {
    let mut log = RunLog::new(common.log.clone());
    log.line(format!("vad-emd {}", env!("CARGO_PKG_VERSION")));
    for line in echo {
        log.line(line);
    }
    log
}

fn log_label_space(log: &mut RunLog, space: &LabelSpace) {
    log.line(format!("labels = {}", space.names().join(",")));
    for dim in Dim::ALL {
        log.line(format!(
            "sorted_{} = {}",
            dim.to_string().to_lowercase(),
            space.sorted_names(dim).join(",")
        ));
    }
}

fn execute(cli: Cli, echo: &[String]) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, echo),
        Command::FinetuneVad(a) => cmd_finetune_vad(&a, echo),
        Command::Predict(a) => cmd_predict(&a, echo),
        Command::Evaluate(a) => cmd_evaluate(&a, echo),
        Command::Neighbors(a) => cmd_neighbors(&a, echo),
        Command::Synth(a) => cmd_synth(&a, echo),
    }
}

/// Decodes one text. Models with a regression head report its VAD output.
pub fn decode(
    model: &Model,
    text: &str,
    threshold: f64,
    raw_expectation: bool,
) -> crate::Result<Prediction> {
    let ids = model.vocab.encode(text);
    let triple = model.params.forward(&ids, model.kind)?;
    let mut pred = prediction::predict(&triple, &model.space, threshold, raw_expectation)?;
    if model.params.reg_head.is_some() {
        let [v, a, d] = model.params.regress(&ids, model.kind)?;
        pred.vad = VadPoint { v, a, d };
    }
    Ok(pred)
}

fn predicted_annotation(
    model: &Model,
    ids: &[usize],
    threshold: f64,
) -> crate::Result<AnnotationVector> {
    let triple = model.params.forward(ids, model.kind)?;
    let pred = prediction::predict(&triple, &model.space, threshold, false)?;
    let idx: Vec<usize> = pred
        .labels()
        .iter()
        .filter_map(|l| model.space.index_of(l))
        .collect();
    match model.kind {
        AnnotationKind::Single => AnnotationVector::one_hot(model.space.len(), idx[0]),
        AnnotationKind::Multi => AnnotationVector::multi_hot(model.space.len(), &idx),
    }
}

fn cmd_train(a: &TrainArgs, echo: &[String]) -> anyhow::Result<()> {
    require_file(&a.lexicon, "lexicon")?;
    require_file(&a.dataset, "dataset")?;
    let ratios = parse_ratios(&a.split)?;
    let config = a.optim.config();
    config.validate().map_err(|e| usage(e.to_string()))?;
    if a.embed_dim == 0 {
        return Err(usage("--embed-dim must be positive"));
    }
    let mut log = start_log(&a.common, echo);

    let lexicon = VadLexicon::from_path(&a.lexicon).context("loading --lexicon")?;
    let wanted = a.labels.as_deref().map(parse_labels);
    let dataset = CategoricalDataset::from_path(&a.dataset, wanted.as_deref())
        .context("loading --dataset")?;
    let space = LabelSpace::build(&dataset.labels, &lexicon)?;
    let split = match dataset.kind {
        AnnotationKind::Single => data::stratified_split(&dataset, ratios, config.seed)?,
        AnnotationKind::Multi => data::shuffled_split(&dataset.examples, ratios, config.seed)?,
    };
    log.line(format!("kind = {}", dataset.kind));
    log.line(format!(
        "sizes = total {} train {} valid {} test {}",
        dataset.examples.len(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    ));
    log_label_space(&mut log, &space);

    let vocab = Vocabulary::build(split.train.iter().map(|e| e.text.as_str()));
    log.line(format!("vocabulary = {}", vocab.len()));
    let encode = |xs: &[data::LabeledExample]| -> crate::Result<Vec<EncodedExample>> {
        xs.iter()
            .map(|e| EncodedExample::new(&vocab, &e.text, &space, &e.annotation))
            .collect()
    };
    let train = encode(&split.train)?;
    let valid = encode(&split.valid)?;
    let test = encode(&split.test)?;
    let mut model = Model::init(
        vocab.clone(),
        space.clone(),
        dataset.kind,
        a.embed_dim,
        config.seed,
    );
    let threshold = prediction::default_threshold();

    let gold_valid: Vec<AnnotationVector> =
        split.valid.iter().map(|e| e.annotation.clone()).collect();
    let mut epoch_lines = Vec::new();
    let mut observer = |stats: &EpochStats, params: &EncoderParams| {
        let mut line = format!("epoch {} train_loss {:.6}", stats.epoch, stats.train_loss);
        if let Some(v) = stats.valid_loss {
            let probe = Model {
                vocab: vocab.clone(),
                space: space.clone(),
                kind: dataset.kind,
                params: params.clone(),
            };
            let f1 = valid
                .iter()
                .map(|ex| predicted_annotation(&probe, &ex.ids, threshold))
                .collect::<crate::Result<Vec<_>>>()
                .and_then(|pred| f1_scores(&gold_valid, &pred));
            let _ = write!(line, " valid_loss {v:.6}");
            match f1 {
                Ok(rep) => {
                    let _ = write!(
                        line,
                        " valid_micro_f1 {:.6} valid_macro_f1 {:.6}",
                        rep.micro_f1, rep.macro_f1
                    );
                }
                Err(e) => {
                    let _ = write!(line, " valid_f1 unavailable ({e})");
                }
            }
        }
        epoch_lines.push(line);
    };
    let valid_opt = (!valid.is_empty()).then_some(valid.as_slice());
    let outcome = encoder::train_observed(
        model.params.clone(),
        &train,
        valid_opt,
        &space,
        dataset.kind,
        &config,
        Some(&mut observer),
    );
    for line in &epoch_lines {
        log.line(line);
    }
    let outcome = outcome?;
    log.line(format!("best_epoch = {}", outcome.best_epoch));
    model.params = outcome.params;

    for (name, set, gold) in [
        ("valid", &valid, &split.valid),
        ("test", &test, &split.test),
    ] {
        if set.is_empty() {
            continue;
        }
        let pred = set
            .iter()
            .map(|ex| predicted_annotation(&model, &ex.ids, threshold))
            .collect::<crate::Result<Vec<_>>>()?;
        let gold: Vec<AnnotationVector> = gold.iter().map(|e| e.annotation.clone()).collect();
        let rep = f1_scores(&gold, &pred)?;
        log.line(format!(
            "{name}_micro_f1 = {:.6}\n{name}_macro_f1 = {:.6}\n{name}_accuracy = {:.6}",
            rep.micro_f1, rep.macro_f1, rep.accuracy
        ));
    }
    model
        .save(&a.checkpoint)
        .with_context(|| format!("writing --checkpoint {}", a.checkpoint.display()))?;
    log.line(format!("checkpoint = {}", a.checkpoint.display()));
    log.finish()
}

fn cmd_finetune_vad(a: &FinetuneArgs, echo: &[String]) -> anyhow::Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.dataset, "dataset")?;
    let range = parse_pair(&a.vad_range, "vad-range")?;
    let ratios = parse_ratios(&a.split)?;
    if !(a.train_fraction > 0.0 && a.train_fraction <= 1.0) {
        return Err(usage(format!(
            "--train-fraction must be in (0, 1], got {}",
            a.train_fraction
        )));
    }
    let config = a.optim.config();
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut log = start_log(&a.common, echo);

    let mut model = Model::load(&a.checkpoint).context("loading --checkpoint")?;
    if a.random_init {
        model.params = EncoderParams::init(
            model.vocab.len(),
            model.params.embed_dim,
            model.space.len(),
            config.seed,
        );
    }
    model.params.reg_head = None;
    let dataset = VadDataset::from_path(&a.dataset, range).context("loading --dataset")?;
    let split = data::shuffled_split(&dataset.examples, ratios, config.seed)?;
    let train_part = subsample(&split.train, a.train_fraction, config.seed);
    log.line(format!(
        "sizes = total {} train {} (of {}) valid {} test {}",
        dataset.examples.len(),
        train_part.len(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    ));
    log_label_space(&mut log, &model.space);

    let encode = |xs: &[data::VadRecord]| -> Vec<VadExample> {
        xs.iter()
            .map(|r| VadExample::new(&model.vocab, &r.text, r.target))
            .collect()
    };
    let train = encode(&train_part);
    let valid = encode(&split.valid);
    let test = encode(&split.test);
    if train.is_empty() {
        bail!(Error::EmptyDataset);
    }
    let kind = model.kind;
    let mut epoch_lines = Vec::new();
    let mut observer = |stats: &EpochStats, params: &EncoderParams| {
        let mut line = format!("epoch {} train_loss {:.6}", stats.epoch, stats.train_loss);
        if let Some(v) = stats.valid_loss {
            let _ = write!(line, " valid_loss {v:.6}");
            match correlation(params, &valid, kind) {
                Ok(r) => {
                    let _ = write!(
                        line,
                        " valid_r_v {:.6} valid_r_a {:.6} valid_r_d {:.6}",
                        r.r_v, r.r_a, r.r_d
                    );
                }
                Err(e) => {
                    let _ = write!(line, " valid_r unavailable ({e})");
                }
            }
        }
        epoch_lines.push(line);
    };
    let valid_opt = (!valid.is_empty()).then_some(valid.as_slice());
    let outcome = encoder::finetune_vad_observed(
        model.params.clone(),
        &train,
        valid_opt,
        kind,
        &config,
        Some(&mut observer),
    );
    for line in &epoch_lines {
        log.line(line);
    }
    let outcome = outcome?;
    log.line(format!("best_epoch = {}", outcome.best_epoch));
    model.params = outcome.params;
    if !test.is_empty() {
        match correlation(&model.params, &test, kind) {
            Ok(r) => log.line(format!(
                "test_r_v = {:.6}\ntest_r_a = {:.6}\ntest_r_d = {:.6}",
                r.r_v, r.r_a, r.r_d
            )),
            Err(e) => log.line(format!("test_r unavailable ({e})")),
        }
    }
    model
        .save(&a.out)
        .with_context(|| format!("writing --out {}", a.out.display()))?;
    log.line(format!("checkpoint = {}", a.out.display()));
    log.finish()
}

/// Seeded subset of `round(n * fraction)` items (at least one), in source order.
pub fn subsample<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    if items.is_empty() {
        return Vec::new();
    }
    let n = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len());
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5355_4253_414d_504c));
    let mut keep = order[..n].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}

fn correlation(
    params: &EncoderParams,
    set: &[VadExample],
    kind: AnnotationKind,
) -> crate::Result<CorrelationReport> {
    let pred = set
        .iter()
        .map(|ex| {
            params
                .regress(&ex.ids, kind)
                .map(|[v, a, d]| VadPoint { v, a, d })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let gold: Vec<VadPoint> = set
        .iter()
        .map(|ex| VadPoint {
            v: ex.target[0],
            a: ex.target[1],
            d: ex.target[2],
        })
        .collect();
    CorrelationReport::compute(&pred, &gold)
}

fn join_floats(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn cmd_predict(a: &PredictArgs, echo: &[String]) -> anyhow::Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.dataset, "dataset")?;
    if let Some(k) = a.neighbors {
        match &a.lexicon {
            Some(p) => require_file(p, "lexicon")?,
            None => return Err(usage("--neighbors requires --lexicon")),
        }
        if k == 0 {
            return Err(usage("--neighbors must be positive"));
        }
    }
    let threshold = a.threshold.unwrap_or_else(prediction::default_threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(usage(format!(
            "--threshold must be in (0, 1), got {threshold}"
        )));
    }
    let mut log = start_log(&a.common, echo);
    let model = Model::load(&a.checkpoint).context("loading --checkpoint")?;
    let inputs = data::load_texts(std::fs::File::open(&a.dataset)?).context("loading --dataset")?;
    log.line(format!("threshold = {threshold:.6}"));
    log.line(format!("records = {}", inputs.len()));
    log_label_space(&mut log, &model.space);

    let preds = inputs
        .iter()
        .map(|(_, text)| decode(&model, text, threshold, a.raw_expectation))
        .collect::<crate::Result<Vec<_>>>()?;
    let neighbors = match (a.neighbors, &a.lexicon) {
        (Some(k), Some(path)) => {
            let lexicon = VadLexicon::from_path(path).context("loading --lexicon")?;
            Some(batch_neighbors(&preds, &lexicon, k)?)
        }
        _ => None,
    };

    let mut out = String::from("id\tv\ta\td\tlabels\tjoint");
    if neighbors.is_some() {
        out.push_str("\tneighbors");
    }
    out.push('\n');
    for (i, ((id, _), p)) in inputs.iter().zip(&preds).enumerate() {
        let _ = write!(
            out,
            "{id}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            p.vad.v,
            p.vad.a,
            p.vad.d,
            p.labels().join(";"),
            join_floats(p.joint.iter().copied())
        );
        if let Some(nb) = &neighbors {
            let _ = write!(out, "\t{}", nb[i].join(";"));
        }
        out.push('\n');
    }
    write_output(a.out.as_deref(), &out, "out")?;
    log.finish()
}

/// Min-max rescales each dimension over the batch, then queries the lexicon.
pub fn batch_neighbors(
    preds: &[Prediction],
    lexicon: &VadLexicon,
    k: usize,
) -> crate::Result<Vec<Vec<String>>> {
    let dims = [0, 1, 2].map(|d| {
        preds
            .iter()
            .map(|p| p.vad.to_array()[d])
            .collect::<Vec<_>>()
    });
    let [v, a, d] = [&dims[0], &dims[1], &dims[2]].map(|xs| min_max_rescale(xs));
    let (v, a, d) = (v?, a?, d?);
    (0..preds.len())
        .map(|i| {
            let point = VadPoint {
                v: v[i],
                a: a[i],
                d: d[i],
            };
            Ok(lexicon
                .nearest_neighbors(&point, k)?
                .into_iter()
                .map(|(w, _)| w)
                .collect())
        })
        .collect()
}

fn write_output(path: Option<&Path>, text: &str, flag: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("writing --{flag} {}", p.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub vad: VadPoint,
    pub labels: Vec<String>,
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .quoting(false)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().take(5).collect::<Vec<_>>() != ["id", "v", "a", "d", "labels"] {
        bail!(
            "{}: not a predictions file (header must start with id, v, a, d, labels)",
            path.display()
        );
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> anyhow::Result<f64> {
            rec.get(i).and_then(|s| s.parse().ok()).with_context(|| {
                format!("{}:{line}: bad number in column {}", path.display(), i + 1)
            })
        };
        out.push(PredictionRecord {
            id: rec.get(0).unwrap_or_default().to_string(),
            vad: VadPoint {
                v: num(1)?,
                a: num(2)?,
                d: num(3)?,
            },
            labels: rec
                .get(4)
                .unwrap_or_default()
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        });
    }
    Ok(out)
}

fn check_join<'a>(
    pred: impl Iterator<Item = &'a str>,
    gold: impl Iterator<Item = &'a str>,
) -> crate::Result<()> {
    let pred: Vec<&str> = pred.collect();
    let gold: Vec<&str> = gold.collect();
    if pred.len() != gold.len() {
        return Err(Error::JoinFailure(format!(
            "{} predictions for {} gold records",
            pred.len(),
            gold.len()
        )));
    }
    if let Some((i, (p, g))) = pred
        .iter()
        .zip(&gold)
        .enumerate()
        .find(|(_, (p, g))| p != g)
    {
        return Err(Error::JoinFailure(format!(
            "record {}: prediction id '{p}' does not match gold id '{g}'",
            i + 1
        )));
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, echo: &[String]) -> anyhow::Result<()> {
    require_file(&a.predictions, "predictions")?;
    require_file(&a.dataset, "dataset")?;
    let range = parse_pair(&a.vad_range, "vad-range")?;
    let mut log = start_log(&a.common, echo);
    let preds = read_predictions(&a.predictions).context("loading --predictions")?;
    let header = data::read_header(&a.dataset)?;
    let is_vad = header.len() == 5
        && header[2..]
            .iter()
            .map(|h| h.to_uppercase())
            .eq(["V", "A", "D"]);
    let report = if is_vad {
        let gold = VadDataset::from_path(&a.dataset, range).context("loading --dataset")?;
        check_join(
            preds.iter().map(|p| p.id.as_str()),
            gold.examples.iter().map(|g| g.id.as_str()),
        )?;
        let pred_pts: Vec<VadPoint> = preds.iter().map(|p| p.vad).collect();
        let gold_pts: Vec<VadPoint> = gold.examples.iter().map(|g| g.target).collect();
        let rep = CorrelationReport::compute(&pred_pts, &gold_pts)?;
        format!("{}{}", rep.table(), rep.key_values())
    } else {
        let gold = CategoricalDataset::from_path(&a.dataset, None).context("loading --dataset")?;
        check_join(
            preds.iter().map(|p| p.id.as_str()),
            gold.examples.iter().map(|g| g.id.as_str()),
        )?;
        let c = gold.labels.len();
        let pred_ann = preds
            .iter()
            .map(|p| {
                let idx = p
                    .labels
                    .iter()
                    .map(|l| {
                        gold.labels
                            .iter()
                            .position(|g| g.eq_ignore_ascii_case(l))
                            .ok_or_else(|| {
                                Error::LabelNotInLexicon(format!("{l} (not a gold label)"))
                            })
                    })
                    .collect::<crate::Result<Vec<_>>>()?;
                match (gold.kind, idx.as_slice()) {
                    (AnnotationKind::Single, [i]) => AnnotationVector::one_hot(c, *i),
                    (AnnotationKind::Single, _) => Err(Error::InvalidAnnotation(format!(
                        "record '{}' has {} predicted labels; single-label gold needs exactly one",
                        p.id,
                        idx.len()
                    ))),
                    (AnnotationKind::Multi, ix) => AnnotationVector::multi_hot(c, ix),
                }
            })
            .collect::<crate::Result<Vec<_>>>()?;
        let gold_ann: Vec<AnnotationVector> =
            gold.examples.iter().map(|g| g.annotation.clone()).collect();
        let rep = f1_scores(&gold_ann, &pred_ann)?;
        format!("{}{}", rep.table(&gold.labels), rep.key_values())
    };
    log.line(format!("records = {}", preds.len()));
    write_output(a.out.as_deref(), &report, "out")?;
    log.finish()
}

fn cmd_neighbors(a: &NeighborsArgs, echo: &[String]) -> anyhow::Result<()> {
    require_file(&a.lexicon, "lexicon")?;
    let log = start_log(&a.common, echo);
    let lexicon = VadLexicon::from_path(&a.lexicon).context("loading --lexicon")?;
    let point = match (&a.word, &a.point) {
        (Some(w), None) => lexicon.lookup(w)?,
        (None, Some(p)) => {
            let xs: Vec<f64> = p
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| usage(format!("--point: expected 'v,a,d', got '{p}'")))?;
            match xs.as_slice() {
                [v, a, d] => {
                    VadPoint::new(*v, *a, *d).map_err(|e| usage(format!("--point: {e}")))?
                }
                _ => return Err(usage(format!("--point: expected 'v,a,d', got '{p}'"))),
            }
        }
        _ => return Err(usage("one of --word or --point is required")),
    };
    let mut out = String::from("word\tdistance\n");
    for (w, dist) in lexicon.nearest_neighbors(&point, a.k)? {
        let _ = writeln!(out, "{w}\t{dist:.6}");
    }
    write_output(a.out.as_deref(), &out, "out")?;
    log.finish()
}

/// `corpus.tsv` becomes `corpus.vad.tsv`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.vad.{}", ext.to_string_lossy()),
        None => format!("{stem}.vad"),
    };
    out.with_file_name(name)
}

fn cmd_synth(a: &SynthArgs, echo: &[String]) -> anyhow::Result<()> {
    require_file(&a.lexicon, "lexicon")?;
    let range = parse_pair(&a.vad_range, "vad-range")?;
    let mut log = start_log(&a.common, echo);
    let lexicon = VadLexicon::from_path(&a.lexicon).context("loading --lexicon")?;
    let labels = parse_labels(&a.labels);
    let mut spec = SynthSpec::generated(&labels, &lexicon, a.n, a.noise, a.seed)
        .map_err(|e| usage(format!("--labels: {e}")))?;
    spec.max_labels = a.max_labels;
    spec.tokens_per_example = a.tokens_per_example;
    spec.signal_tokens = labels
        .iter()
        .map(|l| {
            (0..a.signal_vocab)
                .map(|k| format!("{}_{k}", l.to_lowercase()))
                .collect()
        })
        .collect();
    spec.noise_tokens = (0..a.noise_vocab).map(|k| format!("noise_{k}")).collect();
    let corpus = data::synth_generate(&spec).map_err(|e| usage(e.to_string()))?;
    let delimiter = match a.out.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    };
    let sidecar = sidecar_path(&a.out);
    let file = std::fs::File::create(&a.out)
        .with_context(|| format!("writing --out {}", a.out.display()))?;
    corpus
        .dataset
        .write(std::io::BufWriter::new(file), delimiter)?;
    let file = std::fs::File::create(&sidecar)
        .with_context(|| format!("writing {}", sidecar.display()))?;
    corpus
        .vad_dataset()
        .write(std::io::BufWriter::new(file), delimiter, range)?;
    log.line(format!("kind = {}", corpus.dataset.kind));
    log.line(format!("sizes = total {}", corpus.dataset.examples.len()));
    let space = LabelSpace::build(&labels, &lexicon)?;
    log_label_space(&mut log, &space);
    log.line(format!("dataset = {}", a.out.display()));
    log.line(format!("vad = {}", sidecar.display()));
    log.finish()
}
