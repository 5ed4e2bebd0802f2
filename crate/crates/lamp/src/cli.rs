//! The `lamp` command line: `train`, `eval` and `explain`.
//!
//! Exit codes: 0 ok, 2 usage, 3 checkpoint mismatch, 4 bad sample,
//! 5 data error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use lamp_core::data::split;
use lamp_core::explain::explain;
use lamp_core::loss::IntermediateStages;
use lamp_core::train::{self, AdamConfig, EpochRecord, TrainConfig, TrainReport};
use lamp_core::{
    Dataset, GraphMode, InputGraph, InputKind, LabelGraph, LampConfig, LampError, LampModel, Metric, MetricsReport,
    MlpBaseline, MultiLabelModel, Precision, Real, Sample,
};

use crate::checkpoint::{Checkpoint, MlpConfig, ModelKind};
use crate::config::ConfigFile;
use crate::dataset::{load_dataset, load_schema, SchemaFile};
use crate::edgelist::{load_adjacency, load_input_graph};
use crate::error::{Error, Result};
use crate::export::{write_explain, Names};
use crate::report::{format_log_record, format_report, LOG_HEADER};

/// Relative data paths that do not exist are looked up under this directory.
pub const DATA_ROOT_ENV: &str = "LAMP_DATA_ROOT";

/// Fraction of the training file held out for validation when `--val` is absent.
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

/// Labels added to the true positives when `--labels` is absent.
pub const DEFAULT_TOP_LABELS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "lamp", version, about = "Label Message Passing networks for multi-label classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a test file.
    Eval(EvalArgs),
    /// Export probes and attention maps for one sample.
    Explain(ExplainArgs),
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Training data file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation data file (default: 10% of --data).
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// key=value file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// lamp or mlp.
    #[arg(long)]
    pub model: Option<String>,
    /// Label graph: el, fc or pr.
    #[arg(long)]
    pub variant: Option<String>,
    /// Edge-list path, or `cooccur` to build the graph from training labels.
    #[arg(long)]
    pub prior_graph: Option<String>,
    /// Feature message passing: on or off.
    #[arg(long)]
    pub fmp: Option<String>,
    #[arg(long)]
    pub fmp_layers: Option<usize>,
    /// Edge list over feature ids restricting feature message passing.
    #[arg(long)]
    pub input_graph: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Train one model per intermediate-loss weight in {0, 0.1, 0.2, 0.3} and keep the best.
    #[arg(long)]
    pub lambda_sweep: bool,
    /// all_probes or step_outputs.
    #[arg(long)]
    pub intermediate: Option<String>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Validation metric for early stopping: acc, ha, ebf1, mif1 or maf1.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log path (default: checkpoint path with `.log.csv` appended).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Reselect thresholds on this file instead of using the checkpoint's.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Zero-based sample index in --data.
    #[arg(long)]
    pub sample: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated label ids or names (default: true labels plus the top 10 predicted).
    #[arg(long)]
    pub labels: Option<String>,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Explain(a) => cmd_explain(a),
    }
}

fn resolve_data_path(p: PathBuf) -> PathBuf {
    if p.is_relative() && !p.exists() {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            return Path::new(&root).join(p);
        }
    }
    p
}

fn required(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.map(resolve_data_path).ok_or_else(|| Error::Usage(format!("missing required flag --{flag}")))
}

fn parse_flag<T>(v: &str, flag: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
    parse(v).ok_or_else(|| Error::Usage(format!("--{flag}: invalid value {v:?}")))
}

fn on_off(v: &str) -> Option<bool> {
    match v {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

const CONFIG_KEYS: &[&str] = &[
    "data",
    "val",
    "schema",
    "model",
    "variant",
    "prior-graph",
    "prior_graph",
    "fmp",
    "fmp-layers",
    "fmp_layers",
    "input-graph",
    "input_graph",
    "d",
    "heads",
    "steps",
    "lambda",
    "lambda-sweep",
    "lambda_sweep",
    "intermediate",
    "dropout",
    "lr",
    "batch",
    "epochs",
    "patience",
    "metric",
    "seed",
    "precision",
    "out",
    "log",
];

/// Fully resolved training options.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub val: Option<PathBuf>,
    pub schema: PathBuf,
    pub model: ModelKind,
    pub variant: GraphMode,
    pub prior_graph: Option<String>,
    pub fmp: bool,
    pub fmp_layers: usize,
    pub input_graph: Option<PathBuf>,
    pub d: usize,
    pub heads: usize,
    pub steps: usize,
    pub lambda: f64,
    pub lambda_sweep: bool,
    pub intermediate: IntermediateStages,
    pub dropout: f64,
    pub train: TrainConfig,
    pub precision: Precision,
    pub out: PathBuf,
    pub log: PathBuf,
}

struct Layer<'a> {
    file: Option<&'a ConfigFile>,
}

impl Layer<'_> {
    fn raw(&self, key: &str) -> Option<String> {
        let file = self.file?;
        file.raw(key).or_else(|| file.raw(&key.replace('-', "_"))).map(str::to_string)
    }

    fn value<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.raw(key) {
            Some(v) => v.parse().map_err(|_| Error::Usage(format!("config {key}: invalid value {v:?}"))),
            None => Ok(default),
        }
    }

    fn string(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.raw(key))
    }
}

impl TrainSettings {
    /// Applies flags over the config file over defaults.
    pub fn resolve(args: TrainArgs) -> Result<Self> {
        let file = args.config.as_deref().map(ConfigFile::load).transpose()?;
        if let Some(f) = &file {
            f.check_keys(CONFIG_KEYS)?;
        }
        let layer = Layer { file: file.as_ref() };
        let path = |flag: Option<PathBuf>, key: &str| flag.or_else(|| layer.raw(key).map(PathBuf::from));

        let data = required(path(args.data, "data"), "data")?;
        let schema = required(path(args.schema, "schema"), "schema")?;
        let val = path(args.val, "val").map(resolve_data_path);

        let model = match layer.string(args.model, "model") {
            Some(v) => parse_flag(&v, "model", ModelKind::parse)?,
            None => ModelKind::Lamp,
        };
        let variant = match layer.string(args.variant, "variant") {
            Some(v) => parse_flag(&v, "variant", GraphMode::parse)?,
            None => GraphMode::FullyConnected,
        };
        let prior_graph = layer.string(args.prior_graph, "prior-graph");
        match (variant, &prior_graph) {
            (GraphMode::Prior, None) => {
                return Err(Error::Usage("--variant pr needs --prior-graph <path|cooccur>".into()));
            }
            (GraphMode::Edgeless | GraphMode::FullyConnected, Some(_)) => {
                return Err(Error::Usage(format!("--prior-graph conflicts with --variant {}", variant.as_str())));
            }
            _ => {}
        }
        let fmp = match layer.string(args.fmp, "fmp") {
            Some(v) => parse_flag(&v, "fmp", on_off)?,
            None => false,
        };
        let input_graph = path(args.input_graph, "input-graph").map(resolve_data_path);
        if input_graph.is_some() && !fmp {
            return Err(Error::Usage("--input-graph needs --fmp on".into()));
        }
        let intermediate = match layer.string(args.intermediate, "intermediate") {
            Some(v) => parse_flag(&v, "intermediate", IntermediateStages::parse)?,
            None => IntermediateStages::default(),
        };
        let metric = match layer.string(args.metric, "metric") {
            Some(v) => parse_flag(&v, "metric", Metric::parse)?,
            None => Metric::EbF1,
        };
        let precision = match layer.string(args.precision, "precision") {
            Some(v) => parse_flag(&v, "precision", Precision::parse)?,
            None => Precision::F32,
        };
        let lambda_sweep = args.lambda_sweep || layer.value(None, "lambda-sweep", false)?;
        let defaults = TrainConfig::default();
        let adam = AdamConfig { lr: layer.value(args.lr, "lr", AdamConfig::default().lr)?, ..AdamConfig::default() };
        let train = TrainConfig {
            epochs: layer.value(args.epochs, "epochs", defaults.epochs)?,
            batch_size: layer.value(args.batch, "batch", defaults.batch_size)?,
            patience: layer.value(args.patience, "patience", defaults.patience)?,
            metric,
            adam,
            clip: defaults.clip,
            seed: layer.value(args.seed, "seed", defaults.seed)?,
        };
        if train.epochs == 0 {
            return Err(Error::Usage("--epochs must be at least 1".into()));
        }
        if train.batch_size == 0 {
            return Err(Error::Usage("--batch must be at least 1".into()));
        }
        if !(adam.lr > 0.0 && adam.lr.is_finite()) {
            return Err(Error::Usage(format!("--lr must be positive, got {}", adam.lr)));
        }
        let out = path(args.out, "out").unwrap_or_else(|| PathBuf::from("lamp.ckpt"));
        let log = path(args.log, "log").unwrap_or_else(|| {
            let mut s = out.clone().into_os_string();
            s.push(".log.csv");
            PathBuf::from(s)
        });
        Ok(TrainSettings {
            data,
            val,
            schema,
            model,
            variant,
            prior_graph,
            fmp,
            fmp_layers: layer.value(args.fmp_layers, "fmp-layers", 2)?,
            input_graph,
            d: layer.value(args.d, "d", 512)?,
            heads: layer.value(args.heads, "heads", 4)?,
            steps: layer.value(args.steps, "steps", 2)?,
            lambda: layer.value(args.lambda, "lambda", 0.0)?,
            lambda_sweep,
            intermediate,
            dropout: layer.value(args.dropout, "dropout", 0.2)?,
            train,
            precision,
            out,
            log,
        })
    }

    pub fn lamp_config(&self, schema: &SchemaFile, lambda: f64) -> LampConfig {
        let mut c = LampConfig::for_schema(&schema.schema);
        c.d = self.d;
        c.heads = self.heads;
        c.steps = self.steps;
        c.lambda = lambda;
        c.dropout = self.dropout;
        c.use_fmp = self.fmp;
        c.fmp_layers = self.fmp_layers;
        c.graph_mode = self.variant;
        c.intermediate = self.intermediate;
        c.precision = self.precision;
        c.seed = self.train.seed;
        c
    }
}

fn usage_on_param(e: LampError) -> Error {
    match e {
        LampError::Parameter { .. } => Error::Usage(e.to_string()),
        other => other.into(),
    }
}

fn label_graph(s: &TrainSettings, train_set: &Dataset) -> Result<LabelGraph> {
    let l = train_set.schema.num_labels;
    Ok(match s.variant {
        GraphMode::Edgeless => LabelGraph::edgeless(l)?,
        GraphMode::FullyConnected => LabelGraph::fully_connected(l)?,
        GraphMode::Prior => match s.prior_graph.as_deref() {
            Some("cooccur") => LabelGraph::cooccurrence(&train_set.label_sets(), l)?,
            Some(p) => load_adjacency(&resolve_data_path(PathBuf::from(p)), l)?,
            None => return Err(Error::Usage("--variant pr needs --prior-graph".into())),
        },
    })
}

fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{LOG_HEADER}").map_err(io)?;
    for r in records {
        writeln!(w, "{}", format_log_record(r)).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn log_epoch(r: &EpochRecord) {
    log::info!("{}", format_log_record(r));
}

fn fit<T: Real, M: MultiLabelModel<T>>(
    mut make: impl FnMut(f64) -> Result<M>,
    s: &TrainSettings,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<(f64, M, TrainReport)> {
    if s.lambda_sweep {
        let mut make_core = |lambda| make(lambda).map_err(|e| LampError::Contract(e.to_string()));
        let (lambda, model, report) = train::lambda_sweep(&mut make_core, train_set, val_set, &s.train)?;
        log::info!("lambda sweep selected {lambda}");
        Ok((lambda, model, report))
    } else {
        let mut model = make(s.lambda)?;
        let report = train::train_with(&mut model, train_set, Some(val_set), &s.train, &mut log_epoch)?;
        Ok((s.lambda, model, report))
    }
}

fn train_typed<T: Real>(s: &TrainSettings, schema: &SchemaFile, train_set: &Dataset, val_set: &[Sample]) -> Result<()> {
    let (ckpt, report, model_ref): (Checkpoint, TrainReport, Box<dyn MultiLabelModel<T>>) = match s.model {
        ModelKind::Lamp => {
            let graph = label_graph(s, train_set)?;
            let input_graph: Option<InputGraph> =
                s.input_graph.as_deref().map(|p| load_input_graph(p, schema.schema.num_features)).transpose()?;
            let make = |lambda: f64| -> Result<LampModel<T>> {
                LampModel::new(s.lamp_config(schema, lambda), graph.clone(), input_graph.clone()).map_err(usage_on_param)
            };
            let (_, model, report) = fit(make, s, &train_set.samples, val_set)?;
            (Checkpoint::from_lamp(&model, report.thresholds), report, Box::new(model))
        }
        ModelKind::Mlp => {
            if schema.schema.input_kind == InputKind::DenseVector {
                return Err(Error::Usage("--model mlp needs tabular or sequence input".into()));
            }
            let cfg = MlpConfig {
                schema: schema.schema.clone(),
                d: s.d,
                dropout: s.dropout,
                seed: s.train.seed,
                precision: s.precision,
            };
            let make = |_: f64| -> Result<MlpBaseline<T>> {
                MlpBaseline::new(cfg.schema.clone(), cfg.d, cfg.dropout, cfg.seed).map_err(usage_on_param)
            };
            let (_, model, report) = fit(make, s, &train_set.samples, val_set)?;
            (Checkpoint::from_mlp(&model, &cfg, report.thresholds), report, Box::new(model))
        }
    };
    ckpt.save(&s.out)?;
    write_log(&s.log, &report.records)?;
    let val_report = train::evaluate(model_ref.as_ref(), val_set, report.thresholds, s.train.batch_size)?;
    println!(
        "trained {} epochs ({} steps), best epoch {}{}",
        report.epochs_run,
        report.steps,
        report.best_epoch,
        if report.stopped_early { ", stopped early" } else { "" }
    );
    println!("checkpoint {}", s.out.display());
    println!("log {}", s.log.display());
    print!("{}", format_report(&val_report));
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let s = TrainSettings::resolve(args)?;
    let schema = load_schema(&s.schema)?;
    let mut train_set = load_dataset(&s.data, &schema)?;
    let val_samples = match &s.val {
        Some(p) => load_dataset(p, &schema)?.samples,
        None => {
            let all = std::mem::take(&mut train_set.samples);
            let (tr, va, _) = split(all, [1.0 - DEFAULT_VAL_FRACTION, DEFAULT_VAL_FRACTION, 0.0], s.train.seed)?;
            train_set.samples = tr;
            va
        }
    };
    if train_set.samples.is_empty() {
        return Err(Error::Data(format!("{}: no training samples", s.data.display())));
    }
    if val_samples.is_empty() {
        return Err(Error::Data("validation split is empty; pass --val or use more data".into()));
    }
    match s.precision {
        Precision::F32 => train_typed::<f32>(&s, &schema, &train_set, &val_samples),
        Precision::F64 => train_typed::<f64>(&s, &schema, &train_set, &val_samples),
    }
}

fn eval_model<T: Real, M: MultiLabelModel<T>>(
    model: &M,
    ckpt: &Checkpoint,
    test: &[Sample],
    val: Option<&[Sample]>,
    batch: usize,
) -> Result<MetricsReport> {
    let thresholds = match val {
        Some(v) => {
            let (probs, y) = train::predict_split(model, v, batch)?;
            MetricsReport::select_thresholds(&y, &probs)?
        }
        None => ckpt.thresholds,
    };
    Ok(train::evaluate(model, test, thresholds, batch)?)
}

fn eval_typed<T: Real>(ckpt: &Checkpoint, test: &[Sample], val: Option<&[Sample]>, batch: usize) -> Result<MetricsReport> {
    match ckpt.kind()? {
        ModelKind::Lamp => eval_model(&ckpt.build_lamp::<T>()?, ckpt, test, val, batch),
        ModelKind::Mlp => eval_model(&ckpt.build_mlp::<T>()?.0, ckpt, test, val, batch),
    }
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt_path = required(args.ckpt, "ckpt")?;
    let schema_path = required(args.schema, "schema")?;
    let test_path = required(args.test, "test")?;
    let batch = args.batch.unwrap_or(TrainConfig::default().batch_size);
    if batch == 0 {
        return Err(Error::Usage("--batch must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let schema = load_schema(&schema_path)?;
    ckpt.check_schema(&schema.schema)?;
    let test = load_dataset(&test_path, &schema)?;
    if test.samples.is_empty() {
        return Err(Error::Data(format!("{}: no samples", test_path.display())));
    }
    let val = args.val.map(resolve_data_path).map(|p| load_dataset(&p, &schema)).transpose()?;
    let val = val.as_ref().map(|d| d.samples.as_slice());
    let report = match ckpt.precision()? {
        Precision::F32 => eval_typed::<f32>(&ckpt, &test.samples, val, batch)?,
        Precision::F64 => eval_typed::<f64>(&ckpt, &test.samples, val, batch)?,
    };
    let text = format_report(&report);
    print!("{text}");
    if let Some(p) = args.report {
        std::fs::write(&p, &text).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn parse_labels(spec: &str, names: &[String], num_labels: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let id = match item.parse::<usize>() {
            Ok(id) => id,
            Err(_) => names
                .iter()
                .position(|n| n == item)
                .ok_or_else(|| Error::Usage(format!("--labels: unknown label {item:?}")))?,
        };
        if id >= num_labels {
            return Err(Error::Usage(format!("--labels: label {id} out of range (L={num_labels})")));
        }
        out.push(id);
    }
    if out.is_empty() {
        return Err(Error::Usage("--labels is empty".into()));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn explain_typed<T: Real>(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    index: usize,
    labels: Option<&str>,
    out_dir: &Path,
) -> Result<()> {
    let model = ckpt.build_lamp::<T>()?;
    let record = explain(&model, &dataset.samples[index], index)?;
    let selected = match labels {
        Some(spec) => parse_labels(spec, &dataset.label_names, dataset.schema.num_labels)?,
        None => record.default_labels(DEFAULT_TOP_LABELS),
    };
    let dense = dataset.schema.input_kind == InputKind::DenseVector;
    let names = Names::new(&record, &dataset.label_names, &dataset.feature_names, dense);
    write_explain(out_dir, &record, &names, &selected)?;
    println!("wrote explain trace and plots for sample {index} to {}", out_dir.display());
    Ok(())
}

pub fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let ckpt_path = required(args.ckpt, "ckpt")?;
    let schema_path = required(args.schema, "schema")?;
    let data_path = required(args.data, "data")?;
    let sample = args.sample.ok_or_else(|| Error::Usage("missing required flag --sample".into()))?;
    let out_dir = args.out_dir.ok_or_else(|| Error::Usage("missing required flag --out-dir".into()))?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    if ckpt.kind()? != ModelKind::Lamp {
        return Err(Error::Checkpoint("explain needs a LaMP checkpoint, not an MLP baseline".into()));
    }
    let schema = load_schema(&schema_path)?;
    ckpt.check_schema(&schema.schema)?;
    let dataset = load_dataset(&data_path, &schema)?;
    let index: usize = sample.trim().parse().map_err(|_| Error::Usage(format!("--sample: {sample:?} is not an index")))?;
    if index >= dataset.samples.len() {
        return Err(Error::SampleOutOfRange { index, len: dataset.samples.len() });
    }
    match ckpt.precision()? {
        Precision::F32 => explain_typed::<f32>(&ckpt, &dataset, index, args.labels.as_deref(), &out_dir),
        Precision::F64 => explain_typed::<f64>(&ckpt, &dataset, index, args.labels.as_deref(), &out_dir),
    }
}
