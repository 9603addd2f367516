//! Experiment driver behind the `bfn` binary: JSON configs, scenario runs,
//! single-task training, generation, evaluation and plot export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bfn::{row_rng, sample_many, CategoricalReadout, DataSchema, LossKind};
use crate::checkpoint::{write_atomic, Checkpoint, CheckpointManifest};
use crate::continual::{Scenario, ScenarioSeeds, StrategyConfig, Task, TaskObserver, TaskStream, TrainingConfig};
use crate::data::{
    load_csv_tabular, load_idx_images, split_tasks, synthetic_flights, synthetic_mixture, Dataset, MixtureMode,
    SplitMode, SplitSpec, TabularCodec, TabularSchema, DEFAULT_THRESHOLD,
};
use crate::error::{BfnError, Result};
use crate::eval::{
    class_shares, forgetting_summary, loss_matrix_row, metrics_csv, metrics_json, metrics_long_csv,
    read_metrics_json, ClassifierProbe, MetricsRecord, ProbeConfig, EVAL_MC_SAMPLES,
};
use crate::model::{Activation, Mlp, NetworkSpec, OptimizerKind, TimeEmbedding};
use crate::schedule::{ScheduleSet, DEFAULT_SAMPLE_STEPS};

#[derive(Debug, Parser)]
#[command(name = "bfn", version, about = "Bayesian flow networks under continual learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train over the whole task stream, evaluating after every task.
    RunScenario(RunArgs),
    /// Train one model on all tasks' training rows at once.
    Train(RunArgs),
    /// Draw samples from a checkpoint into a CSV file.
    Generate(GenerateArgs),
    /// Loss-matrix row and class shares for one checkpoint.
    Evaluate(EvaluateArgs),
    /// Rewrite a run's metrics as a long-format CSV.
    ExportPlots(ExportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file to write; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory holding `metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Mixture {
        rows: usize,
        modes: Vec<MixtureMode>,
        weights: Vec<f64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default = "default_downscale")]
        downscale: Option<usize>,
    },
    Csv {
        path: PathBuf,
        schema: TabularSchema,
    },
    SyntheticFlights {
        rows: usize,
    },
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_downscale() -> Option<usize> {
    Some(crate::data::DEFAULT_DOWNSCALE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub time_embedding: TimeEmbedding,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![256, 256],
            activation: Activation::Silu,
            time_embedding: TimeEmbedding::Sinusoidal { frequencies: 8 },
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, schema: &DataSchema) -> NetworkSpec {
        let heads = schema.heads();
        NetworkSpec {
            input_width: schema.feature_width(),
            hidden_widths: self.hidden_widths.clone(),
            output_width: heads.iter().map(|h| h.width()).sum(),
            activation: self.activation,
            time_embedding: self.time_embedding,
            heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingBlock {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub steps_per_task: usize,
    pub batch_size: usize,
    /// Resolved from the schema when omitted.
    pub loss: Option<LossKind>,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        Self { optimizer: OptimizerKind::Adam, learning_rate: 1e-3, steps_per_task: 1000, batch_size: 64, loss: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `null` disables class-share measurement.
    pub probe: Option<ProbeConfig>,
    pub samples: usize,
    pub sample_steps: usize,
    pub mc_samples: usize,
    pub readout: CategoricalReadout,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe: Some(ProbeConfig::default()),
            samples: 1000,
            sample_steps: DEFAULT_SAMPLE_STEPS,
            mc_samples: EVAL_MC_SAMPLES,
            readout: CategoricalReadout::Argmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub schedule: ScheduleSet,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingBlock,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// 1-based line of the first occurrence of `"key"`, or 1 when absent.
fn key_line(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parses and validates a config file. Relative dataset paths are taken
    /// relative to the file's directory. Every error names `path:line`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| BfnError::Config(format!("{}:1: cannot read config: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| {
            BfnError::Config(format!("{}:{}:{}: {e}", path.display(), e.line().max(1), e.column()))
        })?;
        let fail = |key: &str, msg: String| BfnError::Config(format!("{}:{}: {msg}", path.display(), key_line(text, key)));
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        match &mut cfg.dataset.source {
            DataSource::Idx { images, labels, threshold, downscale } => {
                *images = resolve(&base, images);
                *labels = resolve(&base, labels);
                for (key, p) in [("images", &*images), ("labels", &*labels)] {
                    if !p.is_file() {
                        return Err(fail(key, format!("dataset file {} does not exist", p.display())));
                    }
                }
                if !(*threshold > 0.0 && *threshold < 1.0) {
                    return Err(fail("threshold", format!("threshold {threshold} outside (0, 1)")));
                }
                if *downscale == Some(0) {
                    return Err(fail("downscale", "downscale must be positive".into()));
                }
            }
            DataSource::Csv { path: p, .. } => {
                *p = resolve(&base, p);
                if !p.is_file() {
                    return Err(fail("path", format!("dataset file {} does not exist", p.display())));
                }
            }
            DataSource::Mixture { rows, modes, weights } => {
                if *rows == 0 || modes.is_empty() || modes.len() != weights.len() {
                    return Err(fail("modes", "mixture needs rows > 0 and one weight per mode".into()));
                }
            }
            DataSource::SyntheticFlights { rows } => {
                if *rows == 0 {
                    return Err(fail("rows", "synthetic_flights needs rows > 0".into()));
                }
            }
        }
        let tf = cfg.dataset.split.test_fraction;
        if !(tf > 0.0 && tf < 1.0) {
            return Err(fail("test_fraction", format!("test_fraction {tf} outside (0, 1)")));
        }
        if let SplitMode::ClassIncremental { classes_per_task: 0 } = cfg.dataset.split.mode {
            return Err(fail("classes_per_task", "classes_per_task must be at least 1".into()));
        }
        cfg.schedule.validate().map_err(|e| fail("schedule", e.to_string()))?;
        if cfg.network.hidden_widths.is_empty() || cfg.network.hidden_widths.contains(&0) {
            return Err(fail("hidden_widths", "hidden_widths must be non-empty and positive".into()));
        }
        if let TimeEmbedding::Sinusoidal { frequencies: 0 } = cfg.network.time_embedding {
            return Err(fail("time_embedding", "sinusoidal embedding needs at least one frequency".into()));
        }
        let t = &cfg.training;
        if t.steps_per_task == 0 || t.batch_size == 0 || !(t.learning_rate > 0.0) {
            return Err(fail("training", "steps_per_task, batch_size and learning_rate must be positive".into()));
        }
        cfg.strategy.validate().map_err(|e| fail("strategy", e.to_string()))?;
        if cfg.eval.samples == 0 || cfg.eval.sample_steps == 0 || cfg.eval.mc_samples == 0 {
            return Err(fail("eval", "samples, sample_steps and mc_samples must be positive".into()));
        }
        if let Some(p) = &cfg.eval.probe {
            if !(p.holdout_fraction > 0.0 && p.holdout_fraction < 1.0) {
                return Err(fail("holdout_fraction", "holdout_fraction must lie in (0, 1)".into()));
            }
        }
        Ok(cfg)
    }

    /// Fills in the schema-dependent training loss.
    pub fn resolve(&mut self, schema: &DataSchema) {
        if self.training.loss.is_none() {
            self.training.loss = Some(if schema.is_continuous_only() {
                LossKind::ContinuousTime { t_samples: 1 }
            } else {
                LossKind::DiscreteTimeSampled { mc_samples: 1 }
            });
        }
    }

    fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            steps_per_task: self.training.steps_per_task,
            batch_size: self.training.batch_size,
            optimizer: self.training.optimizer,
            learning_rate: self.training.learning_rate,
            loss: self.training.loss.expect("resolved config"),
        }
    }
}

/// Independent RNG streams derived from the experiment seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Data = 0,
    Split = 1,
    Init = 2,
    Scenario = 3,
    Samples = 4,
    Loss = 5,
}

fn stream_seed(seed: u64, s: Stream) -> u64 {
    row_rng(seed, s as usize).next_u64()
}

pub fn load_dataset(source: &DataSource, seed: u64) -> Result<Dataset> {
    let mut rng = row_rng(seed, Stream::Data as usize);
    match source {
        DataSource::Mixture { rows, modes, weights } => synthetic_mixture(*rows, modes, weights, &mut rng),
        DataSource::Idx { images, labels, threshold, downscale } => {
            load_idx_images(images, labels, *threshold, *downscale)
        }
        DataSource::Csv { path, schema } => Ok(load_csv_tabular(path, schema)?.dataset),
        DataSource::SyntheticFlights { rows } => synthetic_flights(*rows, &mut rng),
    }
}

struct Prepared {
    config: ExperimentConfig,
    dataset: Dataset,
    stream: TaskStream,
}

fn prepare(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Prepared> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    match out {
        Some(o) => config.out_dir = o.to_path_buf(),
        None => config.out_dir = resolve(&path.parent().map(Path::to_path_buf).unwrap_or_default(), &config.out_dir),
    }
    let dataset = load_dataset(&config.dataset.source, config.seed)?;
    config.resolve(&dataset.schema);
    let spec = SplitSpec {
        mode: config.dataset.split.mode.clone(),
        seed: stream_seed(config.seed, Stream::Split),
        test_fraction: config.dataset.split.test_fraction,
    };
    let stream = split_tasks(&dataset, &spec)?;
    Ok(Prepared { config, dataset, stream })
}

fn column_names(dataset_columns: &[String], schema: &DataSchema) -> Vec<String> {
    if dataset_columns.len() == schema.total_vars() {
        dataset_columns.to_vec()
    } else {
        (0..schema.total_vars()).map(|i| format!("x{i}")).collect()
    }
}

/// Samples as CSV; tabular rows are decoded through the codec.
fn samples_csv(rows: &[Vec<f64>], header: &[String], codec: Option<&TabularCodec>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        let fields: Vec<String> = match codec {
            Some(c) => c.decode(r)?,
            None => r.iter().map(|v| format!("{v}")).collect(),
        };
        w.write_record(&fields)?;
    }
    w.into_inner().map_err(|e| BfnError::Io(e.into_error()))
}

fn probe_for(config: &ExperimentConfig, stream: &TaskStream) -> Result<Option<ClassifierProbe>> {
    match &config.eval.probe {
        Some(pc) => {
            let (rows, labels) = stream.all_train();
            Ok(Some(ClassifierProbe::train(&rows, &labels, stream.schema(), pc)?))
        }
        None => Ok(None),
    }
}

struct Evaluator<'a> {
    config: &'a ExperimentConfig,
    probe: Option<&'a ClassifierProbe>,
}

impl Evaluator<'_> {
    fn record(&self, net: &Mlp, stream: &TaskStream, after_task: usize) -> Result<(MetricsRecord, Vec<Vec<f64>>)> {
        let ev = &self.config.eval;
        let mut rng = row_rng(stream_seed(self.config.seed, Stream::Samples), after_task);
        let samples =
            sample_many(net, &self.config.schedule, stream.schema(), &mut rng, ev.sample_steps, ev.readout, ev.samples)?;
        let shares = match self.probe {
            Some(p) => class_shares(p, &samples)?,
            None => Vec::new(),
        };
        let loss_seed = row_rng(stream_seed(self.config.seed, Stream::Loss), after_task).next_u64();
        let loss_row = loss_matrix_row(net, stream, &self.config.schedule, ev.mc_samples, loss_seed)?;
        let record = MetricsRecord {
            after_task,
            task_name: stream.tasks()[after_task].name.clone(),
            class_shares: shares,
            loss_matrix_row: loss_row,
            forgetting: None,
        };
        Ok((record, samples))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects written artifacts and their checksums, keyed by path relative to
/// the run directory.
struct Artifacts {
    dir: PathBuf,
    sums: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), sums: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        self.sums.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn finish(mut self, command: &str, config: &ExperimentConfig) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            config: &'a ExperimentConfig,
            artifacts: &'a BTreeMap<String, String>,
        }
        let mut bytes = serde_json::to_vec_pretty(&Manifest { command, config, artifacts: &self.sums })?;
        bytes.push(b'\n');
        let path = self.dir.join("manifest.json");
        write_atomic(path, &bytes)?;
        self.sums.clear();
        Ok(())
    }
}

struct RunObserver<'a> {
    prepared: &'a Prepared,
    evaluator: Evaluator<'a>,
    artifacts: Artifacts,
    records: Vec<MetricsRecord>,
    header: Vec<String>,
}

impl RunObserver<'_> {
    fn checkpoint(&self, net: &Mlp, task_index: usize) -> Checkpoint {
        let cfg = &self.prepared.config;
        Checkpoint {
            manifest: CheckpointManifest {
                network: net.spec.clone(),
                schedules: cfg.schedule,
                schema: self.prepared.stream.schema().clone(),
                task_index,
                codec: self.prepared.dataset.codec.clone(),
                readout: cfg.eval.readout,
                sample_steps: cfg.eval.sample_steps,
            },
            net: net.clone(),
        }
    }
}

impl TaskObserver for RunObserver<'_> {
    fn task_finished(&mut self, task_index: usize, net: &Mlp, stream: &TaskStream) -> Result<()> {
        let ck = self.checkpoint(net, task_index);
        self.artifacts.write(&format!("checkpoints/task_{task_index}.ckpt"), &ck.to_bytes()?)?;
        let (mut record, samples) = self.evaluator.record(net, stream, task_index)?;
        let csv = samples_csv(&samples, &self.header, self.prepared.dataset.codec.as_ref())?;
        self.artifacts.write(&format!("samples/task_{task_index}.csv"), &csv)?;
        if task_index + 1 == stream.len() {
            let mut matrix: Vec<Vec<f64>> = self.records.iter().map(|r| r.loss_matrix_row.clone()).collect();
            matrix.push(record.loss_matrix_row.clone());
            record.forgetting = Some(forgetting_summary(&matrix)?);
        }
        info!("after task {task_index}: loss row {:?}, shares {:?}", record.loss_matrix_row, record.class_shares);
        self.records.push(record);
        self.artifacts.write("metrics.csv", &metrics_csv(&self.records)?)?;
        self.artifacts.write("metrics.json", &metrics_json(&self.records)?)?;
        Ok(())
    }
}

fn initial_net(config: &ExperimentConfig, schema: &DataSchema) -> Result<Mlp> {
    let spec = config.network.spec(schema);
    Mlp::init(spec, &mut row_rng(stream_seed(config.seed, Stream::Init), 0))
}

fn run_stream(prepared: &Prepared, stream: &TaskStream, strategy: StrategyConfig, command: &str) -> Result<()> {
    let config = &prepared.config;
    let probe = probe_for(config, stream)?;
    let mut observer = RunObserver {
        prepared,
        evaluator: Evaluator { config, probe: probe.as_ref() },
        artifacts: Artifacts::new(&config.out_dir)?,
        records: Vec::new(),
        header: column_names(&prepared.dataset.columns, stream.schema()),
    };
    let scenario = Scenario {
        stream,
        strategy,
        schedules: config.schedule,
        training: config.training_config(),
        generator_readout: config.eval.readout,
        record_provenance: false,
    };
    let seeds = ScenarioSeeds::from_rng(&mut row_rng(stream_seed(config.seed, Stream::Scenario), 0));
    let net = initial_net(config, stream.schema())?;
    scenario.run(net, seeds, &mut observer)?;
    observer.artifacts.finish(command, config)
}

pub fn cmd_run_scenario(args: &RunArgs) -> Result<()> {
    let prepared = prepare(&args.config, args.seed, args.out.as_deref())?;
    info!("{} tasks, strategy {}", prepared.stream.len(), prepared.config.strategy.name());
    run_stream(&prepared, &prepared.stream, prepared.config.strategy, "run-scenario")
}

/// All tasks merged into one joint task.
fn joint_stream(stream: &TaskStream) -> Result<TaskStream> {
    let mut joint = Task {
        id: 0,
        name: "joint".into(),
        train: Vec::new(),
        train_labels: Vec::new(),
        test: Vec::new(),
        test_labels: Vec::new(),
    };
    for t in stream.tasks() {
        joint.train.extend(t.train.iter().cloned());
        joint.train_labels.extend(&t.train_labels);
        joint.test.extend(t.test.iter().cloned());
        joint.test_labels.extend(&t.test_labels);
    }
    TaskStream::new(vec![joint], stream.schema().clone())
}

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let prepared = prepare(&args.config, args.seed, args.out.as_deref())?;
    let joint = joint_stream(&prepared.stream)?;
    run_stream(&prepared, &joint, StrategyConfig::Finetune, "train")
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let m = &ck.manifest;
    let mut rng = row_rng(args.seed, Stream::Samples as usize);
    let rows = sample_many(&ck.net, &m.schedules, &m.schema, &mut rng, m.sample_steps, m.readout, args.count)?;
    let names = m.codec.as_ref().map(|c| c.names.clone()).unwrap_or_default();
    let header = column_names(&names, &m.schema);
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_atomic(&args.out, &samples_csv(&rows, &header, m.codec.as_ref())?)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let prepared = prepare(&args.config, args.seed, None)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    if &ck.manifest.schema != prepared.stream.schema() {
        return Err(BfnError::Argument("checkpoint schema does not match the configured dataset".into()));
    }
    let task = ck.manifest.task_index.min(prepared.stream.len() - 1);
    let probe = probe_for(&prepared.config, &prepared.stream)?;
    let mut cfg = prepared.config.clone();
    cfg.schedule = ck.manifest.schedules;
    let evaluator = Evaluator { config: &cfg, probe: probe.as_ref() };
    let (mut record, _) = evaluator.record(&ck.net, &prepared.stream, task)?;
    record.after_task = ck.manifest.task_index;
    let mut bytes = serde_json::to_vec_pretty(&record)?;
    bytes.push(b'\n');
    match &args.out {
        Some(p) => write_atomic(p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

pub fn cmd_export_plots(args: &ExportArgs) -> Result<()> {
    let records = read_metrics_json(args.out.join("metrics.json"))?;
    write_atomic(args.out.join("plots.csv"), &metrics_long_csv(&records)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::RunScenario(a) => cmd_run_scenario(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportPlots(a) => cmd_export_plots(a),
    }
}

/// 2 for invalid input, 1 for failures during a run.
pub fn exit_code(err: &BfnError) -> i32 {
    match err {
        BfnError::Config(_)
        | BfnError::Format(_)
        | BfnError::Argument(_)
        | BfnError::UnsupportedSchema(_)
        | BfnError::Json(_) => 2,
        BfnError::Domain(_)
        | BfnError::Shape(_)
        | BfnError::Numeric(_)
        | BfnError::Quality(_)
        | BfnError::Io(_)
        | BfnError::Csv(_) => 1,
    }
}
