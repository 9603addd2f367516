//! Sequential training over a task stream under one of four strategies:
//! plain finetuning, an L1/L2 penalty toward the previous task's parameters,
//! rehearsal from a buffer of stored rows, or replay of rows generated by a
//! frozen copy of the previous model.

use std::collections::VecDeque;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bfn::{batch_loss, sample_many, CategoricalReadout, DataSchema, LossKind};
use crate::error::{shape_err, BfnError, Result};
use crate::model::{Mlp, OptimizerKind, OptimizerState, ParameterVector};
use crate::schedule::{ScheduleSet, DEFAULT_SAMPLE_STEPS};

pub const DEFAULT_REPLAY_FRACTION: f64 = 0.5;
pub const DEFAULT_BUFFER_CAPACITY: usize = 500;

/// Where a training row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Task { task: usize, index: usize },
    Generated { by_task: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedRow {
    pub values: Vec<f64>,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    pub name: String,
    pub train: Vec<Vec<f64>>,
    pub train_labels: Vec<usize>,
    pub test: Vec<Vec<f64>>,
    pub test_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    tasks: Vec<Task>,
    schema: DataSchema,
}

impl TaskStream {
    pub fn new(tasks: Vec<Task>, schema: DataSchema) -> Result<Self> {
        if tasks.is_empty() {
            return Err(BfnError::Argument("task stream needs at least one task".into()));
        }
        for task in &tasks {
            if task.train.is_empty() {
                return Err(BfnError::Argument(format!("task {} has no training rows", task.id)));
            }
            if task.train.len() != task.train_labels.len() || task.test.len() != task.test_labels.len() {
                return Err(shape_err(format!("task {}: labels do not match rows", task.id)));
            }
            for row in task.train.iter().chain(&task.test) {
                schema.check_row(row)?;
            }
        }
        Ok(Self { tasks, schema })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// All training rows and labels across tasks, in task order.
    pub fn all_train(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        let rows = self.tasks.iter().flat_map(|t| t.train.iter().cloned()).collect();
        let labels = self.tasks.iter().flat_map(|t| t.train_labels.iter().copied()).collect();
        (rows, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    Ring,
    #[default]
    Reservoir,
}

/// Whether one buffer is shared by all tasks or each task keeps its own
/// buffer of `capacity` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferScope {
    #[default]
    Global,
    PerTask,
}

fn default_replay_fraction() -> f64 {
    DEFAULT_REPLAY_FRACTION
}

fn default_capacity() -> usize {
    DEFAULT_BUFFER_CAPACITY
}

fn default_generator_steps() -> usize {
    DEFAULT_SAMPLE_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    #[default]
    Finetune,
    Regularize {
        p: u8,
        lambda: f64,
    },
    Buffer {
        #[serde(default = "default_capacity")]
        capacity: usize,
        #[serde(default)]
        policy: BufferPolicy,
        #[serde(default)]
        scope: BufferScope,
        #[serde(default = "default_replay_fraction")]
        replay_fraction: f64,
    },
    GenerativeReplay {
        #[serde(default = "default_replay_fraction")]
        replay_fraction: f64,
        #[serde(default = "default_generator_steps")]
        generator_steps: usize,
    },
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let fraction_ok = |f: f64| (0.0..=1.0).contains(&f);
        match *self {
            StrategyConfig::Finetune => Ok(()),
            StrategyConfig::Regularize { p, lambda } => {
                if p != 1 && p != 2 {
                    return Err(BfnError::Argument(format!("regularisation norm must be 1 or 2, got {p}")));
                }
                // lambda = 0 is accepted and behaves exactly like finetuning
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(BfnError::Argument(format!("lambda must be non-negative, got {lambda}")));
                }
                Ok(())
            }
            StrategyConfig::Buffer { capacity, replay_fraction, .. } => {
                if capacity == 0 {
                    return Err(BfnError::Argument("buffer capacity must be positive".into()));
                }
                if !fraction_ok(replay_fraction) {
                    return Err(BfnError::Argument(format!("replay_fraction {replay_fraction} outside [0, 1]")));
                }
                Ok(())
            }
            StrategyConfig::GenerativeReplay { replay_fraction, generator_steps } => {
                if !fraction_ok(replay_fraction) {
                    return Err(BfnError::Argument(format!("replay_fraction {replay_fraction} outside [0, 1]")));
                }
                if generator_steps == 0 {
                    return Err(BfnError::Argument("generator_steps must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Finetune => "finetune",
            StrategyConfig::Regularize { .. } => "regularize",
            StrategyConfig::Buffer { .. } => "buffer",
            StrategyConfig::GenerativeReplay { .. } => "generative_replay",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    policy: BufferPolicy,
    items: VecDeque<TaggedRow>,
    seen_count: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, policy: BufferPolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(BfnError::Argument("buffer capacity must be positive".into()));
        }
        Ok(Self { capacity, policy, items: VecDeque::with_capacity(capacity), seen_count: 0 })
    }

    pub fn insert<R: Rng + ?Sized>(&mut self, row: TaggedRow, rng: &mut R) {
        self.seen_count += 1;
        match self.policy {
            BufferPolicy::Ring => {
                if self.items.len() == self.capacity {
                    self.items.pop_front();
                }
                self.items.push_back(row);
            }
            BufferPolicy::Reservoir => {
                if self.items.len() < self.capacity {
                    self.items.push_back(row);
                } else {
                    let j = rng.random_range(0..self.seen_count);
                    if (j as usize) < self.capacity {
                        self.items[j as usize] = row;
                    }
                }
            }
        }
    }

    pub fn items(&self) -> impl Iterator<Item = &TaggedRow> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&TaggedRow> {
        if self.items.is_empty() {
            None
        } else {
            Some(&self.items[rng.random_range(0..self.items.len())])
        }
    }
}

/// Rows kept for rehearsal. Rows of the running task are stored as they are
/// seen but only rows of earlier tasks are ever replayed.
#[derive(Debug, Clone)]
pub struct RehearsalMemory {
    capacity: usize,
    policy: BufferPolicy,
    scope: BufferScope,
    buffers: Vec<ReplayBuffer>,
}

impl RehearsalMemory {
    pub fn new(capacity: usize, policy: BufferPolicy, scope: BufferScope) -> Result<Self> {
        let first = ReplayBuffer::new(capacity, policy)?;
        Ok(Self { capacity, policy, scope, buffers: vec![first] })
    }

    pub fn insert<R: Rng + ?Sized>(&mut self, row: TaggedRow, rng: &mut R) -> Result<()> {
        let slot = match (self.scope, row.origin) {
            (BufferScope::Global, _) => 0,
            (BufferScope::PerTask, Origin::Task { task, .. }) => task,
            (BufferScope::PerTask, Origin::Generated { .. }) => {
                return Err(BfnError::Argument("generated rows are not stored for rehearsal".into()))
            }
        };
        while self.buffers.len() <= slot {
            self.buffers.push(ReplayBuffer::new(self.capacity, self.policy)?);
        }
        self.buffers[slot].insert(row, rng);
        Ok(())
    }

    pub fn buffers(&self) -> &[ReplayBuffer] {
        &self.buffers
    }

    pub fn len(&self) -> usize {
        self.buffers.iter().map(ReplayBuffer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored rows that came from tasks before `task_index`.
    pub fn replayable(&self, task_index: usize) -> Vec<&TaggedRow> {
        self.buffers
            .iter()
            .flat_map(|b| b.items())
            .filter(|r| matches!(r.origin, Origin::Task { task, .. } if task < task_index))
            .collect()
    }
}

/// `lambda * sum |w - w*|^p` and its (sub)gradient.
pub fn regularization_penalty(
    params: &ParameterVector,
    anchor: &ParameterVector,
    p: u8,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    if params.layout() != anchor.layout() {
        return Err(shape_err("anchor layout differs from parameter layout"));
    }
    let mut penalty = 0.0;
    let mut grad = Vec::with_capacity(params.len());
    for (w, a) in params.values().iter().zip(anchor.values()) {
        let d = w - a;
        match p {
            1 => {
                penalty += d.abs();
                // f64::signum(0.0) is 1.0; the subgradient at 0 is taken as 0
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad.push(lambda * s);
            }
            2 => {
                penalty += d * d;
                grad.push(2.0 * lambda * d);
            }
            _ => return Err(BfnError::Argument(format!("regularisation norm must be 1 or 2, got {p}"))),
        }
    }
    Ok((lambda * penalty, grad))
}

/// A frozen copy of the model taken at a task boundary, used to produce
/// replay rows.
#[derive(Debug, Clone)]
pub struct FrozenGenerator {
    pub net: Mlp,
    pub schedules: ScheduleSet,
    pub schema: DataSchema,
    pub steps: usize,
    pub readout: CategoricalReadout,
    pub by_task: usize,
}

impl FrozenGenerator {
    pub fn generate<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<TaggedRow>> {
        let rows = sample_many(&self.net, &self.schedules, &self.schema, rng, self.steps, self.readout, count)?;
        Ok(rows.into_iter().map(|values| TaggedRow { values, origin: Origin::Generated { by_task: self.by_task } }).collect())
    }
}

/// Mixes replayed rows into a task batch. The last
/// `floor(replay_fraction * |batch|)` rows are replaced; nothing changes on
/// the first task or when there is nothing to replay from.
pub fn make_training_batch<R: Rng + ?Sized>(
    mut batch: Vec<TaggedRow>,
    strategy: &StrategyConfig,
    task_index: usize,
    memory: Option<&RehearsalMemory>,
    generator: Option<&FrozenGenerator>,
    rng: &mut R,
) -> Result<Vec<TaggedRow>> {
    if batch.is_empty() {
        return Err(BfnError::Argument("empty task batch".into()));
    }
    if task_index == 0 {
        return Ok(batch);
    }
    let replay_count = |f: f64, n: usize| (f * n as f64).floor() as usize;
    match *strategy {
        StrategyConfig::Finetune | StrategyConfig::Regularize { .. } => {}
        StrategyConfig::Buffer { replay_fraction, .. } => {
            let pool = memory.map(|m| m.replayable(task_index)).unwrap_or_default();
            if !pool.is_empty() {
                let m = replay_count(replay_fraction, batch.len());
                let keep = batch.len() - m;
                for slot in &mut batch[keep..] {
                    *slot = pool[rng.random_range(0..pool.len())].clone();
                }
            }
        }
        StrategyConfig::GenerativeReplay { replay_fraction, .. } => {
            if let Some(generator) = generator {
                let m = replay_count(replay_fraction, batch.len());
                if m > 0 {
                    let keep = batch.len() - m;
                    let generated = generator.generate(m, rng)?;
                    batch.truncate(keep);
                    batch.extend(generated);
                }
            }
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub steps_per_task: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub loss: LossKind,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_task == 0 || self.batch_size == 0 {
            return Err(BfnError::Argument("steps_per_task and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(BfnError::Argument("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Called once after every finished task.
pub trait TaskObserver {
    fn task_finished(&mut self, task_index: usize, net: &Mlp, stream: &TaskStream) -> Result<()>;
}

impl TaskObserver for () {
    fn task_finished(&mut self, _task_index: usize, _net: &Mlp, _stream: &TaskStream) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub net: Mlp,
    /// Mean training loss (nats, penalty excluded) over the last 10% of each
    /// task's steps.
    pub final_train_loss: Vec<f64>,
    /// Every row that entered a training batch, with its provenance.
    pub provenance_log: Option<Vec<Vec<Origin>>>,
}

/// Fixed seeds for the independent RNG streams of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSeeds {
    pub training: u64,
    pub strategy: u64,
}

impl ScenarioSeeds {
    pub fn from_rng<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { training: rng.next_u64(), strategy: rng.next_u64() }
    }
}

pub struct Scenario<'a> {
    pub stream: &'a TaskStream,
    pub strategy: StrategyConfig,
    pub schedules: ScheduleSet,
    pub training: TrainingConfig,
    pub generator_readout: CategoricalReadout,
    pub record_provenance: bool,
}

impl Scenario<'_> {
    /// Trains `net` over the stream in order. Returns as soon as a task fails;
    /// whatever the observer persisted for earlier tasks stays in place.
    pub fn run<O: TaskObserver + ?Sized>(
        &self,
        mut net: Mlp,
        seeds: ScenarioSeeds,
        observer: &mut O,
    ) -> Result<ScenarioOutcome> {
        self.strategy.validate()?;
        self.training.validate()?;
        self.schedules.validate()?;
        let schema = self.stream.schema();
        let mut train_rng = ChaCha8Rng::seed_from_u64(seeds.training);
        let mut strategy_rng = ChaCha8Rng::seed_from_u64(seeds.strategy);

        let mut memory = match self.strategy {
            StrategyConfig::Buffer { capacity, policy, scope, .. } => Some(RehearsalMemory::new(capacity, policy, scope)?),
            _ => None,
        };
        let mut final_train_loss = Vec::with_capacity(self.stream.len());
        let mut provenance_log = self.record_provenance.then(Vec::new);

        for (task_index, task) in self.stream.tasks().iter().enumerate() {
            info!("task {task_index} ({}) with {} training rows", task.name, task.train.len());
            let anchor = (task_index > 0).then(|| net.params.clone());
            let generator = match self.strategy {
                StrategyConfig::GenerativeReplay { generator_steps, .. } if task_index > 0 => Some(FrozenGenerator {
                    net: net.clone(),
                    schedules: self.schedules,
                    schema: schema.clone(),
                    steps: generator_steps,
                    readout: self.generator_readout,
                    by_task: task_index - 1,
                }),
                _ => None,
            };
            let mut optimizer =
                OptimizerState::new(self.training.optimizer, self.training.learning_rate, net.params.len())?;

            let mut order: Vec<usize> = Vec::new();
            let mut cursor = 0;
            let mut seen = vec![false; task.train.len()];
            let tail_start = self.training.steps_per_task - (self.training.steps_per_task / 10).max(1);
            let mut tail = (0.0, 0usize);
            let mut task_log = Vec::new();

            for step in 0..self.training.steps_per_task {
                let mut batch = Vec::with_capacity(self.training.batch_size);
                while batch.len() < self.training.batch_size {
                    if cursor == order.len() {
                        order = (0..task.train.len()).collect();
                        order.shuffle(&mut train_rng);
                        cursor = 0;
                    }
                    let index = order[cursor];
                    cursor += 1;
                    batch.push(TaggedRow { values: task.train[index].clone(), origin: Origin::Task { task: task_index, index } });
                }
                let batch = make_training_batch(
                    batch,
                    &self.strategy,
                    task_index,
                    memory.as_ref(),
                    generator.as_ref(),
                    &mut strategy_rng,
                )?;
                if let Some(mem) = memory.as_mut() {
                    for row in &batch {
                        if let Origin::Task { task, index } = row.origin {
                            if task == task_index && !seen[index] {
                                seen[index] = true;
                                mem.insert(row.clone(), &mut strategy_rng)?;
                            }
                        }
                    }
                }
                if provenance_log.is_some() {
                    task_log.extend(batch.iter().map(|r| r.origin));
                }

                let rows: Vec<&[f64]> = batch.iter().map(|r| r.values.as_slice()).collect();
                let (report, mut grad) =
                    batch_loss(&rows, &net, schema, &self.schedules, &mut train_rng, self.training.loss)?;
                if let (Some(anchor), StrategyConfig::Regularize { p, lambda }) = (&anchor, self.strategy) {
                    if lambda > 0.0 {
                        let (_, pen_grad) = regularization_penalty(&net.params, anchor, p, lambda)?;
                        for (g, pg) in grad.iter_mut().zip(&pen_grad) {
                            *g += pg;
                        }
                    }
                }
                optimizer.step(&mut net.params, &grad)?;
                if step >= tail_start {
                    tail.0 += report.total_nats;
                    tail.1 += 1;
                }
                if step % 500 == 0 {
                    debug!("task {task_index} step {step} loss {:.4}", report.total_nats);
                }
            }
            final_train_loss.push(tail.0 / tail.1 as f64);
            if let Some(log) = provenance_log.as_mut() {
                log.push(task_log);
            }
            observer.task_finished(task_index, &net, self.stream)?;
        }
        Ok(ScenarioOutcome { net, final_train_loss, provenance_log })
    }
}
