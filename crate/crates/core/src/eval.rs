//! Post-task evaluation: class shares of generated samples under a held-out
//! classifier probe, the test-loss matrix in bits per dimension, and
//! forgetting summaries.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bfn::{discrete_time_loss, row_rng, DataSchema, VariableKind};
use crate::continual::TaskStream;
use crate::error::{shape_err, BfnError, Result};
use crate::model::{Activation, HeadBlock, Mlp, Network, NetworkSpec, OptimizerKind, OptimizerState, TimeEmbedding};
use crate::schedule::ScheduleSet;

pub const DEFAULT_ACCURACY_FLOOR: f64 = 0.9;
pub const EVAL_MC_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    #[default]
    NearestCentroid,
    MlpProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    #[serde(default)]
    pub kind: ProbeKind,
    #[serde(default = "default_floor")]
    pub accuracy_floor: f64,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_floor() -> f64 {
    DEFAULT_ACCURACY_FLOOR
}

fn default_holdout() -> f64 {
    0.2
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { kind: ProbeKind::default(), accuracy_floor: default_floor(), holdout_fraction: default_holdout(), seed: 0 }
    }
}

#[derive(Debug, Clone)]
enum ProbeModel {
    Centroids(Vec<Vec<f64>>),
    Mlp(Box<Mlp>),
}

/// A classifier fitted on real labelled rows. It only ever sees sample
/// values, never gradients of the generator.
#[derive(Debug, Clone)]
pub struct ClassifierProbe {
    kind: ProbeKind,
    schema: DataSchema,
    classes: usize,
    model: ProbeModel,
    holdout_accuracy: f64,
}

/// Continuous values as-is, categorical values one-hot.
fn features(schema: &DataSchema, row: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(schema.feature_width());
    for (v, kind) in row.iter().zip(schema.variables()) {
        match kind {
            VariableKind::Continuous => f.push(*v),
            VariableKind::Categorical { classes } => {
                let c = *v as usize;
                f.extend((0..*classes).map(|k| if k == c { 1.0 } else { 0.0 }));
            }
        }
    }
    f
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn fit_centroids(feats: &[Vec<f64>], labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let width = feats[0].len();
    let mut sums = vec![vec![0.0; width]; classes];
    let mut counts = vec![0usize; classes];
    for (f, &l) in feats.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(f) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            for v in s.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    sums
}

const PROBE_EPOCHS: usize = 200;
const PROBE_BATCH: usize = 64;

fn fit_mlp(feats: &[Vec<f64>], labels: &[usize], classes: usize, seed: u64) -> Result<Mlp> {
    let spec = NetworkSpec {
        input_width: feats[0].len(),
        hidden_widths: vec![64],
        output_width: classes,
        activation: Activation::Relu,
        time_embedding: TimeEmbedding::ScalarConcat,
        heads: vec![HeadBlock::Categorical(classes)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::init(spec, &mut rng)?;
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-2, net.params.len())?;
    let mut order: Vec<usize> = (0..feats.len()).collect();
    for _ in 0..PROBE_EPOCHS {
        order.shuffle(&mut rng);
        for chunk in order.chunks(PROBE_BATCH) {
            let mut grad = vec![0.0; net.params.len()];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let label = labels[i];
                let mut upstream = |scores: &[f64]| -> Result<Vec<f64>> {
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    Ok(e.iter()
                        .enumerate()
                        .map(|(k, v)| scale * (v / z - if k == label { 1.0 } else { 0.0 }))
                        .collect())
                };
                net.forward_backward(&feats[i], 0.0, &mut upstream, &mut grad)?;
            }
            opt.step(&mut net.params, &grad)?;
        }
    }
    Ok(net)
}

impl ClassifierProbe {
    /// Fits on a seeded split of the rows, measures accuracy on the held-out
    /// part, and refuses probes below the configured floor.
    pub fn train(rows: &[Vec<f64>], labels: &[usize], schema: &DataSchema, config: &ProbeConfig) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(shape_err(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        for r in rows {
            schema.check_row(r)?;
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        if classes < 2 {
            return Err(BfnError::Argument("probe needs at least two classes".into()));
        }
        let mut present = vec![false; classes];
        for &l in labels {
            present[l] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(BfnError::Argument(format!("class {missing} has no rows")));
        }
        if !(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0) {
            return Err(BfnError::Argument("holdout_fraction must lie in (0, 1)".into()));
        }

        // stratified holdout so every class is represented on both sides
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (mut fit_idx, mut hold_idx) = (Vec::new(), Vec::new());
        for c in 0..classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            members.shuffle(&mut rng);
            let h = ((members.len() as f64 * config.holdout_fraction).round() as usize).min(members.len() - 1);
            hold_idx.extend_from_slice(&members[..h]);
            fit_idx.extend_from_slice(&members[h..]);
        }
        fit_idx.sort_unstable();
        hold_idx.sort_unstable();

        let feats: Vec<Vec<f64>> = rows.iter().map(|r| features(schema, r)).collect();
        let fit_f: Vec<Vec<f64>> = fit_idx.iter().map(|&i| feats[i].clone()).collect();
        let fit_l: Vec<usize> = fit_idx.iter().map(|&i| labels[i]).collect();
        let model = match config.kind {
            ProbeKind::NearestCentroid => ProbeModel::Centroids(fit_centroids(&fit_f, &fit_l, classes)),
            ProbeKind::MlpProbe => ProbeModel::Mlp(Box::new(fit_mlp(&fit_f, &fit_l, classes, config.seed)?)),
        };
        let mut probe = Self { kind: config.kind, schema: schema.clone(), classes, model, holdout_accuracy: 1.0 };
        if !hold_idx.is_empty() {
            let mut correct = 0;
            for &i in &hold_idx {
                if probe.classify_features(&feats[i])? == labels[i] {
                    correct += 1;
                }
            }
            probe.holdout_accuracy = correct as f64 / hold_idx.len() as f64;
        }
        if probe.holdout_accuracy < config.accuracy_floor {
            return Err(BfnError::Quality(format!(
                "probe holdout accuracy {:.3} is below the floor {:.3}",
                probe.holdout_accuracy, config.accuracy_floor
            )));
        }
        Ok(probe)
    }

    pub fn kind(&self) -> ProbeKind {
        self.kind
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn holdout_accuracy(&self) -> f64 {
        self.holdout_accuracy
    }

    /// Per-class mean feature rows, for the centroid probe.
    pub fn centroids(&self) -> Option<&[Vec<f64>]> {
        match &self.model {
            ProbeModel::Centroids(c) => Some(c),
            ProbeModel::Mlp(_) => None,
        }
    }

    fn classify_features(&self, f: &[f64]) -> Result<usize> {
        Ok(match &self.model {
            ProbeModel::Centroids(cs) => {
                let d: Vec<f64> = cs.iter().map(|c| -sq_dist(f, c)).collect();
                argmax(&d)
            }
            ProbeModel::Mlp(net) => argmax(&net.forward(f, 0.0)?),
        })
    }

    pub fn classify(&self, row: &[f64]) -> Result<usize> {
        self.schema.check_row(row)?;
        self.classify_features(&features(&self.schema, row))
    }
}

/// Normalised histogram of predicted classes.
pub fn shares_from_predictions(predictions: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; classes];
    for &p in predictions {
        counts[p] += 1.0;
    }
    let n: f64 = counts.iter().sum();
    counts.iter().map(|c| c / n).collect()
}

pub fn class_shares(probe: &ClassifierProbe, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(BfnError::Argument("class shares need at least one sample".into()));
    }
    let predictions = samples.iter().map(|s| probe.classify(s)).collect::<Result<Vec<_>>>()?;
    Ok(shares_from_predictions(&predictions, probe.classes))
}

/// Mean test loss of each task's test split in bits per dimension. Every test
/// row gets its own RNG stream so the result does not depend on scheduling.
pub fn loss_matrix_row(
    net: &dyn Network,
    stream: &TaskStream,
    schedules: &ScheduleSet,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let schema = stream.schema();
    let mut offset = 0;
    let mut row = Vec::with_capacity(stream.len());
    for task in stream.tasks() {
        if task.test.is_empty() {
            return Err(BfnError::Argument(format!("task {} has an empty test split", task.id)));
        }
        let bits: Vec<f64> = task
            .test
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = row_rng(seed, offset + i);
                Ok(discrete_time_loss(x, net, schema, schedules, &mut rng, mc_samples)?.bits_per_dim)
            })
            .collect::<Result<_>>()?;
        offset += task.test.len();
        row.push(bits.iter().sum::<f64>() / bits.len() as f64);
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingSummary {
    /// `M[last][j] - M[j][j]` for every task before the last.
    pub per_task: Vec<f64>,
    pub mean: f64,
}

pub fn forgetting_summary(matrix: &[Vec<f64>]) -> Result<ForgettingSummary> {
    let t = matrix.len();
    if t == 0 {
        return Err(BfnError::Argument("forgetting needs at least one matrix row".into()));
    }
    if let Some((i, r)) = matrix.iter().enumerate().find(|(_, r)| r.len() != t) {
        return Err(BfnError::Argument(format!("matrix row {i} has {} entries, expected {t}", r.len())));
    }
    let last = &matrix[t - 1];
    let per_task: Vec<f64> = (0..t - 1).map(|j| last[j] - matrix[j][j]).collect();
    let mean = if per_task.is_empty() { 0.0 } else { per_task.iter().sum::<f64>() / per_task.len() as f64 };
    Ok(ForgettingSummary { per_task, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub after_task: usize,
    pub task_name: String,
    /// Empty when no probe is configured.
    pub class_shares: Vec<f64>,
    pub loss_matrix_row: Vec<f64>,
    /// Only set on the record written after the final task.
    pub forgetting: Option<ForgettingSummary>,
}

/// Flat table, one row per task boundary. Share and loss columns are padded to
/// the widest record.
pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let classes = records.iter().map(|r| r.class_shares.len()).max().unwrap_or(0);
    let tasks = records.iter().map(|r| r.loss_matrix_row.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["after_task".to_string(), "task_name".to_string()];
    header.extend((0..classes).map(|c| format!("share_{c}")));
    header.extend((0..tasks).map(|j| format!("loss_bpd_task_{j}")));
    header.extend((0..tasks.saturating_sub(1)).map(|j| format!("forgetting_task_{j}")));
    header.push("mean_forgetting".into());
    w.write_record(&header)?;
    let cell = |v: Option<&f64>| v.map_or(String::new(), |x| format!("{x:.9}"));
    for r in records {
        let mut row = vec![r.after_task.to_string(), r.task_name.clone()];
        row.extend((0..classes).map(|c| cell(r.class_shares.get(c))));
        row.extend((0..tasks).map(|j| cell(r.loss_matrix_row.get(j))));
        let f = r.forgetting.as_ref();
        row.extend((0..tasks.saturating_sub(1)).map(|j| cell(f.and_then(|f| f.per_task.get(j)))));
        row.push(cell(f.map(|f| &f.mean)));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| BfnError::Io(e.into_error()))
}

/// Long-format table: `metric, after_task, index, value`.
pub fn metrics_long_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "after_task", "index", "value"])?;
    for r in records {
        let at = r.after_task.to_string();
        for (c, v) in r.class_shares.iter().enumerate() {
            w.write_record(["class_share", &at, &c.to_string(), &format!("{v:.9}")])?;
        }
        for (j, v) in r.loss_matrix_row.iter().enumerate() {
            w.write_record(["loss_bpd", &at, &j.to_string(), &format!("{v:.9}")])?;
        }
        if let Some(f) = &r.forgetting {
            for (j, v) in f.per_task.iter().enumerate() {
                w.write_record(["forgetting", &at, &j.to_string(), &format!("{v:.9}")])?;
            }
        }
    }
    w.into_inner().map_err(|e| BfnError::Io(e.into_error()))
}

pub fn metrics_json(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(records)?;
    out.write_all(b"\n")?;
    Ok(out)
}

pub fn read_metrics_json(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continual::Task;
    use crate::model::ConstantNetwork;
    use rand::Rng;

    fn two_class_1d(n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let rows = labels.iter().map(|&l| vec![if l == 0 { -0.5 } else { 0.5 } + rng.random_range(-0.05..0.05)]).collect();
        (rows, labels)
    }

    #[test]
    fn centroid_probe_on_separated_classes() {
        let (rows, labels) = two_class_1d(200);
        let schema = DataSchema::continuous(1).unwrap();
        let probe = ClassifierProbe::train(&rows, &labels, &schema, &ProbeConfig::default()).unwrap();
        let c = probe.centroids().unwrap();
        assert!((c[0][0] + 0.5).abs() < 0.02 && (c[1][0] - 0.5).abs() < 0.02);
        assert_eq!(probe.holdout_accuracy(), 1.0);
    }

    #[test]
    fn single_or_missing_class_is_rejected() {
        let schema = DataSchema::continuous(1).unwrap();
        let rows = vec![vec![0.1]; 10];
        assert!(matches!(
            ClassifierProbe::train(&rows, &[0; 10], &schema, &ProbeConfig::default()),
            Err(BfnError::Argument(_))
        ));
        let labels = [0, 2, 0, 2, 0, 2, 0, 2, 0, 2];
        assert!(matches!(
            ClassifierProbe::train(&rows, &labels, &schema, &ProbeConfig::default()),
            Err(BfnError::Argument(_))
        ));
    }

    #[test]
    fn probe_below_floor_is_a_quality_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let schema = DataSchema::continuous(1).unwrap();
        let err = ClassifierProbe::train(&rows, &labels, &schema, &ProbeConfig::default()).unwrap_err();
        assert!(matches!(err, BfnError::Quality(_)));
    }

    #[test]
    fn mlp_probe_is_deterministic_and_accurate() {
        // XOR-like layout that centroids cannot separate
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            let (a, b) = ([-0.5, 0.5][i % 2], [-0.5, 0.5][(i / 2) % 2]);
            rows.push(vec![a + rng.random_range(-0.1..0.1), b + rng.random_range(-0.1..0.1)]);
            labels.push(usize::from((a > 0.0) != (b > 0.0)));
        }
        let schema = DataSchema::continuous(2).unwrap();
        let centroid = ClassifierProbe::train(&rows, &labels, &schema, &ProbeConfig::default());
        assert!(matches!(centroid, Err(BfnError::Quality(_))));
        let cfg = ProbeConfig { kind: ProbeKind::MlpProbe, seed: 7, ..ProbeConfig::default() };
        let a = ClassifierProbe::train(&rows, &labels, &schema, &cfg).unwrap();
        let b = ClassifierProbe::train(&rows, &labels, &schema, &cfg).unwrap();
        assert!(a.holdout_accuracy() >= 0.9);
        let probe_rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        for r in &probe_rows {
            assert_eq!(a.classify(r).unwrap(), b.classify(r).unwrap());
        }
    }

    #[test]
    fn categorical_rows_use_one_hot_features() {
        let schema = DataSchema::categorical(2, 3).unwrap();
        assert_eq!(features(&schema, &[2.0, 0.0]), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 3) as f64, (i % 3) as f64]).collect();
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let probe = ClassifierProbe::train(&rows, &labels, &schema, &ProbeConfig::default()).unwrap();
        assert_eq!(probe.classify(&[1.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn shares_examples() {
        assert_eq!(shares_from_predictions(&[0, 0, 1, 1], 2), vec![0.5, 0.5]);
        assert_eq!(shares_from_predictions(&[2, 2, 2], 3), vec![0.0, 0.0, 1.0]);
        let (rows, labels) = two_class_1d(100);
        let schema = DataSchema::continuous(1).unwrap();
        let probe = ClassifierProbe::train(&rows, &labels, &schema, &ProbeConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let shares = class_shares(&probe, &samples).unwrap();
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(class_shares(&probe, &[]).is_err());
    }

    fn stream_with_tests(tests: Vec<Vec<Vec<f64>>>) -> TaskStream {
        let tasks = tests
            .into_iter()
            .enumerate()
            .map(|(id, test)| Task {
                id,
                name: format!("t{id}"),
                train: test.clone(),
                train_labels: vec![id; test.len()],
                test_labels: vec![id; test.len()],
                test,
            })
            .collect();
        TaskStream::new(tasks, DataSchema::continuous(1).unwrap()).unwrap()
    }

    #[test]
    fn perfect_network_has_zero_loss_row() {
        let stream = stream_with_tests(vec![vec![vec![0.3]; 5], vec![vec![0.3]; 7]]);
        let net = ConstantNetwork::new(vec![0.3]);
        let row = loss_matrix_row(&net, &stream, &ScheduleSet::default(), 16, 1).unwrap();
        assert_eq!(row, vec![0.0, 0.0]);
    }

    #[test]
    fn identical_splits_give_matching_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let test: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let stream = stream_with_tests(vec![test.clone(), test]);
        let net = ConstantNetwork::new(vec![0.0]);
        let row = loss_matrix_row(&net, &stream, &ScheduleSet::default(), 16, 3).unwrap();
        assert!(row.iter().all(|v| *v >= 0.0));
        assert!((row[0] - row[1]).abs() / row[0] < 0.02, "{row:?}");
    }

    #[test]
    fn forgetting_examples() {
        let f = forgetting_summary(&[vec![1.0, 5.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(f.per_task, vec![0.0]);
        let f = forgetting_summary(&[vec![1.0, 5.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(f.per_task, vec![1.0]);
        assert_eq!(f.mean, 1.0);
        let single = forgetting_summary(&[vec![0.7]]).unwrap();
        assert!(single.per_task.is_empty());
        assert!(forgetting_summary(&[]).is_err());
        assert!(forgetting_summary(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn metrics_tables_have_one_row_per_record() {
        let records = vec![
            MetricsRecord {
                after_task: 0,
                task_name: "a".into(),
                class_shares: vec![1.0, 0.0],
                loss_matrix_row: vec![0.5, 2.0],
                forgetting: None,
            },
            MetricsRecord {
                after_task: 1,
                task_name: "b".into(),
                class_shares: vec![0.25, 0.75],
                loss_matrix_row: vec![1.5, 0.4],
                forgetting: forgetting_summary(&[vec![0.5, 2.0], vec![1.5, 0.4]]).ok(),
            },
        ];
        let csv = String::from_utf8(metrics_csv(&records).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "after_task,task_name,share_0,share_1,loss_bpd_task_0,loss_bpd_task_1,forgetting_task_0,mean_forgetting"
        );
        assert!(lines[2].ends_with(",1.000000000,1.000000000"));
        let long = String::from_utf8(metrics_long_csv(&records).unwrap()).unwrap();
        assert_eq!(long.lines().count(), 1 + 4 + 4 + 1);
        let back: Vec<MetricsRecord> = serde_json::from_slice(&metrics_json(&records).unwrap()).unwrap();
        assert_eq!(back, records);
    }
}
