//! Datasets: IDX image ingestion with binarisation, CSV tabular ingestion
//! with a persisted codec, synthetic generators, and task splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bfn::{row_rng, DataSchema, VariableKind};
use crate::continual::{Task, TaskStream};
use crate::error::{shape_err, BfnError, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DOWNSCALE: usize = 14;
pub const UNKNOWN_CATEGORY: &str = "<unknown>";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<f64>>,
    pub schema: DataSchema,
    pub labels: Option<Vec<usize>>,
    /// Column names in schema order, when the source has them.
    pub columns: Vec<String>,
    pub codec: Option<TabularCodec>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, schema: DataSchema, labels: Option<Vec<usize>>) -> Result<Self> {
        for row in &rows {
            schema.check_row(row)?;
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(shape_err(format!("{} labels for {} rows", l.len(), rows.len())));
            }
        }
        Ok(Self { rows, schema, labels, columns: Vec::new(), codec: None })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl ByteReader<'_> {
    fn u32_be(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| BfnError::Format(format!("{}: truncated header", self.what)))?;
        self.pos = end;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn rest(&self) -> &[u8] {
        &self.bytes[self.pos..]
    }
}

/// Raw IDX images: count, rows, cols, and `u8` pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = ByteReader { bytes, pos: 0, what: "idx images" };
    let magic = r.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(BfnError::Format(format!("idx images: bad magic {magic:#010x}")));
    }
    let n = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let need = n * rows * cols;
    if rows == 0 || cols == 0 || r.rest().len() != need {
        return Err(BfnError::Format(format!(
            "idx images: header declares {n}x{rows}x{cols} = {need} bytes, payload has {}",
            r.rest().len()
        )));
    }
    Ok((n, rows, cols, r.rest().to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = ByteReader { bytes, pos: 0, what: "idx labels" };
    let magic = r.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(BfnError::Format(format!("idx labels: bad magic {magic:#010x}")));
    }
    let n = r.u32_be()? as usize;
    if r.rest().len() != n {
        return Err(BfnError::Format(format!(
            "idx labels: header declares {n} labels, payload has {}",
            r.rest().len()
        )));
    }
    Ok(r.rest().to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len() * rows * cols);
    out.extend(IDX_IMAGE_MAGIC.to_be_bytes());
    out.extend((pixels.len() as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    for p in pixels {
        out.extend(p);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

/// Average-pools a `rows x cols` image to `side x side`.
pub fn downscale(image: &[f64], rows: usize, cols: usize, side: usize) -> Result<Vec<f64>> {
    if side == 0 || rows % side != 0 || cols % side != 0 {
        return Err(BfnError::Argument(format!("cannot pool {rows}x{cols} down to {side}x{side}")));
    }
    let (fr, fc) = (rows / side, cols / side);
    let mut out = vec![0.0; side * side];
    for r in 0..rows {
        for c in 0..cols {
            out[(r / fr) * side + c / fc] += image[r * cols + c];
        }
    }
    let area = (fr * fc) as f64;
    for v in &mut out {
        *v /= area;
    }
    Ok(out)
}

pub fn binarize(pixels: &[f64], threshold: f64) -> Vec<f64> {
    pixels.iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).collect()
}

/// Loads an IDX image/label pair as binarised `K = 2` categorical rows.
pub fn load_idx_images(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    threshold: f64,
    downscale_to: Option<usize>,
) -> Result<Dataset> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(BfnError::Argument(format!("threshold {threshold} outside (0, 1)")));
    }
    let (n, rows, cols, pixels) = parse_idx_images(&fs::read(images)?)?;
    let label_bytes = parse_idx_labels(&fs::read(labels)?)?;
    if label_bytes.len() != n {
        return Err(BfnError::Format(format!("{n} images but {} labels", label_bytes.len())));
    }
    let side = downscale_to;
    let width = side.map_or(rows * cols, |s| s * s);
    let mut out = Vec::with_capacity(n);
    for img in pixels.chunks_exact(rows * cols) {
        let scaled: Vec<f64> = img.iter().map(|&p| p as f64 / 255.0).collect();
        let pooled = match side {
            Some(s) => downscale(&scaled, rows, cols, s)?,
            None => scaled,
        };
        out.push(binarize(&pooled, threshold));
    }
    let schema = DataSchema::categorical(width, 2)?;
    let labels = label_bytes.into_iter().map(usize::from).collect();
    Dataset::new(out, schema, Some(labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub columns: Vec<ColumnDecl>,
    /// Categorical column whose codes become the row labels.
    #[serde(default)]
    pub label_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnCodec {
    Numeric { min: f64, max: f64 },
    /// The last code is reserved for values outside the vocabulary.
    Categorical { vocabulary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCodec {
    pub names: Vec<String>,
    pub columns: Vec<ColumnCodec>,
}

fn is_missing(v: &str) -> bool {
    let v = v.trim();
    v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") || v.eq_ignore_ascii_case("null")
}

/// Numeric-aware ordering so that "2" sorts before "10".
fn category_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

impl TabularCodec {
    /// Fits min/max ranges and sorted vocabularies on complete rows.
    pub fn fit(decl: &TabularSchema, rows: &[Vec<String>]) -> Result<Self> {
        let mut columns = Vec::with_capacity(decl.columns.len());
        for (j, col) in decl.columns.iter().enumerate() {
            match col.kind {
                ColumnKind::Numeric => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for r in rows {
                        let v: f64 = r[j].trim().parse().map_err(|_| {
                            BfnError::Format(format!("column {}: '{}' is not numeric", col.name, r[j]))
                        })?;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    if !min.is_finite() {
                        return Err(BfnError::Argument(format!("column {} has no values", col.name)));
                    }
                    columns.push(ColumnCodec::Numeric { min, max });
                }
                ColumnKind::Categorical => {
                    let mut vocab: Vec<String> = rows.iter().map(|r| r[j].trim().to_string()).collect();
                    vocab.sort_by(|a, b| category_order(a, b));
                    vocab.dedup();
                    columns.push(ColumnCodec::Categorical { vocabulary: vocab });
                }
            }
        }
        Ok(Self { names: decl.columns.iter().map(|c| c.name.clone()).collect(), columns })
    }

    pub fn schema(&self) -> Result<DataSchema> {
        DataSchema::new(
            self.columns
                .iter()
                .map(|c| match c {
                    ColumnCodec::Numeric { .. } => VariableKind::Continuous,
                    ColumnCodec::Categorical { vocabulary } => VariableKind::Categorical { classes: vocabulary.len() + 1 },
                })
                .collect(),
        )
    }

    pub fn encode(&self, record: &[String]) -> Result<Vec<f64>> {
        if record.len() != self.columns.len() {
            return Err(shape_err(format!("record has {} fields, codec has {}", record.len(), self.columns.len())));
        }
        record
            .iter()
            .zip(&self.columns)
            .zip(&self.names)
            .map(|((v, c), name)| match c {
                ColumnCodec::Numeric { min, max } => {
                    let x: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| BfnError::Format(format!("column {name}: '{v}' is not numeric")))?;
                    let span = max - min;
                    Ok(if span > 0.0 { (2.0 * (x - min) / span - 1.0).clamp(-1.0, 1.0) } else { 0.0 })
                }
                ColumnCodec::Categorical { vocabulary } => {
                    let v = v.trim();
                    Ok(vocabulary.iter().position(|w| w == v).unwrap_or(vocabulary.len()) as f64)
                }
            })
            .collect()
    }

    pub fn decode(&self, row: &[f64]) -> Result<Vec<String>> {
        if row.len() != self.columns.len() {
            return Err(shape_err(format!("row has {} values, codec has {}", row.len(), self.columns.len())));
        }
        Ok(row
            .iter()
            .zip(&self.columns)
            .map(|(&x, c)| match c {
                ColumnCodec::Numeric { min, max } => {
                    let v = min + (x.clamp(-1.0, 1.0) + 1.0) / 2.0 * (max - min);
                    format!("{v}")
                }
                ColumnCodec::Categorical { vocabulary } => {
                    vocabulary.get(x as usize).cloned().unwrap_or_else(|| UNKNOWN_CATEGORY.to_string())
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

fn read_declared(path: &Path, decl: &TabularSchema) -> Result<(Vec<Vec<String>>, usize)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut index = Vec::with_capacity(decl.columns.len());
    for col in &decl.columns {
        let pos = headers
            .iter()
            .position(|h| h.trim() == col.name)
            .ok_or_else(|| BfnError::Argument(format!("column '{}' not in CSV header", col.name)))?;
        index.push(pos);
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(index.iter().map(|&i| record.get(i).unwrap_or("").to_string()).collect());
    }
    let (rows, dropped) = drop_incomplete(rows);
    if dropped > 0 {
        warn!("{}: dropped {dropped} rows with missing values", path.display());
    }
    Ok((rows, dropped))
}

fn drop_incomplete(rows: Vec<Vec<String>>) -> (Vec<Vec<String>>, usize) {
    let before = rows.len();
    let kept: Vec<Vec<String>> = rows.into_iter().filter(|r| !r.iter().any(|f| is_missing(f))).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

fn labelled(decl: &TabularSchema, codec: &TabularCodec, rows: Vec<Vec<f64>>, dropped: usize) -> Result<TabularLoad> {
    let schema = codec.schema()?;
    let labels = match &decl.label_column {
        Some(name) => {
            let j = decl
                .columns
                .iter()
                .position(|c| &c.name == name && c.kind == ColumnKind::Categorical)
                .ok_or_else(|| BfnError::Argument(format!("label column '{name}' is not a declared categorical column")))?;
            Some(rows.iter().map(|r| r[j] as usize).collect())
        }
        None => None,
    };
    let mut dataset = Dataset::new(rows, schema, labels)?;
    dataset.columns = codec.names.clone();
    dataset.codec = Some(codec.clone());
    Ok(TabularLoad { dataset, dropped_rows: dropped })
}

/// Reads a CSV with a header, fits the codec on its complete rows, and
/// encodes them.
pub fn load_csv_tabular(path: impl AsRef<Path>, decl: &TabularSchema) -> Result<TabularLoad> {
    let (raw, dropped) = read_declared(path.as_ref(), decl)?;
    let codec = TabularCodec::fit(decl, &raw)?;
    let rows = raw.iter().map(|r| codec.encode(r)).collect::<Result<Vec<_>>>()?;
    labelled(decl, &codec, rows, dropped)
}

/// Synthetic flights table, encoded through a freshly fitted codec.
pub fn synthetic_flights<R: Rng + ?Sized>(n_rows: usize, rng: &mut R) -> Result<Dataset> {
    Ok(encode_table(&flights_schema(), synthetic_flights_table(n_rows, rng))?.dataset)
}

/// Fits a codec on an in-memory table whose fields follow `decl` order.
pub fn encode_table(decl: &TabularSchema, table: Vec<Vec<String>>) -> Result<TabularLoad> {
    if let Some(r) = table.iter().find(|r| r.len() != decl.columns.len()) {
        return Err(shape_err(format!("table row has {} fields, schema declares {}", r.len(), decl.columns.len())));
    }
    let (raw, dropped) = drop_incomplete(table);
    let codec = TabularCodec::fit(decl, &raw)?;
    let rows = raw.iter().map(|r| codec.encode(r)).collect::<Result<Vec<_>>>()?;
    labelled(decl, &codec, rows, dropped)
}

/// Encodes a further CSV (a held-out file) with an already fitted codec.
pub fn load_csv_with_codec(path: impl AsRef<Path>, decl: &TabularSchema, codec: &TabularCodec) -> Result<TabularLoad> {
    let (raw, dropped) = read_declared(path.as_ref(), decl)?;
    let rows = raw.iter().map(|r| codec.encode(r)).collect::<Result<Vec<_>>>()?;
    labelled(decl, codec, rows, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMode {
    pub mean: Vec<f64>,
    pub stdev: f64,
}

/// Rows from an isotropic Gaussian mixture, clipped to `[-1, 1]`, labelled by
/// the generating mode.
pub fn synthetic_mixture<R: Rng + ?Sized>(
    n_rows: usize,
    modes: &[MixtureMode],
    weights: &[f64],
    rng: &mut R,
) -> Result<Dataset> {
    if modes.is_empty() || modes.len() != weights.len() {
        return Err(BfnError::Argument("need one weight per mixture mode".into()));
    }
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(BfnError::Argument("mixture weights must lie on the simplex".into()));
    }
    let dims = modes[0].mean.len();
    if dims == 0 || modes.iter().any(|m| m.mean.len() != dims || m.stdev < 0.0) {
        return Err(BfnError::Argument("mixture modes need equal non-zero dimension and stdev >= 0".into()));
    }
    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = modes.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let mode = &modes[k];
        let row = mode
            .mean
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                (m + mode.stdev * z).clamp(-1.0, 1.0)
            })
            .collect();
        rows.push(row);
        labels.push(k);
    }
    Dataset::new(rows, DataSchema::continuous(dims)?, Some(labels))
}

pub fn flights_schema() -> TabularSchema {
    let cat = ["month", "carrier", "origin", "dest", "time_of_day"];
    let num = [
        "dep_delay", "arr_delay", "distance", "air_time", "dep_hour", "arr_hour", "taxi_out", "taxi_in", "seats",
    ];
    TabularSchema {
        columns: cat
            .iter()
            .map(|n| ColumnDecl { name: n.to_string(), kind: ColumnKind::Categorical })
            .chain(num.iter().map(|n| ColumnDecl { name: n.to_string(), kind: ColumnKind::Numeric }))
            .collect(),
        label_column: Some("month".into()),
    }
}

/// A flights-like table with 5 categorical and 9 numeric columns whose
/// distributions drift with the month. Columns follow [`flights_schema`].
pub fn synthetic_flights_table<R: Rng + ?Sized>(n_rows: usize, rng: &mut R) -> Vec<Vec<String>> {
    const CARRIERS: [&str; 6] = ["AA", "B6", "DL", "EV", "UA", "WN"];
    const AIRPORTS: [&str; 5] = ["EWR", "JFK", "LGA", "ORD", "ATL"];
    const TIMES: [&str; 4] = ["morning", "afternoon", "evening", "night"];
    let mut out = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let month = rng.random_range(1..=12usize);
        let season = (2.0 * std::f64::consts::PI * (month as f64 - 1.0) / 12.0).cos();
        // carrier and time-of-day mix rotates with the month
        let carrier = (month + rng.random_range(0..3)) % CARRIERS.len();
        let origin = rng.random_range(0..3);
        let mut dest = rng.random_range(0..AIRPORTS.len());
        if dest == origin {
            dest = 3 + (month % 2);
        }
        let tod = (month / 3 + rng.random_range(0..2)) % TIMES.len();
        let z = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };
        let dep_delay = 10.0 + 25.0 * season + 15.0 * z(rng);
        let arr_delay = dep_delay - 5.0 + 8.0 * z(rng);
        let distance = 300.0 + 150.0 * dest as f64 + 80.0 * month as f64 + 60.0 * z(rng);
        let air_time = distance / 8.0 + 5.0 * z(rng);
        let dep_hour = (6.0 + 4.5 * tod as f64 + z(rng)).clamp(0.0, 23.0);
        let arr_hour = (dep_hour + air_time / 60.0).min(23.9);
        let taxi_out = 15.0 + 5.0 * season + 3.0 * z(rng);
        let taxi_in = 7.0 + 2.0 * z(rng);
        let seats = 120.0 + 10.0 * carrier as f64 + 5.0 * z(rng);
        let mut row = vec![
            month.to_string(),
            CARRIERS[carrier].to_string(),
            AIRPORTS[origin].to_string(),
            AIRPORTS[dest].to_string(),
            TIMES[tod].to_string(),
        ];
        row.extend(
            [dep_delay, arr_delay, distance, air_time, dep_hour, arr_hour, taxi_out, taxi_in, seats]
                .iter()
                .map(|v| format!("{v:.2}")),
        );
        out.push(row);
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitMode {
    ClassIncremental { classes_per_task: usize },
    Attribute { column: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
    pub test_fraction: f64,
}

fn train_test_split(indices: &mut [usize], fraction: f64, seed: u64, task: usize) -> usize {
    indices.shuffle(&mut row_rng(seed, task));
    let n = indices.len();
    if n < 2 {
        return 0;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Groups rows into tasks and holds out a seeded test split inside each.
pub fn split_tasks(dataset: &Dataset, spec: &SplitSpec) -> Result<TaskStream> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(BfnError::Argument(format!("test_fraction {} outside (0, 1)", spec.test_fraction)));
    }
    // (task name, member row indices, per-row label)
    let (groups, labels): (Vec<(String, Vec<usize>)>, Vec<usize>) = match &spec.mode {
        SplitMode::ClassIncremental { classes_per_task } => {
            if *classes_per_task == 0 {
                return Err(BfnError::Argument("classes_per_task must be at least 1".into()));
            }
            let labels =
                dataset.labels.clone().ok_or_else(|| BfnError::Argument("class split needs labels".into()))?;
            let mut classes: Vec<usize> = labels.clone();
            classes.sort_unstable();
            classes.dedup();
            if classes.len() % classes_per_task != 0 {
                warn!(
                    "{} classes do not divide into groups of {classes_per_task}; the last task is smaller",
                    classes.len()
                );
            }
            let groups = classes
                .chunks(*classes_per_task)
                .map(|chunk| {
                    let members = (0..labels.len()).filter(|&i| chunk.contains(&labels[i])).collect();
                    let name = format!(
                        "classes {}",
                        chunk.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
                    );
                    (name, members)
                })
                .collect();
            (groups, labels)
        }
        SplitMode::Attribute { column } => {
            let j = dataset
                .columns
                .iter()
                .position(|c| c == column)
                .ok_or_else(|| BfnError::Argument(format!("attribute column '{column}' does not exist")))?;
            let mut by_value: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            let mut values: Vec<f64> = dataset.rows.iter().map(|r| r[j]).collect();
            for (i, v) in values.iter().enumerate() {
                // order-preserving key for finite floats
                let bits = v.to_bits();
                let key = if *v >= 0.0 { bits ^ (1 << 63) } else { !bits };
                by_value.entry(key).or_default().push(i);
            }
            let mut labels = vec![0; dataset.rows.len()];
            let mut groups = Vec::with_capacity(by_value.len());
            for (rank, (_, members)) in by_value.into_iter().enumerate() {
                for &i in &members {
                    labels[i] = rank;
                }
                let shown = match &dataset.codec {
                    Some(codec) => codec.decode(&dataset.rows[members[0]])?[j].clone(),
                    None => format!("{}", values[members[0]]),
                };
                groups.push((format!("{column}={shown}"), members));
            }
            values.clear();
            (groups, labels)
        }
    };

    let tasks = groups
        .into_iter()
        .enumerate()
        .map(|(id, (name, mut members))| {
            let n_test = train_test_split(&mut members, spec.test_fraction, spec.seed, id);
            let (test, train) = members.split_at(n_test);
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Task {
                id,
                name,
                train: train.iter().map(|&i| dataset.rows[i].clone()).collect(),
                train_labels: train.iter().map(|&i| labels[i]).collect(),
                test: test.iter().map(|&i| dataset.rows[i].clone()).collect(),
                test_labels: test.iter().map(|&i| labels[i]).collect(),
            }
        })
        .collect();
    TaskStream::new(tasks, dataset.schema.clone())
}
