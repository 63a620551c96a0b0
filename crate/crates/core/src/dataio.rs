//! UCR-format dataset ingestion, the benchmark registry and synthetic sets.
//!
//! Files follow the UCR 2018 layout: `<Name>_TRAIN.tsv` and `<Name>_TEST.tsv`,
//! one instance per line, label first, tab-separated values. Variable-length
//! sets mark missing trailing values with `NaN`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled series `[N, 1, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSeries {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Result<Self> {
        x.expect_rank("labeled series", 3)?;
        if x.dim(0) != labels.len() {
            return Err(Error::shape(
                "labeled series",
                format!("{} series but {} labels", x.dim(0), labels.len()),
            ));
        }
        Ok(LabeledSeries { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.x.dim(2)
    }

    /// Rows `idx` as a new batch.
    pub fn select(&self, idx: &[usize]) -> LabeledSeries {
        let len = self.series_len();
        let mut data = Vec::with_capacity(idx.len() * len);
        for &i in idx {
            data.extend_from_slice(&self.x.data()[i * len..(i + 1) * len]);
        }
        LabeledSeries {
            x: Tensor::from_vec(&[idx.len(), 1, len], data).expect("sizes agree"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Shuffled batches; the last partial batch is kept.
    pub fn shuffled_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<LabeledSeries> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(batch_size.max(1)).map(|chunk| self.select(chunk)).collect()
    }
}

/// Train and test splits sharing one series length and label space.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub train: LabeledSeries,
    pub test: LabeledSeries,
    pub num_classes: usize,
    /// Original label of each remapped class index, in ascending order.
    pub label_map: Vec<f64>,
}

impl TimeSeriesDataset {
    pub fn series_length(&self) -> usize {
        self.train.series_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Short,
    Medium,
    Long,
    Vary,
}

/// One row of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    /// Name as abbreviated in the results table.
    pub name: &'static str,
    /// Directory and file stem in the UCR archive.
    pub archive: &'static str,
    pub train: usize,
    pub test: usize,
    pub classes: usize,
    /// `None` for variable-length sets.
    pub length: Option<usize>,
    pub scale: Scale,
    pub kind: &'static str,
}

macro_rules! meta {
    ($name:literal, $archive:literal, $tr:literal, $te:literal, $c:literal, $len:expr, $scale:ident, $kind:literal) => {
        DatasetMeta {
            name: $name,
            archive: $archive,
            train: $tr,
            test: $te,
            classes: $c,
            length: $len,
            scale: Scale::$scale,
            kind: $kind,
        }
    };
}

pub const REGISTRY: [DatasetMeta; 44] = [
    meta!("Chinatown", "Chinatown", 20, 345, 2, Some(24), Short, "Traffic"),
    meta!("MelbournePedestrian", "MelbournePedestrian", 1194, 2439, 10, Some(24), Short, "Traffic"),
    meta!("SonyAIBORobotSur.2", "SonyAIBORobotSurface2", 27, 953, 2, Some(65), Short, "Sensor"),
    meta!("SonyAIBORobotSur.1", "SonyAIBORobotSurface1", 20, 601, 2, Some(70), Short, "Sensor"),
    meta!("DistalPhalanxO.A.G", "DistalPhalanxOutlineAgeGroup", 400, 139, 3, Some(80), Short, "Image"),
    meta!("DistalPhalanxO.C.", "DistalPhalanxOutlineCorrect", 600, 276, 2, Some(80), Short, "Image"),
    meta!("DistalPhalanxTW", "DistalPhalanxTW", 400, 139, 6, Some(80), Short, "Image"),
    meta!("TwoLeadECG", "TwoLeadECG", 23, 1139, 2, Some(82), Short, "ECG"),
    meta!("MoteStrain", "MoteStrain", 20, 1252, 2, Some(84), Short, "Sensor"),
    meta!("ECG200", "ECG200", 100, 100, 2, Some(96), Short, "ECG"),
    meta!("CBF", "CBF", 30, 900, 3, Some(128), Short, "Simulated"),
    meta!("DodgerLoopDay", "DodgerLoopDay", 78, 80, 7, Some(288), Medium, "Sensor"),
    meta!("DodgerLoopGame", "DodgerLoopGame", 20, 138, 2, Some(288), Medium, "Sensor"),
    meta!("DodgerLoopWeekend", "DodgerLoopWeekend", 20, 138, 2, Some(288), Medium, "Sensor"),
    meta!("CricketX", "CricketX", 390, 390, 12, Some(300), Medium, "Motion"),
    meta!("CricketY", "CricketY", 390, 390, 12, Some(300), Medium, "Motion"),
    meta!("CricketZ", "CricketZ", 390, 390, 12, Some(300), Medium, "Motion"),
    meta!("FaceFour", "FaceFour", 24, 88, 4, Some(350), Medium, "Image"),
    meta!("Ham", "Ham", 109, 105, 2, Some(431), Medium, "Spectro"),
    meta!("Meat", "Meat", 60, 60, 3, Some(448), Medium, "Spectro"),
    meta!("Fish", "Fish", 175, 175, 7, Some(463), Medium, "Image"),
    meta!("Beef", "Beef", 30, 30, 5, Some(470), Medium, "Spectro"),
    meta!("OliveOil", "OliveOil", 30, 30, 4, Some(570), Long, "Spectro"),
    meta!("Car", "Car", 60, 60, 4, Some(577), Long, "Sensor"),
    meta!("Lightning2", "Lightning2", 60, 61, 2, Some(637), Long, "Sensor"),
    meta!("Computers", "Computers", 250, 250, 2, Some(720), Long, "Device"),
    meta!("Mallat", "Mallat", 55, 2345, 8, Some(1024), Long, "Simulated"),
    meta!("Phoneme", "Phoneme", 214, 1896, 39, Some(1024), Long, "Sensor"),
    meta!("StarLightCurves", "StarLightCurves", 1000, 8236, 3, Some(1024), Long, "Sensor"),
    meta!("MixedShapesRegularT.", "MixedShapesRegularTrain", 500, 2425, 5, Some(1024), Long, "Image"),
    meta!("MixedShapesSmallT.", "MixedShapesSmallTrain", 100, 2425, 5, Some(1024), Long, "Image"),
    meta!("ACSF1", "ACSF1", 100, 100, 10, Some(1460), Long, "Device"),
    meta!("SemgHandG.Ch2", "SemgHandGenderCh2", 300, 600, 2, Some(1500), Long, "Spectrum"),
    meta!("AllGestureWiimoteX", "AllGestureWiimoteX", 300, 700, 10, None, Vary, "Sensor"),
    meta!("AllGestureWiimoteY", "AllGestureWiimoteY", 300, 700, 10, None, Vary, "Sensor"),
    meta!("AllGestureWiimoteZ", "AllGestureWiimoteZ", 300, 700, 10, None, Vary, "Sensor"),
    meta!("GestureMidAirD1", "GestureMidAirD1", 208, 130, 26, None, Vary, "Trajectory"),
    meta!("GestureMidAirD2", "GestureMidAirD2", 208, 130, 26, None, Vary, "Trajectory"),
    meta!("GestureMidAirD3", "GestureMidAirD3", 208, 130, 26, None, Vary, "Trajectory"),
    meta!("GesturePebbleZ1", "GesturePebbleZ1", 132, 172, 6, None, Vary, "Sensor"),
    meta!("GesturePebbleZ2", "GesturePebbleZ2", 146, 158, 6, None, Vary, "Sensor"),
    meta!("PickupGestureW.Z", "PickupGestureWiimoteZ", 50, 50, 10, None, Vary, "Sensor"),
    meta!("PLAID", "PLAID", 537, 537, 11, None, Vary, "Device"),
    meta!("ShakeGestureW.Z", "ShakeGestureWiimoteZ", 50, 50, 10, None, Vary, "Sensor"),
];

/// Finds a registry row by table name or archive name.
pub fn lookup(name: &str) -> Option<&'static DatasetMeta> {
    REGISTRY
        .iter()
        .find(|m| m.name.eq_ignore_ascii_case(name) || m.archive.eq_ignore_ascii_case(name))
}

/// Per-instance standardization with population std; constant series map to zeros.
pub fn z_normalize(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-8 * mean.abs().max(1.0) {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| (v - mean) / std).collect()
}

/// Right-pads with zeros.
pub fn pad_to_length(series: &[f64], target: usize) -> Result<Vec<f64>> {
    if series.len() > target {
        return Err(Error::shape(
            "pad_to_length",
            format!("series of length {} exceeds target {target}", series.len()),
        ));
    }
    let mut out = series.to_vec();
    out.resize(target, 0.0);
    Ok(out)
}

/// One parsed TSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub label: f64,
    pub values: Vec<f64>,
}

fn dataset_err(name: &str, reason: impl Into<String>) -> Error {
    Error::Dataset {
        name: name.to_string(),
        reason: reason.into(),
    }
}

/// Parses a UCR file. Commas are accepted as separators for older archive
/// files; `NaN` marks missing values.
pub fn read_ucr_file(path: &Path) -> Result<Vec<RawRow>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(['\t', ',']).map(str::trim);
        let bad = |what: &str| dataset_err(&name, format!("line {}: {what}", line_no + 1));
        let label: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .filter(|l: &f64| l.is_finite())
            .ok_or_else(|| bad("unparseable label"))?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(&format!("unparseable value {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(bad("no values after the label"));
        }
        rows.push(RawRow { label, values });
    }
    if rows.is_empty() {
        return Err(dataset_err(&name, "file is empty"));
    }
    Ok(rows)
}

/// Drops trailing `NaN` padding; interior gaps stay for later handling.
fn valid_prefix(values: &[f64]) -> &[f64] {
    let end = values.iter().rposition(|v| !v.is_nan()).map_or(0, |i| i + 1);
    &values[..end]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { normalize: true }
    }
}

/// Builds a dataset from parsed rows: remaps labels, normalizes each instance
/// and pads every series to the longest one across both splits.
pub fn assemble(
    name: &str,
    train: Vec<RawRow>,
    test: Vec<RawRow>,
    meta: Option<&DatasetMeta>,
    options: LoadOptions,
) -> Result<TimeSeriesDataset> {
    let fixed_length = match meta {
        Some(m) => m.length.is_some(),
        None => !train.iter().chain(&test).any(|r| r.values.iter().any(|v| v.is_nan())),
    };
    if fixed_length {
        let width = train[0].values.len();
        if let Some(r) = train.iter().chain(&test).find(|r| r.values.len() != width) {
            return Err(dataset_err(
                name,
                format!("fixed-length set has rows of {} and {} values", width, r.values.len()),
            ));
        }
    }

    let mut label_map: Vec<f64> = train.iter().chain(&test).map(|r| r.label).collect();
    label_map.sort_by(f64::total_cmp);
    label_map.dedup();
    let num_classes = label_map.len();

    let prepare = |r: &RawRow| -> Result<Vec<f64>> {
        let valid = valid_prefix(&r.values);
        if valid.is_empty() {
            return Err(dataset_err(name, "instance has no observed values"));
        }
        let mut series = if options.normalize {
            let observed: Vec<f64> = valid.iter().copied().filter(|v| !v.is_nan()).collect();
            let z = z_normalize(&observed);
            let mut it = z.into_iter();
            valid.iter().map(|v| if v.is_nan() { 0.0 } else { it.next().unwrap() }).collect()
        } else {
            valid.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect::<Vec<f64>>()
        };
        series.shrink_to_fit();
        Ok(series)
    };
    let train_series = train.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let test_series = test.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let length = train_series.iter().chain(&test_series).map(Vec::len).max().unwrap_or(0);

    let build = |rows: &[RawRow], series: Vec<Vec<f64>>| -> Result<LabeledSeries> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * length);
        for s in series {
            data.extend(pad_to_length(&s, length)?);
        }
        let labels = rows
            .iter()
            .map(|r| label_map.binary_search_by(|l| l.total_cmp(&r.label)).expect("label present"))
            .collect();
        LabeledSeries::new(Tensor::from_vec(&[n, 1, length], data)?, labels)
    };
    let dataset = TimeSeriesDataset {
        name: name.to_string(),
        train: build(&train, train_series)?,
        test: build(&test, test_series)?,
        num_classes,
        label_map,
    };
    if let Some(m) = meta {
        check_against(&dataset, m)?;
    }
    Ok(dataset)
}

/// Errors when a loaded dataset disagrees with its registry row.
pub fn check_against(ds: &TimeSeriesDataset, meta: &DatasetMeta) -> Result<()> {
    let mut problems = Vec::new();
    if ds.train.len() != meta.train {
        problems.push(format!("train count {} (expected {})", ds.train.len(), meta.train));
    }
    if ds.test.len() != meta.test {
        problems.push(format!("test count {} (expected {})", ds.test.len(), meta.test));
    }
    if ds.num_classes != meta.classes {
        problems.push(format!("class count {} (expected {})", ds.num_classes, meta.classes));
    }
    if let Some(len) = meta.length {
        if ds.series_length() != len {
            problems.push(format!("series length {} (expected {len})", ds.series_length()));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(dataset_err(&ds.name, problems.join(", ")))
    }
}

/// Locates `<stem>_TRAIN.tsv` either directly in `dir` or in `dir/<stem>/`.
pub fn find_split_files(dir: &Path, stem: &str) -> Option<(PathBuf, PathBuf)> {
    for base in [dir.join(stem), dir.to_path_buf()] {
        let train = base.join(format!("{stem}_TRAIN.tsv"));
        let test = base.join(format!("{stem}_TEST.tsv"));
        if train.is_file() && test.is_file() {
            return Some((train, test));
        }
    }
    None
}

/// Loads a dataset by name from `dir`, validating against the registry when
/// the name is known.
pub fn load_ucr_tsv(dir: &Path, name: &str, options: LoadOptions) -> Result<TimeSeriesDataset> {
    let meta = lookup(name);
    let stems: Vec<&str> = match meta {
        Some(m) => vec![m.archive, name],
        None => vec![name],
    };
    let (train_path, test_path) = stems
        .iter()
        .find_map(|s| find_split_files(dir, s))
        .ok_or_else(|| dataset_err(name, format!("no {}_TRAIN.tsv/_TEST.tsv under {}", stems[0], dir.display())))?;
    let train = read_ucr_file(&train_path)?;
    let test = read_ucr_file(&test_path)?;
    assemble(name, train, test, meta, options)
}

/// Writes one split in UCR format with labels `0..C`.
pub fn write_ucr_tsv(path: &Path, data: &LabeledSeries) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let len = data.series_len();
    for (i, label) in data.labels.iter().enumerate() {
        let row = &data.x.data()[i * len..(i + 1) * len];
        let mut line = label.to_string();
        for v in row {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes both splits as `<dir>/<name>/<name>_{TRAIN,TEST}.tsv`.
pub fn write_dataset(dir: &Path, ds: &TimeSeriesDataset) -> Result<()> {
    let sub = dir.join(&ds.name);
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    write_ucr_tsv(&sub.join(format!("{}_TRAIN.tsv", ds.name)), &ds.train)?;
    write_ucr_tsv(&sub.join(format!("{}_TEST.tsv", ds.name)), &ds.test)
}

/// Synthetic data families available without the archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Two classes of sinusoids with clearly different frequencies.
    Separable,
    /// Cylinder, bell and funnel shapes of length 128.
    Cbf,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "separable" => Some(SyntheticKind::Separable),
            "cbf" => Some(SyntheticKind::Cbf),
            _ => None,
        }
    }
}

/// One cylinder (0), bell (1) or funnel (2) series of length 128.
pub fn cbf_series<R: Rng + ?Sized>(class: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let a = rng.gen_range(16.0..=32.0f64);
    let b = a + rng.gen_range(32.0..=96.0f64);
    let eta = normal.sample(rng);
    (1..=128)
        .map(|t| {
            let t = t as f64;
            let inside = if t >= a && t <= b { 1.0 } else { 0.0 };
            let shape = match class {
                0 => inside,
                1 => inside * (t - a) / (b - a),
                _ => inside * (b - t) / (b - a),
            };
            (6.0 + eta) * shape + normal.sample(rng)
        })
        .collect()
}

fn separable_series<R: Rng + ?Sized>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let freq = if class == 0 { 1.0 } else { 4.0 };
    let phase = rng.gen_range(0.0..0.5);
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    (0..len)
        .map(|t| (2.0 * PI * freq * (t as f64 / len as f64) + phase).sin() + noise.sample(rng))
        .collect()
}

/// Class-dependent waveform mix used as a stand-in for an archive dataset
/// that is not on disk: class `c` is a sinusoid of `c + 1` cycles with a
/// class-specific step, plus noise.
fn standin_series<R: Rng + ?Sized>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let cycles = (class + 1) as f64;
    let phase = rng.gen_range(-0.3..0.3);
    let step_at = (len as f64 * (0.3 + 0.4 * ((class * 7) % 5) as f64 / 5.0)) as usize;
    let noise = Normal::new(0.0, 0.3).expect("valid sigma");
    (0..len)
        .map(|t| {
            let base = (2.0 * PI * cycles * t as f64 / len as f64 + phase).sin();
            let step = if t >= step_at { 0.5 } else { -0.5 };
            base + step + noise.sample(rng)
        })
        .collect()
}

fn split_from<R: Rng + ?Sized>(
    n: usize,
    classes: usize,
    len: usize,
    rng: &mut R,
    gen: &dyn Fn(usize, &mut R) -> Vec<f64>,
) -> LabeledSeries {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    let mut data = Vec::with_capacity(n * len);
    for &c in &labels {
        data.extend(z_normalize(&gen(c, rng)));
    }
    LabeledSeries::new(Tensor::from_vec(&[n, 1, len], data).expect("sizes agree"), labels).expect("sizes agree")
}

fn finish(name: &str, classes: usize, train: LabeledSeries, test: LabeledSeries) -> TimeSeriesDataset {
    TimeSeriesDataset {
        name: name.to_string(),
        train,
        test,
        num_classes: classes,
        label_map: (0..classes).map(|c| c as f64).collect(),
    }
}

/// Normalized synthetic dataset; balanced classes in random order.
pub fn synthetic(kind: SyntheticKind, n_train: usize, n_test: usize, len: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SyntheticKind::Separable => {
            let gen = |c: usize, r: &mut ChaCha8Rng| separable_series(c, len, r);
            let train = split_from(n_train, 2, len, &mut rng, &gen);
            let test = split_from(n_test, 2, len, &mut rng, &gen);
            finish("Separable", 2, train, test)
        }
        SyntheticKind::Cbf => {
            let gen = |c: usize, r: &mut ChaCha8Rng| cbf_series(c, r);
            let train = split_from(n_train, 3, 128, &mut rng, &gen);
            let test = split_from(n_test, 3, 128, &mut rng, &gen);
            finish("CBF", 3, train, test)
        }
    }
}

/// Synthetic set with the registry row's split sizes, classes and length.
/// CBF uses its true generator; other sets use a generic waveform family.
/// Variable-length rows get length 64.
pub fn standin(meta: &DatasetMeta, seed: u64) -> TimeSeriesDataset {
    if meta.archive == "CBF" {
        let mut ds = synthetic(SyntheticKind::Cbf, meta.train, meta.test, 128, seed);
        ds.name = meta.name.to_string();
        return ds;
    }
    let len = meta.length.unwrap_or(64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = |c: usize, r: &mut ChaCha8Rng| standin_series(c, len, r);
    let train = split_from(meta.train, meta.classes, len, &mut rng, &gen);
    let test = split_from(meta.test, meta.classes, len, &mut rng, &gen);
    finish(meta.name, meta.classes, train, test)
}
