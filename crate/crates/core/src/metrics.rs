//! Accuracy tables and their cross-dataset aggregates.
//!
//! Accuracies are compared as stored; two values within [`TIE_EPS`] count as
//! equal for win/tie decisions and rank averaging.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIE_EPS: f64 = 1e-9;
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Rows are datasets, columns are algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub datasets: Vec<String>,
    pub algorithms: Vec<String>,
    /// `values[row][col]`
    pub values: Vec<Vec<f64>>,
}

impl AccuracyTable {
    pub fn new(datasets: Vec<String>, algorithms: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != datasets.len() {
            return Err(Error::Metrics(format!("{} rows for {} datasets", values.len(), datasets.len())));
        }
        if let Some((i, row)) = values.iter().enumerate().find(|(_, r)| r.len() != algorithms.len()) {
            return Err(Error::Metrics(format!(
                "row {} ({}) has {} cells for {} algorithms",
                i + 1,
                datasets[i],
                row.len(),
                algorithms.len()
            )));
        }
        if let Some(v) = values.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Metrics(format!("accuracy {v} outside [0, 1]")));
        }
        Ok(AccuracyTable {
            datasets,
            algorithms,
            values,
        })
    }

    /// Header `dataset,<alg>...`, one row per dataset.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Metrics("table needs a dataset column and at least one algorithm".into()));
        }
        let algorithms = header.iter().skip(1).map(str::to_string).collect();
        let mut datasets = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            datasets.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::Metrics(format!("row {}: cannot parse {c:?}", line + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            values.push(row);
        }
        if datasets.is_empty() {
            return Err(Error::Metrics("table has no rows".into()));
        }
        AccuracyTable::new(datasets, algorithms, values)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        AccuracyTable::from_csv_reader(file)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dataset".to_string()];
        header.extend(self.algorithms.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.datasets.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn column(&self, algorithm: &str) -> Result<usize> {
        self.algorithms
            .iter()
            .position(|a| a == algorithm)
            .ok_or_else(|| Error::Metrics(format!("no algorithm column {algorithm:?}")))
    }
}

pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Metrics("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WinCounts {
    pub win: usize,
    pub tie: usize,
    pub lose: usize,
    pub best: usize,
}

fn need_two(table: &AccuracyTable, what: &str) -> Result<()> {
    if table.algorithms.len() < 2 {
        return Err(Error::Metrics(format!("{what} needs at least two algorithms")));
    }
    Ok(())
}

/// Per dataset: a unique maximum wins, a shared maximum ties, the rest lose.
pub fn win_tie_lose_best(table: &AccuracyTable) -> Result<Vec<WinCounts>> {
    need_two(table, "win/tie/lose")?;
    let mut counts = vec![WinCounts::default(); table.algorithms.len()];
    for row in &table.values {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let at_max: Vec<bool> = row.iter().map(|v| (max - v).abs() <= TIE_EPS).collect();
        let shared = at_max.iter().filter(|&&m| m).count() > 1;
        for (c, &top) in counts.iter_mut().zip(&at_max) {
            match (top, shared) {
                (true, false) => c.win += 1,
                (true, true) => c.tie += 1,
                (false, _) => c.lose += 1,
            }
        }
    }
    for c in &mut counts {
        c.best = c.win + c.tie;
    }
    Ok(counts)
}

pub fn mean_acc(table: &AccuracyTable, algorithm: &str) -> Result<f64> {
    let col = table.column(algorithm)?;
    if table.values.is_empty() {
        return Err(Error::Metrics("table has no rows".into()));
    }
    Ok(table.values.iter().map(|r| r[col]).sum::<f64>() / table.values.len() as f64)
}

/// Descending ranks of one row; tied values share the mean of their positions.
pub fn rank_row(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut ranks = vec![0.0; row.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && (row[order[start]] - row[order[end]]).abs() <= TIE_EPS {
            end += 1;
        }
        // positions start+1 ..= end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

pub fn avg_rank(table: &AccuracyTable) -> Result<Vec<f64>> {
    need_two(table, "ranking")?;
    if table.values.is_empty() {
        return Err(Error::Metrics("table has no rows".into()));
    }
    let mut sums = vec![0.0; table.algorithms.len()];
    for row in &table.values {
        for (s, r) in sums.iter_mut().zip(rank_row(row)) {
            *s += r;
        }
    }
    let n = table.values.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Outcome for one simulated user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user_id: u32,
    pub dataset: String,
    pub connected: bool,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub entries: usize,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub total_bytes: u64,
    /// Size of one encoded bundle; zero when nothing was sent.
    pub bundle_bytes: u64,
}

/// Training details attached to an algorithm produced by a federation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetails {
    pub n_tot: usize,
    pub n_conn: usize,
    pub fles: u32,
    pub seed: u64,
    pub users: Vec<UserResult>,
    pub ledger: LedgerTotals,
    /// Mean total loss over all users, one value per federated epoch.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub win: Option<usize>,
    pub tie: Option<usize>,
    pub lose: Option<usize>,
    pub best: Option<usize>,
    pub mean_acc: f64,
    pub avg_rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunDetails>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub table: AccuracyTable,
    pub algorithms: BTreeMap<String, AlgorithmSummary>,
}

impl MetricReport {
    /// Aggregates a table. Win/tie/lose and ranks are left empty when the
    /// table has a single algorithm.
    pub fn from_table(table: AccuracyTable) -> Result<Self> {
        let comparable = table.algorithms.len() >= 2;
        let counts = if comparable { Some(win_tie_lose_best(&table)?) } else { None };
        let ranks = if comparable { Some(avg_rank(&table)?) } else { None };
        let mut algorithms = BTreeMap::new();
        for (i, name) in table.algorithms.iter().enumerate() {
            let c = counts.as_ref().map(|c| c[i]);
            algorithms.insert(
                name.clone(),
                AlgorithmSummary {
                    win: c.map(|c| c.win),
                    tie: c.map(|c| c.tie),
                    lose: c.map(|c| c.lose),
                    best: c.map(|c| c.best),
                    mean_acc: mean_acc(&table, name)?,
                    avg_rank: ranks.as_ref().map(|r| r[i]),
                    run: None,
                },
            );
        }
        Ok(MetricReport { table, algorithms })
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.algorithms)? + "\n")
    }

    /// Summary rows in the column order of the table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for a in &self.table.algorithms {
            let _ = write!(out, "{a:>10}");
        }
        out.push('\n');
        let cell = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        type Getter = fn(&AlgorithmSummary) -> Option<String>;
        let rows: [(&str, Getter); 6] = [
            ("Win", |s| s.win.map(|v| v.to_string())),
            ("Tie", |s| s.tie.map(|v| v.to_string())),
            ("Lose", |s| s.lose.map(|v| v.to_string())),
            ("Best", |s| s.best.map(|v| v.to_string())),
            ("MeanACC", |s| Some(format!("{:.4}", s.mean_acc))),
            ("AVG_rank", |s| s.avg_rank.map(|v| format!("{v:.4}"))),
        ];
        for (label, get) in rows {
            let _ = write!(out, "{label:<10}");
            for a in &self.table.algorithms {
                let _ = write!(out, "{:>10}", cell(get(&self.algorithms[a])));
            }
            out.push('\n');
        }
        out
    }
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn emit_report(report: &MetricReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report.table.write_csv(&dir.join(RESULTS_FILE))?;
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, report.summary_json()?).map_err(|e| Error::io(&path, e))
}

/// Reads back what [`emit_report`] wrote.
pub fn read_report(dir: &Path) -> Result<MetricReport> {
    let table = AccuracyTable::from_csv(&dir.join(RESULTS_FILE))?;
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let algorithms: BTreeMap<String, AlgorithmSummary> = serde_json::from_str(&text)?;
    Ok(MetricReport { table, algorithms })
}
