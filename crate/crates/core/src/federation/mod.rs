//! Synchronous federated rounds over simulated users.
//!
//! Each federated epoch `k` runs: every user trains locally for one round,
//! connected users upload their hidden weights, the server waits for all of
//! them, applies the strategy and sends one bundle back to each connected
//! user, which loads it on receipt. At `k = 1` no teacher has been received
//! yet, so training is supervised only. Disconnected users never exchange
//! anything.
//!
//! Uploads and downloads always pass through the wire codec, so received
//! weights are single precision in both transports.

pub mod codec;
pub mod transport;

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use codec::{decode_weight_message, encode_weight_message, encoded_len};
pub use transport::TransportKind;

use crate::dataio::{self, LabeledSeries, LoadOptions, SyntheticKind, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::extractor::{ArchSpec, FeatureExtractor};
use crate::fbst::{local_train_epoch, FbstConfig, FbstPair, KdReduction, LossReport};
use crate::metrics::{top1_accuracy, AccuracyTable, LedgerTotals, MetricReport, RunDetails, UserResult};
use crate::nncore::{AdamConfig, NormMode};
use crate::strategies::{LoadTarget, StrategyKind};
use transport::{serve_round, SocketClients, SocketServer};

/// Environment variable naming the dataset root when the config has none.
pub const DATA_DIR_ENV: &str = "EFDLS_DATA_DIR";

/// RNG stream reserved for choosing the connected set.
const CONNECTION_STREAM: u64 = u64::MAX;

/// Where a user's dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    /// A directory holding `<name>_TRAIN.tsv`, `synthetic:separable`,
    /// `synthetic:cbf`, or `standin` (a generated set with the registry
    /// shape of `name`). When absent the data root is searched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Split sizes and length for `synthetic:*` sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
}

impl DatasetEntry {
    pub fn named(name: &str) -> Self {
        DatasetEntry {
            name: name.to_string(),
            path: None,
            train: None,
            test: None,
            length: None,
        }
    }

    pub fn with_path(name: &str, path: &str) -> Self {
        DatasetEntry {
            path: Some(path.to_string()),
            ..DatasetEntry::named(name)
        }
    }
}

/// Run configuration; serialized as the effective config of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub strategy: StrategyKind,
    pub n_tot: usize,
    /// Fraction of users connected to the server, in `(0, 1]`.
    pub conn_ratio: f64,
    pub fles: u32,
    pub seed: u64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub local_epochs: usize,
    /// Batch norm divides by the root of the summed squared deviations.
    pub bn_paper_literal: bool,
    /// Per-instance z-normalization of loaded series.
    pub normalize: bool,
    /// Draw a new connected set every epoch instead of once per run.
    pub resample_each_epoch: bool,
    /// Train users on a thread pool. Users own their RNG streams, so results
    /// do not depend on scheduling.
    pub parallel: bool,
    pub transport: TransportKind,
    /// Socket port; 0 picks a free one.
    pub port: u16,
    pub arch: ArchSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Assigned to users round-robin: user `i` gets `datasets[i % len]`.
    pub datasets: Vec<DatasetEntry>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        FederationConfig {
            strategy: StrategyKind::Efdls,
            n_tot: 2,
            conn_ratio: 1.0,
            fles: 1,
            seed: 0,
            epsilon: 0.9,
            batch_size: 16,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            local_epochs: 1,
            bn_paper_literal: false,
            normalize: true,
            resample_each_epoch: false,
            parallel: false,
            transport: TransportKind::InProcess,
            port: 0,
            arch: ArchSpec::default(),
            data_root: None,
            output_dir: None,
            datasets: Vec::new(),
        }
    }
}

impl FederationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: FederationConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FederationConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn fbst(&self) -> FbstConfig {
        FbstConfig {
            epsilon: self.epsilon,
            local_epochs_per_round: self.local_epochs,
            batch_size: self.batch_size,
            kd_reduction: KdReduction::BatchMeanSumFeatures,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
        }
    }

    pub fn norm_mode(&self) -> NormMode {
        if self.bn_paper_literal {
            NormMode::RootSumSquares
        } else {
            NormMode::Standard
        }
    }

    pub fn n_conn(&self) -> Result<usize> {
        n_conn_for(self.n_tot, self.conn_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tot == 0 {
            return Err(Error::Config("n_tot must be positive".into()));
        }
        if u32::try_from(self.n_tot).is_err() {
            return Err(Error::Config("n_tot exceeds the u32 user id range".into()));
        }
        self.n_conn()?;
        if self.fles == 0 {
            return Err(Error::Config("fles must be positive".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one dataset is required".into()));
        }
        if self.resample_each_epoch && self.transport == TransportKind::Socket {
            return Err(Error::Config(
                "resample_each_epoch needs a fixed connection set and is not supported with the socket transport".into(),
            ));
        }
        self.arch.validate()?;
        self.fbst().validate()
    }

    /// `data_root`, else `$EFDLS_DATA_DIR`, else `./data`.
    pub fn resolved_data_root(&self) -> PathBuf {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

/// `round_half_up(ratio * n_tot)`; must land in `[1, n_tot]`.
pub fn n_conn_for(n_tot: usize, conn_ratio: f64) -> Result<usize> {
    if !(conn_ratio > 0.0 && conn_ratio <= 1.0) {
        return Err(Error::Config(format!("conn_ratio must lie in (0, 1], got {conn_ratio}")));
    }
    // the tolerance keeps products such as 0.3 * 5 = 1.4999999999999998 on the half
    let n = (conn_ratio * n_tot as f64 + 0.5 + 1e-9).floor() as usize;
    if n < 1 {
        return Err(Error::Config(format!(
            "conn_ratio {conn_ratio} of {n_tot} users connects nobody"
        )));
    }
    Ok(n.min(n_tot))
}

fn connection_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sorted ids of the connected users, sampled without replacement.
pub fn select_connected(n_tot: usize, conn_ratio: f64, seed: u64) -> Result<Vec<u32>> {
    select_with_stream(n_tot, conn_ratio, seed, CONNECTION_STREAM)
}

fn select_with_stream(n_tot: usize, conn_ratio: f64, seed: u64, stream: u64) -> Result<Vec<u32>> {
    let n_conn = n_conn_for(n_tot, conn_ratio)?;
    let mut rng = connection_rng(seed, stream);
    let mut ids: Vec<u32> = sample(&mut rng, n_tot, n_conn).into_iter().map(|i| i as u32).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// RNG of one user: seeded by the run seed, stream chosen by the user id.
pub fn user_rng(seed: u64, user_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_id as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upload,
    Download,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub epoch: u32,
    pub user_id: u32,
    pub direction: Direction,
    pub bytes: u64,
}

/// Every message exchanged with the server.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommLedger {
    pub entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn record(&mut self, epoch: u32, user_id: u32, direction: Direction, bytes: usize) {
        self.entries.push(LedgerEntry {
            epoch,
            user_id,
            direction,
            bytes: bytes as u64,
        });
    }

    pub fn bytes(&self, direction: Direction) -> u64 {
        self.entries.iter().filter(|e| e.direction == direction).map(|e| e.bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    /// Upload and download totals agree within every epoch.
    pub fn is_symmetric(&self) -> bool {
        let mut epochs: Vec<u32> = self.entries.iter().map(|e| e.epoch).collect();
        epochs.dedup();
        epochs.into_iter().all(|k| {
            let sum = |d| {
                self.entries
                    .iter()
                    .filter(|e| e.epoch == k && e.direction == d)
                    .map(|e| e.bytes)
                    .sum::<u64>()
            };
            sum(Direction::Upload) == sum(Direction::Download)
        })
    }

    pub fn totals(&self) -> LedgerTotals {
        LedgerTotals {
            entries: self.entries.len(),
            upload_bytes: self.bytes(Direction::Upload),
            download_bytes: self.bytes(Direction::Download),
            total_bytes: self.total_bytes(),
            bundle_bytes: self.entries.first().map_or(0, |e| e.bytes),
        }
    }
}

/// `2 * bw * fles * n_conn`: one upload and one download per connected user
/// per federated epoch.
pub fn comm_overhead(bw: u64, fles: u64, n_conn: u64) -> u64 {
    2 * bw * fles * n_conn
}

/// Loads every configured dataset, in config order.
pub fn resolve_datasets(config: &FederationConfig) -> Result<Vec<TimeSeriesDataset>> {
    let root = config.resolved_data_root();
    let options = LoadOptions {
        normalize: config.normalize,
    };
    config
        .datasets
        .iter()
        .enumerate()
        .map(|(i, entry)| load_entry(entry, &root, options, config.seed.wrapping_add(1 + i as u64)))
        .collect()
}

fn load_entry(entry: &DatasetEntry, root: &Path, options: LoadOptions, seed: u64) -> Result<TimeSeriesDataset> {
    let bad = |reason: String| Error::Dataset {
        name: entry.name.clone(),
        reason,
    };
    match entry.path.as_deref() {
        Some("standin") => {
            let meta = dataio::lookup(&entry.name)
                .ok_or_else(|| bad("standin requires a name from the benchmark registry".into()))?;
            Ok(dataio::standin(meta, seed))
        }
        Some(p) if p.starts_with("synthetic:") => {
            let kind = SyntheticKind::parse(&p["synthetic:".len()..])
                .ok_or_else(|| bad(format!("unknown synthetic source {p:?}")))?;
            let mut ds = dataio::synthetic(
                kind,
                entry.train.unwrap_or(20),
                entry.test.unwrap_or(20),
                entry.length.unwrap_or(32),
                seed,
            );
            ds.name = entry.name.clone();
            Ok(ds)
        }
        Some(p) => dataio::load_ucr_tsv(Path::new(p), &entry.name, options),
        None => dataio::load_ucr_tsv(root, &entry.name, options),
    }
}

/// Per-user record of a finished run.
#[derive(Debug, Clone)]
pub struct UserOutcome {
    pub user_id: u32,
    pub dataset: String,
    pub connected: bool,
    pub losses: Vec<LossReport>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub student: FeatureExtractor,
    pub teacher_loaded: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricReport,
    pub ledger: CommLedger,
    pub users: Vec<UserOutcome>,
    pub n_conn: usize,
}

struct UserState {
    id: u32,
    dataset: usize,
    pair: FbstPair,
    rng: ChaCha8Rng,
    losses: Vec<LossReport>,
}

enum Channel {
    InProcess,
    Socket(SocketServer, SocketClients),
}

impl Channel {
    fn round(
        &mut self,
        strategy: StrategyKind,
        epoch: u32,
        uploads: Vec<(u32, Vec<u8>)>,
    ) -> Result<Vec<(u32, Vec<u8>)>> {
        match self {
            Channel::InProcess => {
                let msgs: Vec<Vec<u8>> = uploads.into_iter().map(|(_, m)| m).collect();
                Ok(serve_round(strategy, epoch, &msgs)?.1)
            }
            Channel::Socket(_, clients) => {
                let ids: Vec<u32> = uploads.iter().map(|(id, _)| *id).collect();
                for (id, msg) in &uploads {
                    clients.send(*id, msg)?;
                }
                ids.into_iter().map(|id| Ok((id, clients.receive(id)?))).collect()
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self {
            Channel::InProcess => Ok(()),
            Channel::Socket(server, clients) => {
                drop(clients);
                server.join()
            }
        }
    }
}

/// Loads the configured datasets and runs the federation.
pub fn run_federation(config: &FederationConfig) -> Result<RunOutcome> {
    config.validate()?;
    let datasets = resolve_datasets(config)?;
    run_with_datasets(config, &datasets)
}

/// Runs the federation on already loaded datasets (assigned round-robin).
pub fn run_with_datasets(config: &FederationConfig, datasets: &[TimeSeriesDataset]) -> Result<RunOutcome> {
    config.validate()?;
    if datasets.is_empty() {
        return Err(Error::Config("at least one dataset is required".into()));
    }
    let fbst = config.fbst();
    let strategy = config.strategy;
    let n_conn = config.n_conn()?;
    let fixed_connected = select_connected(config.n_tot, config.conn_ratio, config.seed)?;

    let mut users = (0..config.n_tot as u32)
        .map(|id| {
            let dataset = id as usize % datasets.len();
            let mut rng = user_rng(config.seed, id);
            let student = FeatureExtractor::new(config.arch, datasets[dataset].num_classes, config.norm_mode(), &mut rng)?;
            Ok(UserState {
                id,
                dataset,
                pair: FbstPair::new(student, fbst.adam),
                rng,
                losses: Vec::with_capacity(config.fles as usize),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let exchanges = strategy.communicates() && n_conn >= strategy.min_participants();
    let mut channel = if exchanges && config.transport == TransportKind::Socket {
        let (server, clients) = SocketServer::start(config.port, &fixed_connected, strategy, config.fles)?;
        Channel::Socket(server, clients)
    } else {
        Channel::InProcess
    };

    let mut ledger = CommLedger::default();
    let mut ever_connected = vec![false; config.n_tot];
    for k in 1..=config.fles {
        let connected = if config.resample_each_epoch {
            select_with_stream(config.n_tot, config.conn_ratio, config.seed, CONNECTION_STREAM - k as u64)?
        } else {
            fixed_connected.clone()
        };
        for &id in &connected {
            ever_connected[id as usize] = true;
        }

        let train_one = |u: &mut UserState| -> Result<crate::extractor::WeightBundle> {
            let (report, bundle) = local_train_epoch(&mut u.pair, &datasets[u.dataset].train, &fbst, k, &mut u.rng)
                .map_err(|e| Error::Round {
                    user: u.id,
                    epoch: k,
                    source: Box::new(e),
                })?;
            u.losses.push(report);
            Ok(bundle)
        };
        let bundles: Vec<_> = if config.parallel {
            users.par_iter_mut().map(train_one).collect::<Result<_>>()?
        } else {
            users.iter_mut().map(train_one).collect::<Result<_>>()?
        };

        if !exchanges {
            continue;
        }
        let uploads = connected
            .iter()
            .map(|&id| {
                let msg = encode_weight_message(&bundles[id as usize], k, id)?;
                ledger.record(k, id, Direction::Upload, msg.len());
                Ok((id, msg))
            })
            .collect::<Result<Vec<_>>>()?;
        let target = strategy.load_target().expect("exchanging strategy has a target");
        for (id, msg) in channel.round(strategy, k, uploads)? {
            ledger.record(k, id, Direction::Download, msg.len());
            let (bundle, _, _) = decode_weight_message(&msg)?;
            let pair = &mut users[id as usize].pair;
            let loaded = match target {
                LoadTarget::Student => pair.load_student(&bundle),
                LoadTarget::Teacher => pair.load_teacher(&bundle),
            };
            loaded.map_err(|e| Error::Round {
                user: id,
                epoch: k,
                source: Box::new(e),
            })?;
        }
    }
    channel.finish()?;

    let outcomes = users
        .into_iter()
        .map(|u| {
            let ds = &datasets[u.dataset];
            Ok(UserOutcome {
                user_id: u.id,
                dataset: ds.name.clone(),
                connected: ever_connected[u.id as usize],
                train_accuracy: evaluate(&u.pair.student, &ds.train)?,
                test_accuracy: evaluate(&u.pair.student, &ds.test)?,
                losses: u.losses,
                teacher_loaded: u.pair.teacher_initialized(),
                student: u.pair.student,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = build_report(config, n_conn, &outcomes, &ledger)?;
    Ok(RunOutcome {
        report,
        ledger,
        users: outcomes,
        n_conn,
    })
}

/// Top-1 accuracy in inference mode, evaluated in chunks.
pub fn evaluate(model: &FeatureExtractor, data: &LabeledSeries) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut predictions = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        predictions.extend(model.predict(&data.select(chunk).x)?);
    }
    top1_accuracy(&predictions, &data.labels)
}

fn build_report(
    config: &FederationConfig,
    n_conn: usize,
    users: &[UserOutcome],
    ledger: &CommLedger,
) -> Result<MetricReport> {
    let unique = {
        let mut names: Vec<&str> = users.iter().map(|u| u.dataset.as_str()).collect();
        names.sort_unstable();
        names.windows(2).all(|w| w[0] != w[1])
    };
    let rows = users
        .iter()
        .map(|u| {
            if unique {
                u.dataset.clone()
            } else {
                format!("{}#u{}", u.dataset, u.user_id)
            }
        })
        .collect();
    let values = users.iter().map(|u| vec![u.test_accuracy]).collect();
    let table = AccuracyTable::new(rows, vec![config.strategy.as_str().to_string()], values)?;
    let mut report = MetricReport::from_table(table)?;

    let fles = config.fles as usize;
    let loss_trace = (0..fles)
        .map(|k| users.iter().map(|u| u.losses[k].total).sum::<f64>() / users.len() as f64)
        .collect();
    let details = RunDetails {
        n_tot: config.n_tot,
        n_conn,
        fles: config.fles,
        seed: config.seed,
        users: users
            .iter()
            .map(|u| UserResult {
                user_id: u.user_id,
                dataset: u.dataset.clone(),
                connected: u.connected,
                train_accuracy: u.train_accuracy,
                test_accuracy: u.test_accuracy,
                final_loss: u.losses.last().map_or(f64::NAN, |l| l.total),
            })
            .collect(),
        ledger: ledger.totals(),
        loss_trace,
    };
    report
        .algorithms
        .get_mut(config.strategy.as_str())
        .expect("column present")
        .run = Some(details);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic;

    fn toy_config(strategy: StrategyKind, n_tot: usize, fles: u32) -> FederationConfig {
        FederationConfig {
            strategy,
            n_tot,
            fles,
            seed: 11,
            batch_size: 8,
            lr: 1e-3,
            arch: ArchSpec::tiny(),
            datasets: vec![
                DatasetEntry::with_path("A", "synthetic:separable"),
                DatasetEntry::with_path("B", "synthetic:cbf"),
            ],
            ..FederationConfig::default()
        }
    }

    fn toy_data() -> Vec<TimeSeriesDataset> {
        let mut a = synthetic(SyntheticKind::Separable, 12, 8, 16, 1);
        a.name = "A".into();
        let mut b = synthetic(SyntheticKind::Separable, 10, 6, 16, 2);
        b.name = "B".into();
        vec![a, b]
    }

    #[test]
    fn connection_counts() {
        assert_eq!(n_conn_for(44, 0.4).unwrap(), 18);
        assert_eq!(n_conn_for(44, 0.6).unwrap(), 26);
        assert_eq!(n_conn_for(44, 0.8).unwrap(), 35);
        assert_eq!(n_conn_for(44, 1.0).unwrap(), 44);
        assert_eq!(n_conn_for(5, 0.3).unwrap(), 2);
        assert_eq!(n_conn_for(4, 0.5).unwrap(), 2);
        assert!(n_conn_for(4, 0.1).is_err());
        assert!(n_conn_for(4, 0.0).is_err());
        assert!(n_conn_for(4, 1.5).is_err());
    }

    #[test]
    fn connected_sets() {
        assert_eq!(select_connected(6, 1.0, 3).unwrap(), (0..6).collect::<Vec<u32>>());
        let a = select_connected(44, 0.4, 7).unwrap();
        assert_eq!(a.len(), 18);
        assert_eq!(a, select_connected(44, 0.4, 7).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, select_connected(44, 0.4, 8).unwrap());
    }

    #[test]
    fn overhead_formula() {
        assert_eq!(comm_overhead(1, 1, 1), 2);
        assert_eq!(comm_overhead(5, 10, 44), 4400);
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = toy_config(StrategyKind::Fkd, 3, 2);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(FederationConfig::from_toml_str(&text).unwrap(), cfg);
        let minimal = "strategy = \"baseline\"\nn_tot = 3\n[[datasets]]\nname = \"X\"\npath = \"synthetic:cbf\"\n";
        let parsed = FederationConfig::from_toml_str(minimal).unwrap();
        assert_eq!(parsed.strategy, StrategyKind::Baseline);
        assert_eq!(parsed.epsilon, 0.9);
        assert!(FederationConfig::from_toml_str("n_tot = 2\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = toy_config(StrategyKind::Efdls, 2, 1);
        cfg.validate().unwrap();
        cfg.epsilon = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = toy_config(StrategyKind::Efdls, 2, 1);
        cfg.datasets.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = toy_config(StrategyKind::Efdls, 2, 1);
        cfg.resample_each_epoch = true;
        cfg.transport = TransportKind::Socket;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ledger_matches_overhead() {
        let cfg = toy_config(StrategyKind::Efdls, 2, 3);
        let out = run_with_datasets(&cfg, &toy_data()).unwrap();
        assert_eq!(out.ledger.entries.len(), 2 * 2 * 3);
        let bw = out.ledger.entries[0].bytes;
        assert!(out.ledger.entries.iter().all(|e| e.bytes == bw));
        assert_eq!(out.ledger.total_bytes(), comm_overhead(bw, 3, 2));
        assert!(out.ledger.is_symmetric());
        let bundle = out.users[0].student.extract_hidden_weights(0);
        assert_eq!(bw as usize, encoded_len(&bundle));
    }

    #[test]
    fn baseline_has_no_traffic_and_matches_isolated_training() {
        let cfg = toy_config(StrategyKind::Baseline, 3, 2);
        let data = toy_data();
        let out = run_with_datasets(&cfg, &data).unwrap();
        assert!(out.ledger.entries.is_empty());
        // user 2 trained alone on dataset A reproduces the federated result
        let fbst = cfg.fbst();
        let mut rng = user_rng(cfg.seed, 2);
        let student = FeatureExtractor::new(cfg.arch, 2, NormMode::Standard, &mut rng).unwrap();
        let mut pair = FbstPair::new(student, fbst.adam);
        for k in 1..=2 {
            local_train_epoch(&mut pair, &data[0].train, &fbst, k, &mut rng).unwrap();
        }
        assert_eq!(pair.student, out.users[2].student);
    }

    #[test]
    fn disconnected_users_are_isolated() {
        let data = toy_data();
        let mut cfg = toy_config(StrategyKind::Efdls, 5, 3);
        cfg.conn_ratio = 0.6;
        let fed = run_with_datasets(&cfg, &data).unwrap();
        cfg.strategy = StrategyKind::Baseline;
        let alone = run_with_datasets(&cfg, &data).unwrap();
        assert_eq!(fed.n_conn, 3);
        let mut disconnected = 0;
        for (f, a) in fed.users.iter().zip(&alone.users) {
            if !f.connected {
                disconnected += 1;
                assert_eq!(f.student, a.student);
                assert!(!f.teacher_loaded);
            } else {
                assert_ne!(f.student, a.student);
            }
        }
        assert_eq!(disconnected, 2);
        assert!(fed.ledger.entries.iter().all(|e| fed.users[e.user_id as usize].connected));
    }

    #[test]
    fn first_epoch_supervised_everywhere() {
        for strategy in StrategyKind::ALL {
            let out = run_with_datasets(&toy_config(strategy, 3, 2), &toy_data()).unwrap();
            for u in &out.users {
                assert_eq!(u.losses[0].total, u.losses[0].sup);
                assert_eq!(u.losses[0].kd, 0.0);
            }
        }
    }

    #[test]
    fn distillation_starts_after_first_download() {
        let out = run_with_datasets(&toy_config(StrategyKind::Efdls, 3, 3), &toy_data()).unwrap();
        for u in &out.users {
            assert!(u.teacher_loaded);
            assert!(u.losses[1].kd > 0.0);
        }
        let out = run_with_datasets(&toy_config(StrategyKind::Fedavg, 3, 3), &toy_data()).unwrap();
        assert!(out.users.iter().all(|u| !u.teacher_loaded && u.losses[2].kd == 0.0));
    }

    #[test]
    fn single_connected_user_trains_alone() {
        let mut cfg = toy_config(StrategyKind::Efdls, 3, 2);
        cfg.conn_ratio = 0.34;
        let out = run_with_datasets(&cfg, &toy_data()).unwrap();
        assert_eq!(out.n_conn, 1);
        assert!(out.ledger.entries.is_empty());
        assert!(out.users.iter().all(|u| !u.teacher_loaded));
    }

    #[test]
    fn fedavg_students_share_hidden_weights() {
        let out = run_with_datasets(&toy_config(StrategyKind::Fedavg, 4, 2), &toy_data()).unwrap();
        let first = out.users[0].student.extract_hidden_weights(0);
        for u in &out.users[1..] {
            assert_eq!(u.student.extract_hidden_weights(0), first);
        }
    }

    #[test]
    fn runs_are_deterministic_and_parallel_agrees() {
        let cfg = toy_config(StrategyKind::Efdls, 4, 2);
        let a = run_with_datasets(&cfg, &toy_data()).unwrap();
        let b = run_with_datasets(&cfg, &toy_data()).unwrap();
        assert_eq!(a.report, b.report);
        let par = FederationConfig {
            parallel: true,
            ..cfg.clone()
        };
        let c = run_with_datasets(&par, &toy_data()).unwrap();
        assert_eq!(a.report, c.report);
        assert_eq!(a.ledger, c.ledger);
    }

    #[test]
    fn socket_transport_matches_in_process() {
        for strategy in [StrategyKind::Efdls, StrategyKind::Fkd] {
            let cfg = toy_config(strategy, 3, 2);
            let local = run_with_datasets(&cfg, &toy_data()).unwrap();
            let sock = FederationConfig {
                transport: TransportKind::Socket,
                ..cfg
            };
            let remote = run_with_datasets(&sock, &toy_data()).unwrap();
            assert_eq!(local.report, remote.report);
            assert_eq!(local.ledger, remote.ledger);
        }
    }

    #[test]
    fn resampling_changes_participants() {
        let mut cfg = toy_config(StrategyKind::Fkd, 6, 4);
        cfg.conn_ratio = 0.5;
        cfg.resample_each_epoch = true;
        let out = run_with_datasets(&cfg, &toy_data()).unwrap();
        let per_epoch = |k: u32| {
            let mut ids: Vec<u32> = out.ledger.entries.iter().filter(|e| e.epoch == k).map(|e| e.user_id).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        };
        assert!((1..=4).all(|k| per_epoch(k).len() == 3));
        assert!((2..=4).any(|k| per_epoch(k) != per_epoch(1)));
    }

    #[test]
    fn report_lists_users() {
        let out = run_with_datasets(&toy_config(StrategyKind::Efdls, 4, 1), &toy_data()).unwrap();
        assert_eq!(out.report.table.datasets, vec!["A#u0", "B#u1", "A#u2", "B#u3"]);
        let run = out.report.algorithms["efdls"].run.as_ref().unwrap();
        assert_eq!(run.users.len(), 4);
        assert_eq!(run.ledger.total_bytes, out.ledger.total_bytes());
        assert_eq!(run.loss_trace.len(), 1);
    }

    #[test]
    fn missing_dataset_names_itself() {
        let cfg = FederationConfig {
            data_root: Some(PathBuf::from("/nonexistent")),
            datasets: vec![DatasetEntry::named("Chinatown")],
            ..toy_config(StrategyKind::Baseline, 1, 1)
        };
        let err = run_federation(&cfg).unwrap_err();
        assert!(err.to_string().contains("Chinatown"), "{err}");
    }
}
