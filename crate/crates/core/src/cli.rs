//! Command-line front end.
//!
//! Every run directory holds `effective-config.toml`, `results.csv` and
//! `summary.json`; sweeps add `sweep.csv` and one run directory per setting.
//! Existing non-empty output directories are refused unless `--force` is given.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::extractor::{ArchSpec, FeatureExtractor};
use crate::fbst::Objective;
use crate::federation::{run_federation, FederationConfig, RunOutcome, TransportKind};
use crate::metrics::{emit_report, AccuracyTable, MetricReport};
use crate::nncore::{finite_diff_gradcheck, finite_diff_gradcheck_steps, NormMode};
use crate::strategies::StrategyKind;
use crate::tensor::Tensor;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective-config.toml";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "efdls", version, about = "Federated feature distillation for time-series classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one federation and write its report.
    Run(RunArgs),
    /// One run per connection ratio; writes sweep.csv.
    SweepRatio {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
    },
    /// One run per supervised-loss weight; writes sweep.csv.
    SweepEpsilon {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
    },
    /// Recompute win/tie/lose/best, MeanACC and AVG_rank from an accuracy CSV.
    EvalTable {
        table: PathBuf,
        /// Also write results.csv and summary.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference check of the extractor gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Check the full-size network on a strided parameter subset.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub fles: Option<u32>,
    /// Exchange weights over a local TCP socket on this port (0 = any).
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub force: bool,
}

impl clap::ValueEnum for StrategyKind {
    fn value_variants<'a>() -> &'a [Self] {
        &StrategyKind::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

impl RunArgs {
    /// Config file with command-line overrides applied.
    pub fn effective_config(&self) -> Result<FederationConfig> {
        let mut cfg = FederationConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(r) = self.ratio {
            cfg.conn_ratio = r;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(f) = self.fles {
            cfg.fles = f;
        }
        if let Some(p) = self.port {
            cfg.port = p;
            cfg.transport = TransportKind::Socket;
        }
        if self.parallel {
            cfg.parallel = true;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        // pin the dataset root so the persisted config is self-contained
        cfg.data_root = Some(cfg.resolved_data_root());
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Creates `dir`, refusing a non-empty existing one unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn output_dir(cfg: &FederationConfig) -> Result<PathBuf> {
    cfg.output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

/// Runs `cfg` and writes the config, results and summary into `dir`.
pub fn execute_run(cfg: &FederationConfig, dir: &Path) -> Result<RunOutcome> {
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    let outcome = run_federation(cfg)?;
    emit_report(&outcome.report, dir)?;
    Ok(outcome)
}

fn run_summary_line(cfg: &FederationConfig, outcome: &RunOutcome) -> String {
    let summary = &outcome.report.algorithms[cfg.strategy.as_str()];
    format!(
        "{}: n_tot={} n_conn={} fles={} mean_acc={:.4} traffic={} bytes",
        cfg.strategy,
        cfg.n_tot,
        outcome.n_conn,
        cfg.fles,
        summary.mean_acc,
        outcome.ledger.total_bytes()
    )
}

#[derive(Debug, Clone, Copy)]
enum SweepKind {
    Ratio,
    Epsilon,
}

fn sweep(args: &RunArgs, kind: SweepKind, values: &[f64]) -> Result<String> {
    let base = args.effective_config()?;
    let root = output_dir(&base)?;
    prepare_output_dir(&root, args.force)?;
    let (label, column) = match kind {
        SweepKind::Ratio => ("ratio", "conn_ratio"),
        SweepKind::Epsilon => ("epsilon", "epsilon"),
    };
    let mut w = csv::Writer::from_path(root.join(SWEEP_FILE))?;
    w.write_record([column, "n_tot", "n_conn", "mean_acc", "final_loss", "total_bytes", "status"])?;
    let mut log = String::new();
    let mut failures = 0;
    for &v in values {
        let mut cfg = base.clone();
        match kind {
            SweepKind::Ratio => cfg.conn_ratio = v,
            SweepKind::Epsilon => cfg.epsilon = v,
        }
        let dir = root.join(format!("{label}-{v}"));
        cfg.output_dir = Some(dir.clone());
        let result = cfg
            .validate()
            .and_then(|_| prepare_output_dir(&dir, args.force))
            .and_then(|_| execute_run(&cfg, &dir));
        match result {
            Ok(outcome) => {
                let s = &outcome.report.algorithms[cfg.strategy.as_str()];
                let final_loss = s.run.as_ref().and_then(|r| r.loss_trace.last().copied()).unwrap_or(f64::NAN);
                w.write_record([
                    v.to_string(),
                    cfg.n_tot.to_string(),
                    outcome.n_conn.to_string(),
                    s.mean_acc.to_string(),
                    final_loss.to_string(),
                    outcome.ledger.total_bytes().to_string(),
                    "ok".to_string(),
                ])?;
                let _ = writeln!(log, "{label}={v}: {}", run_summary_line(&cfg, &outcome));
            }
            Err(e) => {
                failures += 1;
                let n_conn = cfg.n_conn().map(|n| n.to_string()).unwrap_or_default();
                w.write_record([
                    v.to_string(),
                    cfg.n_tot.to_string(),
                    n_conn,
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("error: {e}"),
                ])?;
                let _ = writeln!(log, "{label}={v}: failed: {e}");
            }
        }
    }
    w.flush().map_err(|e| Error::io(root.join(SWEEP_FILE), e))?;
    if failures > 0 {
        return Err(Error::Config(format!("{log}{failures} of {} settings failed", values.len())));
    }
    Ok(log)
}

fn eval_table(table: &Path, out: Option<&Path>, force: bool) -> Result<String> {
    let t = AccuracyTable::from_csv(table)?;
    let single = t.algorithms.len() < 2;
    let report = MetricReport::from_table(t)?;
    if let Some(dir) = out {
        prepare_output_dir(dir, force)?;
        emit_report(&report, dir)?;
    }
    let rendered = report.render();
    if single {
        return Err(Error::Metrics(format!(
            "{rendered}win/tie/lose and AVG_rank are undefined for a single algorithm"
        )));
    }
    Ok(rendered)
}

/// At full width some probe always lands within a step of a ReLU kink, so
/// misses at the first step are retried with the others.
pub const FULL_WIDTH_STEPS: [f64; 3] = [1e-6, 1e-5, 1e-7];

/// Worst relative error over `seeds` random models, inputs and both objectives.
pub fn gradcheck_sweep(seeds: u64, full: bool) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    let mut log = String::new();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (arch, batch, len, stride) = if full {
            (ArchSpec::default(), 2, 12, 997)
        } else {
            (ArchSpec::tiny(), 3, 10, 1)
        };
        let classes = 3;
        let x = Tensor::uniform(&[batch, 1, len], 1.0, &mut rng);
        let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
        let mut model = FeatureExtractor::new(arch, classes, NormMode::Standard, &mut rng)?;
        // a teacher near the student, as after matching, keeps the KD term and
        // its rounding floor small
        let mut near = model.clone();
        for p in near.params_mut() {
            p.value.add_assign(&Tensor::uniform(p.value.shape(), 0.02, &mut rng))?;
        }
        let teacher = near.infer(&x)?;
        let step = 1e-6;
        let objectives = [
            ("cross-entropy", Objective::Supervised { labels: labels.clone() }),
            (
                "combined",
                Objective::Distilled {
                    labels,
                    teacher,
                    epsilon: 0.9,
                },
            ),
        ];
        for (name, objective) in objectives {
            let report = if full {
                finite_diff_gradcheck_steps(&mut model, &x, &objective, &FULL_WIDTH_STEPS, stride, 1e-5)?
            } else {
                finite_diff_gradcheck(&mut model, &x, &objective, step)?
            };
            worst = worst.max(report.max_relative_error);
            let _ = writeln!(
                log,
                "seed {seed:>3} {name:<13} checked {:>6} max relative error {:.3e}",
                report.checked, report.max_relative_error
            );
        }
    }
    Ok((worst, log))
}

/// Executes a parsed command and returns what should be printed.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.effective_config()?;
            let dir = output_dir(&cfg)?;
            prepare_output_dir(&dir, args.force)?;
            let outcome = execute_run(&cfg, &dir)?;
            Ok(format!("{}\nwrote {}\n", run_summary_line(&cfg, &outcome), dir.display()))
        }
        Command::SweepRatio { run, ratios } => sweep(&run, SweepKind::Ratio, &ratios),
        Command::SweepEpsilon { run, epsilons } => sweep(&run, SweepKind::Epsilon, &epsilons),
        Command::EvalTable { table, out, force } => eval_table(&table, out.as_deref(), force),
        Command::Gradcheck { seeds, full, tolerance } => {
            let (worst, log) = gradcheck_sweep(seeds, full)?;
            if worst < tolerance {
                Ok(format!("{log}ok: worst relative error {worst:.3e} < {tolerance:e}\n"))
            } else {
                Err(Error::CheckFailed(format!(
                    "{log}gradient check failed: worst relative error {worst:.3e} >= {tolerance:e}"
                )))
            }
        }
    }
}
