//! Per-round aggregation rules.
//!
//! New comparison methods plug in as further [`StrategyKind`] variants with an
//! arm in [`apply_round`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dbwm::{self, WeightTable};
use crate::error::{Error, Result};
use crate::extractor::{BundleEntry, WeightBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Independent single-task training, nothing is shared.
    Baseline,
    /// Students are overwritten with the mean hidden weights.
    Fedavg,
    /// Teachers are loaded with the mean hidden weights.
    Fkd,
    /// Teachers are loaded with the nearest user's hidden weights.
    Efdls,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Baseline,
        StrategyKind::Fedavg,
        StrategyKind::Fkd,
        StrategyKind::Efdls,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Baseline => "baseline",
            StrategyKind::Fedavg => "fedavg",
            StrategyKind::Fkd => "fkd",
            StrategyKind::Efdls => "efdls",
        }
    }

    /// Whether the strategy exchanges weights with the server at all.
    pub fn communicates(self) -> bool {
        self != StrategyKind::Baseline
    }

    /// Model that received bundles are loaded into.
    pub fn load_target(self) -> Option<LoadTarget> {
        match self {
            StrategyKind::Baseline => None,
            StrategyKind::Fedavg => Some(LoadTarget::Student),
            StrategyKind::Fkd | StrategyKind::Efdls => Some(LoadTarget::Teacher),
        }
    }

    /// Smallest connected-user count for which a round produces downloads.
    pub fn min_participants(self) -> usize {
        match self {
            StrategyKind::Efdls => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}; expected baseline, fedavg, fkd or efdls")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadTarget {
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadInstruction {
    pub user_id: u32,
    pub target: LoadTarget,
    pub bundle: WeightBundle,
}

/// Elementwise mean of every entry, running statistics included.
pub fn fedavg_aggregate(table: &WeightTable) -> Result<WeightBundle> {
    let mut bundles = table.bundles();
    let first = bundles.next().ok_or(Error::InsufficientUsers(0))?;
    let mut sums: Vec<Vec<f64>> = first.entries.iter().map(|e| e.tensor.data().to_vec()).collect();
    for b in bundles {
        first.check_compatible(b)?;
        for (acc, e) in sums.iter_mut().zip(&b.entries) {
            for (a, v) in acc.iter_mut().zip(e.tensor.data()) {
                *a += v;
            }
        }
    }
    let n = table.len() as f64;
    let entries = first
        .entries
        .iter()
        .zip(sums)
        .map(|(e, mut s)| {
            s.iter_mut().for_each(|v| *v /= n);
            let tensor = crate::tensor::Tensor::from_vec(e.tensor.shape(), s).expect("shape preserved");
            BundleEntry::new(e.tag, tensor)
        })
        .collect();
    Ok(WeightBundle::new(table.epoch, entries))
}

/// What each user loads after the server has seen the whole table.
pub fn apply_round(strategy: StrategyKind, table: &WeightTable) -> Result<Vec<LoadInstruction>> {
    let broadcast = |target| -> Result<Vec<LoadInstruction>> {
        let mean = fedavg_aggregate(table)?;
        Ok(table
            .entries
            .iter()
            .map(|(id, _)| LoadInstruction {
                user_id: *id,
                target,
                bundle: mean.clone(),
            })
            .collect())
    };
    match strategy {
        StrategyKind::Baseline => Ok(Vec::new()),
        StrategyKind::Fedavg | StrategyKind::Fkd => broadcast(strategy.load_target().expect("sharing strategy")),
        StrategyKind::Efdls => {
            let (_, dispatch) = dbwm::run_matching(table)?;
            Ok(dispatch
                .into_iter()
                .map(|(user_id, bundle)| LoadInstruction {
                    user_id,
                    target: LoadTarget::Teacher,
                    bundle,
                })
                .collect())
        }
    }
}
