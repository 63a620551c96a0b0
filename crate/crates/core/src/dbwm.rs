//! Server-side matching of users by squared weight distance.
//!
//! Every connected user uploads a [`WeightBundle`]; each user is then paired
//! with the other user whose learnable hidden weights are nearest, and gets a
//! private copy of that partner's bundle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extractor::WeightBundle;

/// Bundles uploaded for one round, in connected-user order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub epoch: u32,
    pub entries: Vec<(u32, WeightBundle)>,
}

impl WeightTable {
    pub fn new(epoch: u32) -> Self {
        WeightTable {
            epoch,
            entries: Vec::new(),
        }
    }

    /// Appends a bundle; it must match the shapes already present.
    pub fn insert(&mut self, user_id: u32, bundle: WeightBundle) -> Result<()> {
        if self.entries.iter().any(|(id, _)| *id == user_id) {
            return Err(Error::State(format!("user {user_id} uploaded twice in epoch {}", self.epoch)));
        }
        if let Some((_, first)) = self.entries.first() {
            first.check_compatible(&bundle)?;
        }
        self.entries.push((user_id, bundle));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bundles(&self) -> impl Iterator<Item = &WeightBundle> {
        self.entries.iter().map(|(_, b)| b)
    }
}

/// Symmetric `N x N` distances; the diagonal is never read.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = vec![f64::NAN; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        DistanceMatrix { n, values }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (i != j).then(|| self.values[i * self.n + j])
    }
}

/// `ids[i]` is the partner index (into the table) of user `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchAssignment {
    pub ids: Vec<usize>,
}

/// Squared L2 distance over learnable entries; running statistics are ignored.
pub fn bundle_distance(a: &WeightBundle, b: &WeightBundle) -> Result<f64> {
    a.check_compatible(b)?;
    let mut acc = 0.0f64;
    for (x, y) in a.learnable().zip(b.learnable()) {
        acc += x
            .tensor
            .data()
            .iter()
            .zip(y.tensor.data())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
    }
    Ok(acc)
}

pub fn pairwise_distances(table: &WeightTable) -> Result<DistanceMatrix> {
    let n = table.len();
    if n < 2 {
        return Err(Error::InsufficientUsers(n));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let cells: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| bundle_distance(&table.entries[i].1, &table.entries[j].1))
        .collect::<Result<_>>()?;
    let mut it = cells.into_iter();
    Ok(DistanceMatrix::from_fn(n, |_, _| it.next().expect("one cell per pair")))
}

/// Nearest other user for every row; ties go to the lowest index.
pub fn match_partners(d: &DistanceMatrix) -> Result<MatchAssignment> {
    let n = d.size();
    if n < 2 {
        return Err(Error::InsufficientUsers(n));
    }
    let ids = (0..n)
        .map(|i| {
            let mut best = if i == 0 { 1 } else { 0 };
            let mut best_d = d.get(i, best).expect("off-diagonal");
            for j in best + 1..n {
                if let Some(dj) = d.get(i, j) {
                    if dj < best_d {
                        best = j;
                        best_d = dj;
                    }
                }
            }
            best
        })
        .collect();
    Ok(MatchAssignment { ids })
}

/// Pairs each table user with a deep copy of its partner's bundle.
pub fn dispatch_matched(table: &WeightTable, assignment: &MatchAssignment) -> Result<Vec<(u32, WeightBundle)>> {
    if assignment.ids.len() != table.len() {
        return Err(Error::State(format!(
            "assignment has {} entries for a table of {}",
            assignment.ids.len(),
            table.len()
        )));
    }
    assignment
        .ids
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            if j == i || j >= table.len() {
                return Err(Error::State(format!("user index {i} assigned invalid partner {j}")));
            }
            Ok((table.entries[i].0, table.entries[j].1.clone()))
        })
        .collect()
}

/// Table to dispatch list in one call.
pub fn run_matching(table: &WeightTable) -> Result<(MatchAssignment, Vec<(u32, WeightBundle)>)> {
    let d = pairwise_distances(table)?;
    let assignment = match_partners(&d)?;
    let dispatch = dispatch_matched(table, &assignment)?;
    Ok((assignment, dispatch))
}
