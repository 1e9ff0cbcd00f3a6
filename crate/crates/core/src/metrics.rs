//! Clustering evaluation: Hungarian-matched accuracy, NMI (geometric-mean
//! normalization) and the adjusted Rand index.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{MsrlError, Result};

/// Counts of (predicted, true) label pairs after compacting both label sets to `0..k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[p][t]`
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(MsrlError::shape("metrics labels", truth.len(), pred.len()));
        }
        if pred.is_empty() {
            return Err(MsrlError::InvalidArgument("empty label vectors".into()));
        }
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let k = self.counts.first().map_or(0, Vec::len);
        (0..k).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn–Munkres with
/// potentials, O(k³)). Returns `assignment[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let k = cost.len();
    if k == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a sentinel.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for col in 1..=k {
                if !used[col] {
                    let cur = cost[r - 1][col - 1] - u[r] - v[col];
                    if cur < min_to[col] {
                        min_to[col] = cur;
                        way[col] = col0;
                    }
                    if min_to[col] < delta {
                        delta = min_to[col];
                        col1 = col;
                    }
                }
            }
            for col in 0..=k {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; k];
    for col in 1..=k {
        if owner[col] != 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Fraction of samples correctly labelled under the best one-to-one mapping
/// from predicted to true clusters.
pub fn hungarian_acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let kp = table.counts.len();
    let kt = table.counts[0].len();
    let k = kp.max(kt);
    let count = |i: usize, j: usize| -> i64 {
        if i < kp && j < kt {
            table.counts[i][j] as i64
        } else {
            0
        }
    };
    let max = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| count(i, j))
        .max()
        .unwrap_or(0);
    let cost: Vec<Vec<i64>> = (0..k)
        .map(|i| (0..k).map(|j| max - count(i, j)).collect())
        .collect();
    let matched: i64 = min_cost_assignment(&cost)
        .into_iter()
        .enumerate()
        .map(|(i, j)| count(i, j))
        .sum();
    Ok(matched as f64 / table.n as f64)
}

fn entropy_of_counts(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(pred; truth) / sqrt(H(pred)·H(truth))`.
///
/// When either partition has a single cluster the ratio is 0/0: returns 1 if
/// both do, 0 otherwise.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let hp = entropy_of_counts(&rows, n);
    let ht = entropy_of_counts(&cols, n);
    if rows.len() == 1 || cols.len() == 1 {
        return Ok(if rows.len() == 1 && cols.len() == 1 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, r) in table.counts.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> i128 {
    let c = c as i128;
    c * (c - 1) / 2
}

/// Adjusted Rand index with integer pair counting up to the final division.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(MsrlError::InvalidArgument("ARI needs at least 2 samples".into()));
    }
    let table = ContingencyTable::new(pred, truth)?;
    let index: i128 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_p: i128 = table.row_sums().into_iter().map(pairs).sum();
    let sum_t: i128 = table.col_sums().into_iter().map(pairs).sum();
    let total = pairs(table.n);
    // (index − sa·sb/total) / ((sa+sb)/2 − sa·sb/total), scaled by 2·total
    let num = 2 * index * total - 2 * sum_p * sum_t;
    let den = (sum_p + sum_t) * total - 2 * sum_p * sum_t;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClusteringScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

impl ClusteringScores {
    pub fn compute(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Self {
            acc: hungarian_acc(pred, truth)?,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
        })
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        format!("metric,value\nACC,{}\nNMI,{}\nARI,{}\n", self.acc, self.nmi, self.ari)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>10}", "metric", "value");
        for (k, v) in [("ACC", self.acc), ("NMI", self.nmi), ("ARI", self.ari)] {
            let _ = writeln!(s, "{k:<8}{v:>10.4}");
        }
        s
    }
}
