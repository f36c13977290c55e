//! External clustering indices: NMI, best-map accuracy and ARI.

mod hungarian;

pub use hungarian::hungarian;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Co-occurrence counts of predicted clusters (rows) against true classes (cols).
///
/// Label values are compacted to dense indices in ascending order, so gaps in
/// the label alphabet do not create empty rows or columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        ids.entry(l).or_insert(0usize);
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::argument(format!(
                "label vectors differ in length: {} vs {}",
                pred.len(),
                truth.len()
            )));
        }
        let (p, rows) = compact(pred);
        let (t, cols) = compact(truth);
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&i, &j) in p.iter().zip(&t) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: pred.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn classes(&self) -> usize {
        self.col_sums.len()
    }
}

fn entropy(marginal: &[u64], n: f64) -> f64 {
    marginal
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn non_empty(pred: &[usize]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::argument("metrics need at least one label"));
    }
    Ok(())
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    non_empty(pred)?;
    let n = table.total as f64;
    let (hp, ht) = (entropy(&table.row_sums, n), entropy(&table.col_sums, n));
    if hp == 0.0 && ht == 0.0 {
        // both partitions are a single block, hence identical
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (table.row_sums[i] as f64 * table.col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((mi / ((hp + ht) / 2.0)).clamp(0.0, 1.0))
}

/// Fraction of samples matched under the best one-to-one cluster→class map.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    non_empty(pred)?;
    let size = table.clusters().max(table.classes());
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| -(table.counts.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) as f64))
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost)?;
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, &j)| table.counts.get(i).and_then(|r| r.get(j)).copied())
        .sum();
    Ok(matched as f64 / table.total as f64)
}

fn pairs(c: u64) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index. When the expected index equals its maximum (both
/// partitions all singletons, or both a single block) the value is 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.total < 2 {
        return Err(Error::argument("ARI needs at least two samples"));
    }
    let index: f64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = table.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: f64 = table.col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = a * b / pairs(table.total);
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
}

/// All three indices at once. ARI of a single sample is reported as 1.
pub fn score(pred: &[usize], truth: &[usize]) -> Result<Scores> {
    Ok(Scores {
        nmi: nmi(pred, truth)?,
        acc: accuracy(pred, truth)?,
        ari: if pred.len() < 2 { 1.0 } else { ari(pred, truth)? },
    })
}
