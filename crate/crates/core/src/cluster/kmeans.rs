//! Lloyd's k-means with k-means++ seeding and best-of-restarts selection.

use crate::error::{Error, Result};
use crate::numcore::{squared_distance, DenseMatrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tolerance: f64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 100,
            restarts: 20,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: DenseMatrix,
    pub labels: Vec<usize>,
    /// `Σᵢ ‖hᵢ − μ_label(i)‖²` for the returned centroids and labels.
    pub inertia: f64,
    pub iterations: usize,
}

/// Runs `config.restarts` seeded k-means++ / Lloyd passes and keeps the lowest inertia.
pub fn kmeans_init(h: &DenseMatrix, config: &KMeansConfig, rng: &mut Rng) -> Result<KMeansResult> {
    let (n, k) = (h.rows(), config.k);
    if k < 2 {
        return Err(Error::argument(format!("k-means needs K >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::argument(format!("k-means needs at least K={k} points, got {n}")));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.restarts.max(1) {
        let seeds = plus_plus_seeds(h, k, rng);
        let (result, _) = lloyd(h, seeds, config.max_iters, config.tolerance)?;
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_seeds(h: &DenseMatrix, k: usize, rng: &mut Rng) -> DenseMatrix {
    let n = h.rows();
    let mut chosen = vec![rng.below(n)];
    let mut dist: Vec<f64> = (0..n).map(|i| squared_distance(h.row(i), h.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // rounding can land on an already chosen (zero weight) point
            while dist[pick] == 0.0 {
                pick = (pick + n - 1) % n;
            }
            pick
        } else {
            // every point coincides with a chosen seed; fall back to an unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.below(unused.len())]
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(h.row(i), h.row(next)));
        }
    }
    h.select_rows(&chosen).expect("indices in range")
}

fn assign(h: &DenseMatrix, centroids: &DenseMatrix) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(h.rows());
    let mut dists = Vec::with_capacity(h.rows());
    for r in h.row_iter() {
        let mut best = (0, f64::INFINITY);
        for j in 0..centroids.rows() {
            let d = squared_distance(r, centroids.row(j));
            if d < best.1 {
                best = (j, d);
            }
        }
        labels.push(best.0);
        dists.push(best.1);
    }
    (labels, dists)
}

/// Lloyd iterations from the given initial centroids.
///
/// Returns the result and the inertia after every assignment step. A cluster
/// that loses all its points takes over the point farthest from its current
/// centroid (drawn from clusters that can spare one).
pub fn lloyd(
    h: &DenseMatrix,
    init: DenseMatrix,
    max_iters: usize,
    tolerance: f64,
) -> Result<(KMeansResult, Vec<f64>)> {
    if init.cols() != h.cols() {
        return Err(Error::shape(format!(
            "initial centroids have width {}, data has {}",
            init.cols(),
            h.cols()
        )));
    }
    let k = init.rows();
    let mut centroids = init;
    let (mut labels, mut dists) = assign(h, &centroids);
    let mut inertia: f64 = dists.iter().sum();
    let mut history = vec![inertia];
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        fill_empty_clusters(k, &mut labels, &mut dists);
        let mut sums = DenseMatrix::zeros(k, h.cols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(h.row(i)) {
                *s += v;
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            for s in sums.row_mut(j) {
                *s /= c as f64;
            }
        }
        centroids = sums;
        let (new_labels, new_dists) = assign(h, &centroids);
        let new_inertia: f64 = new_dists.iter().sum();
        history.push(new_inertia);
        let converged = inertia - new_inertia <= tolerance * inertia;
        labels = new_labels;
        dists = new_dists;
        inertia = new_inertia;
        if converged {
            break;
        }
    }
    // ties can still empty a cluster on the last assignment; park its centroid on a donor point
    for (i, j) in fill_empty_clusters(k, &mut labels, &mut dists) {
        centroids.row_mut(j).copy_from_slice(h.row(i));
    }
    inertia = dists.iter().sum();
    Ok((
        KMeansResult {
            centroids,
            labels,
            inertia,
            iterations,
        },
        history,
    ))
}

/// Moves the farthest spare point into each empty cluster; returns `(point, cluster)` moves.
fn fill_empty_clusters(k: usize, labels: &mut [usize], dists: &mut [f64]) -> Vec<(usize, usize)> {
    let mut moves = Vec::new();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        if let Some(i) = donor {
            counts[labels[i]] -= 1;
            labels[i] = j;
            dists[i] = 0.0;
            counts[j] = 1;
            moves.push((i, j));
        }
    }
    moves
}
