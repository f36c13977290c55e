//! Soft and hard cluster assignment, the sharpened target distribution,
//! k-means initialization and centroid geometry.

mod kmeans;

pub use kmeans::{kmeans_init, lloyd, KMeansConfig, KMeansResult};

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Tape, Var, EPS};

/// Tolerance on row sums accepted by [`AssignmentMatrix::new`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-stochastic N×K matrix of cluster probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix(DenseMatrix);

impl AssignmentMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if m.cols() == 0 {
            return Err(Error::shape("assignment matrix needs at least one cluster"));
        }
        for (i, r) in m.row_iter().enumerate() {
            if r.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::argument(format!("row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::argument(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(DenseMatrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn clusters(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

fn check_widths(h: &DenseMatrix, centroids: &DenseMatrix) -> Result<()> {
    if h.cols() != centroids.cols() {
        return Err(Error::shape(format!(
            "embeddings are {}x{} but centroids are {}x{}",
            h.rows(),
            h.cols(),
            centroids.rows(),
            centroids.cols()
        )));
    }
    Ok(())
}

fn check_dof(dof: f64) -> Result<()> {
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(Error::argument(format!("degrees of freedom must be positive, got {dof}")));
    }
    Ok(())
}

/// Student-t soft assignment `q_ij ∝ (1 + ‖hᵢ − μⱼ‖²/ν)^(−(ν+1)/2)`.
///
/// Evaluated in the log domain and normalized with a max shift.
pub fn soft_assign(h: &DenseMatrix, centroids: &DenseMatrix, dof: f64) -> Result<AssignmentMatrix> {
    check_widths(h, centroids)?;
    check_dof(dof)?;
    let power = -(dof + 1.0) / 2.0;
    let k = centroids.rows();
    let mut out = DenseMatrix::zeros(h.rows(), k);
    let mut logits = vec![0.0; k];
    for i in 0..h.rows() {
        for (j, l) in logits.iter_mut().enumerate() {
            let d = crate::numcore::squared_distance(h.row(i), centroids.row(j));
            *l = power * (d / dof).ln_1p();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = out.row_mut(i);
        let mut total = 0.0;
        for (o, l) in row.iter_mut().zip(&logits) {
            *o = (l - max).exp();
            total += *o;
        }
        for o in row.iter_mut() {
            *o /= total;
        }
    }
    Ok(AssignmentMatrix(out))
}

/// Tape-tracked Student-t soft assignment; gradients reach both `h` and `centroids`.
pub fn soft_assign_tape(tape: &mut Tape, h: Var, centroids: Var, dof: f64) -> Result<Var> {
    check_widths(tape.value(h), tape.value(centroids))?;
    check_dof(dof)?;
    let d = tape.squared_distances(h, centroids)?;
    let scaled = tape.scale(d, 1.0 / dof);
    let base = tape.add_scalar(scaled, 1.0);
    let kernel = tape.powf(base, -(dof + 1.0) / 2.0);
    let totals = tape.row_sum(kernel);
    tape.div_column(kernel, totals)
}

/// Sharpened target `p_ij = (q_ij²/f_j) / Σ_j' (q_ij'²/f_j')` with `f_j = Σ_i q_ij`
/// taken over the rows supplied. Plain values: the target carries no gradient.
pub fn compute_target(q: &AssignmentMatrix) -> AssignmentMatrix {
    let m = q.matrix();
    let freq: Vec<f64> = m.col_sums().into_iter().map(|f| f.max(EPS)).collect();
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        for (j, o) in row.iter_mut().enumerate() {
            let v = m.get(i, j);
            *o = v * v / freq[j];
        }
        let total: f64 = row.iter().sum::<f64>().max(EPS);
        for o in row.iter_mut() {
            *o /= total;
        }
    }
    AssignmentMatrix(out)
}

/// Per-row argmax; ties go to the lowest cluster index.
pub fn hard_assign(q: &AssignmentMatrix) -> Vec<usize> {
    argmax_rows(q.matrix())
}

pub(crate) fn argmax_rows(m: &DenseMatrix) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate().skip(1) {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Index of the nearest centroid for every row, lowest index on ties.
pub fn nearest_centroid(h: &DenseMatrix, centroids: &DenseMatrix) -> Result<Vec<usize>> {
    check_widths(h, centroids)?;
    Ok(h.row_iter()
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for j in 0..centroids.rows() {
                let d = crate::numcore::squared_distance(r, centroids.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect())
}

/// Mean pairwise Euclidean distance between centroid rows.
pub fn inter_cluster_distance(centroids: &DenseMatrix) -> Result<f64> {
    let k = centroids.rows();
    if k < 2 {
        return Err(Error::argument(format!("inter-cluster distance needs K >= 2, got {k}")));
    }
    let mut total = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            total += crate::numcore::squared_distance(centroids.row(a), centroids.row(b)).sqrt();
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// Shannon entropy of a probability row, natural log, `0 ln 0 = 0`.
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}
