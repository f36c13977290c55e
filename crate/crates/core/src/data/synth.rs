use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numcore::{l2_norm, DenseMatrix, Rng};

/// Parameters of an isotropic Gaussian mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub k: usize,
    pub per_cluster: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
}

impl BlobSpec {
    /// Four well separated clusters: 200 points each in 16 dimensions, centers 10σ apart.
    pub fn standard() -> Self {
        Self {
            k: 4,
            per_cluster: 200,
            dim: 16,
            separation: 10.0,
            sigma: 1.0,
        }
    }

    /// Same layout with centers only 3σ apart.
    pub fn overlapping() -> Self {
        Self {
            separation: 3.0,
            ..Self::standard()
        }
    }

    pub fn generate(&self, rng: &mut Rng) -> Result<Dataset> {
        synth_blobs(self.k, self.per_cluster, self.dim, self.separation, self.sigma, rng)
    }
}

/// Gram-Schmidt on Gaussian draws; `count <= dim`.
fn orthonormal_directions(count: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (x, c) in v.iter_mut().zip(b) {
                *x -= proj * c;
            }
        }
        let norm = l2_norm(&v);
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// K isotropic Gaussians whose centers are exactly `separation` apart.
///
/// With `dim >= K` the centers sit on scaled orthonormal directions; otherwise
/// they are spaced `separation` apart along one random direction. Samples are
/// class-major.
pub fn synth_blobs(k: usize, per_cluster: usize, dim: usize, separation: f64, sigma: f64, rng: &mut Rng) -> Result<Dataset> {
    if k < 2 || per_cluster < 1 {
        return Err(Error::argument(format!("blobs need K >= 2 and per_cluster >= 1, got {k} and {per_cluster}")));
    }
    if dim < 1 {
        return Err(Error::argument("blobs need at least one dimension"));
    }
    if !(separation >= 0.0 && sigma >= 0.0 && separation.is_finite() && sigma.is_finite()) {
        return Err(Error::argument("separation and sigma must be finite and non-negative"));
    }
    let centers: Vec<Vec<f64>> = if dim >= k {
        orthonormal_directions(k, dim, rng)
            .into_iter()
            .map(|u| u.into_iter().map(|x| x * separation * FRAC_1_SQRT_2).collect())
            .collect()
    } else {
        let u = &orthonormal_directions(1, dim, rng)[0];
        (0..k).map(|c| u.iter().map(|x| x * separation * c as f64).collect()).collect()
    };
    let n = k * per_cluster;
    let mut samples = DenseMatrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per_cluster {
            for (v, m) in samples.row_mut(c * per_cluster + i).iter_mut().zip(center) {
                *v = m + sigma * rng.normal();
            }
            labels.push(c);
        }
    }
    Dataset::vectors(samples, Some(labels))
}

/// Concentric 2-D rings with radii `1, 2, …, K` and Gaussian radial noise.
pub fn synth_rings(k: usize, per_cluster: usize, noise: f64, rng: &mut Rng) -> Result<Dataset> {
    if k < 2 || per_cluster < 1 {
        return Err(Error::argument(format!("rings need K >= 2 and per_cluster >= 1, got {k} and {per_cluster}")));
    }
    let mut samples = DenseMatrix::zeros(k * per_cluster, 2);
    let mut labels = Vec::with_capacity(k * per_cluster);
    for c in 0..k {
        for i in 0..per_cluster {
            let theta = rng.uniform() * TAU;
            let r = (c + 1) as f64 + noise * rng.normal();
            samples.row_mut(c * per_cluster + i).copy_from_slice(&[r * theta.cos(), r * theta.sin()]);
            labels.push(c);
        }
    }
    Dataset::vectors(samples, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{kmeans_init, KMeansConfig};
    use crate::metrics::{accuracy, nmi};
    use crate::numcore::squared_distance;

    #[test]
    fn zero_variance_blobs_collapse_onto_centers() {
        let d = synth_blobs(3, 5, 4, 10.0, 0.0, &mut Rng::new(1)).unwrap();
        let s = d.samples();
        for c in 0..3 {
            for i in 1..5 {
                assert_eq!(s.row(c * 5 + i), s.row(c * 5));
            }
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let dist = squared_distance(s.row(a * 5), s.row(b * 5)).sqrt();
                assert!((dist - 10.0).abs() < 1e-9, "{dist}");
            }
        }
    }

    #[test]
    fn low_dimensional_blobs_keep_separation() {
        let d = synth_blobs(4, 1, 2, 5.0, 0.0, &mut Rng::new(2)).unwrap();
        let s = d.samples();
        for a in 0..4 {
            for b in a + 1..4 {
                assert!(squared_distance(s.row(a), s.row(b)).sqrt() >= 5.0 - 1e-9);
            }
        }
    }

    #[test]
    fn labels_are_balanced() {
        let d = BlobSpec::standard().generate(&mut Rng::new(3)).unwrap();
        assert_eq!((d.len(), d.dim()), (800, 16));
        let mut counts = [0; 4];
        for &l in d.labels().unwrap() {
            counts[l] += 1;
        }
        assert_eq!(counts, [200; 4]);
    }

    #[test]
    fn kmeans_recovers_separated_pair() {
        let mut rng = Rng::new(4);
        let d = synth_blobs(2, 50, 8, 10.0, 0.1, &mut rng).unwrap();
        let r = kmeans_init(d.samples(), &KMeansConfig::new(2), &mut rng).unwrap();
        assert_eq!(accuracy(&r.labels, d.labels().unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn rings() {
        let mut rng = Rng::new(5);
        let d = synth_rings(2, 100, 0.0, &mut rng).unwrap();
        for (row, &l) in d.samples().row_iter().zip(d.labels().unwrap()) {
            assert!((l2_norm(row) - (l + 1) as f64).abs() < 1e-12);
        }
        let noisy = synth_rings(2, 200, 0.05, &mut rng).unwrap();
        let r = kmeans_init(noisy.samples(), &KMeansConfig::new(2), &mut rng).unwrap();
        assert!(nmi(&r.labels, noisy.labels().unwrap()).unwrap() < 0.2);
        assert!(synth_rings(1, 5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn invalid_blob_arguments() {
        let mut rng = Rng::new(0);
        assert!(synth_blobs(1, 5, 2, 1.0, 1.0, &mut rng).is_err());
        assert!(synth_blobs(2, 0, 2, 1.0, 1.0, &mut rng).is_err());
        assert!(synth_blobs(2, 5, 0, 1.0, 1.0, &mut rng).is_err());
    }
}
