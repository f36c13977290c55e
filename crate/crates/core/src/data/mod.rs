//! Datasets, synthetic benchmarks, file formats and minibatch planning.

mod io;
mod synth;

pub use io::{load_dataset, save_binary, DataFormat};
pub use synth::{synth_blobs, synth_rings, BlobSpec};

use crate::augment::{route_batch, Routing, SampleShape, TransformSpec};
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Rng};

/// Samples as rows plus optional ground-truth labels (used only for evaluation).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: DenseMatrix,
    labels: Option<Vec<usize>>,
    shape: SampleShape,
}

impl Dataset {
    pub fn new(samples: DenseMatrix, labels: Option<Vec<usize>>, shape: SampleShape) -> Result<Self> {
        if shape.len() != samples.cols() {
            return Err(Error::shape(format!(
                "sample layout {shape:?} needs {} columns, data has {}",
                shape.len(),
                samples.cols()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::shape(format!("{} labels for {} samples", l.len(), samples.rows())));
            }
        }
        if !samples.is_finite() {
            return Err(Error::argument("dataset contains non-finite values"));
        }
        Ok(Self { samples, labels, shape })
    }

    /// Plain feature vectors.
    pub fn vectors(samples: DenseMatrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let d = samples.cols();
        Self::new(samples, labels, SampleShape::Vector(d))
    }

    pub fn samples(&self) -> &DenseMatrix {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn shape(&self) -> SampleShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// `max(label) + 1`, or 0 without labels.
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }
}

/// One epoch's sample order, consumed batch by batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    cursor: usize,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, drop_last: bool, rng: &mut Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::argument("batch size must be positive"));
        }
        Ok(Self {
            order: rng.permutation(n),
            batch_size,
            drop_last,
            cursor: 0,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Indices of the next batch, or `None` once the epoch is exhausted.
    pub fn next_indices(&mut self) -> Option<&[usize]> {
        let remaining = self.order.len() - self.cursor;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let take = remaining.min(self.batch_size);
        let start = self.cursor;
        self.cursor += take;
        Some(&self.order[start..start + take])
    }

    pub fn batches(&self) -> usize {
        let n = self.order.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }
}

/// Slot inputs for one step: `views[0]` feeds the anchor assignment, `views[1]`
/// and `views[2]` the two contrastive views.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub indices: Vec<usize>,
    pub views: [DenseMatrix; 3],
    pub labels: Option<Vec<usize>>,
}

/// Draws the next batch of `plan` and builds its views; `Ok(None)` marks the end of the epoch.
pub fn next_batch(
    plan: &mut BatchPlan,
    dataset: &Dataset,
    spec: &TransformSpec,
    routing: Routing,
    rng: &mut Rng,
) -> Result<Option<Minibatch>> {
    let Some(indices) = plan.next_indices() else {
        return Ok(None);
    };
    let indices = indices.to_vec();
    let raw = dataset.samples.select_rows(&indices)?;
    let views = route_batch(spec, routing, dataset.shape, rng, &raw)?;
    let labels = dataset.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
    Ok(Some(Minibatch { indices, views, labels }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        Dataset::vectors(DenseMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64), Some((0..n).map(|i| i % 2).collect())).unwrap()
    }

    fn sizes(n: usize, b: usize, drop_last: bool) -> Vec<usize> {
        let mut plan = BatchPlan::new(n, b, drop_last, &mut Rng::new(0)).unwrap();
        let mut out = Vec::new();
        while let Some(idx) = plan.next_indices() {
            out.push(idx.len());
        }
        out
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(sizes(10, 4, true), vec![4, 4]);
        assert_eq!(sizes(10, 4, false), vec![4, 4, 2]);
        assert_eq!(sizes(10, 10, true), vec![10]);
        assert!(BatchPlan::new(3, 0, false, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let d = toy(9);
        let mut plan = BatchPlan::new(9, 9, false, &mut Rng::new(4)).unwrap();
        let b = next_batch(&mut plan, &d, &TransformSpec::identity(), Routing::default(), &mut Rng::new(1))
            .unwrap()
            .unwrap();
        let mut seen = b.indices.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
        for (r, &i) in b.indices.iter().enumerate() {
            assert_eq!(b.views[0].row(r), d.samples().row(i));
            assert_eq!(b.labels.as_ref().unwrap()[r], i % 2);
        }
        assert!(next_batch(&mut plan, &d, &TransformSpec::identity(), Routing::default(), &mut Rng::new(1))
            .unwrap()
            .is_none());
    }

    #[test]
    fn same_seed_same_sequence() {
        let d = toy(20);
        let run = || {
            let mut rng = Rng::new(8);
            let mut out = Vec::new();
            for _ in 0..2 {
                let mut plan = BatchPlan::new(20, 6, false, &mut rng).unwrap();
                while let Some(b) = next_batch(&mut plan, &d, &TransformSpec::vector_default(), Routing::default(), &mut rng).unwrap() {
                    out.push(b);
                }
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dataset_validation() {
        let m = DenseMatrix::zeros(3, 2);
        assert!(Dataset::vectors(m.clone(), Some(vec![0, 1])).is_err());
        assert!(Dataset::new(m.clone(), None, SampleShape::Vector(3)).is_err());
        assert!(Dataset::vectors(DenseMatrix::filled(1, 1, f64::NAN), None).is_err());
        assert_eq!(Dataset::vectors(m, Some(vec![0, 4, 1])).unwrap().num_classes(), 5);
    }
}
