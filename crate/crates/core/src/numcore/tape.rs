//! Reverse-mode differentiation over a recorded tape of matrix primitives.
//!
//! Every primitive appends a node holding its forward value and the ids of its
//! inputs. Since inputs always precede their consumers, walking the node list
//! backwards from the output is a reverse topological order.

use std::sync::Arc;

use super::matrix::{DenseMatrix, EPS};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index map for [`Tape::gather`]: output entry `k` copies input entry
/// `src[k]` (flat, row-major) or is zero when `src[k]` is `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GatherMap {
    pub rows: usize,
    pub cols: usize,
    pub src: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowVector(Var, Var),
    MulColumn(Var, Var),
    DivColumn(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var, f64),
    Powf(Var, f64),
    Square(Var),
    Sum(Var),
    RowSum(Var),
    ColSum(Var),
    SquaredDistances(Var, Var),
    NormalizeRows(Var, Vec<f64>),
    ConcatRows(Var, Var),
    Gather(Var, Arc<GatherMap>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    tracked: bool,
}

/// A single-use recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<Var>,
}

/// Gradients produced by [`Tape::backward`], indexed by the leaf [`Var`]s.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
    leaves: Vec<Var>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }

    /// One gradient buffer per leaf, in registration order.
    pub fn into_leaf_grads(mut self) -> Vec<DenseMatrix> {
        let leaves = std::mem::take(&mut self.leaves);
        leaves
            .into_iter()
            .map(|v| match self.grads[v.0].take() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shapes[v.0];
                    DenseMatrix::zeros(r, c)
                }
            })
            .collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.value(v);
        if m.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "expected a scalar, found a {}x{} value",
                m.rows(),
                m.cols()
            )));
        }
        Ok(m.get(0, 0))
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    fn push(&mut self, value: DenseMatrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Registers a trainable tensor.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.leaves.push(v);
        v
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), t))
    }

    /// Adds a 1×C row vector to every row of an N×C matrix.
    pub fn add_row_vector(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::shape(format!(
                "row broadcast of {}x{} onto {}x{}",
                rm.rows(),
                rm.cols(),
                am.rows(),
                am.cols()
            )));
        }
        let r = rm.row(0);
        let value = DenseMatrix::from_fn(am.rows(), am.cols(), |i, j| am.get(i, j) + r[j]);
        let t = self.tracked(a) || self.tracked(row);
        Ok(self.push(value, Op::AddRowVector(a, row), t))
    }

    fn check_column(&self, a: Var, col: Var, what: &str) -> Result<()> {
        let (am, cm) = (self.value(a), self.value(col));
        if cm.cols() != 1 || cm.rows() != am.rows() {
            return Err(Error::shape(format!(
                "{what} of {}x{} by column {}x{}",
                am.rows(),
                am.cols(),
                cm.rows(),
                cm.cols()
            )));
        }
        Ok(())
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn mul_column(&mut self, a: Var, col: Var) -> Result<Var> {
        self.check_column(a, col, "column scaling")?;
        let (am, cm) = (self.value(a), self.value(col));
        let value = DenseMatrix::from_fn(am.rows(), am.cols(), |i, j| am.get(i, j) * cm.get(i, 0));
        let t = self.tracked(a) || self.tracked(col);
        Ok(self.push(value, Op::MulColumn(a, col), t))
    }

    /// Divides row `i` of `a` by `col[i]`.
    pub fn div_column(&mut self, a: Var, col: Var) -> Result<Var> {
        self.check_column(a, col, "column division")?;
        let (am, cm) = (self.value(a), self.value(col));
        let value = DenseMatrix::from_fn(am.rows(), am.cols(), |i, j| am.get(i, j) / cm.get(i, 0));
        let t = self.tracked(a) || self.tracked(col);
        Ok(self.push(value, Op::DivColumn(a, col), t))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let t = self.tracked(a);
        self.push(value, Op::Scale(a, factor), t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let t = self.tracked(a);
        self.push(value, Op::AddScalar(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let t = self.tracked(a);
        self.push(value, Op::Relu(a), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let t = self.tracked(a);
        self.push(value, Op::Exp(a), t)
    }

    /// `ln(a + ε)` with ε = [`EPS`].
    pub fn log(&mut self, a: Var) -> Var {
        self.log_with(a, EPS)
    }

    /// Unguarded natural log, for arguments known to be bounded away from zero.
    pub fn ln(&mut self, a: Var) -> Var {
        self.log_with(a, 0.0)
    }

    fn log_with(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).map(|v| (v + eps).ln());
        let t = self.tracked(a);
        self.push(value, Op::Log(a, eps), t)
    }

    /// Elementwise power. Inputs must be positive unless `exponent` is a positive integer.
    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let value = self.value(a).map(|v| v.powf(exponent));
        let t = self.tracked(a);
        self.push(value, Op::Powf(a, exponent), t)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let t = self.tracked(a);
        self.push(value, Op::Square(a), t)
    }

    /// Sum of all entries, as a 1×1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        let t = self.tracked(a);
        self.push(value, Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums as an N×1 column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = DenseMatrix::new(m.rows(), 1, m.row_sums()).expect("row sums fit");
        let t = self.tracked(a);
        self.push(value, Op::RowSum(a), t)
    }

    /// Per-column sums as a 1×C row.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = DenseMatrix::new(1, m.cols(), m.col_sums()).expect("col sums fit");
        let t = self.tracked(a);
        self.push(value, Op::ColSum(a), t)
    }

    /// `out[i][j] = ‖a_i − b_j‖²` for rows of `a` (N×D) and `b` (K×D).
    pub fn squared_distances(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() {
            return Err(Error::shape(format!(
                "pairwise distances between {}x{} and {}x{}",
                am.rows(),
                am.cols(),
                bm.rows(),
                bm.cols()
            )));
        }
        let value = DenseMatrix::from_fn(am.rows(), bm.rows(), |i, j| {
            super::matrix::squared_distance(am.row(i), bm.row(j))
        });
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::SquaredDistances(a, b), t))
    }

    /// Scales every row to unit Euclidean norm. Zero rows are rejected.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut norms = Vec::with_capacity(m.rows());
        for (i, r) in m.row_iter().enumerate() {
            let n = super::matrix::l2_norm(r);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateVector(format!(
                    "row {i} has norm {n} and cannot be normalized"
                )));
            }
            norms.push(n);
        }
        let value = DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) / norms[i]);
        let t = self.tracked(a);
        Ok(self.push(value, Op::NormalizeRows(a, norms), t))
    }

    pub fn concat_rows(&mut self, top: Var, bottom: Var) -> Result<Var> {
        let value = DenseMatrix::vstack(self.value(top), self.value(bottom))?;
        let t = self.tracked(top) || self.tracked(bottom);
        Ok(self.push(value, Op::ConcatRows(top, bottom), t))
    }

    pub fn gather(&mut self, a: Var, map: Arc<GatherMap>) -> Result<Var> {
        let m = self.value(a);
        if map.src.len() != map.rows * map.cols {
            return Err(Error::shape("gather map length does not match its shape"));
        }
        let src = m.as_slice();
        let mut data = Vec::with_capacity(map.src.len());
        for s in &map.src {
            data.push(match *s {
                Some(k) if k < src.len() => src[k],
                Some(k) => {
                    return Err(Error::shape(format!(
                        "gather index {k} out of range for {} entries",
                        src.len()
                    )))
                }
                None => 0.0,
            });
        }
        let value = DenseMatrix::new(map.rows, map.cols, data)?;
        let t = self.tracked(a);
        Ok(self.push(value, Op::Gather(a, map), t))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshape(rows, cols)?;
        let t = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), t))
    }

    /// Propagates `∂output/∂·` back to every node. `output` must be 1×1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, found {}x{}",
                out.rows(),
                out.cols()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            leaves: self.leaves.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let mut acc = |v: Var, delta: DenseMatrix| -> Result<()> {
            if !self.nodes[v.0].tracked {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    acc(*a, g.matmul_t(val(*b))?)?;
                }
                if self.tracked(*b) {
                    acc(*b, val(*a).t_matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    acc(*a, g.hadamard(val(*b))?)?;
                }
                if self.tracked(*b) {
                    acc(*b, g.hadamard(val(*a))?)?;
                }
            }
            Op::AddRowVector(a, row) => {
                acc(*a, g.clone())?;
                if self.tracked(*row) {
                    acc(*row, DenseMatrix::new(1, g.cols(), g.col_sums())?)?;
                }
            }
            Op::MulColumn(a, col) => {
                let (am, cm) = (val(*a), val(*col));
                if self.tracked(*a) {
                    acc(*a, DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * cm.get(i, 0)))?;
                }
                if self.tracked(*col) {
                    let d = (0..g.rows())
                        .map(|i| super::matrix::dot(g.row(i), am.row(i)))
                        .collect();
                    acc(*col, DenseMatrix::new(g.rows(), 1, d)?)?;
                }
            }
            Op::DivColumn(a, col) => {
                let (am, cm) = (val(*a), val(*col));
                if self.tracked(*a) {
                    acc(*a, DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) / cm.get(i, 0)))?;
                }
                if self.tracked(*col) {
                    let d = (0..g.rows())
                        .map(|i| {
                            let c = cm.get(i, 0);
                            -super::matrix::dot(g.row(i), am.row(i)) / (c * c)
                        })
                        .collect();
                    acc(*col, DenseMatrix::new(g.rows(), 1, d)?)?;
                }
            }
            Op::Scale(a, factor) => acc(*a, g.scale(*factor))?,
            Op::AddScalar(a) => acc(*a, g.clone())?,
            Op::Relu(a) => {
                acc(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?)?;
            }
            Op::Exp(a) => acc(*a, g.hadamard(&node.value)?)?,
            Op::Log(a, eps) => acc(*a, g.zip_map(val(*a), |gv, x| gv / (x + eps))?)?,
            Op::Powf(a, e) => {
                let e = *e;
                acc(*a, g.zip_map(val(*a), |gv, x| gv * e * x.powf(e - 1.0))?)?;
            }
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gv, x| 2.0 * gv * x)?)?,
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, DenseMatrix::filled(r, c, g.get(0, 0)))?;
            }
            Op::RowSum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, DenseMatrix::from_fn(r, c, |i, _| g.get(i, 0)))?;
            }
            Op::ColSum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, DenseMatrix::from_fn(r, c, |_, j| g.get(0, j)))?;
            }
            Op::SquaredDistances(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                let d = am.cols();
                if self.tracked(*a) {
                    let mut da = DenseMatrix::zeros(am.rows(), d);
                    for i in 0..am.rows() {
                        let ai = am.row(i);
                        let out = da.row_mut(i);
                        for j in 0..bm.rows() {
                            let w = 2.0 * g.get(i, j);
                            for (o, (x, y)) in out.iter_mut().zip(ai.iter().zip(bm.row(j))) {
                                *o += w * (x - y);
                            }
                        }
                    }
                    acc(*a, da)?;
                }
                if self.tracked(*b) {
                    let mut db = DenseMatrix::zeros(bm.rows(), d);
                    for j in 0..bm.rows() {
                        let bj = bm.row(j);
                        let out = db.row_mut(j);
                        for i in 0..am.rows() {
                            let w = 2.0 * g.get(i, j);
                            for (o, (y, x)) in out.iter_mut().zip(bj.iter().zip(am.row(i))) {
                                *o += w * (y - x);
                            }
                        }
                    }
                    acc(*b, db)?;
                }
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut da = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (gi, yi) = (g.row(i), y.row(i));
                    let proj = super::matrix::dot(gi, yi);
                    for (o, (gv, yv)) in da.row_mut(i).iter_mut().zip(gi.iter().zip(yi)) {
                        *o = (gv - yv * proj) / norms[i];
                    }
                }
                acc(*a, da)?;
            }
            Op::ConcatRows(top, bottom) => {
                let split = val(*top).len();
                let cols = g.cols();
                let data = g.as_slice();
                acc(*top, DenseMatrix::new(val(*top).rows(), cols, data[..split].to_vec())?)?;
                acc(*bottom, DenseMatrix::new(val(*bottom).rows(), cols, data[split..].to_vec())?)?;
            }
            Op::Gather(a, map) => {
                let (r, c) = val(*a).shape();
                let mut da = DenseMatrix::zeros(r, c);
                let buf = da.as_mut_slice();
                for (gv, s) in g.as_slice().iter().zip(&map.src) {
                    if let Some(k) = s {
                        buf[*k] += gv;
                    }
                }
                acc(*a, da)?;
            }
            Op::Reshape(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, g.clone().reshape(r, c)?)?;
            }
        }
        Ok(())
    }
}
