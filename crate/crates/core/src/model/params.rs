use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Gradients, Tape, Var};

/// One trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub first_moment: DenseMatrix,
    pub second_moment: DenseMatrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(r, c),
            first_moment: DenseMatrix::zeros(r, c),
            second_moment: DenseMatrix::zeros(r, c),
        }
    }
}

/// Ordered, named collection of every trainable tensor plus the optimizer step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Number of Adam updates applied so far.
    pub adam_step: u64,
}

/// Tape handles for every tensor of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps handles already registered on a tape, one per store tensor in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: Param) -> usize {
        self.params.push(param);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index_of(name).map(move |i| &mut self.params[i])
    }

    /// Records every tensor on `tape`: as leaves when `trainable`, else as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Copies the gradient of each bound tensor into its gradient buffer.
    pub fn store_grads(&mut self, bound: &BoundParams, grads: &Gradients) {
        for (p, v) in self.params.iter_mut().zip(&bound.vars) {
            p.grad = grads.get(*v);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            let (r, c) = p.value.shape();
            p.grad = DenseMatrix::zeros(r, c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| {
            p.value.is_finite()
                && p.grad.is_finite()
                && p.first_moment.is_finite()
                && p.second_moment.is_finite()
        })
    }

    /// Checks that `other` has the same tensor names and shapes, in order.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn total_size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
