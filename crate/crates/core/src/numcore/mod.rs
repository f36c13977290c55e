//! Numeric core: dense matrices, seeded randomness and reverse-mode gradients.

pub mod gradcheck;
mod matrix;
mod rng;
mod tape;

pub use matrix::{
    cosine_similarity, dot, l2_norm, log_sum_exp, row_normalize, row_softmax, squared_distance, DenseMatrix, EPS,
};
pub use rng::{Rng, RngState};
pub use tape::{GatherMap, Gradients, Tape, Var};
