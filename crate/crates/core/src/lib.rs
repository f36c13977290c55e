//! Ensemble deep clustering.
//!
//! An encoder, an instance-wise projection head and a set of learnable
//! centroids are trained jointly on a weighted sum of three objectives:
//! a temperature-scaled contrastive loss over two augmented views, a
//! Student-t / KL self-training loss against a sharpened target
//! distribution, and an anchor loss tying the raw sample's soft assignment
//! to the assignments of its views.

pub mod ablation;
pub mod augment;
pub mod cluster;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod projection;
pub mod trainer;

pub use error::{Error, Result};
pub use config::RunConfig;
pub use data::Dataset;
pub use metrics::Scores;
pub use numcore::{DenseMatrix, Rng, Tape, Var};
pub use trainer::{evaluate, train, EvalMode, TrainConfig, Trainer};
