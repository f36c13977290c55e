//! Warm-up, centroid initialization and the joint optimization loop.
//!
//! A run has three phases: `warmup_epochs` of instance-loss-only training,
//! a k-means fit on the embeddings of the full dataset whose centroids seed
//! the clustering head, and `epochs` of joint training on the weighted sum of
//! all three losses. Each joint epoch appends one [`MetricsRow`] and, when a
//! path is given, rewrites a checkpoint from which the run resumes exactly.

mod adam;
mod log;

pub use adam::{adam_step, AdamConfig};
pub use log::{parse_csv, render_csv, EpochLosses, MetricsRow, CSV_HEADER};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::augment::{Routing, SampleShape, TransformSpec};
use crate::cluster::{compute_target, hard_assign, inter_cluster_distance, kmeans_init, soft_assign, soft_assign_tape, AssignmentMatrix, KMeansConfig};
use crate::data::{next_batch, BatchPlan, Dataset, Minibatch};
use crate::error::{Error, Result};
use crate::losses::{anchor_loss, cluster_loss, instance_loss, total_loss, AnchorInputs, AnchorVariant, LossTerms, LossWeights};
use crate::metrics::{score, Scores};
use crate::model::{save_checkpoint, Checkpoint, ConvEncoderSpec, EncoderKind, EncoderSpec, InstanceHeadSpec, Model, ModelSpec, Payload};
use crate::numcore::{row_normalize, DenseMatrix, Rng, RngState, Tape};

const STREAM_MODEL: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    /// Joint epochs after initialization.
    pub epochs: usize,
    /// Instance-only epochs before the k-means initialization.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub drop_last: bool,
    pub temperature: f64,
    /// Student-t degrees of freedom ν.
    pub dof: f64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub anchor: AnchorVariant,
    /// Treat q⁰ as a constant inside the anchor loss.
    pub detach_anchor: bool,
    /// 1 recomputes the target from each minibatch; T > 1 recomputes it over
    /// the full dataset every T epochs and reuses it in between.
    pub target_update_interval: usize,
    pub eval_interval: usize,
    pub routing: Routing,
    /// `None` picks the default for the data modality.
    pub augment: Option<TransformSpec>,
    /// Hidden widths of the fully connected encoder.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Defaults to `embed_dim`.
    pub head_hidden: Option<usize>,
    pub head_out: usize,
    /// Use the convolutional encoder (raster data only).
    pub conv: bool,
    pub conv_channels: [usize; 2],
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 4,
            epochs: 200,
            warmup_epochs: 10,
            batch_size: 64,
            drop_last: false,
            temperature: 0.5,
            dof: 1.0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            anchor: AnchorVariant::KlAnchor,
            detach_anchor: false,
            target_update_interval: 1,
            eval_interval: 1,
            routing: Routing::default(),
            augment: None,
            hidden: vec![128, 64],
            embed_dim: 32,
            head_hidden: None,
            head_out: 16,
            conv: false,
            conv_channels: [8, 16],
            kmeans_restarts: 20,
            kmeans_iters: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::argument(m));
        if self.k < 2 {
            return fail(format!("K must be at least 2, got {}", self.k));
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.dof > 0.0 && self.dof.is_finite()) {
            return fail(format!("degrees of freedom must be positive, got {}", self.dof));
        }
        if self.target_update_interval < 1 || self.eval_interval < 1 {
            return fail("target update and eval intervals must be at least 1".into());
        }
        if self.kmeans_restarts < 1 || self.kmeans_iters < 1 {
            return fail("k-means needs at least one restart and one iteration".into());
        }
        if self.embed_dim == 0 || self.head_out == 0 || self.hidden.contains(&0) || self.head_hidden == Some(0) {
            return fail("layer widths must be positive".into());
        }
        self.adam.validate()
    }

    pub fn augment_for(&self, shape: SampleShape) -> TransformSpec {
        self.augment.clone().unwrap_or_else(|| TransformSpec::default_for(shape))
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            max_iters: self.kmeans_iters,
            restarts: self.kmeans_restarts,
            tolerance: 1e-6,
        }
    }

    /// Architecture implied by the config for data of the given layout.
    pub fn model_spec(&self, shape: SampleShape) -> Result<ModelSpec> {
        let encoder = match (self.conv, shape) {
            (
                true,
                SampleShape::Raster {
                    height,
                    width,
                    channels,
                },
            ) => EncoderKind::Conv(ConvEncoderSpec {
                height,
                width,
                channels,
                conv_channels: self.conv_channels,
                embed_dim: self.embed_dim,
            }),
            (true, SampleShape::Vector(_)) => {
                return Err(Error::argument("the convolutional encoder needs raster data"));
            }
            (false, _) => {
                let mut widths = vec![shape.len()];
                widths.extend(&self.hidden);
                widths.push(self.embed_dim);
                EncoderKind::Mlp(EncoderSpec::new(widths)?)
            }
        };
        let spec = ModelSpec {
            encoder,
            head: InstanceHeadSpec {
                embed_dim: self.embed_dim,
                hidden_dim: self.head_hidden.unwrap_or(self.embed_dim),
                out_dim: self.head_out,
            },
            clusters: self.k,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum EvalMode {
    /// Hard assignments from the clustering head.
    #[default]
    Cluster,
    /// k-means on row-normalized instance-head features.
    Representation,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Cluster => "cluster",
            EvalMode::Representation => "representation",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cluster" => Ok(EvalMode::Cluster),
            "representation" => Ok(EvalMode::Representation),
            _ => Err(Error::argument(format!("unknown eval mode {s:?} (expected cluster or representation)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mode: EvalMode,
    pub labels: Vec<usize>,
    /// Present when the dataset carries labels.
    pub scores: Option<Scores>,
    /// Mean pairwise distance between the model's centroids.
    pub icd: f64,
}

/// Assigns every sample of `dataset` and scores the result against its labels.
pub fn evaluate(model: &Model, dataset: &Dataset, mode: EvalMode, config: &TrainConfig) -> Result<Evaluation> {
    let labels = match mode {
        EvalMode::Cluster => {
            let h = model.embed(dataset.samples())?;
            hard_assign(&soft_assign(&h, model.centroids(), config.dof)?)
        }
        EvalMode::Representation => {
            let z = row_normalize(&model.instance_features(dataset.samples())?)?;
            let mut rng = Rng::derive(config.seed, STREAM_EVAL);
            kmeans_init(&z, &config.kmeans(), &mut rng)?.labels
        }
    };
    let scores = dataset.labels().map(|truth| score(&labels, truth)).transpose()?;
    Ok(Evaluation {
        mode,
        labels,
        scores,
        icd: inter_cluster_distance(model.centroids())?,
    })
}

/// Losses of one optimizer step, unweighted, plus the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub instance: f64,
    pub cluster: f64,
    pub anchor: f64,
    pub total: f64,
}

/// Mutable state of a run: model, optimizer, random stream, counters and log.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    rng: Rng,
    shape: SampleShape,
    /// Completed joint epochs; `None` until the centroids are initialized.
    epoch: Option<usize>,
    target: Option<DenseMatrix>,
    log: Vec<MetricsRow>,
}

fn encode_rng(state: &RngState) -> Vec<u8> {
    let mut b = state.seed.to_vec();
    b.extend_from_slice(&state.stream.to_le_bytes());
    b.extend_from_slice(&state.word_pos.to_le_bytes());
    b
}

fn decode_rng(bytes: &[u8]) -> Result<RngState> {
    if bytes.len() != 56 {
        return Err(Error::Checkpoint(format!("random state has {} bytes, expected 56", bytes.len())));
    }
    Ok(RngState {
        seed: bytes[..32].try_into().expect("length checked"),
        stream: u64::from_le_bytes(bytes[32..40].try_into().expect("length checked")),
        word_pos: u128::from_le_bytes(bytes[40..56].try_into().expect("length checked")),
    })
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        if dataset.len() < config.k {
            return Err(Error::argument(format!(
                "dataset has {} samples, fewer than K={}",
                dataset.len(),
                config.k
            )));
        }
        let shape = dataset.shape();
        config.augment_for(shape).check_shape(shape)?;
        let spec = config.model_spec(shape)?;
        let model = Model::new(spec, &mut Rng::derive(config.seed, STREAM_MODEL))?;
        Ok(Self {
            rng: Rng::derive(config.seed, STREAM_TRAIN),
            config,
            model,
            shape,
            epoch: None,
            target: None,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn log(&self) -> &[MetricsRow] {
        &self.log
    }

    pub fn csv(&self) -> String {
        render_csv(&self.log)
    }

    pub fn epoch(&self) -> Option<usize> {
        self.epoch
    }

    /// Extends the run, e.g. after a resume; the new value must not be below the completed epochs.
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        if epochs < self.epoch.unwrap_or(0) || epochs < 1 {
            return Err(Error::argument(format!("cannot shorten the run to {epochs} epochs")));
        }
        self.config.epochs = epochs;
        Ok(())
    }

    fn views(&self) -> TransformSpec {
        self.config.augment_for(self.shape)
    }

    fn batches(&mut self, dataset: &Dataset) -> Result<Vec<Minibatch>> {
        let mut plan = BatchPlan::new(dataset.len(), self.config.batch_size, self.config.drop_last, &mut self.rng)?;
        let spec = self.views();
        let mut out = Vec::with_capacity(plan.batches());
        while let Some(b) = next_batch(&mut plan, dataset, &spec, self.config.routing, &mut self.rng)? {
            out.push(b);
        }
        Ok(out)
    }

    fn warmup_step(&mut self, batch: &Minibatch) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape, true);
        let x1 = tape.constant(batch.views[1].clone());
        let x2 = tape.constant(batch.views[2].clone());
        let h1 = self.model.encode(&mut tape, &bound, x1)?;
        let h2 = self.model.encode(&mut tape, &bound, x2)?;
        let z1 = self.model.project_instance(&mut tape, &bound, h1)?;
        let z2 = self.model.project_instance(&mut tape, &bound, h2)?;
        let loss = instance_loss(&mut tape, z1, z2, self.config.temperature)?;
        self.apply(&mut tape, &bound, loss)
    }

    fn apply(&mut self, tape: &mut Tape, bound: &crate::model::BoundParams, loss: crate::numcore::Var) -> Result<f64> {
        let value = tape.scalar(loss)?;
        if !value.is_finite() {
            return Err(Error::Divergence { tensor: "loss".into() });
        }
        let grads = tape.backward(loss)?;
        self.model.params.store_grads(bound, &grads);
        adam_step(&mut self.model.params, &self.config.adam)?;
        Ok(value)
    }

    /// One joint update following the train loop: encode the three slots,
    /// project the two views, assign all three, and step on the weighted total.
    pub fn joint_step(&mut self, batch: &Minibatch) -> Result<StepLosses> {
        let cfg = &self.config;
        let (tau, dof, variant, weights, detach) = (cfg.temperature, cfg.dof, cfg.anchor, cfg.weights, cfg.detach_anchor);
        let model = &self.model;
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, true);
        let mut h = Vec::with_capacity(3);
        for x in &batch.views {
            let xv = tape.constant(x.clone());
            h.push(model.encode(&mut tape, &bound, xv)?);
        }
        let z1 = model.project_instance(&mut tape, &bound, h[1])?;
        let z2 = model.project_instance(&mut tape, &bound, h[2])?;
        let l_inst = instance_loss(&mut tape, z1, z2, tau)?;

        let mu = model.centroid_var(&bound);
        let q0 = soft_assign_tape(&mut tape, h[0], mu, dof)?;
        let q1 = soft_assign_tape(&mut tape, h[1], mu, dof)?;
        let q2 = soft_assign_tape(&mut tape, h[2], mu, dof)?;
        let target_of = |tape: &Tape, q| -> Result<DenseMatrix> {
            Ok(compute_target(&AssignmentMatrix::new(tape.value(q).clone())?).into_matrix())
        };
        let p0 = match &self.target {
            Some(cache) => cache.select_rows(&batch.indices)?,
            None => target_of(&tape, q0)?,
        };
        let p0 = tape.constant(p0);
        let l_clus = cluster_loss(&mut tape, p0, q0)?;

        let mut inputs = AnchorInputs {
            q0: Some(if detach { tape.constant(tape.value(q0).clone()) } else { q0 }),
            q1: Some(q1),
            q2: Some(q2),
            p0: Some(p0),
            ..Default::default()
        };
        if variant.needs_view_targets() {
            let (p1, p2) = (target_of(&tape, q1)?, target_of(&tape, q2)?);
            inputs.p1 = Some(tape.constant(p1));
            inputs.p2 = Some(tape.constant(p2));
        }
        let l_anch = anchor_loss(&mut tape, variant, &inputs)?;
        let terms = LossTerms {
            instance: Some(l_inst),
            cluster: Some(l_clus),
            anchor: Some(l_anch),
        };
        let total = total_loss(&mut tape, &weights, &terms)?;
        let losses = StepLosses {
            instance: tape.scalar(l_inst)?,
            cluster: tape.scalar(l_clus)?,
            anchor: tape.scalar(l_anch)?,
            total: tape.scalar(total)?,
        };
        self.apply(&mut tape, &bound, total)?;
        Ok(losses)
    }

    /// Instance-only warm-up followed by k-means on the embeddings; the
    /// resulting centroids become the clustering head. Logs the epoch-0 row.
    pub fn warmup_and_init(&mut self, dataset: &Dataset) -> Result<DenseMatrix> {
        if self.epoch.is_some() {
            return Err(Error::Contract("centroids are already initialized".into()));
        }
        let warmup = if self.config.weights.instance() > 0.0 {
            self.config.warmup_epochs
        } else {
            0
        };
        for e in 0..warmup {
            let mut sum = 0.0;
            let batches = self.batches(dataset)?;
            for b in &batches {
                sum += self.warmup_step(b)?;
            }
            ::log::debug!("warmup epoch {} instance loss {:.5}", e + 1, sum / batches.len() as f64);
        }
        let h = self.model.embed(dataset.samples())?;
        let init = kmeans_init(&h, &self.config.kmeans(), &mut Rng::derive(self.config.seed, STREAM_INIT))?;
        self.model.set_centroids(init.centroids.clone())?;
        self.epoch = Some(0);
        self.record(dataset, None)?;
        Ok(init.centroids)
    }

    fn refresh_target(&mut self, dataset: &Dataset) -> Result<()> {
        let h = self.model.embed(dataset.samples())?;
        let q = soft_assign(&h, self.model.centroids(), self.config.dof)?;
        self.target = Some(compute_target(&q).into_matrix());
        Ok(())
    }

    fn record(&mut self, dataset: &Dataset, losses: Option<EpochLosses>) -> Result<()> {
        let epoch = self.epoch.expect("initialized");
        let due = epoch.is_multiple_of(self.config.eval_interval) || epoch == self.config.epochs;
        let (scores, icd) = if due {
            let ev = evaluate(&self.model, dataset, EvalMode::Cluster, &self.config)?;
            (ev.scores, ev.icd)
        } else {
            (None, inter_cluster_distance(self.model.centroids())?)
        };
        let row = MetricsRow {
            epoch,
            step: self.model.params.adam_step,
            losses,
            scores,
            icd,
        };
        ::log::info!("{}", row.to_csv());
        self.log.push(row);
        Ok(())
    }

    /// Runs one joint epoch and appends its log row.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochLosses> {
        let done = self.epoch.ok_or_else(|| Error::Contract("initialize centroids before joint training".into()))?;
        if self.config.target_update_interval > 1 && done.is_multiple_of(self.config.target_update_interval) {
            self.refresh_target(dataset)?;
        }
        let batches = self.batches(dataset)?;
        let mut acc = [0.0; 4];
        for b in &batches {
            let s = self.joint_step(b)?;
            for (a, v) in acc.iter_mut().zip([s.instance, s.cluster, s.anchor, s.total]) {
                *a += v;
            }
        }
        let n = batches.len().max(1) as f64;
        let losses = EpochLosses {
            instance: acc[0] / n,
            cluster: acc[1] / n,
            anchor: acc[2] / n,
            total: acc[3] / n,
        };
        self.epoch = Some(done + 1);
        self.record(dataset, Some(losses))?;
        Ok(losses)
    }

    /// Trains until `config.epochs` joint epochs are complete, writing a
    /// checkpoint after every epoch when `checkpoint` is given.
    pub fn run(&mut self, dataset: &Dataset, checkpoint: Option<&Path>) -> Result<()> {
        if self.epoch.is_none() {
            self.warmup_and_init(dataset)?;
            if let Some(path) = checkpoint {
                save_checkpoint(&self.to_checkpoint(), path)?;
            }
        }
        while self.epoch.expect("initialized") < self.config.epochs {
            self.run_epoch(dataset)?;
            if let Some(path) = checkpoint {
                save_checkpoint(&self.to_checkpoint(), path)?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.model.clone());
        c.set_extra("trainer.epoch", Payload::U64(self.epoch.map(|e| e as u64).into_iter().collect()));
        c.set_extra("trainer.rng", Payload::Bytes(encode_rng(&self.rng.state())));
        c.set_extra("trainer.log", Payload::Bytes(self.csv().into_bytes()));
        if let Some(t) = &self.target {
            c.set_extra("trainer.target", Payload::F64(t.clone()));
        }
        c
    }

    /// Restores a run saved by [`Trainer::to_checkpoint`]. The architecture
    /// implied by `config` must match the checkpoint.
    pub fn from_checkpoint(checkpoint: Checkpoint, config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let shape = dataset.shape();
        let spec = config.model_spec(shape)?;
        if spec != checkpoint.model.spec {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} does not match the configured {:?}",
                checkpoint.model.spec, spec
            )));
        }
        let epoch = match checkpoint.extra_u64("trainer.epoch")? {
            [] => None,
            [e] => Some(*e as usize),
            _ => return Err(Error::Checkpoint("malformed epoch counter".into())),
        };
        if epoch.is_some_and(|e| e > config.epochs) {
            return Err(Error::argument(format!(
                "checkpoint is at epoch {}, beyond the configured {}",
                epoch.unwrap_or(0),
                config.epochs
            )));
        }
        let rng = Rng::from_state(decode_rng(checkpoint.extra_bytes("trainer.rng")?)?);
        let log_text = String::from_utf8(checkpoint.extra_bytes("trainer.log")?.to_vec())
            .map_err(|_| Error::Checkpoint("metrics log is not UTF-8".into()))?;
        let target = checkpoint.extra_matrix("trainer.target").cloned();
        if let Some(t) = &target {
            if t.shape() != (dataset.len(), config.k) {
                return Err(Error::Checkpoint("cached target does not match the dataset".into()));
            }
        }
        Ok(Self {
            config,
            model: checkpoint.model,
            rng,
            shape,
            epoch,
            target,
            log: parse_csv(&log_text)?,
        })
    }
}

/// Fresh run from `config` to completion.
pub fn train(config: TrainConfig, dataset: &Dataset, checkpoint: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(config, dataset)?;
    t.run(dataset, checkpoint)?;
    Ok(t)
}
