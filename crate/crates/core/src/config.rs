//! Run configuration as flat `section.key=value` text.
//!
//! Values are layered: defaults, then the `EMBEDCLUSTER_SEED` fallback, then
//! a config file, then individual overrides (command-line flags). Every
//! key has a default and [`RunConfig::to_text`] writes all of them, so the
//! echoed file reproduces the run on its own.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::ablation::Grid;
use crate::augment::TransformSpec;
use crate::data::{load_dataset, synth_rings, BlobSpec, DataFormat, Dataset};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::numcore::Rng;
use crate::trainer::{EvalMode, TrainConfig};

/// Random stream used to draw synthetic datasets, distinct from the trainer's.
pub const DATA_STREAM: u64 = 4;

pub const SEED_ENV: &str = "EMBEDCLUSTER_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DataSource {
    /// Separated Gaussian blobs, K classes in 16 dimensions.
    #[default]
    Blobs,
    /// The same blobs with centers 3σ apart.
    OverlappingBlobs,
    /// Concentric 2-D rings.
    Rings,
    /// `data.path` read with `data.format`.
    File,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Blobs => "blobs",
            DataSource::OverlappingBlobs => "overlapping-blobs",
            DataSource::Rings => "rings",
            DataSource::File => "file",
        })
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(DataSource::Blobs),
            "overlapping-blobs" => Ok(DataSource::OverlappingBlobs),
            "rings" => Ok(DataSource::Rings),
            "file" => Ok(DataSource::File),
            _ => Err(Error::argument(format!(
                "unknown dataset {s:?} (expected blobs, overlapping-blobs, rings or file)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Trainer settings; `weights` is rebuilt from [`RunConfig::weights`].
    pub train: TrainConfig,
    /// Raw (α, β, γ), validated only when the trainer config is assembled so
    /// that keys can be set in any order.
    pub weights: [f64; 3],
    pub data: DataSource,
    pub data_path: Option<PathBuf>,
    /// `None` infers the format from the path.
    pub data_format: Option<DataFormat>,
    /// Samples per class for synthetic sources.
    pub per_cluster: usize,
    pub mode: EvalMode,
    pub out: PathBuf,
    pub grid: Grid,
    /// Bench seeds are `seed, seed + 1, …`.
    pub seeds: usize,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let w = train.weights;
        Self {
            weights: [w.instance(), w.cluster(), w.anchor()],
            train,
            data: DataSource::default(),
            data_path: None,
            data_format: None,
            per_cluster: 200,
            mode: EvalMode::default(),
            out: PathBuf::from("out"),
            grid: Grid::default(),
            seeds: 3,
            svg: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::argument(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every recognized key, in the order [`RunConfig::to_text`] writes them.
    pub const KEYS: [&'static str; 38] = [
        "trainer.k",
        "trainer.epochs",
        "trainer.warmup_epochs",
        "trainer.batch_size",
        "trainer.drop_last",
        "trainer.lr",
        "trainer.adam_beta1",
        "trainer.adam_beta2",
        "trainer.adam_eps",
        "trainer.tau",
        "trainer.nu",
        "trainer.alpha",
        "trainer.beta",
        "trainer.gamma",
        "trainer.anchor_variant",
        "trainer.detach_anchor",
        "trainer.target_update_interval",
        "trainer.eval_interval",
        "trainer.inputs",
        "trainer.augment",
        "trainer.seed",
        "model.hidden",
        "model.embed_dim",
        "model.head_hidden",
        "model.head_out",
        "model.conv",
        "model.conv_channels",
        "kmeans.restarts",
        "kmeans.iters",
        "data.source",
        "data.path",
        "data.format",
        "data.per_cluster",
        "eval.mode",
        "output.dir",
        "output.svg",
        "bench.grid",
        "bench.seeds",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "trainer.k" => t.k = parse(key, value)?,
            "trainer.epochs" => t.epochs = parse(key, value)?,
            "trainer.warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "trainer.batch_size" => t.batch_size = parse(key, value)?,
            "trainer.drop_last" => t.drop_last = parse(key, value)?,
            "trainer.lr" => t.adam.lr = parse(key, value)?,
            "trainer.adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "trainer.adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "trainer.adam_eps" => t.adam.eps = parse(key, value)?,
            "trainer.tau" => t.temperature = parse(key, value)?,
            "trainer.nu" => t.dof = parse(key, value)?,
            "trainer.alpha" => self.weights[0] = parse(key, value)?,
            "trainer.beta" => self.weights[1] = parse(key, value)?,
            "trainer.gamma" => self.weights[2] = parse(key, value)?,
            "trainer.anchor_variant" => t.anchor = value.parse()?,
            "trainer.detach_anchor" => t.detach_anchor = parse(key, value)?,
            "trainer.target_update_interval" => t.target_update_interval = parse(key, value)?,
            "trainer.eval_interval" => t.eval_interval = parse(key, value)?,
            "trainer.inputs" => t.routing = value.parse()?,
            "trainer.augment" => {
                t.augment = match value {
                    "default" => None,
                    spec => Some(spec.parse::<TransformSpec>()?),
                }
            }
            "trainer.seed" => t.seed = parse(key, value)?,
            "model.hidden" => t.hidden = parse_list(key, value)?,
            "model.embed_dim" => t.embed_dim = parse(key, value)?,
            "model.head_hidden" => {
                t.head_hidden = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "model.head_out" => t.head_out = parse(key, value)?,
            "model.conv" => t.conv = parse(key, value)?,
            "model.conv_channels" => {
                t.conv_channels = parse_list(key, value)?
                    .try_into()
                    .map_err(|_| Error::argument(format!("{key} takes two widths")))?
            }
            "kmeans.restarts" => t.kmeans_restarts = parse(key, value)?,
            "kmeans.iters" => t.kmeans_iters = parse(key, value)?,
            "data.source" => self.data = value.parse()?,
            "data.path" => self.data_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data.format" => {
                self.data_format = match value {
                    "auto" => None,
                    f => Some(f.parse()?),
                }
            }
            "data.per_cluster" => self.per_cluster = parse(key, value)?,
            "eval.mode" => self.mode = value.parse()?,
            "output.dir" => self.out = PathBuf::from(value),
            "output.svg" => self.svg = parse(key, value)?,
            "bench.grid" => self.grid = value.parse()?,
            "bench.seeds" => self.seeds = parse(key, value)?,
            _ => return Err(Error::argument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        Ok(match key {
            "trainer.k" => t.k.to_string(),
            "trainer.epochs" => t.epochs.to_string(),
            "trainer.warmup_epochs" => t.warmup_epochs.to_string(),
            "trainer.batch_size" => t.batch_size.to_string(),
            "trainer.drop_last" => t.drop_last.to_string(),
            "trainer.lr" => t.adam.lr.to_string(),
            "trainer.adam_beta1" => t.adam.beta1.to_string(),
            "trainer.adam_beta2" => t.adam.beta2.to_string(),
            "trainer.adam_eps" => t.adam.eps.to_string(),
            "trainer.tau" => t.temperature.to_string(),
            "trainer.nu" => t.dof.to_string(),
            "trainer.alpha" => self.weights[0].to_string(),
            "trainer.beta" => self.weights[1].to_string(),
            "trainer.gamma" => self.weights[2].to_string(),
            "trainer.anchor_variant" => t.anchor.to_string(),
            "trainer.detach_anchor" => t.detach_anchor.to_string(),
            "trainer.target_update_interval" => t.target_update_interval.to_string(),
            "trainer.eval_interval" => t.eval_interval.to_string(),
            "trainer.inputs" => t.routing.to_string(),
            "trainer.augment" => t.augment.as_ref().map_or("default".into(), |a| a.to_string()),
            "trainer.seed" => t.seed.to_string(),
            "model.hidden" => join(&t.hidden),
            "model.embed_dim" => t.embed_dim.to_string(),
            "model.head_hidden" => t.head_hidden.map_or("auto".into(), |h| h.to_string()),
            "model.head_out" => t.head_out.to_string(),
            "model.conv" => t.conv.to_string(),
            "model.conv_channels" => join(&t.conv_channels),
            "kmeans.restarts" => t.kmeans_restarts.to_string(),
            "kmeans.iters" => t.kmeans_iters.to_string(),
            "data.source" => self.data.to_string(),
            "data.path" => self.data_path.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "data.format" => self.data_format.map_or("auto".into(), |f| f.to_string()),
            "data.per_cluster" => self.per_cluster.to_string(),
            "eval.mode" => self.mode.to_string(),
            "output.dir" => self.out.display().to_string(),
            "output.svg" => self.svg.to_string(),
            "bench.grid" => self.grid.to_string(),
            "bench.seeds" => self.seeds.to_string(),
            _ => return Err(Error::argument(format!("unknown config key {key:?}"))),
        })
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let location = format!("line {}", n + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, &location, "expected key=value"))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::parse(source_name, &location, e.to_string()))?;
        }
        Ok(())
    }

    /// Seed fallback from the environment, applied below file and flags.
    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        match value {
            Some(v) => self
                .set("trainer.seed", v)
                .map_err(|_| Error::argument(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            None => Ok(()),
        }
    }

    /// Defaults < seed env < file < overrides.
    pub fn resolve(env_seed: Option<&str>, file: Option<(&str, &str)>, overrides: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        c.apply_seed_env(env_seed)?;
        if let Some((name, text)) = file {
            c.apply_text(text, name)?;
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.train_config()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        Self::KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// The validated trainer configuration.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let [a, b, g] = self.weights;
        let config = TrainConfig {
            weights: LossWeights::new(a, b, g)?,
            ..self.train.clone()
        };
        config.validate()?;
        Ok(config)
    }

    /// Loads or draws the dataset. Synthetic sources use K classes and a
    /// stream derived from `seed`.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        let k = self.train.k;
        let mut rng = Rng::derive(seed, DATA_STREAM);
        let blobs = |spec: BlobSpec, rng: &mut Rng| {
            BlobSpec {
                k,
                per_cluster: self.per_cluster,
                ..spec
            }
            .generate(rng)
        };
        match self.data {
            DataSource::Blobs => blobs(BlobSpec::standard(), &mut rng),
            DataSource::OverlappingBlobs => blobs(BlobSpec::overlapping(), &mut rng),
            DataSource::Rings => synth_rings(k, self.per_cluster, 0.05, &mut rng),
            DataSource::File => {
                let path = self
                    .data_path
                    .as_ref()
                    .ok_or_else(|| Error::argument("dataset source `file` needs data.path"))?;
                load_dataset(path, self.data_format.unwrap_or_else(|| DataFormat::infer(path)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Routing;
    use crate::losses::AnchorVariant;

    #[test]
    fn text_round_trip_covers_every_key() {
        let mut c = RunConfig::default();
        for (k, v) in [
            ("trainer.lr", "0.001"),
            ("trainer.inputs", "aug,aug,aug"),
            ("trainer.augment", "noise:0.3@0.5"),
            ("trainer.anchor_variant", "cross-kl"),
            ("model.hidden", "32,32,16"),
            ("model.head_hidden", "12"),
            ("data.source", "file"),
            ("data.path", "/tmp/x.csv"),
            ("data.format", "csv"),
            ("bench.grid", "anchors"),
            ("output.svg", "true"),
        ] {
            c.set(k, v).unwrap();
        }
        let text = c.to_text();
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
        let mut back = RunConfig::default();
        back.apply_text(&text, "echo").unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::default().to_text().lines().count(), 38);
    }

    #[test]
    fn precedence_is_flags_then_file_then_env() {
        let file = "# comment\ntrainer.seed = 5\ntrainer.epochs=7\n\n";
        let flags = vec![("trainer.epochs".to_string(), "9".to_string())];
        let c = RunConfig::resolve(Some("3"), Some(("run.conf", file)), &flags).unwrap();
        assert_eq!((c.train.seed, c.train.epochs), (5, 9));
        let c = RunConfig::resolve(Some("3"), None, &[]).unwrap();
        assert_eq!(c.train.seed, 3);
        let c = RunConfig::resolve(Some("3"), None, &[("trainer.seed".into(), "1".into())]).unwrap();
        assert_eq!(c.train.seed, 1);
        assert_eq!(RunConfig::resolve(None, None, &[]).unwrap(), RunConfig::default());
        assert!(RunConfig::resolve(Some("x"), None, &[]).is_err());
    }

    #[test]
    fn errors_carry_locations() {
        let mut c = RunConfig::default();
        match c.apply_text("trainer.k=4\nbogus\n", "run.conf") {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(c.apply_text("trainer.nope=1", "f"), Err(Error::Parse { .. })));
        assert!(c.set("trainer.k", "four").is_err());
        assert!(c.set("model.conv_channels", "1,2,3").is_err());
    }

    #[test]
    fn weights_validate_after_all_keys() {
        let flags: Vec<(String, String)> = [("trainer.alpha", "0"), ("trainer.beta", "0"), ("trainer.gamma", "1")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let c = RunConfig::resolve(None, None, &flags).unwrap();
        assert_eq!(c.train_config().unwrap().weights, LossWeights::new(0.0, 0.0, 1.0).unwrap());
        let zero: Vec<(String, String)> = ["trainer.alpha", "trainer.beta", "trainer.gamma"].iter().map(|k| (k.to_string(), "0".to_string())).collect();
        assert!(RunConfig::resolve(None, None, &zero).is_err());
    }

    #[test]
    fn parsed_values_reach_the_trainer() {
        let mut c = RunConfig::default();
        c.apply_text("trainer.inputs=raw,raw,raw\ntrainer.anchor_variant=jsd\ntrainer.k=3", "f").unwrap();
        let t = c.train_config().unwrap();
        assert_eq!(t.routing, Routing::RAW_RAW_RAW);
        assert_eq!(t.anchor, AnchorVariant::Jsd);
        let d = c.dataset(0).unwrap();
        assert_eq!((d.len(), d.num_classes()), (600, 3));
        assert_eq!(d, c.dataset(0).unwrap());
        c.set("data.source", "file").unwrap();
        assert!(c.dataset(0).is_err());
    }
}
