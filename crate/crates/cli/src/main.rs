use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use embedclust::ablation::{cells, render_table, run_grid};
use embedclust::config::SEED_ENV;
use embedclust::model::{load_checkpoint, Model};
use embedclust::projection::{pca, projection_csv, render_svg};
use embedclust::trainer::{evaluate, EvalMode, Evaluation, Trainer};
use embedclust::{Dataset, RunConfig, Scores};

/// Ensemble deep clustering on small datasets.
#[derive(Parser, Debug)]
#[command(name = "embedclust", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics.csv, model.ckpt and config.txt to the output directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from <out>/model.ckpt up to --epochs.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint in cluster and representation mode.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to <out>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export a 2-D PCA projection of the instance-head features.
    Project {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write projection.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Run an ablation grid over several seeds and print per-cell medians.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// losses, anchors, inputs or single.
        #[arg(long)]
        grid: Option<String>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

/// Flags shared by every subcommand. Each one overrides the matching config key.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// key=value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// blobs, overlapping-blobs, rings or file.
    #[arg(long)]
    dataset: Option<String>,
    /// Input for --dataset file; implies it when --dataset is absent.
    #[arg(long)]
    data_path: Option<PathBuf>,
    /// csv, binary or pnm; inferred from the path by default.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<String>,
    /// Student-t degrees of freedom.
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// kl-anchor, jsd, kl-target or cross-kl.
    #[arg(long)]
    anchor_variant: Option<String>,
    /// Sources for the three network slots, e.g. raw,aug,aug.
    #[arg(long)]
    inputs: Option<String>,
    /// Falls back to EMBEDCLUSTER_SEED, then 0.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// cluster or representation.
    #[arg(long)]
    mode: Option<String>,
    /// Any other config key, e.g. --set model.embed_dim=16. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> anyhow::Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let dataset = self.dataset.clone().or_else(|| self.data_path.as_ref().map(|_| "file".into()));
        push("data.source", dataset);
        push("data.path", path(&self.data_path));
        push("data.format", self.format.clone());
        push("trainer.k", self.k.clone());
        push("trainer.epochs", self.epochs.clone());
        push("trainer.batch_size", self.batch_size.clone());
        push("trainer.lr", self.lr.clone());
        push("trainer.tau", self.tau.clone());
        push("trainer.nu", self.nu.clone());
        push("trainer.alpha", self.alpha.clone());
        push("trainer.beta", self.beta.clone());
        push("trainer.gamma", self.gamma.clone());
        push("trainer.anchor_variant", self.anchor_variant.clone());
        push("trainer.inputs", self.inputs.clone());
        push("trainer.seed", self.seed.clone());
        push("output.dir", path(&self.out));
        push("eval.mode", self.mode.clone());
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            out.push((k.trim().to_string(), v.to_string()));
        }
        Ok(out)
    }

    fn resolve(&self, extra: &[(String, String)]) -> anyhow::Result<RunConfig> {
        let file = match &self.config {
            Some(p) => Some((p.display().to_string(), fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)),
            None => None,
        };
        let env = std::env::var(SEED_ENV).ok();
        let mut overrides = self.overrides()?;
        overrides.extend_from_slice(extra);
        Ok(RunConfig::resolve(
            env.as_deref(),
            file.as_ref().map(|(n, t)| (n.as_str(), t.as_str())),
            &overrides,
        )?)
    }
}

/// Usage errors exit with 2, everything after a valid configuration with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train { run, resume } => cmd_train(&run, resume),
        Command::Eval { run, checkpoint } => cmd_eval(&run, checkpoint),
        Command::Project { run, checkpoint, svg } => cmd_project(&run, checkpoint, svg),
        Command::Bench { run, grid, seeds } => cmd_bench(&run, grid, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn prepare_out(config: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    write(&config.out.join("config.txt"), &config.to_text())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_data(config: &RunConfig) -> anyhow::Result<Dataset> {
    config.dataset(config.train.seed).context("loading dataset")
}

fn summary(scores: Option<Scores>) -> String {
    match scores {
        Some(s) => format!("NMI={:.4} ACC={:.4} ARI={:.4}", s.nmi, s.acc, s.ari),
        None => "NMI/ACC/ARI unavailable (dataset has no labels)".into(),
    }
}

fn cmd_train(run: &RunArgs, resume: bool) -> Outcome {
    let config = usage(run.resolve(&[]))?;
    let train_config = usage(config.train_config().map_err(Into::into))?;
    prepare_out(&config)?;
    let dataset = load_data(&config)?;
    let ckpt = config.out.join("model.ckpt");
    let mut trainer = if resume {
        let saved = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
        Trainer::from_checkpoint(saved, train_config, &dataset)?
    } else {
        Trainer::new(train_config, &dataset)?
    };
    let result = trainer.run(&dataset, Some(&ckpt));
    write(&config.out.join("metrics.csv"), &trainer.csv())?;
    if let Err(e) = result {
        return Err(Failure::Runtime(anyhow!(
            "training failed at epoch {}: {e}; last checkpoint: {}",
            trainer.epoch().map_or("warm-up".into(), |e| (e + 1).to_string()),
            ckpt.display()
        )));
    }
    let last = trainer.log().last().expect("at least the initialization row");
    println!("final {}", summary(last.scores));
    Ok(())
}

fn load_model(config: &RunConfig, checkpoint: Option<PathBuf>, dataset: &Dataset) -> anyhow::Result<Model> {
    let path = checkpoint.unwrap_or_else(|| config.out.join("model.ckpt"));
    let model = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?.model;
    if model.spec.input_dim() != dataset.dim() {
        return Err(anyhow!(
            "checkpoint {} expects {}-dimensional samples but the dataset has {}",
            path.display(),
            model.spec.input_dim(),
            dataset.dim()
        ));
    }
    Ok(model)
}

fn assignments_csv(ev: &Evaluation, truth: Option<&[usize]>) -> String {
    let mut out = String::from(if truth.is_some() { "index,predicted,label\n" } else { "index,predicted\n" });
    for (i, p) in ev.labels.iter().enumerate() {
        match truth {
            Some(t) => out.push_str(&format!("{i},{p},{}\n", t[i])),
            None => out.push_str(&format!("{i},{p}\n")),
        }
    }
    out
}

fn cmd_eval(run: &RunArgs, checkpoint: Option<PathBuf>) -> Outcome {
    let config = usage(run.resolve(&[]))?;
    let train_config = usage(config.train_config().map_err(Into::into))?;
    let dataset = load_data(&config)?;
    let model = load_model(&config, checkpoint, &dataset)?;
    fs::create_dir_all(&config.out)?;
    let mut table = String::from("mode,nmi,acc,ari\n");
    let mut selected = None;
    for mode in [EvalMode::Cluster, EvalMode::Representation] {
        let ev = evaluate(&model, &dataset, mode, &train_config)?;
        println!("{mode}: {}", summary(ev.scores));
        if let Some(s) = ev.scores {
            table.push_str(&format!("{mode},{},{},{}\n", s.nmi, s.acc, s.ari));
        }
        if mode == config.mode {
            selected = Some(ev);
        }
    }
    if dataset.labels().is_some() {
        write(&config.out.join("eval.csv"), &table)?;
    }
    let ev = selected.expect("both modes evaluated");
    write(&config.out.join("assignments.csv"), &assignments_csv(&ev, dataset.labels()))?;
    Ok(())
}

fn cmd_project(run: &RunArgs, checkpoint: Option<PathBuf>, svg: bool) -> Outcome {
    let config = usage(run.resolve(&[]))?;
    let train_config = usage(config.train_config().map_err(Into::into))?;
    let dataset = load_data(&config)?;
    let model = load_model(&config, checkpoint, &dataset)?;
    fs::create_dir_all(&config.out)?;
    let features = model.instance_features(dataset.samples())?;
    let projection = pca(&features, 2)?;
    let predicted = evaluate(&model, &dataset, config.mode, &train_config)?.labels;
    let csv = projection_csv(&projection.coords, &predicted, dataset.labels())?;
    write(&config.out.join("projection.csv"), &csv)?;
    if svg || config.svg {
        let colors = dataset.labels().unwrap_or(&predicted);
        write(&config.out.join("projection.svg"), &render_svg(&projection.coords, colors)?)?;
    }
    println!(
        "projected {} samples; axis variances {:.4} {:.4}",
        dataset.len(),
        projection.variances[0],
        projection.variances[1]
    );
    Ok(())
}

fn cmd_bench(run: &RunArgs, grid: Option<String>, seeds: Option<usize>) -> Outcome {
    let mut extra = Vec::new();
    if let Some(g) = grid {
        extra.push(("bench.grid".to_string(), g));
    }
    if let Some(s) = seeds {
        extra.push(("bench.seeds".to_string(), s.to_string()));
    }
    let config = usage(run.resolve(&extra))?;
    let base = usage(config.train_config().map_err(Into::into))?;
    if config.seeds == 0 {
        return Err(Failure::Usage(anyhow!("--seeds must be at least 1")));
    }
    prepare_out(&config)?;
    let grid_cells = cells(config.grid, &base)?;
    let seeds: Vec<u64> = (0..config.seeds as u64).map(|i| base.seed + i).collect();
    let results = run_grid(&grid_cells, &seeds, config.mode, |seed| config.dataset(seed));
    let mut csv = String::from("cell,nmi,acc,ari,failed,runs\n");
    for r in &results {
        let m = r.median.map_or(",,".into(), |s| format!("{},{},{}", s.nmi, s.acc, s.ari));
        csv.push_str(&format!("\"{}\",{m},{},{}\n", r.name, r.failures(), r.runs.len()));
    }
    write(&config.out.join("bench.csv"), &csv)?;
    print!("{}", render_table(&results));
    Ok(())
}
