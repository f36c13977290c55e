//! Ablation grids: loss subsets, anchor variants and input routings, each
//! trained over several seeds and summarized by per-cell medians.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::augment::Routing;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{AnchorVariant, LossWeights};
use crate::metrics::Scores;
use crate::trainer::{evaluate, train, EvalMode, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Grid {
    /// Instance / Instance+Cluster / Instance+Cluster+Anchor.
    #[default]
    Losses,
    /// One row per anchor variant.
    Anchors,
    /// x+x+x / T(x)+T(x)+T(x) / x+T(x)+T(x).
    Inputs,
    /// The base configuration alone.
    Single,
}

impl Grid {
    pub const ALL: [Grid; 4] = [Grid::Losses, Grid::Anchors, Grid::Inputs, Grid::Single];

    pub fn name(self) -> &'static str {
        match self {
            Grid::Losses => "losses",
            Grid::Anchors => "anchors",
            Grid::Inputs => "inputs",
            Grid::Single => "single",
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grid::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown grid {s:?} (expected losses, anchors, inputs or single)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub name: String,
    pub config: TrainConfig,
}

/// The cells of `grid`, derived from `base` by changing one axis.
pub fn cells(grid: Grid, base: &TrainConfig) -> Result<Vec<Cell>> {
    let cell = |name: String, config: TrainConfig| Cell { name, config };
    Ok(match grid {
        Grid::Losses => {
            let w = base.weights;
            let (a, b) = (w.instance(), w.cluster());
            vec![
                cell("Instance".into(), TrainConfig { weights: LossWeights::new(a, 0.0, 0.0)?, ..base.clone() }),
                cell("Instance+Cluster".into(), TrainConfig { weights: LossWeights::new(a, b, 0.0)?, ..base.clone() }),
                cell("Instance+Cluster+Anchor".into(), base.clone()),
            ]
        }
        Grid::Anchors => AnchorVariant::ALL
            .into_iter()
            .map(|anchor| cell(anchor.formula().into(), TrainConfig { anchor, ..base.clone() }))
            .collect(),
        Grid::Inputs => [Routing::RAW_RAW_RAW, Routing::AUG_AUG_AUG, Routing::RAW_AUG_AUG]
            .into_iter()
            .map(|routing| cell(routing.label(), TrainConfig { routing, ..base.clone() }))
            .collect(),
        Grid::Single => vec![cell("base".into(), base.clone())],
    })
}

/// Outcome of one cell across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub name: String,
    /// Per seed, in seed order; `Err` carries the failure message.
    pub runs: Vec<(u64, std::result::Result<Scores, String>)>,
    /// Per-metric median over successful runs.
    pub median: Option<Scores>,
}

impl CellResult {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|(_, r)| r.is_err()).count()
    }
}

/// Median of a non-empty sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn median_scores(scores: &[Scores]) -> Option<Scores> {
    let pick = |f: fn(&Scores) -> f64| median(&scores.iter().map(f).collect::<Vec<_>>());
    Some(Scores {
        nmi: pick(|s| s.nmi)?,
        acc: pick(|s| s.acc)?,
        ari: pick(|s| s.ari)?,
    })
}

/// Trains one cell for one seed and scores the final model.
pub fn run_cell(config: &TrainConfig, dataset: &Dataset, mode: EvalMode) -> Result<Scores> {
    let trainer = train(config.clone(), dataset, None)?;
    evaluate(trainer.model(), dataset, mode, trainer.config())?
        .scores
        .ok_or_else(|| Error::argument("ablation needs a labelled dataset"))
}

/// Runs every (cell, seed) pair, in parallel across pairs. `dataset_for`
/// supplies the data for a seed, so synthetic benchmarks can redraw it.
/// A failing run is recorded and the rest of the grid continues.
pub fn run_grid<F>(cells: &[Cell], seeds: &[u64], mode: EvalMode, dataset_for: F) -> Vec<CellResult>
where
    F: Fn(u64) -> Result<Dataset> + Sync,
{
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let outcomes: Vec<std::result::Result<Scores, String>> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let config = TrainConfig { seed, ..cells[c].config.clone() };
            dataset_for(seed).and_then(|d| run_cell(&config, &d, mode)).map_err(|e| e.to_string())
        })
        .collect();
    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|c| CellResult {
            name: c.name.clone(),
            runs: Vec::with_capacity(seeds.len()),
            median: None,
        })
        .collect();
    for ((c, seed), outcome) in jobs.into_iter().zip(outcomes) {
        if let Err(e) = &outcome {
            ::log::warn!("cell {} seed {seed} failed: {e}", cells[c].name);
        }
        results[c].runs.push((seed, outcome));
    }
    for r in &mut results {
        let ok: Vec<Scores> = r.runs.iter().filter_map(|(_, s)| s.as_ref().ok().copied()).collect();
        r.median = median_scores(&ok);
    }
    results
}

/// Plain-text comparison table, one row per cell.
pub fn render_table(results: &[CellResult]) -> String {
    let width = results.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(4);
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n", "cell", "NMI", "ACC", "ARI", "failed");
    for r in results {
        let cells = match r.median {
            Some(s) => format!("{:>6.3}  {:>6.3}  {:>6.3}", s.nmi, s.acc, s.ari),
            None => format!("{:>6}  {:>6}  {:>6}", "-", "-", "-"),
        };
        out.push_str(&format!("{:<width$}  {cells}  {:>3}/{:<2}\n", r.name, r.failures(), r.runs.len()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::numcore::Rng;

    fn tiny() -> TrainConfig {
        TrainConfig {
            k: 2,
            epochs: 2,
            warmup_epochs: 1,
            batch_size: 8,
            hidden: vec![16],
            embed_dim: 8,
            head_out: 8,
            kmeans_restarts: 2,
            ..Default::default()
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn grid_layouts() {
        let base = TrainConfig::default();
        let names = |g| cells(g, &base).unwrap().into_iter().map(|c| c.name).collect::<Vec<_>>();
        assert_eq!(names(Grid::Losses), ["Instance", "Instance+Cluster", "Instance+Cluster+Anchor"]);
        assert_eq!(names(Grid::Inputs), ["x + x + x", "T(x) + T(x) + T(x)", "x + T(x) + T(x)"]);
        assert_eq!(names(Grid::Anchors).len(), 4);
        assert_eq!(cells(Grid::Single, &base).unwrap()[0].config, base);
        let losses = cells(Grid::Losses, &base).unwrap();
        assert_eq!(losses[0].config.weights, LossWeights::new(20.0, 0.0, 0.0).unwrap());
        assert_eq!(losses[1].config.weights, LossWeights::new(20.0, 0.1, 0.0).unwrap());
        for g in Grid::ALL {
            assert_eq!(g.to_string().parse::<Grid>().unwrap(), g);
        }
    }

    #[test]
    fn single_cell_matches_direct_training() {
        let data = |seed: u64| synth_blobs(2, 10, 4, 8.0, 1.0, &mut Rng::new(seed));
        let grid = cells(Grid::Single, &tiny()).unwrap();
        let results = run_grid(&grid, &[5, 6], EvalMode::Cluster, data);
        for (seed, scores) in &results[0].runs {
            let direct = run_cell(&TrainConfig { seed: *seed, ..tiny() }, &data(*seed).unwrap(), EvalMode::Cluster);
            assert_eq!(scores, &direct.map_err(|e| e.to_string()));
        }
        assert!(results[0].median.is_some());
    }

    #[test]
    fn failed_runs_do_not_stop_the_grid() {
        let grid = cells(Grid::Losses, &tiny()).unwrap();
        let results = run_grid(&grid, &[0, 1], EvalMode::Cluster, |seed| {
            let d = synth_blobs(2, 10, 4, 8.0, 1.0, &mut Rng::new(seed))?;
            Ok(if seed == 1 { d.without_labels() } else { d })
        });
        assert_eq!(results.len(), 3);
        for r in &results {
            assert_eq!(r.failures(), 1);
            assert!(r.median.is_some());
        }
        let table = render_table(&results);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("1/2"));
    }
}
