use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn embedclust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embedclust"))
        .args(args)
        .env_remove("EMBEDCLUSTER_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small(out: &Path) -> Vec<String> {
    [
        "--dataset",
        "blobs",
        "--k",
        "3",
        "--epochs",
        "6",
        "--seed",
        "7",
        "--set",
        "data.per_cluster=40",
        "--set",
        "kmeans.restarts=3",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

fn run(sub: &str, base: &[String], extra: &[&str]) -> Output {
    let mut args: Vec<&str> = vec![sub];
    args.extend(base.iter().map(String::as_str));
    args.extend(extra);
    embedclust(&args)
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_the_last_row() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    let o = run("train", &base, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("final NMI="));
    for f in ["metrics.csv", "model.ckpt", "config.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 7);
    let last: Vec<&str> = metrics.lines().last().unwrap().split(',').collect();

    let config = dir.path().join("config.txt").display().to_string();
    let e = embedclust(&["eval", "--config", &config]);
    assert!(e.status.success());
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    let cluster: Vec<&str> = eval.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(cluster, ["cluster", last[6], last[7], last[8]]);
    assert!(eval.lines().nth(2).unwrap().starts_with("representation,"));
    let assignments = fs::read_to_string(dir.path().join("assignments.csv")).unwrap();
    assert_eq!(assignments.lines().count(), 1 + 120);
}

#[test]
fn identical_seeds_give_identical_logs_and_resume_matches() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run("train", &small(a.path()), &[]).status.success());
    assert!(run("train", &small(b.path()), &[]).status.success());
    let read = |d: &Path| fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    assert!(run("train", &small(c.path()), &["--epochs", "3"]).status.success());
    let o = run("train", &small(c.path()), &["--resume"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(a.path()), read(c.path()));
    assert_eq!(fs::read(a.path().join("model.ckpt")).unwrap(), fs::read(c.path().join("model.ckpt")).unwrap());
}

#[test]
fn ablation_flags_reach_the_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "train",
        &small(dir.path()),
        &["--anchor-variant", "jsd", "--inputs", "raw,raw,raw", "--alpha", "1", "--tau", "0.2", "--nu", "2"],
    );
    assert!(o.status.success());
    let config = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    for line in ["trainer.anchor_variant=jsd", "trainer.inputs=raw,raw,raw", "trainer.alpha=1", "trainer.tau=0.2", "trainer.nu=2"] {
        assert!(config.lines().any(|l| l == line), "{line}");
    }
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let args = ["train", "--k", "2", "--epochs", "1", "--set", "data.per_cluster=10", "--out", &out];
    let with_env = |seed: &str, extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_embedclust"))
            .args(args)
            .args(extra)
            .env("EMBEDCLUSTER_SEED", seed)
            .output()
            .unwrap()
    };
    let seed_line = || {
        fs::read_to_string(dir.path().join("config.txt"))
            .unwrap()
            .lines()
            .find(|l| l.starts_with("trainer.seed="))
            .unwrap()
            .to_string()
    };
    assert!(with_env("42", &[]).status.success());
    assert_eq!(seed_line(), "trainer.seed=42");
    assert!(with_env("42", &["--seed", "3"]).status.success());
    assert_eq!(seed_line(), "trainer.seed=3");
    let file = dir.path().join("run.conf");
    fs::write(&file, "trainer.seed=9\n").unwrap();
    assert!(with_env("42", &["--config", file.to_str().unwrap()]).status.success());
    assert_eq!(seed_line(), "trainer.seed=9");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    assert_eq!(run("train", &base, &["--k", "four"]).status.code(), Some(2));
    assert_eq!(run("train", &base, &["--anchor-variant", "l2"]).status.code(), Some(2));
    assert_eq!(run("train", &base, &["--inputs", "raw,aug"]).status.code(), Some(2));
    assert_eq!(embedclust(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(embedclust(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run("eval", &base, &[]).status.code(), Some(1));
    assert_eq!(embedclust(&["--help"]).status.code(), Some(0));

    let missing = dir.path().join("absent.csv").display().to_string();
    assert_eq!(embedclust(&["train", "--data-path", &missing, "--out", &dir.path().display().to_string()]).status.code(), Some(1));
}

#[test]
fn divergence_exits_with_checkpoint_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("train", &small(dir.path()), &["--lr", "1e308", "--epochs", "3"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.ckpt"), "{err}");
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn eval_rejects_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run("train", &small(dir.path()), &[]).status.success());
    let o = run("eval", &small(dir.path()), &["--dataset", "rings"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unlabelled_file_data_omits_metrics_but_writes_assignments() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("points.csv");
    let mut text = String::from("a,b\n");
    for i in 0..30 {
        let c = if i % 2 == 0 { 0.0 } else { 8.0 };
        text.push_str(&format!("{},{}\n", c + (i as f64) * 0.01, c - (i as f64) * 0.02));
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("run");
    let args = |sub| {
        vec![
            sub,
            "--data-path".into(),
            csv.display().to_string(),
            "--k".into(),
            "2".into(),
            "--epochs".into(),
            "2".into(),
            "--batch-size".into(),
            "8".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let call = |a: Vec<String>| embedclust(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let t = call(args("train".into()));
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    assert!(stdout(&t).contains("unavailable"));
    let e = call(args("eval".into()));
    assert!(e.status.success());
    assert!(!out.join("eval.csv").exists());
    let assignments = fs::read_to_string(out.join("assignments.csv")).unwrap();
    assert!(assignments.starts_with("index,predicted\n"));
    assert_eq!(assignments.lines().count(), 31);
}

#[test]
fn projection_csv_separates_trained_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    assert!(run("train", &base, &["--epochs", "20"]).status.success());
    let o = run("project", &base, &["--svg"]);
    assert!(o.status.success());
    assert!(fs::read_to_string(dir.path().join("projection.svg")).unwrap().contains("<circle"));
    let csv = fs::read_to_string(dir.path().join("projection.csv")).unwrap();
    let rows: Vec<(f64, f64, usize)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 120);

    let mut centers = vec![(0.0, 0.0, 0.0); 3];
    for &(x, y, l) in &rows {
        centers[l].0 += x;
        centers[l].1 += y;
        centers[l].2 += 1.0;
    }
    let centers: Vec<(f64, f64)> = centers.iter().map(|c| (c.0 / c.2, c.1 / c.2)).collect();
    let spread = (rows.iter().map(|&(x, y, l)| (x - centers[l].0).powi(2) + (y - centers[l].1).powi(2)).sum::<f64>() / rows.len() as f64).sqrt();
    for a in 0..3 {
        for b in a + 1..3 {
            let d = ((centers[a].0 - centers[b].0).powi(2) + (centers[a].1 - centers[b].1).powi(2)).sqrt();
            assert!(d > spread, "centers {a},{b} at {d} vs spread {spread}");
        }
    }
}

#[test]
fn bench_prints_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    let o = run("bench", &base, &["--grid", "losses", "--seeds", "2", "--epochs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    for row in ["Instance ", "Instance+Cluster ", "Instance+Cluster+Anchor "] {
        assert!(table.lines().any(|l| l.starts_with(row)), "{table}");
    }
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let o = run("bench", &base, &["--grid", "anchors", "--seeds", "1", "--epochs", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 5);
    assert_eq!(run("bench", &base, &["--grid", "everything"]).status.code(), Some(2));
}
