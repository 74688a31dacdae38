use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
train_views = 3
test_views = 2
resolution = 16

[grid]
levels_3d = 2
min_resolution_3d = 4
max_resolution_3d = 8
log2_table_size_3d = 10
levels_2d = 1
min_resolution_2d = 8
max_resolution_2d = 8
log2_table_size_2d = 8

[model]
hidden_width = 16

[train]
rays_per_batch = 64
eval_every = 0
log_every = 10

[train.occupancy]
resolution = 8
warmup_iters = 8
"#;

fn birf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_birf"))
        .args(args)
        .env("BIRF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

fn train_tiny(dir: &Path, name: &str) -> PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join(name);
    let o = birf(&[
        "--deterministic",
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--oracle",
        "spheres",
        "--feature-dim",
        "2",
        "--iters",
        "30",
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn final_log_psnr(run: &Path) -> f64 {
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    last["psnr_eval"].as_f64().unwrap()
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "run");
    for f in ["model.birf", "metrics.jsonl", "config.toml", "eval_test.tsv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let echoed = run.join("config.toml");
    let o = birf(&["--deterministic", "eval", "--config", echoed.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("mean_psnr_db")).unwrap().to_string();
    let psnr: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((psnr - final_log_psnr(&run)).abs() < 1e-6);

    let report = std::fs::read_to_string(run.join("eval_test.tsv")).unwrap();
    let rows: Vec<f64> = report
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("mean"))
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    let mean: f64 = report.lines().last().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!((mean - rows.iter().sum::<f64>() / 2.0).abs() < 1e-5);
}

#[test]
fn same_seed_gives_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "a");
    let b = train_tiny(dir.path(), "b");
    assert_eq!(final_log_psnr(&a), final_log_psnr(&b));
    assert_eq!(std::fs::read(a.join("model.birf")).unwrap(), std::fs::read(b.join("model.birf")).unwrap());
}

#[test]
fn unsupported_feature_dim_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = birf(&["train", "--oracle", "spheres", "--feature-dim", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.feature_dim"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlamda = 1.0\n").unwrap();
    let o = birf(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

#[test]
fn render_info_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "run");
    let cfg = run.join("config.toml");
    let cfg = cfg.to_str().unwrap();

    let o = birf(&["render", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pngs = std::fs::read_dir(run.join("renders/test")).unwrap().count();
    assert_eq!(pngs, 2);

    let single = dir.path().join("single");
    let o = birf(&["render", "--config", cfg, "--view", "0", "--images", single.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(&single).unwrap().count(), 1);

    let o = birf(&["render", "--config", cfg, "--view", "7"]);
    assert_eq!(o.status.code(), Some(2));

    let snap = run.join("model.birf");
    let o = birf(&["info", snap.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("grid payload"));
    assert!(stdout(&o).contains("checksum         ok"));

    let mut bytes = std::fs::read(&snap).unwrap();
    let n = bytes.len();
    bytes[n - 5] ^= 0x10;
    let bad = dir.path().join("bad.birf");
    std::fs::write(&bad, &bytes).unwrap();
    let o = birf(&["render", "--config", cfg, "--snapshot", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
    let o = birf(&["info", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = birf(&["render", "--config", cfg, "--snapshot", dir.path().join("nope.birf").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("snapshot not found"), "{}", stderr(&o));
}

#[test]
fn missing_split_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "run");
    let empty = dir.path().join("empty_dataset");
    std::fs::create_dir_all(&empty).unwrap();
    let o = birf(&[
        "eval",
        "--config",
        run.join("config.toml").to_str().unwrap(),
        "--data",
        empty.to_str().unwrap(),
        "--split",
        "val",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("transforms_val.json"), "{}", stderr(&o));
}

#[test]
fn info_on_base_config_shows_storage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.toml");
    std::fs::write(
        &cfg,
        "[grid]\nfeature_dim = 1\n[data]\ntrain_views = 1\ntest_views = 1\nresolution = 16\n[train.occupancy]\nresolution = 16\n",
    )
    .unwrap();
    let out = dir.path().join("base");
    let o = birf(&[
        "train",
        "--preset",
        "full",
        "--config",
        cfg.to_str().unwrap(),
        "--oracle",
        "spheres",
        "--iters",
        "0",
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = birf(&["info", out.join("model.birf").to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("6377281 bits"), "{text}");
    assert!(text.contains("0.7602 MB"), "{text}");
}
