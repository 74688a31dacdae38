//! `birf`: train, render, evaluate and inspect binarized radiance fields.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use birf_core::snapshot::{self, report_size, SizeReport};
use birf_core::train::{stream_rng, train, INIT_STREAM};
use birf_core::{FieldModel, SceneModel, Split, WeightPrecision};
use clap::{Args, Parser, Subcommand};

use config::{set_iterations, Precision, Preset, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "birf", version, about = "Binarized hash-grid radiance fields")]
struct Cli {
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a snapshot, metrics log and eval report.
    Train(TrainArgs),
    /// Render views of a split from a snapshot to PNG.
    Render(RenderArgs),
    /// Render a held-out split and write PSNR/SSIM.
    Eval(EvalArgs),
    /// Print a snapshot's header and size breakdown.
    Info(InfoArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; keys it sets override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Built-in oracle scene (`spheres`) or a scene JSON file.
    #[arg(long, conflicts_with = "data")]
    oracle: Option<String>,
    /// Dataset directory (Blender `transforms_*.json` or NSVF `pose/`, `rgb/` layout).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Features per grid entry (1, 2, 4 or 8).
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Iterations; the learning-rate schedule is rescaled to match.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    /// Do not echo log records to stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Snapshot to render (default: `<out>/model.birf`).
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Render only this view index.
    #[arg(long)]
    view: Option<usize>,
    /// Directory for PNGs (default: `<out>/renders/<split>`).
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Snapshot to evaluate (default: `<out>/model.birf`).
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Report path (default: `<out>/eval_<split>.tsv`).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InfoArgs {
    snapshot: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = setup_threads(cli.deterministic) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn setup_threads(deterministic: bool) -> anyhow::Result<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var("BIRF_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| UsageError::new("BIRF_THREADS", format!("`{v}` is not a thread count")))?),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, UsageError> {
    let base = RunConfig::preset(args.preset);
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(&base, path)?,
        None => base,
    };
    if let Some(o) = &args.oracle {
        cfg.data.oracle = Some(o.clone());
        cfg.data.path = None;
    }
    if let Some(d) = &args.data {
        cfg.data.path = Some(d.clone());
        cfg.data.oracle = None;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&args.cfg)?;
    if let Some(f) = args.feature_dim {
        cfg.grid.feature_dim = f;
    }
    if let Some(n) = args.iters {
        set_iterations(&mut cfg.train, n);
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = args.rays {
        cfg.train.rays_per_batch = r;
    }
    if let Some(l) = args.lambda {
        cfg.train.lambda_sparsity = l;
    }
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    let field_config = cfg.field_config()?;

    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    std::fs::write(cfg.out.join("config.toml"), cfg.to_toml())?;

    let train_set = cfg.load_split(Split::Train).context("loading train split")?;
    let test_set = cfg.load_split(Split::Test).context("loading test split")?;
    let model = FieldModel::new(field_config, &mut stream_rng(cfg.train.seed, INIT_STREAM))?;

    let log_path = cfg.out.join("metrics.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let quiet = args.quiet;
    let outcome = train(model, &train_set, Some(&test_set), &cfg.train, &mut |record| {
        let line = serde_json::to_string(record).expect("log record serializes");
        writeln!(log, "{line}").and_then(|_| log.flush())?;
        if !quiet {
            println!("{line}");
        }
        Ok(())
    })?;

    let bytes = snapshot::save(&outcome.scene, &cfg.snapshot_path(), cfg.precision.into())?;
    if let Some(report) = &outcome.final_report {
        std::fs::write(cfg.out.join("eval_test.tsv"), report.to_text())?;
        println!("final test PSNR {:.6} dB, SSIM {:.6}", report.mean_psnr_db, report.mean_ssim);
    }
    println!("wrote {} ({bytes} bytes)", cfg.snapshot_path().display());
    Ok(())
}

fn load_scene(cfg: &RunConfig, snapshot: Option<&Path>) -> anyhow::Result<SceneModel> {
    let path = snapshot.map(Path::to_path_buf).unwrap_or_else(|| cfg.snapshot_path());
    if !path.exists() {
        anyhow::bail!("snapshot not found: {}", path.display());
    }
    snapshot::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_render(args: RenderArgs) -> anyhow::Result<()> {
    let cfg = resolve_config(&args.cfg)?;
    let scene = load_scene(&cfg, args.snapshot.as_deref())?;
    let dataset = cfg.load_split(args.split).with_context(|| format!("loading {} split", args.split))?;
    let views: Vec<usize> = match args.view {
        Some(v) if v >= dataset.len() => {
            return Err(UsageError::new("--view", format!("{v} out of range ({} views)", dataset.len())).into())
        }
        Some(v) => vec![v],
        None => (0..dataset.len()).collect(),
    };
    let dir = args.images.unwrap_or_else(|| cfg.out.join("renders").join(args.split.name()));
    std::fs::create_dir_all(&dir)?;
    let occ = scene.rebuild_occupancy()?;
    let options = scene.render_options();
    for v in views {
        let img = birf_core::render::render_image(&scene.field, &occ, &dataset.cameras[v], &options)?;
        let path = dir.join(format!("{}_{v:03}.png", args.split));
        img.save_png(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = resolve_config(&args.cfg)?;
    let scene = load_scene(&cfg, args.snapshot.as_deref())?;
    let dataset = cfg.load_split(args.split).with_context(|| format!("loading {} split", args.split))?;
    let (report, _) = scene.evaluate(&dataset)?;
    let path = args.report.unwrap_or_else(|| cfg.out.join(format!("eval_{}.tsv", args.split)));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, report.to_text())?;
    print!("{}", report.to_text());
    println!("mean_psnr_db {}", report.mean_psnr_db);
    Ok(())
}

fn cmd_info(args: InfoArgs) -> anyhow::Result<()> {
    let info = snapshot::info(&args.snapshot).with_context(|| format!("reading {}", args.snapshot.display()))?;
    let h = &info.header;
    let g = &h.field.grid;
    println!("format version   {}", info.version);
    println!("weight precision {:?}", h.precision);
    println!("feature dim      {}", g.feature_dim);
    let res = |levels: &[birf_core::GridLevelConfig]| levels.iter().map(|l| l.resolution.to_string()).collect::<Vec<_>>().join(",");
    println!(
        "3D levels        {} (resolutions {}; table {})",
        g.levels_3d.len(),
        res(&g.levels_3d),
        g.levels_3d.first().map_or(0, |l| l.table_size)
    );
    println!(
        "2D levels        {} x 3 planes (resolutions {}; table {})",
        g.levels_2d.len(),
        res(&g.levels_2d),
        g.levels_2d.first().map_or(0, |l| l.table_size)
    );
    println!("density MLP      {:?}", h.density_spec);
    println!("color MLP        {:?}", h.color_spec);
    println!("scene transform  scale {} offset {:?}", h.transform.scale, h.transform.offset);
    let size: SizeReport = report_size(&h.field);
    println!("grid payload     {} bits, {} bytes, {:.4} MB", size.grid_bits, size.grid_bytes, size.grid_mb());
    println!(
        "MLP payload      {} params: {} bytes at 32-bit, {} bytes at 16-bit",
        size.mlp_params, size.mlp_bytes_f32, size.mlp_bytes_f16
    );
    println!("header           {} bytes (+12 byte preamble)", info.header_bytes);
    println!(
        "total            {} bytes, {:.4} MB (16-bit MLP total: {:.4} MB)",
        info.file_bytes,
        snapshot::format_bytes_mb(info.file_bytes as u64),
        size.total_mb(WeightPrecision::F16)
    );
    println!("checksum         ok ({:#010x})", h.payload_crc);
    Ok(())
}
