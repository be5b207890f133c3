//! `demnet`: synthetic data generation, ingestion, training, evaluation,
//! prediction and profile export.

mod config;
mod preview;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use demnet::data::{ingest, read_dem, read_slc, write_dem, DatasetManifest, SplitTag, WindowSpec};
use demnet::metrics::range_profile;
use demnet::model::{load_checkpoint, Architecture};
use demnet::synth::gen_dataset;
use demnet::train::{evaluate_checkpoint, predict_tile, train_from_manifest};
use demnet::Tensor;

use config::{EvalSection, FileConfig, GenerateSection, IngestSection, PredictSection, ProfileSection, TrainSection};

/// Thread count for data-parallel work; defaults to all cores.
const THREADS_ENV: &str = "DEMNET_THREADS";

#[derive(Parser, Debug)]
#[command(name = "demnet", version, about = "Elevation maps from single SAR images")]
struct Cli {
    /// TOML file with one table per subcommand; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic SLC/DEM tile pairs and a sources manifest.
    Generate(GenerateArgs),
    /// Cut windows from tile pairs, split them and fit normalisation.
    Ingest(IngestArgs),
    /// Train on a manifest's training split.
    Train(TrainArgs),
    /// Per-image RMSE and elevation-binned error on one split.
    Eval(EvalArgs),
    /// Predict the elevation map of one SLC tile.
    Predict(PredictArgs),
    /// Export elevation along azimuth at fixed range rows of a DEM tile.
    Profile(ProfileArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_name = "M")]
    elevation_min: Option<f64>,
    #[arg(long, value_name = "M")]
    elevation_max: Option<f64>,
    /// Render without speckle.
    #[arg(long)]
    no_speckle: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Manifest listing the source tile pairs (as written by `generate`).
    #[arg(long, value_name = "PATH")]
    sources: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Split seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    target: Option<usize>,
    /// Spatially disjoint row-band split instead of the random one.
    #[arg(long)]
    block_split: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sets both the initialisation and the shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// `test` (default) or `train`.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Square SLC tile covering one window.
    #[arg(long, value_name = "PATH")]
    slc: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write an 8-bit grayscale PNG.
    #[arg(long)]
    preview: bool,
    /// Forward passes timed for the latency report.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Float32 DEM tile (ground truth or prediction).
    #[arg(long, value_name = "PATH")]
    dem: Option<PathBuf>,
    /// Range row index; repeat for several. Defaults to 30 and 120.
    #[arg(long = "range", value_name = "ROW")]
    ranges: Vec<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<demnet::Error>().map(|d| d.kind()).unwrap_or("runtime");
            let message = format!("{e:#}");
            eprintln!("error kind={kind} message={}", serde_json::to_string(&message).unwrap_or(message));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let file = match &cli.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Generate(a) => generate(file.generate.unwrap_or_default(), a),
        Command::Ingest(a) => ingest_cmd(file.ingest.unwrap_or_default(), a),
        Command::Train(a) => train_cmd(file.train.unwrap_or_default(), a),
        Command::Eval(a) => eval_cmd(file.eval.unwrap_or_default(), a),
        Command::Predict(a) => predict_cmd(file.predict.unwrap_or_default(), a),
        Command::Profile(a) => profile_cmd(file.profile.unwrap_or_default(), a),
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    Ok(())
}

/// Print the resolved settings on stderr and keep a copy next to the outputs.
fn log_config(name: &str, resolved: &impl Serialize, out_dir: &Path) -> anyhow::Result<()> {
    let json = serde_json::to_string(resolved)?;
    eprintln!("demnet {name}: resolved config {json}");
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(format!("{name}_config.json"));
    fs::write(&path, serde_json::to_string_pretty(resolved)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn required<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    match value {
        Some(v) => Ok(v),
        None => bail!("missing {flag} (flag or config file)"),
    }
}

fn generate(mut cfg: GenerateSection, a: GenerateArgs) -> anyhow::Result<()> {
    cfg.pairs = a.pairs.unwrap_or(cfg.pairs);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.out = a.out.or(cfg.out);
    cfg.terrain.size = a.size.unwrap_or(cfg.terrain.size);
    cfg.terrain.beta = a.beta.unwrap_or(cfg.terrain.beta);
    cfg.terrain.elevation_min = a.elevation_min.unwrap_or(cfg.terrain.elevation_min);
    cfg.terrain.elevation_max = a.elevation_max.unwrap_or(cfg.terrain.elevation_max);
    if a.no_speckle {
        cfg.render.speckle = false;
    }
    let out = required(cfg.out.clone(), "--out")?;
    log_config("generate", &cfg, &out)?;
    let manifest = gen_dataset(&out, cfg.pairs, &cfg.terrain_config(), &cfg.render_config(), cfg.seed)?;
    println!("wrote {} tile pairs to {}", manifest.sources.len(), out.display());
    Ok(())
}

fn ingest_cmd(mut cfg: IngestSection, a: IngestArgs) -> anyhow::Result<()> {
    cfg.sources = a.sources.or(cfg.sources);
    cfg.out = a.out.or(cfg.out);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.block_split |= a.block_split;
    let sources_path = required(cfg.sources.clone(), "--sources")?;
    let listing = DatasetManifest::read(&sources_path)?;
    let src_dir = parent_dir(&sources_path);
    let window = WindowSpec {
        window: a.window.or(cfg.window).unwrap_or(listing.window.window),
        step: a.step.or(cfg.step).unwrap_or(listing.window.step),
        target: a.target.or(cfg.target).unwrap_or(listing.window.target),
    };
    cfg.window = Some(window.window);
    cfg.step = Some(window.step);
    cfg.target = Some(window.target);
    let out = cfg.out.clone().unwrap_or_else(|| src_dir.clone());
    cfg.out = Some(out.clone());
    log_config("ingest", &cfg, &out)?;

    // tile paths stay relative when the manifest lands next to them
    let same_dir = fs::canonicalize(&out).ok() == fs::canonicalize(&src_dir).ok();
    let mut sources = listing.sources;
    if !same_dir {
        for s in &mut sources {
            s.slc = absolute(&src_dir.join(&s.slc))?;
            s.dem = absolute(&src_dir.join(&s.dem))?;
        }
    }
    let base = if same_dir { src_dir } else { PathBuf::from("/") };
    let manifest = ingest(sources, &base, window, cfg.seed, cfg.split_fraction, cfg.block_split)?;
    let path = out.join("manifest.jsonl");
    manifest.write(&path)?;
    let count = |t| manifest.samples_in(t).count();
    println!(
        "wrote {}: {} train, {} test, {} excluded samples",
        path.display(),
        count(SplitTag::Train),
        count(SplitTag::Test),
        count(SplitTag::Excluded)
    );
    Ok(())
}

fn train_cmd(mut cfg: TrainSection, a: TrainArgs) -> anyhow::Result<()> {
    let t = &mut cfg.train;
    t.manifest = a.manifest.or(t.manifest.take());
    if let Some(s) = a.seed {
        t.init_seed = s;
        t.shuffle_seed = s;
    }
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    cfg.out = a.out.or(cfg.out);
    cfg.resume = a.resume.or(cfg.resume);
    let manifest = required(cfg.train.manifest.clone(), "--manifest")?;
    let out = required(cfg.out.clone(), "--out")?;
    log_config("train", &cfg, &out)?;
    let arch = if cfg.reduced { Architecture::reduced() } else { Architecture::demnet() };
    let outcome = train_from_manifest(&cfg.train, &manifest, &out, arch, cfg.resume.as_deref(), |rec| {
        let test = rec.test_rmse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        eprintln!(
            "epoch {} train_loss {:.4} train_rmse {:.4} test_rmse {test} ({:.1} s)",
            rec.stats.epoch, rec.stats.train_loss, rec.stats.train_rmse, rec.wall_time
        );
    })?;
    println!("wrote {} after epoch {}", outcome.final_path.display(), outcome.checkpoint.epoch);
    Ok(())
}

fn eval_cmd(mut cfg: EvalSection, a: EvalArgs) -> anyhow::Result<()> {
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint);
    cfg.manifest = a.manifest.or(cfg.manifest);
    cfg.out = a.out.or(cfg.out);
    cfg.split = a.split.unwrap_or(cfg.split);
    let split = match cfg.split.as_str() {
        "test" => SplitTag::Test,
        "train" => SplitTag::Train,
        other => bail!("--split must be test or train, got {other:?}"),
    };
    let ckpt_path = required(cfg.checkpoint.clone(), "--checkpoint")?;
    let manifest_path = required(cfg.manifest.clone(), "--manifest")?;
    let out = required(cfg.out.clone(), "--out")?;
    log_config("eval", &cfg, &out)?;
    let ckpt = load_checkpoint::<f32>(&ckpt_path)?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    let (ids, report) = evaluate_checkpoint(&ckpt, &manifest, &parent_dir(&manifest_path), split)?;
    report.write_csv(&out, &ids)?;
    println!("images={} mean_rmse_m={:?}", report.per_image_rmse.len(), report.mean_rmse);
    Ok(())
}

fn predict_cmd(mut cfg: PredictSection, a: PredictArgs) -> anyhow::Result<()> {
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint);
    cfg.slc = a.slc.or(cfg.slc);
    cfg.out = a.out.or(cfg.out);
    cfg.preview |= a.preview;
    cfg.repeats = a.repeats.unwrap_or(cfg.repeats);
    let ckpt_path = required(cfg.checkpoint.clone(), "--checkpoint")?;
    let slc_path = required(cfg.slc.clone(), "--slc")?;
    let out = required(cfg.out.clone(), "--out")?;
    log_config("predict", &cfg, &out)?;
    let ckpt = load_checkpoint::<f32>(&ckpt_path)?;
    let slc = read_slc(&slc_path)?;
    let (dem, latency) = predict_tile(&ckpt, &slc, cfg.repeats)?;
    let dem_path = out.join("prediction.dem.sart");
    write_dem(&dem_path, &dem)?;
    if cfg.preview {
        preview::write_png(&dem, &out.join("prediction.png"))?;
    }
    println!(
        "wrote {} preprocess_ms={:.3} forward_ms_median={:.3} forward_ms_min={:.3} repeats={}",
        dem_path.display(),
        latency.preprocess_ms,
        latency.forward_ms_median,
        latency.forward_ms_min,
        latency.repeats
    );
    Ok(())
}

fn profile_cmd(mut cfg: ProfileSection, a: ProfileArgs) -> anyhow::Result<()> {
    cfg.dem = a.dem.or(cfg.dem);
    cfg.out = a.out.or(cfg.out);
    if !a.ranges.is_empty() {
        cfg.ranges = a.ranges;
    }
    let dem_path = required(cfg.dem.clone(), "--dem")?;
    let out = required(cfg.out.clone(), "--out")?;
    log_config("profile", &cfg, &out)?;
    let dem = read_dem(&dem_path)?;
    let t = Tensor::from_vec(&[dem.rows, dem.cols, 1], dem.data)?;
    let mut csv = String::from("range,azimuth,elevation_m\n");
    for &r in &cfg.ranges {
        for (az, h) in range_profile(&t, r)?.iter().enumerate() {
            csv.push_str(&format!("{r},{az},{h}\n"));
        }
    }
    let path = out.join("profile.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} ({} rows)", path.display(), cfg.ranges.len() * dem.cols);
    Ok(())
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}
