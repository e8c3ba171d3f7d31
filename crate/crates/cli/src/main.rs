use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use socialpose_core::checkpoint::{self, DenoiserCheckpoint};
use socialpose_core::config::ExperimentConfig;
use socialpose_core::dataset::DemoDataset;
use socialpose_core::evalbench::{self, EvalReport};
use socialpose_core::kv::KvDoc;
use socialpose_core::netpbm;
use socialpose_core::observation::{self, ObsMode, ObsSource, OBS_SIZE};
use socialpose_core::pose::{self, JointId};
use socialpose_core::sampler::{ActionPolicy, DiffusionPolicy};
use socialpose_core::synthscene::{self, RawRenderer};
use socialpose_core::trainer;
use socialpose_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "socialpose",
    version,
    about = "Diffusion behavior cloning of facilitator pose dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (key=value); missing keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the config observation mode.
    #[arg(long, value_name = "raw|plotted")]
    obs: Option<ObsMode>,
    /// Extra config overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic session and export datasets for both observation modes.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a denoiser on a dataset; writes the checkpoint and per-epoch metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory, or a synth output holding `raw/` and `plotted/`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Print one sampled action for a single observation image.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        /// PPM image; full-size frames are resized, 128x128 ones used as-is.
        #[arg(long, value_name = "PATH")]
        obs_file: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out split and write the metrics file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Time observation construction plus sampling and write metrics and scatter files.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Displacement statistics for one facilitator joint.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "NAME", default_value = "RWrist")]
        joint: JointId,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::Stats { .. } => "stats",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth { common }
            | Command::Train { common, .. }
            | Command::Sample { common, .. }
            | Command::Eval { common, .. }
            | Command::Bench { common, .. }
            | Command::Stats { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(mode) = common.obs {
        cfg.obs_mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run record: command, effective config, seeds, and hashes of every input and output.
struct Manifest {
    doc: KvDoc,
}

impl Manifest {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        let mut doc = KvDoc::new();
        doc.set("command", command);
        doc.set("version", env!("CARGO_PKG_VERSION"));
        doc.set("seed.experiment", cfg.seed);
        doc.set("seed.scene", cfg.scene.seed);
        doc.set("seed.train", cfg.train.seed);
        doc.set("seed.sampler", cfg.sampler.seed);
        for (k, v) in cfg.to_kv().entries() {
            doc.set(format!("config.{k}"), v);
        }
        Self { doc }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.doc.set(key, value);
    }

    fn artifact(&mut self, role: &str, name: &str, path: &Path) -> Result<()> {
        self.doc.set(format!("{role}.{name}.path"), path.display());
        self.doc
            .set(format!("{role}.{name}.sha256"), hash_path(path)?);
        Ok(())
    }

    fn write(&self, out: &Path, command: &str) -> Result<PathBuf> {
        let path = out.join(format!("manifest_{command}.txt"));
        write_file(&path, self.doc.to_text().as_bytes())?;
        Ok(path)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// SHA-256 of a file, or of a directory's files (relative name then
/// contents, sorted by name, recursively).
fn hash_path(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.as_bytes());
            hasher.update([0u8]);
            let full = path.join(&rel);
            hasher.update(std::fs::read(&full).map_err(io_err(&full))?);
        }
    } else {
        hasher.update(std::fs::read(path).map_err(io_err(path))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("walk stays under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))
}

/// Accepts a dataset directory or a synth output directory holding one per mode.
fn resolve_dataset(dir: &Path, mode: ObsMode) -> PathBuf {
    if dir.join("session.meta").is_file() {
        dir.to_path_buf()
    } else {
        dir.join(mode.as_str())
    }
}

fn run(command: Command) -> Result<()> {
    let common = command.common().clone();
    let name = command.name();
    let cfg = load_config(&common)?;
    create_out(&common.out)?;
    let mut manifest = Manifest::new(name, &cfg);
    match command {
        Command::Synth { .. } => cmd_synth(&cfg, &common.out, &mut manifest)?,
        Command::Train { data, .. } => cmd_train(&cfg, &data, &common.out, &mut manifest)?,
        Command::Sample { ckpt, obs_file, .. } => {
            cmd_sample(&cfg, &ckpt, &obs_file, &mut manifest)?
        }
        Command::Eval { ckpt, data, .. } => {
            cmd_eval(&cfg, &ckpt, &data, &common.out, &mut manifest)?
        }
        Command::Bench { ckpt, data, .. } => {
            cmd_bench(&cfg, &ckpt, &data, &common.out, &mut manifest)?
        }
        Command::Stats { data, joint, .. } => {
            cmd_stats(&cfg, &data, joint, &common.out, &mut manifest)?
        }
    }
    manifest.write(&common.out, name)?;
    Ok(())
}

fn cmd_synth(cfg: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let session = synthscene::generate_session(&cfg.scene)?;
    for mode in ObsMode::ALL {
        let dir = out.join(mode.as_str());
        let ds = synthscene::export_dataset(&session, mode, &dir)?;
        manifest.artifact("output", mode.as_str(), &dir)?;
        println!("{}: {} pairs -> {}", mode, ds.len(), dir.display());
    }
    Ok(())
}

fn cmd_train(
    cfg: &ExperimentConfig,
    data: &Path,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let dir = resolve_dataset(data, cfg.obs_mode);
    let ds = DemoDataset::import(&dir)?;
    manifest.artifact("input", "dataset", &dir)?;
    let schedule = cfg.schedule.build()?;
    let outcome = trainer::train(&ds, &cfg.train, &cfg.model, &schedule)?;

    let ckpt_path = out.join("model.ckpt");
    checkpoint::save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    let metrics_path = out.join("train_metrics.csv");
    write_file(
        &metrics_path,
        trainer::metrics_text(&outcome.metrics).as_bytes(),
    )?;
    manifest.artifact("output", "checkpoint", &ckpt_path)?;
    manifest.artifact("output", "metrics", &metrics_path)?;

    let meta = &outcome.checkpoint.meta;
    println!(
        "trained {} epochs on {} ({}): train_loss {} eval_loss {}",
        meta.epochs_run,
        ds.meta().session_id,
        ds.meta().obs_mode,
        evalbench::fmt_sig6(meta.final_train_loss),
        evalbench::fmt_sig6(meta.final_eval_loss)
    );
    println!("checkpoint -> {}", ckpt_path.display());
    Ok(())
}

fn load_ckpt(path: &Path, manifest: &mut Manifest) -> Result<DenoiserCheckpoint> {
    let ckpt = checkpoint::load_checkpoint(path)?;
    manifest.artifact("input", "checkpoint", path)?;
    Ok(ckpt)
}

fn cmd_sample(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    obs_file: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let ckpt = load_ckpt(ckpt_path, manifest)?;
    let img = netpbm::read(obs_file)?;
    manifest.artifact("input", "observation", obs_file)?;
    let obs = if img.width() == OBS_SIZE && img.height() == OBS_SIZE {
        img
    } else {
        observation::make_observation(ObsMode::Raw, ObsSource::Image(&img))?
    };
    let policy = DiffusionPolicy::from_checkpoint(&ckpt, cfg.sampler.clone());
    let action = policy.act(0, &obs, cfg.sampler.seed)?;
    let text = action
        .as_slice()
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(",");
    manifest.set("output.action", &text);
    println!("{text}");
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "{} {}: mpjpe {} baseline {} ({:+.2}% vs baseline) ms/frame {} +/- {} over {} pairs",
        r.session_id,
        r.obs_mode,
        evalbench::fmt_sig6(r.mpjpe),
        evalbench::fmt_sig6(r.baseline_mpjpe),
        r.improvement() * 100.0,
        evalbench::fmt_sig6(r.ms_per_frame_mean),
        evalbench::fmt_sig6(r.ms_per_frame_std),
        r.frames
    );
}

fn load_dataset(
    cfg: &ExperimentConfig,
    data: &Path,
    ckpt: &DenoiserCheckpoint,
    manifest: &mut Manifest,
) -> Result<DemoDataset> {
    let mode = ckpt.meta.obs_mode.unwrap_or(cfg.obs_mode);
    let dir = resolve_dataset(data, mode);
    let ds = DemoDataset::import(&dir)?;
    manifest.artifact("input", "dataset", &dir)?;
    Ok(ds)
}

fn cmd_eval(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    data: &Path,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let ckpt = load_ckpt(ckpt_path, manifest)?;
    let ds = load_dataset(cfg, data, &ckpt, manifest)?;
    let policy = DiffusionPolicy::from_checkpoint(&ckpt, cfg.sampler.clone());
    let report = evalbench::evaluate(&policy, &ds, cfg.train.split_fraction, cfg.sampler.seed)?;
    print_report(&report);
    let metrics = out.join("eval_metrics.csv");
    for p in evalbench::emit_report(&[report], &metrics)? {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        manifest.artifact("output", &name, &p)?;
    }
    Ok(())
}

fn cmd_bench(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    data: &Path,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let ckpt = load_ckpt(ckpt_path, manifest)?;
    let ds = load_dataset(cfg, data, &ckpt, manifest)?;
    let mode = ds.meta().obs_mode;
    let policy = DiffusionPolicy::from_checkpoint(&ckpt, cfg.sampler.clone());
    let mut report = evalbench::evaluate(&policy, &ds, cfg.train.split_fraction, cfg.sampler.seed)?;

    let (_, eval) = trainer::split_dataset(&ds, cfg.train.split_fraction)?;
    let renderer = RawRenderer::new(ds.meta().seed, ds.meta().clutter)?;
    let (stats, counters) = evalbench::bench(
        &policy,
        eval.frames(),
        mode,
        &renderer,
        cfg.bench.warmup,
        cfg.bench.min_frames,
        cfg.sampler.seed,
    )?;
    report.ms_per_frame_mean = stats.mean_ms;
    report.ms_per_frame_std = stats.std_ms;
    print_report(&report);
    println!(
        "timed {} frames: {} resizes, {} rasterizations, {} samples; {} untimed renders",
        stats.frames,
        counters.timed_resizes,
        counters.timed_rasterizations,
        counters.timed_samples,
        counters.untimed_renders
    );
    manifest.set("bench.timed_frames", stats.frames);
    manifest.set("bench.timed_resizes", counters.timed_resizes);
    manifest.set("bench.timed_rasterizations", counters.timed_rasterizations);
    manifest.set("bench.timed_samples", counters.timed_samples);
    manifest.set("bench.untimed_renders", counters.untimed_renders);

    let metrics = out.join("bench_metrics.csv");
    for p in evalbench::emit_report(&[report], &metrics)? {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        manifest.artifact("output", &name, &p)?;
    }
    Ok(())
}

fn cmd_stats(
    cfg: &ExperimentConfig,
    data: &Path,
    joint: JointId,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let dir = resolve_dataset(data, cfg.obs_mode);
    let ds = DemoDataset::import(&dir)?;
    manifest.artifact("input", "dataset", &dir)?;
    let meta = ds.meta();
    let stats =
        pose::displacement_stats(&ds.trace(), joint, (meta.width as f64, meta.height as f64))?;
    let table = format!(
        "session,profile,joint,mean,std,range,samples\n{},{},{},{},{},{},{}\n",
        meta.session_id,
        meta.profile,
        joint,
        evalbench::fmt_sig6(stats.mean),
        evalbench::fmt_sig6(stats.std),
        evalbench::fmt_sig6(stats.range),
        stats.samples
    );
    print!("{table}");
    let path = out.join("stats.csv");
    write_file(&path, table.as_bytes())?;
    manifest.artifact("output", "stats", &path)?;
    Ok(())
}
