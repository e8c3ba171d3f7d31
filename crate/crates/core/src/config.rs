//! Experiment configuration: one `key=value` file covering every stage.
//!
//! Missing keys keep their defaults; unknown keys are rejected. `seed`
//! drives scene generation, training and sampling alike.

use std::path::Path;

use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::observation::ObsMode;
use crate::sampler::SamplerConfig;
use crate::schedule::{NoiseSchedule, SigmaKind};
use crate::synthscene::{RoleProfile, SceneConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma: SigmaKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            num_steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma: SigmaKind::Beta,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear_with_sigma(self.num_steps, self.beta_start, self.beta_end, self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub warmup: usize,
    pub min_frames: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 5,
            min_frames: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub obs_mode: ObsMode,
    pub scene: SceneConfig,
    pub schedule: ScheduleConfig,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            obs_mode: ObsMode::Plotted,
            scene: SceneConfig::new(RoleProfile::TeacherLike, 2000, 0),
            schedule: ScheduleConfig::default(),
            model: DenoiserConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Every recognised key, in echo order.
    pub const KEYS: [&'static str; 36] = [
        "seed",
        "obs_mode",
        "scene.profile",
        "scene.duration_frames",
        "scene.num_participants",
        "scene.fps",
        "scene.amplitude_px",
        "scene.frequency_hz",
        "scene.burst_multiplier",
        "scene.rotation_period_frames",
        "scene.jitter_px",
        "scene.clutter_level",
        "schedule.num_steps",
        "schedule.beta_start",
        "schedule.beta_end",
        "schedule.sigma",
        "model.arch",
        "model.embed_dim",
        "model.num_layers",
        "model.num_heads",
        "model.patch_size",
        "model.mlp_hidden",
        "model.input_scaling",
        "train.epochs",
        "train.batch_size",
        "train.learning_rate",
        "train.adam_beta1",
        "train.adam_beta2",
        "train.adam_eps",
        "train.split_fraction",
        "train.action_rms",
        "train.noise_draws",
        "sampler.extra_steps",
        "sampler.coefficient",
        "bench.warmup",
        "bench.min_frames",
    ];

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = Self::default();
        // The profile resets gesture constants, so it goes before any override.
        if let Some(p) = doc.get("scene.profile") {
            cfg.set("scene.profile", p)?;
        }
        for (k, v) in doc.entries() {
            if k != "scene.profile" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text).map_err(Error::Config)?;
        Self::from_kv(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc =
            KvDoc::parse(&text).map_err(|m| Error::Config(format!("{}: {m}", path.display())))?;
        Self::from_kv(&doc)
    }

    /// Applies one key. Used for file entries and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.set_seed(parse(key, value)?),
            "obs_mode" => self.obs_mode = value.trim().parse()?,
            "scene.profile" => {
                let profile: RoleProfile = value.trim().parse()?;
                self.scene.profile = profile;
                self.scene.gesture = profile.gesture();
            }
            "scene.duration_frames" => self.scene.duration_frames = parse(key, value)?,
            "scene.num_participants" => self.scene.num_participants = parse(key, value)?,
            "scene.fps" => self.scene.fps = parse(key, value)?,
            "scene.amplitude_px" => self.scene.gesture.amplitude_px = parse(key, value)?,
            "scene.frequency_hz" => self.scene.gesture.frequency_hz = parse(key, value)?,
            "scene.burst_multiplier" => self.scene.gesture.burst_multiplier = parse(key, value)?,
            "scene.rotation_period_frames" => {
                self.scene.gesture.rotation_period_frames = parse(key, value)?
            }
            "scene.jitter_px" => self.scene.jitter_px = parse(key, value)?,
            "scene.clutter_level" => self.scene.clutter_level = parse(key, value)?,
            "schedule.num_steps" => {
                let t: usize = parse(key, value)?;
                self.schedule.num_steps = t;
                self.model.max_timestep = t;
                self.sampler.num_denoise_steps = t;
            }
            "schedule.beta_start" => self.schedule.beta_start = parse(key, value)?,
            "schedule.beta_end" => self.schedule.beta_end = parse(key, value)?,
            "schedule.sigma" => self.schedule.sigma = value.trim().parse()?,
            "model.arch" => self.model.arch = value.trim().parse()?,
            "model.embed_dim" => self.model.embed_dim = parse(key, value)?,
            "model.num_layers" => self.model.num_layers = parse(key, value)?,
            "model.num_heads" => self.model.num_heads = parse(key, value)?,
            "model.patch_size" => self.model.patch_size = parse(key, value)?,
            "model.mlp_hidden" => self.model.mlp_hidden = parse_widths(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.adam_beta1" => self.train.adam_beta1 = parse(key, value)?,
            "train.adam_beta2" => self.train.adam_beta2 = parse(key, value)?,
            "train.adam_eps" => self.train.adam_eps = parse(key, value)?,
            "train.split_fraction" => self.train.split_fraction = parse(key, value)?,
            "train.action_rms" => self.train.action_rms = parse(key, value)?,
            "train.noise_draws" => self.train.noise_draws = parse(key, value)?,
            "model.input_scaling" => self.model.input_scaling = parse(key, value)?,
            "sampler.extra_steps" => self.sampler.extra_steps = parse(key, value)?,
            "sampler.coefficient" => self.sampler.coefficient = value.trim().parse()?,
            "bench.warmup" => self.bench.warmup = parse(key, value)?,
            "bench.min_frames" => self.bench.min_frames = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scene.seed = seed;
        self.train.seed = seed;
        self.sampler.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let schedule = self.schedule.build()?;
        self.sampler.validate(&schedule)?;
        Ok(())
    }

    /// Full echo of the effective configuration, defaults included.
    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        let g = &self.scene.gesture;
        d.set("seed", self.seed);
        d.set("obs_mode", self.obs_mode);
        d.set("scene.profile", self.scene.profile);
        d.set("scene.duration_frames", self.scene.duration_frames);
        d.set("scene.num_participants", self.scene.num_participants);
        d.set("scene.fps", self.scene.fps);
        d.set("scene.amplitude_px", g.amplitude_px);
        d.set("scene.frequency_hz", g.frequency_hz);
        d.set("scene.burst_multiplier", g.burst_multiplier);
        d.set("scene.rotation_period_frames", g.rotation_period_frames);
        d.set("scene.jitter_px", self.scene.jitter_px);
        d.set("scene.clutter_level", self.scene.clutter_level);
        d.set("schedule.num_steps", self.schedule.num_steps);
        d.set("schedule.beta_start", self.schedule.beta_start);
        d.set("schedule.beta_end", self.schedule.beta_end);
        d.set("schedule.sigma", self.schedule.sigma);
        d.set("model.arch", self.model.arch);
        d.set("model.embed_dim", self.model.embed_dim);
        d.set("model.num_layers", self.model.num_layers);
        d.set("model.num_heads", self.model.num_heads);
        d.set("model.patch_size", self.model.patch_size);
        d.set(
            "model.mlp_hidden",
            self.model
                .mlp_hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        d.set("model.input_scaling", self.model.input_scaling);
        d.set("train.epochs", self.train.epochs);
        d.set("train.batch_size", self.train.batch_size);
        d.set("train.learning_rate", self.train.learning_rate);
        d.set("train.adam_beta1", self.train.adam_beta1);
        d.set("train.adam_beta2", self.train.adam_beta2);
        d.set("train.adam_eps", self.train.adam_eps);
        d.set("train.split_fraction", self.train.split_fraction);
        d.set("train.action_rms", self.train.action_rms);
        d.set("train.noise_draws", self.train.noise_draws);
        d.set("sampler.extra_steps", self.sampler.extra_steps);
        d.set("sampler.coefficient", self.sampler.coefficient);
        d.set("bench.warmup", self.bench.warmup);
        d.set("bench.min_frames", self.bench.min_frames);
        d
    }
}
