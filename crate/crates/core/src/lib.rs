//! Diffusion behavior cloning of a facilitator's pose dynamics.
//!
//! Observations are either resized scene images or keypoints rasterized on
//! a white canvas; actions are per-joint frame-to-frame deltas. A small
//! noise-prediction network is trained on (observation, action) pairs and
//! sampled with Diffusion-X (a reverse diffusion pass followed by extra
//! refining steps at the first timestep).

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod evalbench;
pub mod kv;
pub mod netpbm;
pub mod nn;
pub mod observation;
pub mod pose;
pub mod raster;
pub mod sampler;
pub mod schedule;
pub mod synthscene;
pub mod trainer;

pub use error::{Error, Result};

pub use checkpoint::{DenoiserCheckpoint, TrainingMeta};
pub use config::ExperimentConfig;
pub use dataset::{DemoDataset, SessionMeta};
pub use denoiser::{Arch, Denoiser, DenoiserConfig, DenoiserParams};
pub use evalbench::{BenchStats, EvalReport};
pub use observation::{ImageGrid, ObsMode};
pub use pose::{ActionVector, FacilitatorTrace, JointId, KeypointFrame, Point2, Skeleton};
pub use sampler::{ActionPolicy, DiffusionPolicy, NoisePredictor, SamplerConfig};
pub use schedule::NoiseSchedule;
pub use synthscene::{RoleProfile, SceneConfig, Session};
pub use trainer::{TrainConfig, TrainOutcome};
