//! Fixtures shared by the criterion benchmarks in `benches/`.

use socialpose_core::checkpoint::{DenoiserCheckpoint, TrainingMeta};
use socialpose_core::synthscene::{self, RawRenderer};
use socialpose_core::{
    Denoiser, DenoiserConfig, KeypointFrame, NoiseSchedule, ObsMode, RoleProfile, SceneConfig,
};

/// A short teacher-like session and the renderer for its raw frames.
pub fn scene(frames: usize) -> (Vec<KeypointFrame>, RawRenderer) {
    let cfg = SceneConfig::new(RoleProfile::TeacherLike, frames, 7);
    let session = synthscene::generate_session(&cfg).expect("default scene is valid");
    let renderer = RawRenderer::new(cfg.seed, cfg.clutter_level).expect("default clutter is valid");
    (session.frames, renderer)
}

/// An untrained checkpoint with the default model; timing does not depend on the weights.
pub fn checkpoint(config: DenoiserConfig) -> DenoiserCheckpoint {
    let schedule = NoiseSchedule::linear(config.max_timestep, 1e-4, 0.02).expect("valid schedule");
    let model = Denoiser::init(config, 3).expect("valid config");
    let meta = TrainingMeta {
        obs_mode: Some(ObsMode::Plotted),
        action_scale: 0.005,
        ..TrainingMeta::default()
    };
    DenoiserCheckpoint::new(model, schedule, meta).expect("matching schedule")
}
