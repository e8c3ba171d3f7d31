#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialpose_core::dataset::DemoDataset;
use socialpose_core::denoiser::{
    batch_loss, loss_and_gradients, Arch, BatchItem, Denoiser, DenoiserConfig, DenoiserParams,
    Patches,
};
use socialpose_core::observation::{self, ImageGrid, ObsMode, ObsSource};
use socialpose_core::pose::{KeypointFrame, Point2, Skeleton};
use socialpose_core::schedule::NoiseSchedule;
use socialpose_core::synthscene::{generate_session, RoleProfile, SceneConfig};

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;
const PER_BLOCK: usize = 12;

pub fn tiny(arch: Arch) -> DenoiserConfig {
    DenoiserConfig {
        arch,
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        patch_size: 32,
        max_timestep: 5,
        mlp_hidden: vec![10, 7],
        input_scaling: true,
    }
}

/// Parameters spread well away from init so every block has gradient.
pub fn random_model(cfg: &DenoiserConfig, seed: u64) -> Denoiser {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = DenoiserParams::init(cfg, seed);
    for (name, t) in params.entries_mut() {
        for v in t.data.iter_mut() {
            *v = if name.ends_with("gamma") {
                1.0 + rng.gen_range(-0.3..0.3)
            } else if name == "obs.pool" {
                rng.gen_range(-0.2..0.2)
            } else if name == "obs.patch.weight" {
                rng.gen_range(-0.05..0.05)
            } else {
                rng.gen_range(-0.5..0.5)
            };
            *v = *v as f32 as f64;
        }
    }
    Denoiser::new(cfg.clone(), params).unwrap()
}

pub fn random_obs(rng: &mut ChaCha8Rng) -> ImageGrid {
    let values = (0..128 * 128 * 3).map(|_| rng.gen::<f32>()).collect();
    ImageGrid::new(128, 128, 3, values).unwrap()
}

/// Relative error `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` per parameter block, over
/// up to 12 sampled entries per block. The batch repeats one observation so
/// the shared-encoder path is covered.
pub fn fd_relative_errors(arch: Arch, seed: u64) -> Vec<(String, f64)> {
    let cfg = tiny(arch);
    let model = random_model(&cfg, seed);
    let schedule = NoiseSchedule::linear(cfg.max_timestep, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let patches: Vec<Patches> = (0..2)
        .map(|_| model.patches(&random_obs(&mut rng)).unwrap())
        .collect();
    let actions: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let batch: Vec<BatchItem> = (0..3)
        .map(|i| BatchItem {
            obs: &patches[i / 2],
            action: &actions[i % 2],
            noise_key: i as u64 + 7,
        })
        .collect();
    let rng_seed = seed + 100;

    let (_, grads) = loss_and_gradients(&model, &batch, &schedule, rng_seed).unwrap();
    let mut out = Vec::new();
    for (bi, (name, g)) in grads.entries().iter().enumerate() {
        let n = g.data.len();
        let picks: Vec<usize> = if n <= PER_BLOCK {
            (0..n).collect()
        } else {
            (0..PER_BLOCK).map(|_| rng.gen_range(0..n)).collect()
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &k in &picks {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params_mut().entries_mut()[bi].1.data[k] += delta;
                batch_loss(&m, &batch, &schedule, rng_seed).unwrap()
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let analytic = g.data[k];
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
        out.push((
            name.clone(),
            diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-8),
        ));
    }
    out
}

/// A still scene whose facilitator drifts by `step` every frame, so every
/// action equals `step` on every joint.
pub fn constant_action_dataset(frames: usize, step: (f64, f64)) -> DemoDataset {
    let mut cfg = SceneConfig::new(RoleProfile::TeacherLike, frames, 11);
    cfg.gesture.amplitude_px = 0.0;
    cfg.jitter_px = 0.0;
    let session = generate_session(&cfg).unwrap();
    let frames: Vec<KeypointFrame> = session
        .frames
        .iter()
        .enumerate()
        .map(|(f, fr)| {
            let mut persons = fr.persons.clone();
            let s = persons[0];
            persons[0] = s.translated(step.0 * f as f64, step.1 * f as f64);
            KeypointFrame::new(persons, 0).unwrap()
        })
        .collect();
    let obs: Vec<ImageGrid> = frames[..frames.len() - 1]
        .iter()
        .map(|f| observation::make_observation(ObsMode::Plotted, ObsSource::Keypoints(f)).unwrap())
        .collect();
    DemoDataset::new(cfg.meta(ObsMode::Plotted), 0, frames, &obs).unwrap()
}

pub fn random_skeletons(rng: &mut ChaCha8Rng, n: usize) -> Vec<Skeleton> {
    (0..n)
        .map(|_| {
            let mut s = Skeleton::default();
            for p in s.0.iter_mut() {
                *p = Point2::new(rng.gen::<f64>(), rng.gen::<f64>());
            }
            s
        })
        .collect()
}
