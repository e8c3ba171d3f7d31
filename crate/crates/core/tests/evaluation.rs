//! Evaluation and benchmarking with stub policies.

mod common;

use std::cell::Cell;
use std::time::Duration;

use socialpose_core::dataset::DemoDataset;
use socialpose_core::evalbench::{self, EvalReport, METRICS_HEADER, SCATTER_HEADER};
use socialpose_core::observation::{ImageGrid, ObsMode};
use socialpose_core::pose::{ActionVector, ACTION_DIM};
use socialpose_core::sampler::{ActionPolicy, DiffusionPolicy, NoisePredictor, SamplerConfig};
use socialpose_core::schedule::NoiseSchedule;
use socialpose_core::synthscene::{self, RawRenderer, RoleProfile, SceneConfig};
use socialpose_core::{trainer, Error, Result};

fn dataset(mode: ObsMode) -> DemoDataset {
    let session =
        synthscene::generate_session(&SceneConfig::new(RoleProfile::MusicianLike, 60, 5)).unwrap();
    synthscene::build_dataset(&session, mode).unwrap()
}

/// Returns the ground-truth delta of whichever pair it is asked about.
struct Oracle<'a> {
    eval: &'a DemoDataset,
}

impl ActionPolicy for Oracle<'_> {
    fn act(&self, frame: usize, _: &ImageGrid, _: u64) -> Result<ActionVector> {
        Ok(*self.eval.action(frame))
    }
}

struct Still;

impl ActionPolicy for Still {
    fn act(&self, _: usize, _: &ImageGrid, _: u64) -> Result<ActionVector> {
        Ok(ActionVector::zeros())
    }
}

#[test]
fn perfect_policy_scores_zero() {
    let ds = dataset(ObsMode::Plotted);
    let (_, eval) = trainer::split_dataset(&ds, 0.8).unwrap();
    let r = evalbench::evaluate_split(&Oracle { eval: &eval }, &eval, 1).unwrap();
    assert!(r.mpjpe < 1e-12, "{}", r.mpjpe);
    assert!(r.baseline_mpjpe > 0.0);
    assert_eq!(r.frames, eval.len());
}

#[test]
fn still_policy_equals_mean_displacement() {
    let ds = dataset(ObsMode::Plotted);
    let r = evalbench::evaluate(&Still, &ds, 0.8, 1).unwrap();
    assert_eq!(r.mpjpe, r.baseline_mpjpe);
    let (_, eval) = trainer::split_dataset(&ds, 0.8).unwrap();
    let mean_disp = eval
        .actions()
        .iter()
        .map(|a| {
            (0..18)
                .map(|j| a.0[2 * j].hypot(a.0[2 * j + 1]))
                .sum::<f64>()
                / 18.0
        })
        .sum::<f64>()
        / eval.len() as f64;
    assert!((r.mpjpe - mean_disp).abs() < 1e-12);
    assert_eq!(r.improvement(), 0.0);
}

#[test]
fn evaluation_is_repeatable() {
    let ck = {
        let cfg = common::tiny(socialpose_core::denoiser::Arch::Mlp);
        let cfg = socialpose_core::denoiser::DenoiserConfig {
            max_timestep: 50,
            ..cfg
        };
        let model = common::random_model(&cfg, 3);
        let meta = socialpose_core::checkpoint::TrainingMeta {
            epochs_run: 0,
            final_train_loss: 1.0,
            final_eval_loss: 1.0,
            obs_mode: Some(ObsMode::Raw),
            action_scale: 0.005,
            seed: 0,
        };
        socialpose_core::checkpoint::DenoiserCheckpoint::new(
            model,
            NoiseSchedule::linear(50, 1e-4, 0.02).unwrap(),
            meta,
        )
        .unwrap()
    };
    let ds = dataset(ObsMode::Raw);
    let policy = DiffusionPolicy::from_checkpoint(&ck, SamplerConfig::default());
    let a = evalbench::evaluate(&policy, &ds, 0.8, 9).unwrap();
    let b = evalbench::evaluate(&policy, &ds, 0.8, 9).unwrap();
    assert_eq!(a.mpjpe.to_bits(), b.mpjpe.to_bits());
    let c = evalbench::evaluate(&policy, &ds, 0.8, 10).unwrap();
    assert_ne!(a.mpjpe, c.mpjpe);
}

#[test]
fn degenerate_split_is_rejected() {
    let ds = dataset(ObsMode::Plotted);
    assert!(matches!(
        evalbench::evaluate(&Still, &ds, 1.0, 0),
        Err(Error::Config(_))
    ));
}

/// Sleeps a fixed time per denoiser call.
struct Sleepy {
    calls: Cell<usize>,
}

impl NoisePredictor for Sleepy {
    type Cond = ();

    fn condition(&self, _: &ImageGrid) -> Result<()> {
        Ok(())
    }

    fn predict(&self, _: &[f64], _: usize, _: &()) -> Result<[f64; ACTION_DIM]> {
        self.calls.set(self.calls.get() + 1);
        std::thread::sleep(Duration::from_millis(1));
        Ok([0.0; ACTION_DIM])
    }
}

#[test]
fn bench_lower_bound_with_sleeping_denoiser() {
    let ds = dataset(ObsMode::Plotted);
    let schedule = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let stub = Sleepy {
        calls: Cell::new(0),
    };
    let policy = DiffusionPolicy {
        predictor: &stub,
        schedule: &schedule,
        action_scale: 1.0,
        cfg: SamplerConfig::default(),
    };
    let renderer = RawRenderer::new(5, 0.5).unwrap();
    let (stats, counters) =
        evalbench::bench(&policy, ds.frames(), ObsMode::Plotted, &renderer, 1, 100, 0).unwrap();
    assert_eq!(stats.frames, 100);
    assert!(stats.mean_ms >= 58.0, "{}", stats.mean_ms);
    assert!(stats.min_ms >= 58.0 && stats.max_ms >= stats.min_ms);
    assert_eq!(stub.calls.get(), 101 * 58);
    assert_eq!(counters.timed_rasterizations, 100);
}

#[test]
fn bench_needs_more_frames_than_warmup() {
    let ds = dataset(ObsMode::Plotted);
    let renderer = RawRenderer::new(5, 0.5).unwrap();
    let r = evalbench::bench(
        &Still,
        &ds.frames()[..3],
        ObsMode::Plotted,
        &renderer,
        3,
        100,
        0,
    );
    assert!(matches!(r, Err(Error::Usage(_))));
}

fn report(session: &str, mode: ObsMode, mpjpe: f64) -> EvalReport {
    EvalReport {
        session_id: session.into(),
        obs_mode: mode,
        mpjpe,
        frames: 10,
        baseline_mpjpe: 0.01,
        ms_per_frame_mean: 12.5,
        ms_per_frame_std: 0.25,
        seed: 4,
    }
}

#[test]
fn report_files_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let written =
        evalbench::emit_report(&[report("a", ObsMode::Raw, 0.0123456789)], &path).unwrap();
    assert_eq!(written.len(), 2);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        format!("{METRICS_HEADER}\na,raw,0.0123457,0.0100000,12.5000,0.250000,4\n")
    );
    let scatter = std::fs::read_to_string(dir.path().join("scatter_raw.csv")).unwrap();
    assert_eq!(scatter, format!("{SCATTER_HEADER}\n12.5000,0.0123457\n"));
    assert!(matches!(
        evalbench::emit_report(&[], &path),
        Err(Error::Usage(_))
    ));
}

#[test]
fn report_files_are_byte_identical_on_reemit() {
    let reports = [
        report("a", ObsMode::Raw, 0.02),
        report("a", ObsMode::Plotted, 0.01),
        report("b", ObsMode::Raw, 0.03),
        report("b", ObsMode::Plotted, 0.015),
    ];
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let w1 = evalbench::emit_report(&reports, &d1.path().join("m.csv")).unwrap();
    let w2 = evalbench::emit_report(&reports, &d2.path().join("m.csv")).unwrap();
    for (a, b) in w1.iter().zip(&w2) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
    let plotted = std::fs::read_to_string(d1.path().join("scatter_plotted.csv")).unwrap();
    assert_eq!(plotted.lines().count(), 3);
}

#[test]
fn rollout_is_teacher_forced() {
    let ds = dataset(ObsMode::Plotted);
    let gt = ds.positions();
    let obs = ds.observations();
    let pred = socialpose_core::sampler::rollout(&Still, &obs, &gt, 0).unwrap();
    assert_eq!(pred[0], gt[0]);
    for f in 1..gt.len() {
        assert_eq!(pred[f], gt[f - 1]);
    }
    assert_eq!(pred, evalbench::zero_motion(&gt));
}
