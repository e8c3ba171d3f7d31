//! MPJPE evaluation, percentage differences, per-frame timing and report files.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::DemoDataset;
use crate::error::{Error, Result};
use crate::observation::{self, ImageGrid, ObsMode, ObsSource};
use crate::pose::{self, KeypointFrame, Skeleton};
use crate::sampler::{self, ActionPolicy};
use crate::synthscene::RawRenderer;
use crate::trainer;

pub const METRICS_HEADER: &str =
    "session,obs_mode,mpjpe,baseline_mpjpe,ms_per_frame_mean,ms_per_frame_std,seed";
pub const SCATTER_HEADER: &str = "ms_per_frame,mpjpe";
pub const MIN_BENCH_FRAMES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub session_id: String,
    pub obs_mode: ObsMode,
    pub mpjpe: f64,
    pub frames: usize,
    /// MPJPE of predicting no motion at all.
    pub baseline_mpjpe: f64,
    pub ms_per_frame_mean: f64,
    pub ms_per_frame_std: f64,
    pub seed: u64,
}

impl EvalReport {
    /// `(baseline − mpjpe) / baseline`.
    pub fn improvement(&self) -> f64 {
        (self.baseline_mpjpe - self.mpjpe) / self.baseline_mpjpe
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Teacher-forced MPJPE of `policy` on the pairs it is given, against the
/// zero-motion baseline. Frame 0 of the rollout is copied from ground truth
/// and excluded from both scores. Timing covers `act` calls only.
pub fn evaluate_split<A: ActionPolicy + ?Sized>(
    policy: &A,
    eval: &DemoDataset,
    seed: u64,
) -> Result<EvalReport> {
    if eval.is_empty() {
        return Err(Error::Usage("evaluation split is empty".into()));
    }
    let gt = eval.positions();
    let observations = eval.observations();
    let timed = TimedPolicy {
        inner: policy,
        times: RefCell::new(Vec::with_capacity(eval.len())),
    };
    let predicted = sampler::rollout(&timed, &observations, &gt, seed)?;
    let times = timed.times.into_inner();
    let mpjpe = pose::mpjpe(&predicted[1..], &gt[1..])?;
    let baseline_mpjpe = pose::mpjpe(&gt[..gt.len() - 1], &gt[1..])?;
    let (ms_mean, ms_std) = mean_std(&times);
    Ok(EvalReport {
        session_id: eval.meta().session_id.clone(),
        obs_mode: eval.meta().obs_mode,
        mpjpe,
        frames: eval.len(),
        baseline_mpjpe,
        ms_per_frame_mean: ms_mean,
        ms_per_frame_std: ms_std,
        seed,
    })
}

/// [`evaluate_split`] on the trailing `1 − split_fraction` of `dataset`.
pub fn evaluate<A: ActionPolicy + ?Sized>(
    policy: &A,
    dataset: &DemoDataset,
    split_fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    let (_, eval) = trainer::split_dataset(dataset, split_fraction)?;
    evaluate_split(policy, &eval, seed)
}

struct TimedPolicy<'a, A: ?Sized> {
    inner: &'a A,
    times: RefCell<Vec<f64>>,
}

impl<A: ActionPolicy + ?Sized> ActionPolicy for TimedPolicy<'_, A> {
    fn act(&self, frame: usize, obs: &ImageGrid, seed: u64) -> Result<pose::ActionVector> {
        let start = Instant::now();
        let a = self.inner.act(frame, obs, seed)?;
        self.times
            .borrow_mut()
            .push(start.elapsed().as_secs_f64() * 1e3);
        Ok(a)
    }
}

/// `(raw − plotted) / raw × 100`.
pub fn percent_diff(raw_value: f64, plotted_value: f64) -> Result<f64> {
    if !(raw_value > 0.0) {
        return Err(Error::Domain(format!(
            "raw value must be positive, got {raw_value}"
        )));
    }
    Ok((raw_value - plotted_value) / raw_value * 100.0)
}

/// [`percent_diff`] rounded to two decimals for display.
pub fn percent_diff_display(raw_value: f64, plotted_value: f64) -> Result<String> {
    Ok(format!("{:.2}", percent_diff(raw_value, plotted_value)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Operations performed by a bench run, split by whether they were timed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BenchCounters {
    pub timed_resizes: usize,
    pub timed_rasterizations: usize,
    pub timed_samples: usize,
    pub untimed_renders: usize,
}

/// Per-frame processing time: observation construction (resize or
/// rasterization) plus one sample. Full-resolution raw frames are rendered
/// before the timer starts. Frames are cycled until `max(min_frames, 100)`
/// timed frames follow `warmup` untimed ones.
pub fn bench<A: ActionPolicy + ?Sized>(
    policy: &A,
    frames: &[KeypointFrame],
    mode: ObsMode,
    renderer: &RawRenderer,
    warmup: usize,
    min_frames: usize,
    seed: u64,
) -> Result<(BenchStats, BenchCounters)> {
    if frames.len() <= warmup {
        return Err(Error::Usage(format!(
            "{} frames cannot cover {warmup} warmup frames",
            frames.len()
        )));
    }
    let target = min_frames.max(MIN_BENCH_FRAMES);
    let mut counters = BenchCounters::default();
    let mut times = Vec::with_capacity(target);
    let mut k = 0usize;
    while times.len() < target {
        let frame = &frames[k % frames.len()];
        let raw = match mode {
            ObsMode::Raw => {
                counters.untimed_renders += 1;
                Some(renderer.render(frame)?)
            }
            ObsMode::Plotted => None,
        };
        let timed = k >= warmup;
        let start = Instant::now();
        let obs = match &raw {
            Some(img) => observation::make_observation(mode, ObsSource::Image(img))?,
            None => observation::make_observation(mode, ObsSource::Keypoints(frame))?,
        };
        let action = policy.act(k, &obs, sampler::frame_seed(seed, k))?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(action);
        if timed {
            times.push(elapsed);
            match mode {
                ObsMode::Raw => counters.timed_resizes += 1,
                ObsMode::Plotted => counters.timed_rasterizations += 1,
            }
            counters.timed_samples += 1;
        }
        k += 1;
    }
    let (mean_ms, std_ms) = mean_std(&times);
    let stats = BenchStats {
        frames: times.len(),
        mean_ms,
        std_ms,
        min_ms: times.iter().cloned().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok((stats, counters))
}

/// Fixed-decimal rendering with six significant digits.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0.00000".to_string();
    }
    let mut exp = v.abs().log10().floor() as i32;
    let mut s = format!("{:.*}", (5 - exp).max(0) as usize, v);
    // Rounding may carry into a new leading digit (9.999996 -> 10.00000).
    let rounded: f64 = s.parse().expect("formatted number");
    if rounded.abs() >= 10f64.powi(exp + 1) {
        exp += 1;
        s = format!("{:.*}", (5 - exp).max(0) as usize, v);
    }
    s
}

/// Writes the metrics table to `path` and one `scatter_<mode>.csv` per mode
/// present next to it. Returns every written path, metrics first.
pub fn emit_report(reports: &[EvalReport], path: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Usage("no reports to emit".into()));
    }
    let mut metrics = format!("{METRICS_HEADER}\n");
    for r in reports {
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.session_id,
            r.obs_mode,
            fmt_sig6(r.mpjpe),
            fmt_sig6(r.baseline_mpjpe),
            fmt_sig6(r.ms_per_frame_mean),
            fmt_sig6(r.ms_per_frame_std),
            r.seed
        ));
    }
    std::fs::write(path, metrics).map_err(|e| Error::io(path, e))?;
    let mut written = vec![path.to_path_buf()];

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    for mode in ObsMode::ALL {
        let rows: Vec<&EvalReport> = reports.iter().filter(|r| r.obs_mode == mode).collect();
        if rows.is_empty() {
            continue;
        }
        let mut text = format!("{SCATTER_HEADER}\n");
        for r in rows {
            text.push_str(&format!(
                "{},{}\n",
                fmt_sig6(r.ms_per_frame_mean),
                fmt_sig6(r.mpjpe)
            ));
        }
        let p = dir.join(format!("scatter_{mode}.csv"));
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Zero-motion predictions for a ground-truth sequence: `pred[f + 1] = gt[f]`.
pub fn zero_motion(gt: &[Skeleton]) -> Vec<Skeleton> {
    let mut out = Vec::with_capacity(gt.len());
    if let Some(first) = gt.first() {
        out.push(*first);
        out.extend_from_slice(&gt[..gt.len() - 1]);
    }
    out
}
