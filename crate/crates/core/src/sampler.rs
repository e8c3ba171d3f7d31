//! Diffusion-X sampling and teacher-forced rollout.
//!
//! The reverse pass runs `i = T, T−1, …, 1−M` with `τ = max(i, 1)`:
//!
//! ```text
//! a ← (a − c_τ · θ(a, τ, o)) / √α_τ + σ_τ · z,   z ~ N(0, I) if τ > 1 else 0
//! ```
//!
//! so the last `M + 1` updates are a deterministic refinement at `τ = 1`.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::DenoiserCheckpoint;
use crate::denoiser::{Denoiser, ObsEncoding};
use crate::error::{Error, Result};
use crate::observation::ImageGrid;
use crate::pose::{self, ActionVector, Skeleton, ACTION_DIM};
use crate::schedule::NoiseSchedule;

/// Which noise coefficient multiplies θ in the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coefficient {
    /// `(1 − α_τ) / √(1 − ᾱ_τ)`
    #[default]
    Standard,
    /// `√(1 − α_τ) / √(1 − ᾱ_τ)`
    AsPrinted,
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coefficient::Standard => "standard",
            Coefficient::AsPrinted => "as_printed",
        })
    }
}

impl FromStr for Coefficient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Coefficient::Standard),
            "as_printed" => Ok(Coefficient::AsPrinted),
            other => Err(Error::Config(format!(
                "unknown coefficient `{other}` (standard|as_printed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerConfig {
    pub num_denoise_steps: usize,
    pub extra_steps: usize,
    pub seed: u64,
    pub coefficient: Coefficient,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_denoise_steps: 50,
            extra_steps: 8,
            seed: 0,
            coefficient: Coefficient::Standard,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.num_denoise_steps == 0 {
            return Err(Error::Config("num_denoise_steps must be at least 1".into()));
        }
        if self.num_denoise_steps != schedule.num_steps() {
            return Err(Error::Config(format!(
                "sampler uses {} steps but the schedule has {}",
                self.num_denoise_steps,
                schedule.num_steps()
            )));
        }
        Ok(())
    }

    /// Number of denoiser evaluations per sample.
    pub fn calls(&self) -> usize {
        self.num_denoise_steps + self.extra_steps
    }
}

/// Anything that predicts the noise in a noisy action given a conditioning.
pub trait NoisePredictor {
    type Cond;

    fn condition(&self, obs: &ImageGrid) -> Result<Self::Cond>;

    fn predict(&self, noisy: &[f64], t: usize, cond: &Self::Cond) -> Result<[f64; ACTION_DIM]>;
}

impl NoisePredictor for Denoiser {
    type Cond = ObsEncoding;

    fn condition(&self, obs: &ImageGrid) -> Result<ObsEncoding> {
        self.encode_obs(obs)
    }

    fn predict(&self, noisy: &[f64], t: usize, cond: &ObsEncoding) -> Result<[f64; ACTION_DIM]> {
        self.predict_encoded(noisy, t, cond)
    }
}

/// Wraps a predictor and counts `condition` and `predict` calls.
pub struct Counted<P> {
    pub inner: P,
    conditions: Cell<usize>,
    predictions: Cell<usize>,
}

impl<P> Counted<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            conditions: Cell::new(0),
            predictions: Cell::new(0),
        }
    }

    pub fn predictions(&self) -> usize {
        self.predictions.get()
    }

    pub fn conditions(&self) -> usize {
        self.conditions.get()
    }

    pub fn reset(&self) {
        self.conditions.set(0);
        self.predictions.set(0);
    }
}

impl<P: NoisePredictor> NoisePredictor for Counted<P> {
    type Cond = P::Cond;

    fn condition(&self, obs: &ImageGrid) -> Result<P::Cond> {
        self.conditions.set(self.conditions.get() + 1);
        self.inner.condition(obs)
    }

    fn predict(&self, noisy: &[f64], t: usize, cond: &P::Cond) -> Result<[f64; ACTION_DIM]> {
        self.predictions.set(self.predictions.get() + 1);
        self.inner.predict(noisy, t, cond)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> [f64; ACTION_DIM] {
    let mut out = [0.0; ACTION_DIM];
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    out
}

/// Runs the reverse loop from iteration `start` (in `1−M ..= T`) down to
/// `1−M`, starting from `state`. `on_step(i, state)` sees the state entering
/// each iteration. Noise for `τ > 1` is drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_from<P: NoisePredictor>(
    predictor: &P,
    cond: &P::Cond,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    start: i64,
    mut state: [f64; ACTION_DIM],
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(i64, &[f64; ACTION_DIM]),
) -> Result<[f64; ACTION_DIM]> {
    cfg.validate(schedule)?;
    let last = 1 - cfg.extra_steps as i64;
    let t_max = cfg.num_denoise_steps as i64;
    if start > t_max || start < last {
        return Err(Error::Index {
            index: start,
            lo: last,
            hi: t_max,
        });
    }
    let mut i = start;
    while i >= last {
        on_step(i, &state);
        let tau = i.max(1) as usize;
        let c = schedule.coefficients_at(tau)?;
        let eps = predictor.predict(&state, tau, cond)?;
        let coef = match cfg.coefficient {
            Coefficient::Standard => (1.0 - c.alpha) / (1.0 - c.alpha_bar).sqrt(),
            Coefficient::AsPrinted => (1.0 - c.alpha).sqrt() / (1.0 - c.alpha_bar).sqrt(),
        };
        let inv = 1.0 / c.alpha.sqrt();
        let z = if tau > 1 {
            standard_normal(rng)
        } else {
            [0.0; ACTION_DIM]
        };
        for k in 0..ACTION_DIM {
            state[k] = inv * (state[k] - coef * eps[k]) + c.sigma * z[k];
        }
        i -= 1;
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sampled action is not finite".into()));
    }
    Ok(state)
}

/// Diffusion-X from `a_T ~ N(0, I)` drawn with `cfg.seed`.
pub fn diffusion_x<P: NoisePredictor>(
    predictor: &P,
    cond: &P::Cond,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<[f64; ACTION_DIM]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = standard_normal(&mut rng);
    reverse_from(
        predictor,
        cond,
        schedule,
        cfg,
        cfg.num_denoise_steps as i64,
        init,
        &mut rng,
        |_, _| {},
    )
}

/// One action for `obs` from a checkpoint, in data units.
pub fn diffusion_x_sample(
    ckpt: &DenoiserCheckpoint,
    obs: &ImageGrid,
    cfg: &SamplerConfig,
) -> Result<ActionVector> {
    DiffusionPolicy::from_checkpoint(ckpt, cfg.clone()).act(0, obs, cfg.seed)
}

/// Maps an observation to one action.
pub trait ActionPolicy {
    /// `frame` is the position within the sequence being rolled out.
    fn act(&self, frame: usize, obs: &ImageGrid, seed: u64) -> Result<ActionVector>;
}

/// Diffusion-X over any predictor, rescaling samples to data units.
pub struct DiffusionPolicy<'a, P> {
    pub predictor: &'a P,
    pub schedule: &'a NoiseSchedule,
    pub action_scale: f64,
    pub cfg: SamplerConfig,
}

impl<'a> DiffusionPolicy<'a, Denoiser> {
    pub fn from_checkpoint(ckpt: &'a DenoiserCheckpoint, cfg: SamplerConfig) -> Self {
        Self {
            predictor: &ckpt.model,
            schedule: &ckpt.schedule,
            action_scale: ckpt.meta.action_scale,
            cfg,
        }
    }
}

impl<P: NoisePredictor> DiffusionPolicy<'_, P> {
    /// Action for an already-built conditioning.
    pub fn act_on(&self, cond: &P::Cond, seed: u64) -> Result<ActionVector> {
        let cfg = SamplerConfig {
            seed,
            ..self.cfg.clone()
        };
        let a = diffusion_x(self.predictor, cond, self.schedule, &cfg)?;
        Ok(ActionVector(a.map(|v| v * self.action_scale)))
    }
}

impl<P: NoisePredictor> ActionPolicy for DiffusionPolicy<'_, P> {
    fn act(&self, _frame: usize, obs: &ImageGrid, seed: u64) -> Result<ActionVector> {
        let cond = self.predictor.condition(obs)?;
        self.act_on(&cond, seed)
    }
}

/// Per-frame sampling seed.
pub fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ frame as u64
}

/// Teacher-forced one-step rollout: `pred[0] = gt[0]` and
/// `pred[f + 1] = gt[f] + act(obs[f])` with seed `seed ⊕ f`.
pub fn rollout<A: ActionPolicy + ?Sized>(
    policy: &A,
    observations: &[ImageGrid],
    ground_truth: &[Skeleton],
    seed: u64,
) -> Result<Vec<Skeleton>> {
    if ground_truth.is_empty() || observations.len() + 1 != ground_truth.len() {
        return Err(Error::Dimension(format!(
            "{} observations need {} ground-truth frames, got {}",
            observations.len(),
            observations.len() + 1,
            ground_truth.len()
        )));
    }
    let mut out = Vec::with_capacity(ground_truth.len());
    out.push(ground_truth[0]);
    for (f, obs) in observations.iter().enumerate() {
        let a = policy.act(f, obs, frame_seed(seed, f))?;
        out.push(pose::apply_delta(&ground_truth[f], &a)?);
    }
    Ok(out)
}
