//! Forward diffusion, train/eval splitting and the Adam training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{DenoiserCheckpoint, TrainingMeta};
use crate::dataset::DemoDataset;
use crate::denoiser::{self, BatchItem, Denoiser, DenoiserConfig, DenoiserParams, Patches};
use crate::error::{Error, Result};
use crate::pose::{ActionVector, ACTION_DIM};
use crate::schedule::NoiseSchedule;

/// Smallest action scale used for normalization.
pub const MIN_ACTION_SCALE: f64 = 1e-6;

// Keys the noise of evaluation-loss items so it never matches a training epoch.
const EVAL_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub split_fraction: f64,
    pub seed: u64,
    /// RMS of the normalized training actions. Well below 1 so that the
    /// noisiest diffusion steps carry little of the action and the model
    /// has to read it from the observation.
    pub action_rms: f64,
    /// Noise draws per example per step; they share one encoder pass.
    pub noise_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            split_fraction: 0.8,
            seed: 0,
            action_rms: 0.2,
            noise_draws: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.noise_draws == 0 {
            return bad("noise_draws must be positive".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!(
                "split_fraction must be in (0, 1), got {}",
                self.split_fraction
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !(self.action_rms.is_finite() && self.action_rms > 0.0) {
            return bad(format!(
                "action_rms must be positive, got {}",
                self.action_rms
            ));
        }
        Ok(())
    }
}

/// `√ᾱ_t · a0 + √(1 − ᾱ_t) · eps`
pub fn forward_diffuse(
    a0: &ActionVector,
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<ActionVector> {
    let c = schedule.coefficients_at(t)?;
    forward_diffuse_with_alpha_bar(a0, c.alpha_bar, eps)
}

/// [`forward_diffuse`] with an explicit `ᾱ` in `[0, 1]`.
pub fn forward_diffuse_with_alpha_bar(
    a0: &ActionVector,
    alpha_bar: f64,
    eps: &[f64],
) -> Result<ActionVector> {
    if eps.len() != ACTION_DIM {
        return Err(Error::Dimension(format!("noise has {} values", eps.len())));
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::Domain(format!(
            "alpha_bar {alpha_bar} outside [0, 1]"
        )));
    }
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut out = [0.0; ACTION_DIM];
    for i in 0..ACTION_DIM {
        out[i] = s * a0.0[i] + n * eps[i];
    }
    Ok(ActionVector(out))
}

/// Contiguous split: the first `⌊fraction · n⌋` pairs train, the rest evaluate.
pub fn split_dataset(dataset: &DemoDataset, fraction: f64) -> Result<(DemoDataset, DemoDataset)> {
    let (k, n) = split_sizes(dataset.len(), fraction)?;
    Ok((dataset.slice(0, k)?, dataset.slice(k, n)?))
}

/// `(train_len, total)` for a contiguous split.
pub fn split_sizes(n: usize, fraction: f64) -> Result<(usize, usize)> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 || k == n {
        return Err(Error::Config(format!(
            "split of {n} pairs at {fraction} leaves one side empty"
        )));
    }
    Ok((k, n))
}

/// Root-mean-square of all action entries, floored at [`MIN_ACTION_SCALE`];
/// 1 when every entry is zero.
pub fn action_scale(actions: &[ActionVector]) -> f64 {
    let n = actions.len() * ACTION_DIM;
    if n == 0 {
        return 1.0;
    }
    let ss: f64 = actions.iter().flat_map(|a| a.0.iter()).map(|v| v * v).sum();
    if ss == 0.0 {
        return 1.0;
    }
    (ss / n as f64).sqrt().max(MIN_ACTION_SCALE)
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    step: i32,
    m: DenoiserParams,
    v: DenoiserParams,
}

impl Adam {
    pub fn new(config: &DenoiserConfig, train: &TrainConfig) -> Self {
        Self {
            beta1: train.adam_beta1,
            beta2: train.adam_beta2,
            eps: train.adam_eps,
            lr: train.learning_rate,
            step: 0,
            m: DenoiserParams::zeros_for(config),
            v: DenoiserParams::zeros_for(config),
        }
    }

    /// One bias-corrected update, then rounds the parameters to single precision.
    pub fn step(&mut self, params: &mut DenoiserParams, grads: &DenoiserParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let blocks = params.entries_mut().iter_mut().zip(grads.entries()).zip(
            self.m
                .entries_mut()
                .iter_mut()
                .zip(self.v.entries_mut().iter_mut()),
        );
        for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        params.round_to_single();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,eval_loss";

pub fn metrics_text(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.eval_loss));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: DenoiserCheckpoint,
    pub metrics: Vec<EpochMetrics>,
}

struct Example {
    patches: Patches,
    action: [f64; ACTION_DIM],
}

fn examples(model: &Denoiser, ds: &DemoDataset, scale: f64) -> Result<Vec<Example>> {
    (0..ds.len())
        .map(|i| {
            let mut action = ds.action(i).0;
            for v in action.iter_mut() {
                *v /= scale;
            }
            Ok(Example {
                patches: model.patches(&ds.observation(i))?,
                action,
            })
        })
        .collect()
}

fn eval_loss(
    model: &Denoiser,
    eval: &[Example],
    schedule: &NoiseSchedule,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (c, chunk) in eval.chunks(batch_size).enumerate() {
        let items: Vec<BatchItem> = chunk
            .iter()
            .enumerate()
            .map(|(k, ex)| BatchItem {
                obs: &ex.patches,
                action: &ex.action,
                noise_key: denoiser::derive_seed(EVAL_TAG, &[(c * batch_size + k) as u64]),
            })
            .collect();
        total += denoiser::batch_loss(model, &items, schedule, seed)? * items.len() as f64;
    }
    Ok(total / eval.len() as f64)
}

fn non_finite(model: &Denoiser, grads: Option<&DenoiserParams>, what: &str) -> Error {
    let block = grads
        .and_then(|g| g.first_non_finite().map(|n| format!("gradient of `{n}`")))
        .or_else(|| {
            model
                .params()
                .first_non_finite()
                .map(|n| format!("parameter `{n}`"))
        })
        .unwrap_or_else(|| "no parameter block".to_string());
    Error::Numeric(format!(
        "{what} is not finite (first offending block: {block})"
    ))
}

/// Trains a fresh model on the first `split_fraction` of `dataset` and
/// reports the loss on the rest after every epoch.
///
/// The run is a pure function of its inputs: shuffles and noise are keyed
/// by `(seed, epoch, example index)` and gradients are reduced in order.
pub fn train(
    dataset: &DemoDataset,
    train_cfg: &TrainConfig,
    model_cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if schedule.num_steps() != model_cfg.max_timestep {
        return Err(Error::Config(format!(
            "schedule has {} steps but the model expects {}",
            schedule.num_steps(),
            model_cfg.max_timestep
        )));
    }
    let (train_ds, eval_ds) = split_dataset(dataset, train_cfg.split_fraction)?;
    let scale = action_scale(train_ds.actions()) / train_cfg.action_rms;
    let seed = train_cfg.seed;

    let mut model = Denoiser::init(model_cfg.clone(), denoiser::derive_seed(seed, &[0x1417]))?;
    model.attach_schedule(schedule)?;
    let train_ex = examples(&model, &train_ds, scale)?;
    let eval_ex = examples(&model, &eval_ds, scale)?;
    // Inputs are centered on the mean training image so the encoder sees
    // what changes between frames rather than the static scene.
    if let Some(mean) = Patches::mean(train_ex.iter().map(|x| &x.patches)) {
        let idx = model
            .params()
            .index_of("obs.center")
            .expect("encoder center");
        let center = &mut model.params_mut().entries_mut()[idx].1.data;
        center
            .iter_mut()
            .zip(mean)
            .for_each(|(c, m)| *c = m as f32 as f64);
    }
    let eval_seed = denoiser::derive_seed(seed, &[EVAL_TAG]);

    let mut adam = Adam::new(model_cfg, train_cfg);
    let mut metrics = Vec::with_capacity(train_cfg.epochs);
    let mut last_train = f64::NAN;
    let mut last_eval = eval_loss(&model, &eval_ex, schedule, eval_seed, train_cfg.batch_size)?;

    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(denoiser::derive_seed(seed, &[epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let items: Vec<BatchItem> = chunk
                .iter()
                .flat_map(|&i| (0..train_cfg.noise_draws).map(move |k| (i, k)))
                .map(|(i, k)| BatchItem {
                    obs: &train_ex[i].patches,
                    action: &train_ex[i].action,
                    noise_key: denoiser::derive_seed(epoch as u64, &[i as u64, k as u64]),
                })
                .collect();
            let (loss, grads) = match denoiser::loss_and_gradients(&model, &items, schedule, seed) {
                Ok(r) => r,
                Err(Error::Numeric(_)) => return Err(non_finite(&model, None, "training loss")),
                Err(e) => return Err(e),
            };
            if grads.first_non_finite().is_some() {
                return Err(non_finite(&model, Some(&grads), "gradient"));
            }
            adam.step(model.params_mut(), &grads);
            if model.params().first_non_finite().is_some() {
                return Err(non_finite(&model, None, "parameter update"));
            }
            sum += loss * chunk.len() as f64;
        }
        last_train = sum / train_ex.len() as f64;
        last_eval = eval_loss(&model, &eval_ex, schedule, eval_seed, train_cfg.batch_size)?;
        if !last_eval.is_finite() {
            return Err(non_finite(&model, None, "eval loss"));
        }
        metrics.push(EpochMetrics {
            epoch,
            train_loss: last_train,
            eval_loss: last_eval,
        });
    }

    let meta = TrainingMeta {
        epochs_run: train_cfg.epochs,
        final_train_loss: last_train,
        final_eval_loss: last_eval,
        obs_mode: Some(dataset.meta().obs_mode),
        action_scale: scale,
        seed,
    };
    Ok(TrainOutcome {
        checkpoint: DenoiserCheckpoint::new(model, schedule.clone(), meta)?,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_diffuse_by_hand() {
        let mut a0 = [0.0; 36];
        a0[0] = 1.0;
        let mut eps = [0.0; 36];
        eps[1] = 1.0;
        let out = forward_diffuse_with_alpha_bar(&ActionVector(a0), 0.72, &eps).unwrap();
        assert!((out.0[0] - 0.848528137423857).abs() < 1e-12);
        assert!((out.0[1] - 0.529150262212918).abs() < 1e-12);
        assert!(out.0[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_diffuse_limits() {
        let a0 = ActionVector([0.3; 36]);
        let eps = [0.7; 36];
        assert_eq!(forward_diffuse_with_alpha_bar(&a0, 1.0, &eps).unwrap(), a0);
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let out = forward_diffuse(&ActionVector::zeros(), 2, &eps, &s).unwrap();
        for v in out.0 {
            assert!((v - 0.28f64.sqrt() * 0.7).abs() < 1e-12);
        }
        assert!(matches!(
            forward_diffuse(&a0, 3, &eps, &s),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            forward_diffuse(&a0, 0, &eps, &s),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn split_sizes_floor() {
        assert_eq!(split_sizes(10, 0.8).unwrap(), (8, 10));
        assert_eq!(split_sizes(5, 0.8).unwrap(), (4, 5));
        assert!(matches!(split_sizes(1, 0.8), Err(Error::Config(_))));
        assert!(matches!(split_sizes(10, 1.0), Err(Error::Config(_))));
        assert!(matches!(split_sizes(0, 0.5), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn action_scale_cases() {
        assert_eq!(action_scale(&[ActionVector::zeros()]), 1.0);
        assert_eq!(action_scale(&[ActionVector([2.0; 36])]), 2.0);
        assert_eq!(action_scale(&[ActionVector([1e-9; 36])]), MIN_ACTION_SCALE);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            split_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn metrics_layout() {
        let text = metrics_text(&[EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            eval_loss: 0.25,
        }]);
        assert_eq!(text, "epoch,train_loss,eval_loss\n1,0.5,0.25\n");
    }
}
