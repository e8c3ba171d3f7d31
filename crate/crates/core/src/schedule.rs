//! Diffusion coefficient tables.
//!
//! Timesteps are 1-based throughout: `coefficients_at(schedule, 1)` is the
//! first (least noisy) step and `coefficients_at(schedule, T)` the last.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the per-step reverse-process noise scale is derived from the betas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaKind {
    /// σ_t = √β_t
    #[default]
    Beta,
    /// σ_t² = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t), the posterior variance
    Posterior,
}

impl fmt::Display for SigmaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaKind::Beta => "beta",
            SigmaKind::Posterior => "posterior",
        })
    }
}

impl FromStr for SigmaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SigmaKind::Beta),
            "posterior" => Ok(SigmaKind::Posterior),
            other => Err(Error::Config(format!("unknown sigma kind `{other}`"))),
        }
    }
}

/// β, α, ᾱ and σ tables over `num_steps` timesteps. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    sigma_kind: SigmaKind,
}

/// The coefficient triple consumed by one reverse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub alpha: f64,
    pub alpha_bar: f64,
    pub sigma: f64,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::linear_with_sigma(num_steps, beta_start, beta_end, SigmaKind::Beta)
    }

    pub fn linear_with_sigma(
        num_steps: usize,
        beta_start: f64,
        beta_end: f64,
        sigma_kind: SigmaKind,
    ) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "betas must satisfy 0 < start <= end < 1, got start={beta_start} end={beta_end}"
            )));
        }
        let betas = if num_steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            let denom = (num_steps - 1) as f64;
            (0..num_steps)
                .map(|i| beta_start + span * (i as f64) / denom)
                .collect()
        };
        Self::from_betas_with_sigma(betas, sigma_kind)
    }

    /// Builds the tables from an explicit beta sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        Self::from_betas_with_sigma(betas, SigmaKind::Beta)
    }

    pub fn from_betas_with_sigma(betas: Vec<f64>, sigma_kind: SigmaKind) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(bad) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {bad} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let sigmas = match sigma_kind {
            SigmaKind::Beta => betas.iter().map(|b| b.sqrt()).collect(),
            SigmaKind::Posterior => (0..betas.len())
                .map(|i| {
                    let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                    (betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])).sqrt()
                })
                .collect(),
        };
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
            sigma_kind,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma_kind(&self) -> SigmaKind {
        self.sigma_kind
    }

    /// (α_t, ᾱ_t, σ_t) for a 1-based timestep.
    pub fn coefficients_at(&self, t: usize) -> Result<StepCoefficients> {
        let i = self.check_step(t)?;
        Ok(StepCoefficients {
            alpha: self.alphas[i],
            alpha_bar: self.alpha_bars[i],
            sigma: self.sigmas[i],
        })
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::Index {
                index: t as i64,
                lo: 1,
                hi: self.num_steps() as i64,
            });
        }
        Ok(t - 1)
    }
}

/// Free-function form of [`NoiseSchedule::linear`].
pub fn build_linear_schedule(
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(num_steps, beta_start, beta_end)
}

/// Free-function form of [`NoiseSchedule::coefficients_at`].
pub fn coefficients_at(schedule: &NoiseSchedule, t: usize) -> Result<StepCoefficients> {
    schedule.coefficients_at(t)
}
