//! Discrete diffusion ladder: signal/noise coefficients, timestep sampling and
//! the per-timestep distillation weight.
//!
//! Conventions: `alpha[t]` is the signal coefficient (the square root of the
//! DDPM cumulative product), `sigma[t] = sqrt(1 - alpha[t]^2)`, and a noised
//! sample is `x_t = alpha[t] * x_0 + sigma[t] * eps`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible terminal signal coefficient.
pub const ALPHA_T_MAX: f64 = 1e-2;

/// Schedule family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleFamily {
    /// Variances linear in `t` from `beta_start` to `beta_end`, both rescaled
    /// by `1000 / T` so that the terminal signal level does not depend on `T`.
    ScaledLinear { beta_start: f64, beta_end: f64 },
    /// Squared-cosine cumulative signal with offset `s`; per-step variances
    /// are capped at 0.999.
    Cosine {
        #[serde(default = "default_cosine_offset")]
        offset: f64,
    },
}

fn default_cosine_offset() -> f64 {
    0.008
}

impl Default for ScheduleFamily {
    fn default() -> Self {
        ScheduleFamily::ScaledLinear {
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

impl ScheduleFamily {
    pub fn cosine() -> Self {
        ScheduleFamily::Cosine {
            offset: default_cosine_offset(),
        }
    }

    /// Per-step variances `beta_1..=beta_T`.
    fn betas(&self, timesteps: usize) -> Result<Vec<f64>> {
        match *self {
            ScheduleFamily::ScaledLinear {
                beta_start,
                beta_end,
            } => {
                if !(beta_start > 0.0 && beta_start < beta_end) {
                    return Err(Error::Schedule(format!(
                        "scaled-linear needs 0 < beta_start < beta_end, got {beta_start} and {beta_end}"
                    )));
                }
                let scale = 1000.0 / timesteps as f64;
                let (b0, b1) = (beta_start * scale, beta_end * scale);
                if b1 >= 1.0 {
                    return Err(Error::Schedule(format!(
                        "scaled beta_end = {b1} >= 1 for T = {timesteps}"
                    )));
                }
                Ok((0..timesteps)
                    .map(|i| b0 + (b1 - b0) * i as f64 / (timesteps - 1) as f64)
                    .collect())
            }
            ScheduleFamily::Cosine { offset } => {
                if !(offset > 0.0 && offset.is_finite()) {
                    return Err(Error::Schedule(format!(
                        "cosine offset must be positive, got {offset}"
                    )));
                }
                let f = |t: usize| {
                    let u = (t as f64 / timesteps as f64 + offset) / (1.0 + offset);
                    (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                Ok((1..=timesteps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(1e-12, 0.999))
                    .collect())
            }
        }
    }
}

/// Immutable discrete schedule with `T + 1` levels (`t = 0..=T`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    timesteps: usize,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule and checks every invariant before returning it.
    pub fn new(timesteps: usize, family: ScheduleFamily) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Schedule(format!("T must be >= 2, got {timesteps}")));
        }
        let betas = family.betas(timesteps)?;
        let mut alpha_bar = 1.0;
        let mut alpha = Vec::with_capacity(timesteps + 1);
        alpha.push(1.0);
        for beta in &betas {
            alpha_bar *= 1.0 - beta;
            alpha.push(alpha_bar.sqrt());
        }
        let sigma = alpha.iter().map(|a| (1.0 - a * a).max(0.0).sqrt()).collect();
        let schedule = Self {
            timesteps,
            alpha,
            sigma,
        };
        schedule.check_invariants()?;
        Ok(schedule)
    }

    fn check_invariants(&self) -> Result<()> {
        let last = self.alpha[self.timesteps];
        if last > ALPHA_T_MAX {
            return Err(Error::Schedule(format!(
                "terminal alpha {last:.3e} exceeds {ALPHA_T_MAX}; the ladder does not reach noise"
            )));
        }
        if let Some(t) = (0..self.timesteps).find(|&t| self.alpha[t + 1] >= self.alpha[t]) {
            return Err(Error::Schedule(format!("alpha not strictly decreasing at t = {t}")));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Schedule("alpha left (0, 1]".into()));
        }
        Ok(())
    }

    /// `T`, the number of noising steps.
    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub(crate) fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.timesteps {
            return Err(Error::TimestepOutOfRange {
                t,
                min,
                max: self.timesteps,
            });
        }
        Ok(())
    }

    /// `alpha_t * x0 + sigma_t * eps`. `t = 0` is accepted and returns `x0`.
    pub fn add_noise(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t, 0)?;
        if x0.len() != eps.len() {
            return Err(Error::DimensionMismatch {
                expected: x0.len(),
                got: eps.len(),
            });
        }
        let (a, s) = (self.alpha[t], self.sigma[t]);
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
    }

    /// Default interior sampling window `[0.02 T, 0.98 T]`.
    pub fn interior_window(&self) -> (usize, usize) {
        let t = self.timesteps as f64;
        let lo = ((0.02 * t).round() as usize).max(1);
        let hi = ((0.98 * t).round() as usize).clamp(lo, self.timesteps);
        (lo, hi)
    }
}

/// Distillation weight `omega(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// `omega(t) = alpha_t^2`; also absorbs the `d x_t / d x_0 = alpha_t` factor.
    #[default]
    AlphaSquared,
    Constant,
}

impl WeightRule {
    pub fn weight(&self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            WeightRule::AlphaSquared => schedule.alpha(t).powi(2),
            WeightRule::Constant => 1.0,
        }
    }
}

/// Seeded uniform sampler over an inclusive timestep window.
#[derive(Debug, Clone)]
pub struct TimestepSampler {
    t_min: usize,
    t_max: usize,
    rng: ChaCha8Rng,
}

impl TimestepSampler {
    pub fn new(schedule: &NoiseSchedule, t_min: usize, t_max: usize, seed: u64) -> Result<Self> {
        if t_min < 1 || t_min > t_max || t_max > schedule.timesteps() {
            return Err(Error::Schedule(format!(
                "timestep window [{t_min}, {t_max}] invalid for T = {}",
                schedule.timesteps()
            )));
        }
        Ok(Self {
            t_min,
            t_max,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn interior(schedule: &NoiseSchedule, seed: u64) -> Self {
        let (lo, hi) = schedule.interior_window();
        Self::new(schedule, lo, hi, seed).expect("interior window is valid by construction")
    }

    pub fn window(&self) -> (usize, usize) {
        (self.t_min, self.t_max)
    }

    pub fn sample(&mut self) -> usize {
        self.rng.random_range(self.t_min..=self.t_max)
    }

    /// Index of the window decile containing `t`, in `0..10`.
    pub fn decile(&self, t: usize) -> usize {
        timestep_decile(t, self.t_min, self.t_max)
    }
}

/// Decile of `t` inside the inclusive window `[t_min, t_max]`.
pub fn timestep_decile(t: usize, t_min: usize, t_max: usize) -> usize {
    let span = (t_max - t_min + 1) as f64;
    let idx = ((t.saturating_sub(t_min)) as f64 * 10.0 / span).floor() as usize;
    idx.min(9)
}
