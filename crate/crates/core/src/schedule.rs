//! Noise schedules and the single reverse diffusion step.
//!
//! Steps are indexed `1..=T`; `alpha_bar(0)` is defined as 1 so that the last
//! reverse step (`t = 1`) lands on a clean sample.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// Length of the reference training schedule that desk-scale schedules are subsampled from.
pub const REFERENCE_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMode {
    /// DDPM posterior step with fresh Gaussian noise.
    Ancestral,
    /// Noise-free step: predict x0, then re-noise to `t - 1` with the same epsilon.
    #[default]
    Deterministic,
}

impl FromStr for StepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancestral" => Ok(StepMode::Ancestral),
            "deterministic" => Ok(StepMode::Deterministic),
            other => Err(Error::Parameter(format!(
                "unknown step mode `{other}` (expected ancestral|deterministic)"
            ))),
        }
    }
}

impl fmt::Display for StepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepMode::Ancestral => "ancestral",
            StepMode::Deterministic => "deterministic",
        })
    }
}

/// Per-step diffusion coefficients. Stored in f64; grids stay f32.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// `T` betas linearly spaced from `beta_start` to `beta_end`, endpoints included.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::range("steps", "T must be >= 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::range(
                "beta range",
                format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"),
            ));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Keeps `steps` evenly spaced timesteps of `base` (the last one always included)
    /// and re-derives betas so the kept cumulative products are preserved.
    pub fn subsampled(base: &NoiseSchedule, steps: usize) -> Result<Self> {
        let n = base.steps();
        if steps == 0 || steps > n {
            return Err(Error::range(
                "steps",
                format!("cannot subsample {steps} of {n} steps"),
            ));
        }
        if steps == n {
            return Ok(base.clone());
        }
        let mut betas = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for k in 1..=steps {
            // round(k * n / steps), computed exactly in integers
            let tau = (2 * k * n + steps) / (2 * steps);
            let ab = base.alpha_bar(tau);
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        Self::from_betas(betas)
    }

    /// The 1000-step linear schedule with the given endpoints, subsampled to `steps`.
    /// With `steps = 1000` this is exactly [`NoiseSchedule::linear`].
    pub fn respaced(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        let base = Self::linear(REFERENCE_STEPS.max(steps), beta_start, beta_end)?;
        Self::subsampled(&base, steps)
    }

    /// Desk-scale default: 1e-4..0.02 reference schedule respaced to `steps`.
    pub fn desk(steps: usize) -> Result<Self> {
        Self::respaced(steps, DEFAULT_BETA_START, DEFAULT_BETA_END)
    }

    fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::range("beta", format!("{b} not in (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_sigmas = (0..betas.len())
            .map(|i| {
                let ab_prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (betas[i] * (1.0 - ab_prev) / (1.0 - alpha_bars[i])).sqrt()
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::range(
                "step",
                format!("t = {t} not in 1..={}", self.steps()),
            ))
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Ancestral noise scale; zero at `t = 1`.
    pub fn posterior_sigma(&self, t: usize) -> f64 {
        self.posterior_sigmas[t - 1]
    }

    /// `sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * epsilon`.
    pub fn add_noise(&self, x0: &LatentGrid, t: usize, epsilon: &LatentGrid) -> Result<LatentGrid> {
        self.check_step(t)?;
        x0.ensure_same_shape(epsilon, "add_noise")?;
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(epsilon, |x, e| (a * x as f64 + b * e as f64) as f32)
    }

    /// The clean-sample estimate implied by `eps_hat` at step `t`.
    pub fn predict_x0(
        &self,
        x_t: &LatentGrid,
        eps_hat: &LatentGrid,
        t: usize,
    ) -> Result<LatentGrid> {
        self.check_step(t)?;
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x_t.zip_map(eps_hat, |x, e| ((x as f64 - b * e as f64) / a) as f32)
    }

    /// One reverse step `x_t -> x_{t-1}` given a noise prediction.
    ///
    /// `z` is only read in ancestral mode for `t > 1`, where it is required.
    pub fn reverse_step(
        &self,
        x_t: &LatentGrid,
        eps_hat: &LatentGrid,
        t: usize,
        mode: StepMode,
        z: Option<&LatentGrid>,
    ) -> Result<LatentGrid> {
        self.check_step(t)?;
        x_t.ensure_same_shape(eps_hat, "reverse_step epsilon")?;
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let out = match mode {
            StepMode::Deterministic => {
                let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
                let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
                x_t.zip_map(eps_hat, |x, e| {
                    let (x, e) = (x as f64, e as f64);
                    let x0 = (x - sb * e) / sa;
                    (pa * x0 + pb * e) as f32
                })?
            }
            StepMode::Ancestral => {
                let inv_sqrt_alpha = 1.0 / self.alpha(t).sqrt();
                let eps_coef = self.beta(t) / (1.0 - ab).sqrt();
                let mean = x_t.zip_map(eps_hat, |x, e| {
                    (inv_sqrt_alpha * (x as f64 - eps_coef * e as f64)) as f32
                })?;
                let sigma = self.posterior_sigma(t);
                if t == 1 || sigma == 0.0 {
                    mean
                } else {
                    let z = z.ok_or_else(|| {
                        Error::Parameter(format!("ancestral step t = {t} needs a noise grid"))
                    })?;
                    mean.ensure_same_shape(z, "reverse_step noise")?;
                    mean.zip_map(z, |m, n| (m as f64 + sigma * n as f64) as f32)?
                }
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("reverse step at t = {t}")));
        }
        Ok(out)
    }
}
