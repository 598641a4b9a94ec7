//! Discrete-time diffusion: noise schedules, forward noising and reverse
//! updates with epsilon prediction.

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::randn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Ddpm,
    DdimEta0,
}

/// Linear betas are given for 1000 steps and rescaled by `1000 / T`, so short
/// schedules still end near pure noise.
const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 0.02;
const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

/// `alpha_bar[t]` for `t = 0..=T` with `alpha_bar[0] = 1`; `betas[0]` is unused
/// and stored as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub kind: ScheduleKind,
    pub prediction: Prediction,
    pub zero_terminal_snr: bool,
    pub betas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn cosine_alpha_bar(t: usize, steps: usize) -> f64 {
    let f = |t: f64| (((t / steps as f64) + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    f(t as f64) / f(0.0)
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!("schedule needs at least 2 steps, got {steps}")));
    }
    let mut betas = vec![0.0; steps + 1];
    let mut alpha_bar = vec![1.0; steps + 1];
    match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (LINEAR_BETA_START * scale, LINEAR_BETA_END * scale);
            for t in 1..=steps {
                let frac = (t - 1) as f64 / (steps - 1) as f64;
                betas[t] = (lo + (hi - lo) * frac).min(MAX_BETA);
                alpha_bar[t] = alpha_bar[t - 1] * (1.0 - betas[t]);
            }
        }
        ScheduleKind::Cosine => {
            for t in 1..=steps {
                alpha_bar[t] = cosine_alpha_bar(t, steps);
                betas[t] = 1.0 - alpha_bar[t] / alpha_bar[t - 1];
            }
        }
    }
    let sched = NoiseSchedule {
        steps,
        kind,
        prediction: Prediction::Epsilon,
        zero_terminal_snr: false,
        betas,
        alpha_bar,
    };
    sched.validate()?;
    Ok(sched)
}

impl NoiseSchedule {
    /// Checks range and strict monotonicity of `alpha_bar`.
    pub fn validate(&self) -> Result<()> {
        if self.alpha_bar.len() != self.steps + 1 || self.betas.len() != self.steps + 1 {
            return Err(Error::invalid("schedule arrays do not match the step count"));
        }
        if self.alpha_bar[0] > 1.0 {
            return Err(Error::invalid("alpha_bar[0] exceeds 1"));
        }
        for t in 1..=self.steps {
            let (prev, cur) = (self.alpha_bar[t - 1], self.alpha_bar[t]);
            if !(0.0..=1.0).contains(&cur) || cur >= prev {
                return Err(Error::invalid(format!("alpha_bar not strictly decreasing at t={t}")));
            }
        }
        Ok(())
    }

    /// Rescales `sqrt(alpha_bar)` affinely so that `alpha_bar[T] = 0` while
    /// `alpha_bar[1]` is kept.
    pub fn enforce_zero_terminal_snr(&self) -> NoiseSchedule {
        let steps = self.steps;
        let sqrt_ab: Vec<f64> = self.alpha_bar.iter().map(|a| a.sqrt()).collect();
        let (first, last) = (sqrt_ab[1], sqrt_ab[steps]);
        let mut alpha_bar = self.alpha_bar.clone();
        for t in 2..steps {
            let s = (sqrt_ab[t] - last) * first / (first - last);
            alpha_bar[t] = s * s;
        }
        alpha_bar[steps] = 0.0;
        let mut betas = vec![0.0; steps + 1];
        for t in 1..=steps {
            betas[t] = 1.0 - alpha_bar[t] / alpha_bar[t - 1];
        }
        NoiseSchedule {
            steps,
            kind: self.kind,
            prediction: self.prediction,
            zero_terminal_snr: true,
            betas,
            alpha_bar,
        }
    }

    pub fn snr(&self, t: usize) -> f64 {
        let a = self.alpha_bar[t];
        a / (1.0 - a)
    }

    /// Largest timestep whose epsilon target is informative. With a zero
    /// terminal SNR the last step is pure noise and the x0 estimate from an
    /// epsilon prediction is undefined there, so it is skipped.
    pub fn max_trainable_t(&self) -> usize {
        if self.alpha_bar[self.steps] > 0.0 {
            self.steps
        } else {
            self.steps - 1
        }
    }

    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(1..=self.max_trainable_t())
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// `z_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_t(t)?;
        if x0.dims() != eps.dims() {
            return Err(Error::invalid(format!(
                "q_sample shape mismatch: {:?} vs {:?}",
                x0.dims(),
                eps.dims()
            )));
        }
        let ab = self.alpha_bar[t];
        Ok(((x0 * ab.sqrt())? + (eps * (1.0 - ab).sqrt())?)?)
    }

    /// `x0_hat = (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)`; undefined where `ab_t = 0`.
    pub fn predict_x0(&self, z: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        let ab = self.alpha_bar[t];
        if ab <= 0.0 {
            return Err(Error::invalid(format!("x0 estimate undefined at t={t} (alpha_bar = 0)")));
        }
        Ok(((z - (eps * (1.0 - ab).sqrt())?)? * (1.0 / ab.sqrt()))?)
    }

    /// One reverse update `t -> t - 1`.
    pub fn reverse_step<R: Rng + ?Sized>(
        &self,
        z: &Tensor,
        t: usize,
        eps_hat: &Tensor,
        mode: SamplerMode,
        rng: &mut R,
    ) -> Result<Tensor> {
        if t == 0 {
            return Err(Error::invalid("reverse_step called at t = 0"));
        }
        self.reverse_step_to(z, t, t - 1, eps_hat, mode, rng)
    }

    /// Reverse update from `t` to any earlier `t_prev` (strided sampling).
    /// `DdimEta0` is deterministic; `Ddpm` uses the eta = 1 posterior noise,
    /// which vanishes when `t_prev = 0`.
    pub fn reverse_step_to<R: Rng + ?Sized>(
        &self,
        z: &Tensor,
        t: usize,
        t_prev: usize,
        eps_hat: &Tensor,
        mode: SamplerMode,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.check_t(t)?;
        if t_prev >= t {
            return Err(Error::invalid(format!("t_prev {t_prev} must precede t {t}")));
        }
        if z.dims() != eps_hat.dims() {
            return Err(Error::invalid("reverse_step: eps_hat shape differs from z_t"));
        }
        let x0 = self.predict_x0(z, t, eps_hat)?;
        let (ab_t, ab_prev) = (self.alpha_bar[t], self.alpha_bar[t_prev]);
        match mode {
            SamplerMode::DdimEta0 => {
                Ok(((x0 * ab_prev.sqrt())? + (eps_hat * (1.0 - ab_prev).sqrt())?)?)
            }
            SamplerMode::Ddpm => {
                let sigma2 = ((1.0 - ab_prev) / (1.0 - ab_t)) * (1.0 - ab_t / ab_prev);
                let dir = (1.0 - ab_prev - sigma2).max(0.0).sqrt();
                let mean = ((x0 * ab_prev.sqrt())? + (eps_hat * dir)?)?;
                if t_prev == 0 || sigma2 <= 0.0 {
                    return Ok(mean);
                }
                let noise = randn(rng, z.dims(), z.dtype())?;
                Ok((mean + (noise * sigma2.sqrt())?)?)
            }
        }
    }

    /// Descending timesteps for an `n`-step strided chain, ending with 0.
    pub fn inference_timesteps(&self, n: usize) -> Result<Vec<usize>> {
        let top = self.max_trainable_t();
        if n == 0 || n > top {
            return Err(Error::invalid(format!("inference steps must be in 1..={top}")));
        }
        let mut ts: Vec<usize> = (1..=n).rev().map(|i| (i * top + n / 2) / n).collect();
        ts.dedup();
        ts.push(0);
        Ok(ts)
    }
}
