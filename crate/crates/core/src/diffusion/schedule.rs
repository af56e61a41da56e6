//! Linear noise schedule, closed-form noising, the deterministic DDIM update
//! and classifier-free guidance arithmetic.

use crate::error::{Error, Result};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_SAMPLING_STEPS: usize = 25;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;

/// Timesteps run `1..=T`; `alpha_bar(0) = 1` by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.num_steps() {
            return Err(Error::TimestepRange {
                t,
                max: self.num_steps(),
            });
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        linear_beta_schedule(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default bounds")
    }
}

/// `beta_t` interpolated linearly from `beta_start` at `t = 1` to
/// `beta_end` at `t = T`.
pub fn linear_beta_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::ScheduleBounds("at least one timestep is required".into()));
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::ScheduleBounds(format!(
            "need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else if i == steps - 1 {
                beta_end
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut acc = 1.0;
    let alpha_bars = betas
        .iter()
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect();
    Ok(NoiseSchedule { betas, alpha_bars })
}

/// `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`; `t = 0` returns `z0`.
pub fn add_noise(z0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check(t)?;
    if z0.len() != eps.len() {
        return Err(Error::TensorShape(format!(
            "noise has {} entries, latent {}",
            eps.len(),
            z0.len()
        )));
    }
    if t == 0 {
        return Ok(z0.to_vec());
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

/// Deterministic DDIM update from `t` to `t_prev < t`.
pub fn ddim_step(z_t: &[f64], eps_hat: &[f64], t: usize, t_prev: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if t_prev >= t {
        return Err(Error::DdimOrder { t, t_prev });
    }
    schedule.check(t)?;
    if z_t.len() != eps_hat.len() {
        return Err(Error::TensorShape(format!(
            "noise estimate has {} entries, latent {}",
            eps_hat.len(),
            z_t.len()
        )));
    }
    let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    Ok(z_t
        .iter()
        .zip(eps_hat)
        .map(|(z, e)| {
            let z0 = (z - sb * e) / sa;
            pa * z0 + pb * e
        })
        .collect())
}

/// `(t, t_prev)` pairs of a `steps`-step DDIM run: uniform strides
/// `i * (T / steps) + 1`, descending, ending at `t_prev = 0`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<(usize, usize)>> {
    if steps == 0 || steps > total {
        return Err(Error::ScheduleBounds(format!(
            "{steps} sampling steps for a {total}-step schedule"
        )));
    }
    let stride = total / steps;
    let ts: Vec<usize> = (0..steps).rev().map(|i| i * stride + 1).collect();
    Ok(ts
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, ts.get(i + 1).copied().unwrap_or(0)))
        .collect())
}

/// `uncond + scale * (cond - uncond)`.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], scale: f64) -> Vec<f64> {
    // Scale 1 returns the conditioned prediction bit-for-bit.
    if scale == 1.0 {
        return cond.to_vec();
    }
    cond.iter().zip(uncond).map(|(c, u)| u + scale * (c - u)).collect()
}
