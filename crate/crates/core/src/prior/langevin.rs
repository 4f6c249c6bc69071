use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CovarianceFactor, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::Backbone;

/// Parameters of the hybrid Langevin reverse SDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinParams {
    /// Final inverse temperature.
    pub lambda_0: f64,
    /// Langevin equilibration rate.
    pub psi: f64,
    /// Per-step temperature annealing, indexed by `t - 1`; empty means 1 everywhere.
    pub lambda_t: Vec<f64>,
}

impl Default for LangevinParams {
    fn default() -> Self {
        Self {
            lambda_0: 1.0,
            psi: 0.0,
            lambda_t: Vec::new(),
        }
    }
}

impl LangevinParams {
    fn lambda(&self, t: usize) -> f64 {
        self.lambda_t.get(t - 1).copied().unwrap_or(1.0)
    }

    fn validate(&self, n_steps: usize) -> Result<()> {
        if !(self.lambda_0 > 0.0) || !(self.psi >= 0.0) {
            return Err(Error::InvalidArgument(
                "need lambda_0 > 0 and psi >= 0".into(),
            ));
        }
        if !self.lambda_t.is_empty() && self.lambda_t.len() != n_steps {
            return Err(Error::InvalidArgument(format!(
                "lambda_t has {} entries for {n_steps} steps",
                self.lambda_t.len()
            )));
        }
        if self.lambda_t.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument("lambda_t must be positive".into()));
        }
        Ok(())
    }
}

/// Score in whitened coordinates recovered from a denoiser output.
pub fn score_from_denoised(z_t: &[f64], z0_hat: &[f64], alpha_bar: f64, tau: f64) -> Vec<f64> {
    let sa = alpha_bar.sqrt();
    let inv = 1.0 / (tau * tau);
    z_t.iter()
        .zip(z0_hat)
        .map(|(z, d)| (sa * d - z) * inv)
        .collect()
}

/// Euler–Maruyama integration of the hybrid Langevin reverse SDE in the
/// whitened space, starting from `z_T ~ N(0, I)`. Returns `z_0`.
///
/// Each step is `z ← z + β_t (z/2 + (λ_t + λ_0 ψ / 2) s(z, t)) + sqrt(β_t (1 + ψ)) ε`;
/// the last step (`t = 1`) injects no noise.
pub fn unconditional_sample_latent(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    params: &LangevinParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_init: Vec<f64> = (0..denoiser.dim())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    integrate_from(denoiser, sched, params, z_init, &mut rng)
}

pub(crate) fn integrate_from(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    params: &LangevinParams,
    mut z: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    params.validate(sched.n_steps())?;
    for t in (1..=sched.n_steps()).rev() {
        let beta = sched.beta(t);
        let z0_hat = denoiser.denoise(&z, t);
        let score = score_from_denoised(&z, &z0_hat, sched.alpha_bar(t), sched.tau(t));
        let drift_scale = params.lambda(t) + 0.5 * params.lambda_0 * params.psi;
        let noise_std = if t > 1 {
            (beta * (1.0 + params.psi)).sqrt()
        } else {
            0.0
        };
        let last = z.clone();
        for (zi, si) in z.iter_mut().zip(&score) {
            let eps: f64 = if noise_std > 0.0 {
                StandardNormal.sample(rng)
            } else {
                0.0
            };
            *zi += beta * (0.5 * *zi + drift_scale * si) + noise_std * eps;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: t,
                last_finite: last,
            });
        }
    }
    Ok(z)
}

/// Unconditional backbone sample `x = R z_0`.
pub fn unconditional_sample(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    params: &LangevinParams,
    covariance: &CovarianceFactor,
    seed: u64,
) -> Result<Backbone> {
    let z0 = unconditional_sample_latent(denoiser, sched, params, seed)?;
    Backbone::new(covariance.unwhiten(&z0)?)
}
