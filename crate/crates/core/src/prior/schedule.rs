use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub n_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            n_steps: 200,
            beta_min: 1e-4,
            beta_max: 0.05,
        }
    }
}

/// Discretised variance-preserving schedule in the whitened space.
///
/// Index `t` runs over `0..=T`; `t = 0` is clean data. The marginal is
/// `z_t = sqrt(ᾱ_t) z_0 + τ_t ε` with `τ_t = sqrt(1 - ᾱ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    tau: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            n_steps,
            beta_min,
            beta_max,
        } = params;
        if n_steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_max >= beta_min && beta_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}"
            )));
        }
        let mut beta = vec![0.0; n_steps + 1];
        for (t, b) in beta.iter_mut().enumerate().skip(1) {
            let frac = if n_steps == 1 {
                0.0
            } else {
                (t - 1) as f64 / (n_steps - 1) as f64
            };
            *b = beta_min + (beta_max - beta_min) * frac;
        }
        let mut alpha_bar = Vec::with_capacity(n_steps + 1);
        let mut cumulative = 0.0;
        for b in &beta {
            cumulative += b;
            alpha_bar.push((-cumulative).exp());
        }
        // 1 - exp(-c) without cancellation for small c
        let tau = beta
            .iter()
            .scan(0.0, |c, b| {
                *c += b;
                Some((-(-*c).exp_m1()).sqrt())
            })
            .collect();
        Ok(Self {
            params,
            beta,
            alpha_bar,
            tau,
        })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn n_steps(&self) -> usize {
        self.params.n_steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn tau(&self, t: usize) -> f64 {
        self.tau[t]
    }

    /// Diffusion time on the unit interval, `t / T`.
    pub fn t_norm(&self, t: usize) -> f64 {
        t as f64 / self.n_steps() as f64
    }

    /// Signal factor of the one-step forward kernel `q(z_t | z_{t-1})`.
    pub fn forward_alpha(&self, t: usize) -> f64 {
        assert!(t >= 1);
        (-0.5 * self.beta[t]).exp()
    }

    /// Noise std of the one-step forward kernel `q(z_t | z_{t-1})`.
    pub fn forward_tau(&self, t: usize) -> f64 {
        assert!(t >= 1);
        (-(-self.beta[t]).exp_m1()).sqrt()
    }

    /// Mean factor of the re-noising step `z_{t-1} ~ N(α ẑ_0, τ² I)` that
    /// follows the guided clean estimate at step `t`.
    pub fn renoise_alpha(&self, t: usize) -> f64 {
        assert!(t >= 1);
        self.alpha_bar[t - 1].sqrt()
    }

    /// Noise std of the re-noising step; zero on the final step.
    pub fn renoise_tau(&self, t: usize) -> f64 {
        assert!(t >= 1);
        self.tau[t - 1]
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(ScheduleParams::default()).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_values() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.tau(0), 0.0);
        assert!((s.beta(1) - 1e-4).abs() < 1e-15);
        assert!((s.beta(200) - 0.05).abs() < 1e-15);
        assert!(s.alpha_bar(200) < 0.01);
    }

    #[test]
    fn monotone() {
        let s = NoiseSchedule::default();
        for t in 1..=s.n_steps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.tau(t) > s.tau(t - 1));
        }
    }

    #[test]
    fn composition_laws() {
        let s = NoiseSchedule::default();
        for t in 1..=s.n_steps() {
            let a = s.forward_alpha(t);
            let tau_step = s.forward_tau(t);
            assert!((s.alpha_bar(t) - a * a * s.alpha_bar(t - 1)).abs() < 1e-10);
            let composed = a * a * s.tau(t - 1).powi(2) + tau_step.powi(2);
            assert!((s.tau(t).powi(2) - composed).abs() < 1e-10);
            let (ra, rt) = (s.renoise_alpha(t), s.renoise_tau(t));
            assert!((ra * ra + rt * rt - 1.0).abs() < 1e-10);
        }
        assert_eq!(s.renoise_tau(1), 0.0);
        assert_eq!(s.renoise_alpha(1), 1.0);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(NoiseSchedule::new(ScheduleParams {
            n_steps: 0,
            ..Default::default()
        })
        .is_err());
        assert!(NoiseSchedule::new(ScheduleParams {
            beta_min: 0.1,
            beta_max: 0.01,
            ..Default::default()
        })
        .is_err());
    }
}
