use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::error::{Error, Result};

/// A map from a noisy whitened latent `z_t` to an estimate of the clean latent.
pub trait Denoiser: Sync {
    fn dim(&self) -> usize;
    fn denoise(&self, z_t: &[f64], t: usize) -> Vec<f64>;

    /// Expected per-coordinate error of the estimate at step `t`, as a
    /// multiple of `τ_t`. Denoisers that cannot say return 1.
    fn error_scale(&self, _t: usize) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub weight: f64,
}

/// Isotropic Gaussian mixture over whitened latents:
/// `p(z_0) = Σ_k w_k N(μ_k, s² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixturePrior {
    components: Vec<MixtureComponent>,
    component_std: f64,
}

impl GaussianMixturePrior {
    /// Weights are normalised to sum to one.
    pub fn new(means: Vec<Vec<f64>>, weights: Vec<f64>, component_std: f64) -> Result<Self> {
        if means.is_empty() || means.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} means but {} weights",
                means.len(),
                weights.len()
            )));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidArgument("component means differ in length".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        if !(component_std >= 0.0 && component_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "component_std must be non-negative, got {component_std}"
            )));
        }
        let total: f64 = weights.iter().sum();
        let components = means
            .into_iter()
            .zip(weights)
            .map(|(mean, w)| MixtureComponent {
                mean,
                weight: w / total,
            })
            .collect();
        Ok(Self {
            components,
            component_std,
        })
    }

    pub fn uniform(means: Vec<Vec<f64>>, component_std: f64) -> Result<Self> {
        let n = means.len();
        Self::new(means, vec![1.0; n], component_std)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn component_std(&self) -> f64 {
        self.component_std
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Posterior component probabilities `p(k | z_t)` for the corruption
    /// `z_t = sqrt(ᾱ) z_0 + τ ε`, computed with log-sum-exp.
    pub fn responsibilities(&self, z_t: &[f64], alpha_bar: f64, tau: f64) -> Vec<f64> {
        let sa = alpha_bar.sqrt();
        let var = alpha_bar * self.component_std.powi(2) + tau * tau;
        let logits: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let d2: f64 = z_t
                    .iter()
                    .zip(&c.mean)
                    .map(|(z, m)| (z - sa * m).powi(2))
                    .sum();
                if var > 0.0 {
                    c.weight.ln() - 0.5 * d2 / var
                } else if d2 == 0.0 {
                    c.weight.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return vec![1.0 / logits.len() as f64; logits.len()];
        }
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Exact posterior mean `E[z_0 | z_t]`.
    pub fn posterior_mean(&self, z_t: &[f64], alpha_bar: f64, tau: f64) -> Vec<f64> {
        if tau == 0.0 {
            return z_t.iter().map(|z| z / alpha_bar.sqrt()).collect();
        }
        let resp = self.responsibilities(z_t, alpha_bar, tau);
        let sa = alpha_bar.sqrt();
        let s2 = self.component_std.powi(2);
        // Per component: μ + sqrt(ᾱ) s² / (ᾱ s² + τ²) · (z_t − sqrt(ᾱ) μ)
        let gain = sa * s2 / (alpha_bar * s2 + tau * tau);
        let mut out = vec![0.0; z_t.len()];
        for (c, r) in self.components.iter().zip(&resp) {
            if *r == 0.0 {
                continue;
            }
            for ((o, z), m) in out.iter_mut().zip(z_t).zip(&c.mean) {
                *o += r * (m + gain * (z - sa * m));
            }
        }
        out
    }

    /// Draws one clean latent from the prior.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        self.components[chosen]
            .mean
            .iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(rng);
                m + self.component_std * e
            })
            .collect()
    }
}

/// Posterior-mean denoiser `ẑ_0 = E[z_0 | z_t]` under a mixture prior.
pub fn mixture_denoise(
    z_t: &[f64],
    t: usize,
    prior: &GaussianMixturePrior,
    sched: &NoiseSchedule,
) -> Vec<f64> {
    prior.posterior_mean(z_t, sched.alpha_bar(t), sched.tau(t))
}

#[derive(Debug, Clone)]
pub struct MixtureDenoiser {
    pub prior: GaussianMixturePrior,
    pub schedule: NoiseSchedule,
}

impl MixtureDenoiser {
    pub fn new(prior: GaussianMixturePrior, schedule: NoiseSchedule) -> Self {
        Self { prior, schedule }
    }
}

impl Denoiser for MixtureDenoiser {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn denoise(&self, z_t: &[f64], t: usize) -> Vec<f64> {
        mixture_denoise(z_t, t, &self.prior, &self.schedule)
    }

    /// Within-component posterior std `s / sqrt(ᾱ s² + τ²)`, relative to `τ`.
    fn error_scale(&self, t: usize) -> f64 {
        let s2 = self.prior.component_std().powi(2);
        let tau = self.schedule.tau(t);
        if tau == 0.0 {
            return 0.0;
        }
        (s2 / (self.schedule.alpha_bar(t) * s2 + tau * tau)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::default()
    }

    #[test]
    fn delta_prior_returns_component_mean() {
        let mean: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let prior = GaussianMixturePrior::uniform(vec![mean.clone()], 0.0).unwrap();
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in [1, 50, 200] {
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let out = mixture_denoise(&z, t, &prior, &s);
            for (o, m) in out.iter().zip(&mean) {
                assert!((o - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clean_input_is_recovered_at_t0() {
        let z0 = vec![0.3, -1.2, 4.0, 0.0, 2.0, -0.5];
        let prior = GaussianMixturePrior::uniform(vec![z0.clone(), vec![5.0; 6]], 1e-9).unwrap();
        let s = sched();
        assert_eq!(mixture_denoise(&z0, 0, &prior, &s), z0);
        let z1: Vec<f64> = z0.iter().map(|v| v * s.alpha_bar(1).sqrt()).collect();
        let out = mixture_denoise(&z1, 1, &prior, &s);
        for (o, v) in out.iter().zip(&z0) {
            assert!((o - v).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_are_normalised() {
        let p = GaussianMixturePrior::new(vec![vec![0.0], vec![1.0]], vec![2.0, 6.0], 0.1).unwrap();
        let total: f64 = p.components().iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((p.components()[1].weight - 0.75).abs() < 1e-15);
        assert!(GaussianMixturePrior::new(vec![vec![0.0]], vec![-1.0], 0.1).is_err());
    }

    #[test]
    fn responsibilities_survive_extreme_distances() {
        let p = GaussianMixturePrior::uniform(vec![vec![0.0; 3], vec![1e4; 3]], 0.01).unwrap();
        let r = p.responsibilities(&[1e4; 3], 1.0, 1e-3);
        assert!(r.iter().all(|v| v.is_finite()));
        assert!((r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_is_in_hull_of_component_posteriors() {
        let p = GaussianMixturePrior::uniform(vec![vec![-2.0, 0.0], vec![2.0, 1.0]], 0.0).unwrap();
        let out = p.posterior_mean(&[0.3, 0.2], 0.5, 0.8);
        assert!(out[0] > -2.0 && out[0] < 2.0);
        assert!(out[1] > 0.0 && out[1] < 1.0);
    }
}
