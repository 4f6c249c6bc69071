//! Measurement-guided reverse diffusion with momentum and adaptive weights.

mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveParams, AdaptiveState, dynamic_weights, median_residual_variance};
use crate::error::{Error, Result};
use crate::forward::{ForwardOperator, Measurement};
use crate::geometry::{Backbone, ca_rmsd};
use crate::prior::{CovarianceFactor, Denoiser, NoiseSchedule};

pub use trace::{TraceRecord, trace_labels, write_trace_csv};

/// Scale of the denoiser error assumed by the variance correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionScale {
    /// The error is taken to be `τ_t`; any constant factor lives in `γ`.
    #[default]
    Constant,
    /// The error is `c_t τ_t` with `c_t` reported by the denoiser.
    Denoiser,
}

/// Per-modality gain `L_i` fed to the variance correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    /// Worst-case per-entry Lipschitz bound.
    #[default]
    Bound,
    /// Root-mean-square per-entry gradient norm.
    Typical,
}

/// How the stored per-modality gradient relates to the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSign {
    /// Store `−∇ log p`, so `ẑ_0 = z̃_0 − η v` moves toward the data.
    #[default]
    Descent,
    /// Store `+∇ log p` and subtract it, as the update is literally written.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub eta: f64,
    pub rho: f64,
    pub adaptive: bool,
    /// Per-measurement noise std used when `adaptive` is off.
    pub fixed_sigmas: Option<Vec<f64>>,
    pub gradient_sign: GradientSign,
    pub correction_scale: CorrectionScale,
    pub gain: GainKind,
    pub adaptive_params: AdaptiveParams,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            rho: 0.9,
            adaptive: true,
            fixed_sigmas: None,
            gradient_sign: GradientSign::Descent,
            correction_scale: CorrectionScale::Constant,
            gain: GainKind::Bound,
            adaptive_params: AdaptiveParams::default(),
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, n_measurements: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        self.adaptive_params.validate()?;
        if !self.adaptive {
            let sig = self.fixed_sigmas.as_ref().ok_or_else(|| {
                Error::InvalidArgument("fixed_sigmas is required when adaptive is off".into())
            })?;
            if sig.len() != n_measurements {
                return Err(Error::Dimension {
                    expected: n_measurements,
                    got: sig.len(),
                });
            }
            if sig.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::InvalidArgument("fixed sigmas must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A measurement bound to its operator.
#[derive(Debug)]
pub struct PreparedMeasurement {
    pub op: ForwardOperator,
    pub y: Vec<f64>,
}

impl PreparedMeasurement {
    pub fn new(m: &Measurement, n_atoms: usize) -> Result<Self> {
        m.validate(n_atoms)?;
        Ok(Self {
            op: ForwardOperator::new(&m.meta, n_atoms)?,
            y: m.y.clone(),
        })
    }

    /// `y − F(x)`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.op.apply(x)?;
        Ok(self.y.iter().zip(&f).map(|(y, f)| y - f).collect())
    }
}

/// Whitened-space log-likelihood gradient from a residual at `x = R z`:
/// `(1/σ²) Rᵀ Jᵀ (y − F(x))`. Also returns the degenerate-pair count.
fn likelihood_gradient(
    m: &PreparedMeasurement,
    x: &[f64],
    residual: &[f64],
    sigma_sq: f64,
    r: &CovarianceFactor,
) -> Result<(Vec<f64>, usize)> {
    let vjp = m.op.vjp(x, residual)?;
    let mut g = r.apply_transpose(&vjp.grad)?;
    let inv = 1.0 / sigma_sq;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok((g, vjp.degenerate))
}

/// `∇_z log p(y | Rz; σ)` for one measurement: `(1/σ²) Rᵀ Jᵀ (y − F(Rz))`.
pub fn modality_gradient(
    z0: &[f64],
    m: &Measurement,
    sigma_sq: f64,
    r: &CovarianceFactor,
) -> Result<Vec<f64>> {
    if !(sigma_sq > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be positive, got {sigma_sq}"
        )));
    }
    let prepared = PreparedMeasurement::new(m, r.dim() / 3)?;
    let x = r.unwhiten(z0)?;
    let residual = prepared.residual(&x)?;
    Ok(likelihood_gradient(&prepared, &x, &residual, sigma_sq, r)?.0)
}

/// Momentum update and guided estimate.
///
/// `gradients` are log-likelihood gradients (ascent directions). The stored
/// total is `Σ w_i g_i` negated under [`GradientSign::Descent`]; then
/// `v ← ρ v + (1 − ρ) g_total` and `ẑ_0 = z̃_0 − η v`.
pub fn guidance_step(
    v: &mut [f64],
    z0_tilde: &[f64],
    gradients: &[Vec<f64>],
    weights: &[f64],
    config: &GuidanceConfig,
) -> Result<Vec<f64>> {
    if gradients.len() != weights.len() {
        return Err(Error::Dimension {
            expected: gradients.len(),
            got: weights.len(),
        });
    }
    if v.len() != z0_tilde.len() || gradients.iter().any(|g| g.len() != v.len()) {
        return Err(Error::Dimension {
            expected: z0_tilde.len(),
            got: v.len(),
        });
    }
    let sign = match config.gradient_sign {
        GradientSign::Descent => -1.0,
        GradientSign::Literal => 1.0,
    };
    let rho = config.rho;
    for (k, vk) in v.iter_mut().enumerate() {
        let total: f64 = gradients.iter().zip(weights).map(|(g, w)| w * g[k]).sum();
        *vk = rho * *vk + (1.0 - rho) * sign * total;
    }
    Ok(z0_tilde.iter().zip(v.iter()).map(|(z, vk)| z - config.eta * vk).collect())
}

/// Ancestral re-noising from the guided estimate at step `t`:
/// `z_{t−1} ~ N(α ẑ_0, τ² I)`, deterministic at `t = 1`.
pub fn reverse_step<R: rand::Rng + ?Sized>(
    z0_hat: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let alpha = sched.renoise_alpha(t);
    let tau = sched.renoise_tau(t);
    z0_hat
        .iter()
        .map(|z| {
            if tau > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                alpha * z + tau * e
            } else {
                alpha * z
            }
        })
        .collect()
}

/// Per-run options that do not affect the algorithm.
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    pub seed: u64,
    /// Enables the RMSD column of the trace.
    pub truth: Option<&'a Backbone>,
    pub record_trace: bool,
}

/// Mutable state of one reverse-diffusion run.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
    pub rng: ChaCha8Rng,
    pub adaptive: AdaptiveState,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub structure: Backbone,
    pub z0: Vec<f64>,
    /// Final noise variance per measurement (estimated or fixed).
    pub sigma_sq: Vec<f64>,
    pub weights: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    /// Total distance-pair evaluations skipped for coincident atoms.
    pub degenerate_pairs: usize,
}

/// Runs guided reverse diffusion from `z_T ~ N(0, I)` to `x̂ = R z_0`.
pub fn run_adam_pnp(
    measurements: &[Measurement],
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    r: &CovarianceFactor,
    config: &GuidanceConfig,
    options: &RunOptions<'_>,
) -> Result<Reconstruction> {
    if measurements.is_empty() {
        return Err(Error::InvalidArgument("at least one measurement is required".into()));
    }
    config.validate(measurements.len())?;
    if denoiser.dim() != r.dim() {
        return Err(Error::Dimension {
            expected: r.dim(),
            got: denoiser.dim(),
        });
    }
    let n_atoms = r.dim() / 3;
    let prepared = measurements
        .iter()
        .map(|m| PreparedMeasurement::new(m, n_atoms))
        .collect::<Result<Vec<_>>>()?;
    let lipschitz: Vec<f64> = prepared
        .iter()
        .map(|m| match config.gain {
            GainKind::Bound => m.op.lipschitz_bound(r),
            GainKind::Typical => m.op.typical_gain(r),
        })
        .collect();
    let eps = config.adaptive_params.epsilon;
    let m_count = measurements.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let z_init: Vec<f64> = (0..r.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut state = SamplerState {
        z: z_init,
        v: vec![0.0; r.dim()],
        t: sched.n_steps(),
        rng,
        adaptive: AdaptiveState::new(config.adaptive_params, &lipschitz)?,
    };
    let fixed_sq: Option<Vec<f64>> = config
        .fixed_sigmas
        .as_ref()
        .filter(|_| !config.adaptive)
        .map(|s| s.iter().map(|v| v * v).collect());

    let mut trace = Vec::new();
    let mut degenerate_pairs = 0;
    let mut sigma_sq = vec![0.0; prepared.len()];
    let mut weights = vec![1.0; prepared.len()];
    for t in (1..=sched.n_steps()).rev() {
        state.t = t;
        let z0_tilde = denoiser.denoise(&state.z, t);
        let x = r.unwhiten(&z0_tilde)?;
        let residuals = prepared
            .iter()
            .map(|m| m.residual(&x))
            .collect::<Result<Vec<_>>>()?;

        match &fixed_sq {
            Some(f) => {
                sigma_sq.clone_from(f);
                weights = dynamic_weights(&sigma_sq, eps);
            }
            None => {
                let t_norm = sched.t_norm(t);
                let tau = match config.correction_scale {
                    CorrectionScale::Constant => sched.tau(t),
                    CorrectionScale::Denoiser => denoiser.error_scale(t) * sched.tau(t),
                };
                for (i, (m, res)) in prepared.iter().zip(&residuals).enumerate() {
                    let zeros = vec![0.0; m.y.len()];
                    let tilde = median_residual_variance(res, &zeros, config.adaptive_params.kappa)?;
                    sigma_sq[i] = state.adaptive.bias_corrected_update(i, tilde, t_norm, tau)?;
                }
                weights = state.adaptive.update_weights()?.to_vec();
            }
        }
        check_invariants(t, &sigma_sq, &weights, eps, m_count, config.adaptive)?;

        let mut gradients = Vec::with_capacity(prepared.len());
        for ((m, res), &s2) in prepared.iter().zip(&residuals).zip(&sigma_sq) {
            let (g, degenerate) = likelihood_gradient(m, &x, res, s2, r)?;
            degenerate_pairs += degenerate;
            gradients.push(g);
        }
        let z0_hat = guidance_step(&mut state.v, &z0_tilde, &gradients, &weights, config)?;

        if options.record_trace {
            let rmsd = match options.truth {
                Some(truth) => Some(ca_rmsd(&Backbone::new(r.unwhiten(&z0_hat)?)?, truth)?),
                None => None,
            };
            trace.push(TraceRecord {
                step: t,
                t_norm: sched.t_norm(t),
                sigma_hat: sigma_sq.iter().map(|s| s.sqrt()).collect(),
                weights: weights.clone(),
                residual_norms: residuals
                    .iter()
                    .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect(),
                rmsd,
            });
        }

        let next = reverse_step(&z0_hat, t, sched, &mut state.rng);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: t,
                last_finite: std::mem::take(&mut state.z),
            });
        }
        state.z = next;
    }
    let structure = Backbone::new(r.unwhiten(&state.z)?)?;
    Ok(Reconstruction {
        structure,
        z0: state.z,
        sigma_sq,
        weights,
        trace,
        degenerate_pairs,
    })
}

fn check_invariants(
    step: usize,
    sigma_sq: &[f64],
    weights: &[f64],
    eps: f64,
    m: f64,
    adaptive: bool,
) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if (total - m).abs() > 1e-9 {
        return Err(Error::Invariant {
            step,
            message: format!("weights sum to {total}, expected {m}"),
        });
    }
    if adaptive && sigma_sq.iter().any(|s| !(*s >= eps)) {
        return Err(Error::Invariant {
            step,
            message: format!("variance estimate below floor: {sigma_sq:?}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rho: f64, eta: f64) -> GuidanceConfig {
        GuidanceConfig {
            rho,
            eta,
            ..Default::default()
        }
    }

    #[test]
    fn zero_momentum_is_plain_descent() {
        let mut v = vec![0.5, 0.5];
        let z = guidance_step(&mut v, &[1.0, 2.0], &[vec![2.0, -4.0]], &[0.5], &cfg(0.0, 0.1)).unwrap();
        assert_eq!(v, vec![-1.0, 2.0]);
        assert_eq!(z, vec![1.1, 1.8]);
    }

    #[test]
    fn zero_gradient_leaves_estimate() {
        let mut v = vec![0.0; 3];
        let z0 = [0.3, -0.2, 0.9];
        for _ in 0..5 {
            let z = guidance_step(&mut v, &z0, &[vec![0.0; 3]], &[1.0], &cfg(0.9, 0.1)).unwrap();
            assert_eq!(z, z0);
        }
    }

    #[test]
    fn literal_sign_flips_direction() {
        let c = GuidanceConfig {
            gradient_sign: GradientSign::Literal,
            ..cfg(0.0, 1.0)
        };
        let mut v = vec![0.0];
        let z = guidance_step(&mut v, &[0.0], &[vec![1.0]], &[1.0], &c).unwrap();
        assert_eq!(z, vec![-1.0]);
    }

    #[test]
    fn final_step_is_deterministic() {
        let sched = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = reverse_step(&[1.5, -2.0], 1, &sched, &mut rng);
        assert_eq!(z, vec![1.5, -2.0]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.0, 0.1).validate(1).is_err());
        assert!(cfg(0.5, 0.0).validate(1).is_err());
        let off = GuidanceConfig {
            adaptive: false,
            ..Default::default()
        };
        assert!(off.validate(1).is_err());
        let off = GuidanceConfig {
            fixed_sigmas: Some(vec![0.1, 0.2]),
            ..off
        };
        assert!(off.validate(1).is_err());
        assert!(off.validate(2).is_ok());
    }
}
