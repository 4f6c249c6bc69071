//! Online noise-level estimation and precision weighting across modalities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Median of χ²₁: `median(e²) = 0.4549 σ²` for Gaussian `e`.
pub const CHI2_1_MEDIAN: f64 = 0.454_936_423_119_572_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveParams {
    /// Weight of the denoiser-error correction.
    pub gamma: f64,
    /// Variance floor, also added before inverting.
    pub epsilon: f64,
    pub ema_decay: f64,
    /// Multiplier on the median squared residual; 1 gives the raw median.
    pub kappa: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            epsilon: 1e-6,
            ema_decay: 0.9,
            kappa: 1.0 / CHI2_1_MEDIAN,
        }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma >= 0.0
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.ema_decay)
            && self.kappa > 0.0
            && [self.gamma, self.epsilon, self.kappa].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid adaptive parameters {self:?}"
            )))
        }
    }
}

/// `κ · median((y − f)²)`; even lengths average the two middle values.
pub fn median_residual_variance(y: &[f64], f: &[f64], kappa: f64) -> Result<f64> {
    if y.len() != f.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: f.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty residual".into()));
    }
    let mut sq: Vec<f64> = y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).collect();
    if sq.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("residual contains NaN".into()));
    }
    let n = sq.len();
    let mid = n / 2;
    let (_, &mut upper, _) = sq.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if n % 2 == 1 {
        upper
    } else {
        let lower = sq[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(kappa * median)
}

/// `w_i = M (σ̂²_i + ε)⁻¹ / Σ_j (σ̂²_j + ε)⁻¹`.
pub fn dynamic_weights(sigma_hat_sq: &[f64], epsilon: f64) -> Vec<f64> {
    let m = sigma_hat_sq.len() as f64;
    let precision: Vec<f64> = sigma_hat_sq.iter().map(|s| 1.0 / (s + epsilon)).collect();
    let total: f64 = precision.iter().sum();
    precision.iter().map(|p| p * m / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Channel {
    lipschitz: f64,
    sigma_hat_sq: Option<f64>,
    last_raw: Option<f64>,
}

/// Per-measurement noise estimates for one sampler run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    params: AdaptiveParams,
    channels: Vec<Channel>,
    weights: Vec<f64>,
}

impl AdaptiveState {
    /// One channel per measurement, with its per-entry Lipschitz constant.
    pub fn new(params: AdaptiveParams, lipschitz: &[f64]) -> Result<Self> {
        params.validate()?;
        if lipschitz.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument(
                "Lipschitz constants must be finite and non-negative".into(),
            ));
        }
        let channels = lipschitz
            .iter()
            .map(|&l| Channel {
                lipschitz: l,
                sigma_hat_sq: None,
                last_raw: None,
            })
            .collect();
        Ok(Self {
            params,
            channels,
            weights: vec![1.0; lipschitz.len()],
        })
    }

    pub fn params(&self) -> &AdaptiveParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn lipschitz(&self, i: usize) -> f64 {
        self.channels[i].lipschitz
    }

    pub fn sigma_hat_sq(&self, i: usize) -> Option<f64> {
        self.channels[i].sigma_hat_sq
    }

    /// The clipped, corrected estimate fed into the EMA on the last update.
    pub fn last_raw(&self, i: usize) -> Option<f64> {
        self.channels[i].last_raw
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Folds a new median estimate into channel `i`.
    ///
    /// `raw = max(ε, σ̃² − γ (1 − t) (L τ)²)`; the first call sets the
    /// average to `raw`, later calls blend with `ema_decay`.
    pub fn bias_corrected_update(
        &mut self,
        i: usize,
        sigma_tilde_sq: f64,
        t_norm: f64,
        tau: f64,
    ) -> Result<f64> {
        if i >= self.channels.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.channels.len(),
            });
        }
        if !(0.0..=1.0).contains(&t_norm) || !(tau >= 0.0) || sigma_tilde_sq.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "bad update inputs: σ̃²={sigma_tilde_sq}, t={t_norm}, τ={tau}"
            )));
        }
        let p = self.params;
        let ch = &mut self.channels[i];
        let correction = p.gamma * (1.0 - t_norm) * (ch.lipschitz * tau).powi(2);
        let raw = (sigma_tilde_sq - correction).max(p.epsilon);
        let next = match ch.sigma_hat_sq {
            None => raw,
            Some(prev) => p.ema_decay * prev + (1.0 - p.ema_decay) * raw,
        };
        ch.last_raw = Some(raw);
        // Rounding in the blend must not undercut the floor.
        ch.sigma_hat_sq = Some(next.max(p.epsilon));
        Ok(next.max(p.epsilon))
    }

    /// Recomputes and stores the precision weights; all channels must be set.
    pub fn update_weights(&mut self) -> Result<&[f64]> {
        let sig = self
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.sigma_hat_sq.ok_or_else(|| {
                    Error::InvalidArgument(format!("channel {i} has no variance estimate"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.weights = dynamic_weights(&sig, self.params.epsilon);
        Ok(&self.weights)
    }
}
