use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// `R = scale * I`.
    Identity,
    /// Per axis, `x_k = scale * sum_{j <= k} z_j`: a random walk along the atom chain.
    Chain,
}

/// The factor `R` of the diffusion noise covariance `R Rᵀ`.
///
/// `R` acts independently on each Cartesian axis, so it is stored implicitly
/// and every operation is O(n_atoms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFactor {
    pub kind: CovarianceKind,
    pub n_atoms: usize,
    /// Å per whitened unit.
    pub scale: f64,
}

impl CovarianceFactor {
    pub fn new(kind: CovarianceKind, n_atoms: usize, scale: f64) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidArgument("covariance needs at least one atom".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "covariance scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            kind,
            n_atoms,
            scale,
        })
    }

    pub fn identity(n_atoms: usize) -> Self {
        Self::new(CovarianceKind::Identity, n_atoms, 1.0).expect("valid identity")
    }

    /// Chain factor scaled so the last atom's marginal standard deviation is 1 Å.
    pub fn chain_unit_marginal(n_atoms: usize) -> Self {
        Self::new(CovarianceKind::Chain, n_atoms, 1.0 / (n_atoms as f64).sqrt())
            .expect("valid chain")
    }

    pub fn dim(&self) -> usize {
        3 * self.n_atoms
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `z = R⁻¹ x`.
    pub fn whiten(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let inv = 1.0 / self.scale;
        Ok(match self.kind {
            CovarianceKind::Identity => x.iter().map(|v| v * inv).collect(),
            CovarianceKind::Chain => {
                let mut z = vec![0.0; x.len()];
                z[..3].iter_mut().zip(&x[..3]).for_each(|(o, v)| *o = v * inv);
                for k in 1..self.n_atoms {
                    for a in 0..3 {
                        z[3 * k + a] = (x[3 * k + a] - x[3 * (k - 1) + a]) * inv;
                    }
                }
                z
            }
        })
    }

    /// `x = R z`.
    pub fn unwhiten(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(match self.kind {
            CovarianceKind::Identity => z.iter().map(|v| v * self.scale).collect(),
            CovarianceKind::Chain => {
                let mut x = vec![0.0; z.len()];
                let mut acc = [0.0; 3];
                for k in 0..self.n_atoms {
                    for a in 0..3 {
                        acc[a] += z[3 * k + a];
                        x[3 * k + a] = self.scale * acc[a];
                    }
                }
                x
            }
        })
    }

    /// `Rᵀ u`, used to pull coordinate-space gradients back to the latent space.
    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        Ok(match self.kind {
            CovarianceKind::Identity => u.iter().map(|v| v * self.scale).collect(),
            CovarianceKind::Chain => {
                let mut out = vec![0.0; u.len()];
                let mut acc = [0.0; 3];
                for k in (0..self.n_atoms).rev() {
                    for a in 0..3 {
                        acc[a] += u[3 * k + a];
                        out[3 * k + a] = self.scale * acc[a];
                    }
                }
                out
            }
        })
    }

    /// `‖Rᵀ v‖` for a vector `v` that is nonzero on a single axis, given as
    /// `(atom, coefficient)` pairs.
    pub fn transpose_norm_single_axis(&self, entries: &[(usize, f64)]) -> f64 {
        match self.kind {
            CovarianceKind::Identity => {
                let mut dense = std::collections::BTreeMap::new();
                for &(i, c) in entries {
                    *dense.entry(i).or_insert(0.0) += c;
                }
                self.scale * dense.values().map(|c: &f64| c * c).sum::<f64>().sqrt()
            }
            CovarianceKind::Chain => {
                let mut sorted = entries.to_vec();
                sorted.sort_by_key(|e| std::cmp::Reverse(e.0));
                // (Rᵀ v)_j = scale * sum_{k >= j} v_k is piecewise constant between entries.
                let mut acc = 0.0;
                let mut ss = 0.0;
                for (idx, &(atom, c)) in sorted.iter().enumerate() {
                    acc += c;
                    let next = sorted.get(idx + 1).map_or(0, |e| e.0 + 1).min(atom + 1);
                    let run = (atom + 1 - next) as f64;
                    ss += acc * acc * run;
                }
                self.scale * ss.sqrt()
            }
        }
    }

    /// Spectral norm `‖R‖₂`, by power iteration on `Rᵀ R` to 1e-6 relative.
    pub fn operator_norm(&self) -> f64 {
        if self.kind == CovarianceKind::Identity {
            return self.scale;
        }
        let n = self.n_atoms;
        // All three axes share one 1-D factor; iterate on a single axis.
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 13) as f64).collect();
        let mut sigma = 0.0;
        for _ in 0..10_000 {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            let mut rv = vec![0.0; n];
            let mut acc = 0.0;
            for k in 0..n {
                acc += v[k];
                rv[k] = acc;
            }
            let mut rtrv = vec![0.0; n];
            acc = 0.0;
            for k in (0..n).rev() {
                acc += rv[k];
                rtrv[k] = acc;
            }
            let next = rtrv.iter().map(|a| a * a).sum::<f64>().sqrt().sqrt();
            let done = (next - sigma).abs() <= 1e-6 * next;
            sigma = next;
            v = rtrv;
            if done {
                break;
            }
        }
        self.scale * sigma
    }
}
