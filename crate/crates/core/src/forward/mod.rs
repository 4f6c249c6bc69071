//! Measurement operators: partial coordinates (P), pairwise distances (D)
//! and low-resolution density Fourier coefficients (E).

mod density;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Backbone;
use crate::prior::CovarianceFactor;

pub use density::{DensityGridSpec, DensityOperator};

/// Distances below this give a zero gradient contribution.
pub const DEGENERATE_DISTANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    P,
    D,
    E,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::P, Modality::D, Modality::E];

    pub fn name(self) -> &'static str {
        match self {
            Modality::P => "P",
            Modality::D => "D",
            Modality::E => "E",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" | "p" => Ok(Modality::P),
            "D" | "d" => Ok(Modality::D),
            "E" | "e" => Ok(Modality::E),
            _ => Err(Error::InvalidArgument(format!("unknown modality {s:?}"))),
        }
    }
}

/// Modality-specific descriptor of what was measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", content = "meta")]
pub enum MeasurementMeta {
    /// Atom indices whose coordinates are observed.
    P { atoms: Vec<usize> },
    /// Atom index pairs whose distances are observed.
    D { pairs: Vec<[usize; 2]> },
    E { grid: DensityGridSpec },
}

impl MeasurementMeta {
    pub fn modality(&self) -> Modality {
        match self {
            MeasurementMeta::P { .. } => Modality::P,
            MeasurementMeta::D { .. } => Modality::D,
            MeasurementMeta::E { .. } => Modality::E,
        }
    }

    pub fn validate(&self, n_atoms: usize) -> Result<()> {
        let check = |i: usize| {
            if i < n_atoms {
                Ok(())
            } else {
                Err(Error::IndexOutOfRange {
                    index: i,
                    len: n_atoms,
                })
            }
        };
        match self {
            MeasurementMeta::P { atoms } => atoms.iter().try_for_each(|&i| check(i)),
            MeasurementMeta::D { pairs } => pairs.iter().try_for_each(|&[i, j]| {
                check(i)?;
                check(j)?;
                if i == j {
                    return Err(Error::InvalidArgument(format!(
                        "distance pair ({i}, {i}) refers to a single atom"
                    )));
                }
                Ok(())
            }),
            MeasurementMeta::E { grid } => grid.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    #[serde(flatten)]
    pub meta: MeasurementMeta,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_sigma: Option<f64>,
}

impl Measurement {
    pub fn modality(&self) -> Modality {
        self.meta.modality()
    }

    pub fn validate(&self, n_atoms: usize) -> Result<()> {
        let op = ForwardOperator::new(&self.meta, n_atoms)?;
        if self.y.len() != op.output_len() {
            return Err(Error::Dimension {
                expected: op.output_len(),
                got: self.y.len(),
            });
        }
        Ok(())
    }
}

/// Result of a vector-Jacobian product.
#[derive(Debug, Clone, PartialEq)]
pub struct Vjp {
    pub grad: Vec<f64>,
    /// Distance pairs skipped because the atoms coincide.
    pub degenerate: usize,
}

#[derive(Debug)]
enum Kind {
    P(Vec<usize>),
    D(Vec<[usize; 2]>),
    E(Box<DensityOperator>),
}

/// A validated forward model bound to a structure size.
#[derive(Debug)]
pub struct ForwardOperator {
    kind: Kind,
    n_atoms: usize,
}

impl ForwardOperator {
    pub fn new(meta: &MeasurementMeta, n_atoms: usize) -> Result<Self> {
        meta.validate(n_atoms)?;
        let kind = match meta {
            MeasurementMeta::P { atoms } => Kind::P(atoms.clone()),
            MeasurementMeta::D { pairs } => Kind::D(pairs.clone()),
            MeasurementMeta::E { grid } => Kind::E(Box::new(DensityOperator::new(grid)?)),
        };
        Ok(Self { kind, n_atoms })
    }

    pub fn modality(&self) -> Modality {
        match self.kind {
            Kind::P(_) => Modality::P,
            Kind::D(_) => Modality::D,
            Kind::E(_) => Modality::E,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn output_len(&self) -> usize {
        match &self.kind {
            Kind::P(atoms) => 3 * atoms.len(),
            Kind::D(pairs) => pairs.len(),
            Kind::E(op) => op.output_len(),
        }
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != 3 * self.n_atoms {
            return Err(Error::Dimension {
                expected: 3 * self.n_atoms,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok(match &self.kind {
            Kind::P(atoms) => atoms
                .iter()
                .flat_map(|&i| x[3 * i..3 * i + 3].iter().copied())
                .collect(),
            Kind::D(pairs) => pairs.iter().map(|&[i, j]| distance(x, i, j)).collect(),
            Kind::E(op) => op.apply(x)?,
        })
    }

    /// `Jᵀ u` at `x`.
    pub fn vjp(&self, x: &[f64], u: &[f64]) -> Result<Vjp> {
        self.check_x(x)?;
        if u.len() != self.output_len() {
            return Err(Error::Dimension {
                expected: self.output_len(),
                got: u.len(),
            });
        }
        let mut degenerate = 0;
        let grad = match &self.kind {
            Kind::P(atoms) => {
                let mut g = vec![0.0; x.len()];
                for (k, &i) in atoms.iter().enumerate() {
                    for a in 0..3 {
                        g[3 * i + a] += u[3 * k + a];
                    }
                }
                g
            }
            Kind::D(pairs) => {
                let mut g = vec![0.0; x.len()];
                for (&[i, j], &uk) in pairs.iter().zip(u) {
                    let d = distance(x, i, j);
                    if d < DEGENERATE_DISTANCE {
                        degenerate += 1;
                        continue;
                    }
                    for a in 0..3 {
                        let c = uk * (x[3 * i + a] - x[3 * j + a]) / d;
                        g[3 * i + a] += c;
                        g[3 * j + a] -= c;
                    }
                }
                g
            }
            Kind::E(op) => op.vjp(x, u)?,
        };
        Ok(Vjp { grad, degenerate })
    }

    /// Per-entry Lipschitz constant of `z ↦ F(Rz)`.
    ///
    /// Returns `max_k sup_z ‖∇_z F_k(Rz)‖`, the quantity that bounds how far a
    /// single residual entry can move under a perturbation of the latent.
    pub fn lipschitz_bound(&self, r: &CovarianceFactor) -> f64 {
        match &self.kind {
            Kind::P(atoms) => atoms
                .iter()
                .map(|&i| r.transpose_norm_single_axis(&[(i, 1.0)]))
                .fold(0.0, f64::max),
            Kind::D(pairs) => pairs
                .iter()
                .map(|&[i, j]| r.transpose_norm_single_axis(&[(i, 1.0), (j, -1.0)]))
                .fold(0.0, f64::max),
            Kind::E(op) => op.entry_gradient_bound(self.n_atoms) * r.operator_norm(),
        }
    }

    /// Typical rather than worst-case per-entry gain. Equal to
    /// [`Self::lipschitz_bound`] for P and D, whose entries all have the same
    /// gradient norm under an isotropic `R`.
    pub fn typical_gain(&self, r: &CovarianceFactor) -> f64 {
        match &self.kind {
            Kind::E(op) => op.entry_gradient_rms(self.n_atoms) * r.operator_norm(),
            _ => self.lipschitz_bound(r),
        }
    }
}

fn distance(x: &[f64], i: usize, j: usize) -> f64 {
    let dx = x[3 * i] - x[3 * j];
    let dy = x[3 * i + 1] - x[3 * j + 1];
    let dz = x[3 * i + 2] - x[3 * j + 2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn n_atoms_of(x: &[f64]) -> Result<usize> {
    if !x.len().is_multiple_of(3) {
        return Err(Error::Dimension {
            expected: x.len() - x.len() % 3,
            got: x.len(),
        });
    }
    Ok(x.len() / 3)
}

pub fn apply_p(x: &[f64], atoms: &[usize]) -> Result<Vec<f64>> {
    let meta = MeasurementMeta::P {
        atoms: atoms.to_vec(),
    };
    ForwardOperator::new(&meta, n_atoms_of(x)?)?.apply(x)
}

pub fn apply_d(x: &[f64], pairs: &[[usize; 2]]) -> Result<Vec<f64>> {
    let meta = MeasurementMeta::D {
        pairs: pairs.to_vec(),
    };
    ForwardOperator::new(&meta, n_atoms_of(x)?)?.apply(x)
}

pub fn apply_e(x: &[f64], grid: &DensityGridSpec) -> Result<Vec<f64>> {
    n_atoms_of(x)?;
    DensityOperator::new(grid)?.apply(x)
}

pub fn apply(x: &[f64], meta: &MeasurementMeta) -> Result<Vec<f64>> {
    ForwardOperator::new(meta, n_atoms_of(x)?)?.apply(x)
}

pub fn gradient(x: &[f64], meta: &MeasurementMeta, residual: &[f64]) -> Result<Vjp> {
    ForwardOperator::new(meta, n_atoms_of(x)?)?.vjp(x, residual)
}

pub fn lipschitz_bound(meta: &MeasurementMeta, r: &CovarianceFactor) -> Result<f64> {
    Ok(ForwardOperator::new(meta, r.dim() / 3)?.lipschitz_bound(r))
}

/// `y = F(x*) + σ ε` with `ε ~ N(0, I)` drawn from `seed`.
pub fn simulate_measurement(
    meta: &MeasurementMeta,
    truth: &Backbone,
    sigma: f64,
    seed: u64,
) -> Result<Measurement> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be non-negative, got {sigma}"
        )));
    }
    let op = ForwardOperator::new(meta, truth.n_atoms())?;
    let mut y = op.apply(truth.coords())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut y {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * e;
    }
    Ok(Measurement {
        meta: meta.clone(),
        y,
        true_sigma: Some(sigma),
    })
}

/// The first `count` Cα atoms of a seeded permutation.
///
/// Smaller counts with the same seed are prefixes of larger ones.
pub fn select_ca_atoms(b: &Backbone, count: usize, seed: u64) -> Result<Vec<usize>> {
    let mut ca = b.ca_indices();
    if count > ca.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {count} Cα atoms but the structure has {}",
            ca.len()
        )));
    }
    ca.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ca.truncate(count);
    ca.sort_unstable();
    Ok(ca)
}

/// The first `count` distinct Cα pairs of a seeded permutation; nested in `count`.
pub fn select_ca_pairs(b: &Backbone, count: usize, seed: u64) -> Result<Vec<[usize; 2]>> {
    let ca = b.ca_indices();
    let mut pairs = Vec::with_capacity(ca.len() * ca.len().saturating_sub(1) / 2);
    for (a, &i) in ca.iter().enumerate() {
        for &j in &ca[a + 1..] {
            pairs.push([i, j]);
        }
    }
    if count > pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {count} Cα pairs but only {} exist",
            pairs.len()
        )));
    }
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pairs.truncate(count);
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.name().parse::<Modality>().unwrap(), m);
        }
        assert!("X".parse::<Modality>().is_err());
    }

    #[test]
    fn measurement_json_layout() {
        let m = Measurement {
            meta: MeasurementMeta::D {
                pairs: vec![[1, 5]],
            },
            y: vec![3.5],
            true_sigma: Some(0.1),
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["modality"], "D");
        assert_eq!(v["meta"]["pairs"][0][1], 5);
        assert_eq!(v["y"][0], 3.5);
        let back: Measurement = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn self_pair_is_rejected() {
        let x = vec![0.0; 12];
        assert!(apply_d(&x, &[[2, 2]]).is_err());
        assert!(matches!(
            apply_d(&x, &[[0, 4]]),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn selections_are_nested() {
        let b = crate::geometry::synthetic::helical_bundle();
        let small = select_ca_pairs(&b, 10, 3).unwrap();
        let large = select_ca_pairs(&b, 50, 3).unwrap();
        assert_eq!(&large[..10], &small[..]);
        let a = select_ca_atoms(&b, 11, 3).unwrap();
        let c = select_ca_atoms(&b, 22, 3).unwrap();
        assert!(a.iter().all(|i| c.contains(i)));
        assert!(a.iter().all(|i| i % 4 == 1));
    }
}
