use nalgebra::{Matrix3, Vector3};

use super::{Backbone, ATOMS_PER_RESIDUE};
use crate::error::{Error, Result};

/// Optimal rigid superposition of a mobile point set onto a reference.
///
/// `rotation * p + translation` maps mobile points onto the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub rmsd: f64,
}

impl Alignment {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }
}

/// Kabsch superposition over every backbone atom.
pub fn kabsch_align(mobile: &Backbone, reference: &Backbone) -> Result<Alignment> {
    let all: Vec<usize> = (0..mobile.n_atoms()).collect();
    kabsch_align_masked(mobile, reference, &all)
}

/// Kabsch superposition restricted to the atoms listed in `mask`.
pub fn kabsch_align_masked(
    mobile: &Backbone,
    reference: &Backbone,
    mask: &[usize],
) -> Result<Alignment> {
    if mobile.n_atoms() != reference.n_atoms() {
        return Err(Error::Dimension {
            expected: reference.n_atoms(),
            got: mobile.n_atoms(),
        });
    }
    let n = mobile.n_atoms();
    let mut p = Vec::with_capacity(mask.len());
    let mut q = Vec::with_capacity(mask.len());
    for &i in mask {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        p.push(mobile.atom(i));
        q.push(reference.atom(i));
    }
    kabsch_points(&p, &q)
}

/// Cα-RMSD after optimal superposition, the reconstruction metric.
pub fn ca_rmsd(model: &Backbone, truth: &Backbone) -> Result<f64> {
    let mask: Vec<usize> = (0..model.n_residues())
        .map(|r| ATOMS_PER_RESIDUE * r + 1)
        .collect();
    Ok(kabsch_align_masked(model, truth, &mask)?.rmsd)
}

pub fn kabsch_points(mobile: &[[f64; 3]], reference: &[[f64; 3]]) -> Result<Alignment> {
    if mobile.len() != reference.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            got: mobile.len(),
        });
    }
    if mobile.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "superposition needs at least 3 atoms, got {}",
            mobile.len()
        )));
    }
    let pc = mean(mobile);
    let qc = mean(reference);

    let mut h = Matrix3::zeros();
    for (p, q) in mobile.iter().zip(reference) {
        let a = Vector3::from(*p) - pc;
        let b = Vector3::from(*q) - qc;
        h += a * b.transpose();
    }

    // H = U S V^T; the optimal rotation is V diag(1, 1, d) U^T with d fixing the handedness.
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => (Matrix3::identity(), Matrix3::identity()),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let svd_rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();

    let residual = |rot: &Matrix3<f64>| -> f64 {
        mobile
            .iter()
            .zip(reference)
            .map(|(p, q)| (rot * (Vector3::from(*p) - pc) - (Vector3::from(*q) - qc)).norm_squared())
            .sum()
    };
    // The identity is also a candidate; it is exact for already-superposed
    // inputs, where the SVD rotation carries rounding error.
    let (ss_svd, ss_id) = (residual(&svd_rotation), residual(&Matrix3::identity()));
    let (rotation, ss) = if ss_id <= ss_svd {
        (Matrix3::identity(), ss_id)
    } else {
        (svd_rotation, ss_svd)
    };
    let translation = qc - rotation * pc;
    let rmsd = (ss / mobile.len() as f64).sqrt();

    Ok(Alignment {
        rotation,
        translation,
        rmsd,
    })
}

fn mean(points: &[[f64; 3]]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for p in points {
        c += Vector3::from(*p);
    }
    c / points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ]
            })
            .collect()
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(&mut rng, 12);
        let a = kabsch_points(&p, &p).unwrap();
        assert!(a.rmsd < 1e-12);
        assert!((a.rotation - Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn recovers_inverse_of_applied_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = cloud(&mut rng, 16);
        let applied = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(0.3, -1.0, 0.5)), 1.1);
        let shift = Vector3::new(4.0, -2.0, 7.5);
        let p: Vec<[f64; 3]> = q
            .iter()
            .map(|x| {
                let y = applied * Vector3::from(*x) + shift;
                [y.x, y.y, y.z]
            })
            .collect();
        let a = kabsch_points(&p, &q).unwrap();
        assert!(a.rmsd <= 1e-9, "rmsd {}", a.rmsd);
        assert!((a.rotation - applied.matrix().transpose()).norm() < 1e-9);
        let r = a.rotation;
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_counts_rejected() {
        let a = vec![[0.0; 3]; 4];
        let b = vec![[0.0; 3]; 5];
        assert!(matches!(kabsch_points(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn collinear_points_give_finite_proper_rotation() {
        let p: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, 0.0, 0.0]).collect();
        let q: Vec<[f64; 3]> = (0..6).map(|i| [0.0, i as f64, 0.0]).collect();
        let a = kabsch_points(&p, &q).unwrap();
        assert!(a.rmsd.is_finite() && a.rmsd < 1e-9);
        assert!(a.rotation.iter().all(|v| v.is_finite()));
        assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reflection_is_not_used() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = cloud(&mut rng, 10);
        let p: Vec<[f64; 3]> = q.iter().map(|x| [-x[0], x[1], x[2]]).collect();
        let a = kabsch_points(&p, &q).unwrap();
        assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(a.rmsd > 0.1);
    }
}
