#![allow(dead_code)]
//! Independent oracles shared by the integration tests.

use std::f64::consts::PI;

use adampnp::forward::{DensityGridSpec, MeasurementMeta};
use adampnp::prior::GaussianMixturePrior;
use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0, 1, 2].map(|_| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

pub fn rotate(points: &[[f64; 3]], rot: &Rotation3<f64>, shift: [f64; 3]) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|p| {
            let q = rot * Vector3::from(*p);
            [q.x + shift[0], q.y + shift[1], q.z + shift[2]]
        })
        .collect()
}

pub fn centered(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = points.len() as f64;
    let c = [0, 1, 2].map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n);
    points.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect()
}

pub fn rmsd_at(mobile: &[[f64; 3]], reference: &[[f64; 3]], rot: &Rotation3<f64>) -> f64 {
    let ss: f64 = rotate(mobile, rot, [0.0; 3])
        .iter()
        .zip(reference)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    (ss / mobile.len() as f64).sqrt()
}

pub fn rotation_from(v: Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_scaled_axis(v)
}

/// Minimum over a rotation-vector grid covering the ball of radius π,
/// followed by a shrinking pattern search around the best grid point.
pub fn brute_force_rmsd(mobile: &[[f64; 3]], reference: &[[f64; 3]]) -> f64 {
    let (p, q) = (centered(mobile), centered(reference));
    let steps = 16;
    let mut best = (f64::INFINITY, Vector3::zeros());
    for i in 0..=steps {
        for j in 0..=steps {
            for k in 0..=steps {
                let v = Vector3::new(i as f64, j as f64, k as f64) * (2.0 * std::f64::consts::PI / steps as f64)
                    - Vector3::repeat(std::f64::consts::PI);
                if v.norm() > std::f64::consts::PI + 1e-9 {
                    continue;
                }
                let r = rmsd_at(&p, &q, &rotation_from(v));
                if r < best.0 {
                    best = (r, v);
                }
            }
        }
    }
    let mut step = 2.0 * std::f64::consts::PI / steps as f64;
    while step > 1e-9 {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut v = best.1;
                v[axis] += sign * step;
                let r = rmsd_at(&p, &q, &rotation_from(v));
                if r < best.0 {
                    best = (r, v);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best.0
}

/// The best fixed affine estimator `A z_t + b` under the prior: the linear
/// MMSE map built from the exact mixture moments.
pub fn lmmse(prior: &GaussianMixturePrior, alpha_bar: f64, tau: f64) -> (DMatrix<f64>, DVector<f64>) {
    let d = prior.dim();
    let mut mean = DVector::zeros(d);
    for c in prior.components() {
        mean += DVector::from_column_slice(&c.mean) * c.weight;
    }
    let mut cov = DMatrix::identity(d, d) * prior.component_std().powi(2);
    for c in prior.components() {
        let dm = DVector::from_column_slice(&c.mean) - &mean;
        cov += &dm * dm.transpose() * c.weight;
    }
    let sa = alpha_bar.sqrt();
    let cov_t = &cov * alpha_bar + DMatrix::identity(d, d) * (tau * tau);
    let a = (&cov * sa) * cov_t.try_inverse().unwrap();
    let b = &mean - &a * (&mean * sa);
    (a, b)
}

pub fn naive_jvp(meta: &MeasurementMeta, x: &[f64], d: &[f64]) -> Vec<f64> {
    match meta {
        MeasurementMeta::P { atoms } => atoms
            .iter()
            .flat_map(|&i| d[3 * i..3 * i + 3].to_vec())
            .collect(),
        MeasurementMeta::D { pairs } => pairs
            .iter()
            .map(|&[i, j]| {
                let diff: Vec<f64> = (0..3).map(|a| x[3 * i + a] - x[3 * j + a]).collect();
                let dist = dot(&diff, &diff).sqrt();
                (0..3)
                    .map(|a| diff[a] * (d[3 * i + a] - d[3 * j + a]))
                    .sum::<f64>()
                    / dist
            })
            .collect(),
        MeasurementMeta::E { grid } => naive_density(grid, x, Some(d)),
    }
}

/// Direct evaluation of the density coefficients, or of their directional
/// derivative along `dir`.
pub fn naive_density(spec: &DensityGridSpec, x: &[f64], dir: Option<&[f64]>) -> Vec<f64> {
    let dims = spec.dims();
    let (h, w) = (spec.spacing, spec.atom_width);
    let radius = 6.0 * w;
    let norm = (h / ((2.0 * PI).sqrt() * w)).powi(3);
    let mut grid = vec![0.0; dims.iter().product()];
    for (a, p) in x.chunks(3).enumerate() {
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let v = [i, j, k];
                    let off: Vec<f64> = (0..3)
                        .map(|c| spec.origin[c] + v[c] as f64 * h - p[c])
                        .collect();
                    if off.iter().any(|o| o.abs() > radius) {
                        continue;
                    }
                    let g = norm * (-dot(&off, &off) / (2.0 * w * w)).exp();
                    let val = match dir {
                        None => g,
                        Some(d) => g * (0..3).map(|c| off[c] * d[3 * a + c]).sum::<f64>() / (w * w),
                    };
                    grid[(i * dims[1] + j) * dims[2] + k] += val;
                }
            }
        }
    }
    let modes = spec.retained_modes();
    let mut re = vec![0.0; modes.len()];
    let mut im = vec![0.0; modes.len()];
    for (m, k) in modes.iter().enumerate() {
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for l in 0..dims[2] {
                    let v = grid[(i * dims[1] + j) * dims[2] + l];
                    if v == 0.0 {
                        continue;
                    }
                    let phase = -2.0
                        * PI
                        * (k[0] as f64 * i as f64 / dims[0] as f64
                            + k[1] as f64 * j as f64 / dims[1] as f64
                            + k[2] as f64 * l as f64 / dims[2] as f64);
                    re[m] += v * phase.cos();
                    im[m] += v * phase.sin();
                }
            }
        }
    }
    re.extend(im);
    re
}


/// Mixture and best-affine MSE on `n` shared `(z_0, z_t)` pairs at step `t`,
/// with the standard error of their paired difference.
pub fn denoiser_vs_affine(
    prior: &GaussianMixturePrior,
    sched: &adampnp::prior::NoiseSchedule,
    t: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64, f64) {
    let (ab, tau) = (sched.alpha_bar(t), sched.tau(t));
    let (a, b) = lmmse(prior, ab, tau);
    let (mut mix, mut aff, mut sq) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let z0 = prior.sample(rng);
        let zt: Vec<f64> = z0.iter().map(|v| ab.sqrt() * v + tau * rng.sample::<f64, _>(StandardNormal)).collect();
        let est = adampnp::prior::mixture_denoise(&zt, t, prior, sched);
        let em: f64 = z0.iter().zip(&est).map(|(x, y)| (x - y).powi(2)).sum();
        let lin = &a * DVector::from_column_slice(&zt) + &b;
        let ea = (DVector::from_column_slice(&z0) - lin).norm_squared();
        mix += em;
        aff += ea;
        sq += (ea - em).powi(2);
    }
    let nf = n as f64;
    let (mix, aff) = (mix / nf, aff / nf);
    let gap = aff - mix;
    let se = ((sq / nf - gap * gap) / (nf - 1.0)).sqrt();
    (mix, aff, se)
}

/// The two-component prior used by the denoiser optimality checks.
pub fn two_component_prior() -> GaussianMixturePrior {
    GaussianMixturePrior::new(vec![vec![1.5, -1.0, 0.5], vec![-1.0, 1.0, -1.5]], vec![0.4, 0.6], 0.3).unwrap()
}
