use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Combo, Experiment};
use crate::adaptive::dynamic_weights;
use crate::error::Result;
use crate::forward::{ForwardOperator, Modality};
use crate::geometry::ca_rmsd;
use crate::prior::{CovarianceFactor, CovarianceKind};
use crate::sampler::RunOptions;

/// One numerical self-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value.is_finite() && value <= tolerance,
        }
    }
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the numerical invariants of the pipeline against `exp`'s ground
/// truth and configuration.
pub fn validate_invariants(exp: &Experiment) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = exp.truth();
    let n_atoms = truth.n_atoms();
    let x = truth.coords();

    for kind in [CovarianceKind::Identity, CovarianceKind::Chain] {
        let r = CovarianceFactor::new(kind, n_atoms, exp.covariance().scale)?;
        let back = r.unwhiten(&r.whiten(x)?)?;
        let scale = x.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        checks.push(Check::new(
            format!("whiten round trip ({kind:?})"),
            max_abs_diff(&back, x) / scale,
            1e-10,
        ));
    }

    let s = exp.schedule();
    let (mut alpha_law, mut tau_law, mut renoise) = (0.0_f64, 0.0_f64, 0.0_f64);
    for t in 1..=s.n_steps() {
        let a = s.forward_alpha(t);
        alpha_law = alpha_law.max((s.alpha_bar(t) - a * a * s.alpha_bar(t - 1)).abs());
        let composed = a * a * s.tau(t - 1).powi(2) + s.forward_tau(t).powi(2);
        tau_law = tau_law.max((s.tau(t).powi(2) - composed).abs());
        renoise = renoise.max((s.renoise_alpha(t).powi(2) + s.renoise_tau(t).powi(2) - 1.0).abs());
    }
    checks.push(Check::new("schedule signal composition", alpha_law, 1e-10));
    checks.push(Check::new("schedule noise composition", tau_law, 1e-10));
    checks.push(Check::new("re-noise marginal variance", renoise, 1e-10));

    let all = Combo::new(Modality::ALL.to_vec())?;
    let ms = exp.measurements(&all, 0.1, exp.base_counts(), 11)?;
    for m in &ms {
        let op = ForwardOperator::new(&m.meta, n_atoms)?;
        let v = gaussian(x.len(), &mut rng);
        let u = gaussian(op.output_len(), &mut rng);
        let h = 1e-5;
        let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let (fp, fm) = (op.apply(&plus)?, op.apply(&minus)?);
        let jv: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let lhs = dot(&jv, &u);
        let rhs = dot(&v, &op.vjp(x, &u)?.grad);
        checks.push(Check::new(
            format!("adjoint identity ({})", m.modality()),
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300),
            1e-6,
        ));
    }

    let mut weight_err = 0.0_f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=3);
        let sig: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-8.0..2.0))).collect();
        let w = dynamic_weights(&sig, 1e-6);
        weight_err = weight_err.max((w.iter().sum::<f64>() - m as f64).abs());
    }
    checks.push(Check::new("weights sum to the number of measurements", weight_err, 1e-9));

    checks.push(Check::new("self RMSD", ca_rmsd(truth, truth)?, 1e-10));

    let pd = Combo::new(vec![Modality::P, Modality::D])?;
    let ms = exp.measurements(&pd, 0.2, exp.base_counts(), 1)?;
    let options = RunOptions {
        seed: 1,
        truth: None,
        record_trace: false,
    };
    let finite = match crate::sampler::run_adam_pnp(
        &ms,
        exp.denoiser(),
        s,
        exp.covariance(),
        exp.config().sampler_for(&pd),
        &options,
    ) {
        Ok(rec) => {
            let w_sum: f64 = rec.weights.iter().sum();
            if rec.structure.coords().iter().all(|c| c.is_finite()) {
                (w_sum - 2.0).abs()
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    };
    checks.push(Check::new("guided P+D run completes", finite, 1e-9));
    Ok(checks)
}
