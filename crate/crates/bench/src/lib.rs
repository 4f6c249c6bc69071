//! Shared fixtures for the benchmarks.

use adampnp::forward::Measurement;
use adampnp::harness::{Combo, Experiment, ExperimentConfig};

/// The default experiment and one P+D+E measurement set at σ = 0.2.
pub fn fixture() -> (Experiment, Vec<Measurement>) {
    let exp = Experiment::new(ExperimentConfig::default()).expect("default config is valid");
    let combo: Combo = "P+D+E".parse().expect("valid combination");
    let ms = exp
        .measurements(&combo, 0.2, exp.base_counts(), 1)
        .expect("measurements simulate");
    (exp, ms)
}
