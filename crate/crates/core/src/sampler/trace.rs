use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Diagnostics recorded after the guidance update at reverse step `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t_norm: f64,
    /// Noise std in use per measurement.
    pub sigma_hat: Vec<f64>,
    pub weights: Vec<f64>,
    /// `‖y_i − F_i(R z̃_0)‖` per measurement.
    pub residual_norms: Vec<f64>,
    /// Cα-RMSD of the guided estimate when the truth is known.
    pub rmsd: Option<f64>,
}

/// Column labels for measurements, disambiguating repeated modalities.
pub fn trace_labels(names: &[&str]) -> Vec<String> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|m| *m == n).count() > 1 {
                format!("{n}{i}")
            } else {
                (*n).to_string()
            }
        })
        .collect()
}

/// Writes `records` as CSV: step, t_norm, then σ̂, weight and residual
/// norm per measurement, then rmsd (empty when unknown).
pub fn write_trace_csv<W: Write>(out: W, labels: &[String], records: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "t_norm".to_string()];
    for prefix in ["sigma_hat", "weight", "residual_norm"] {
        header.extend(labels.iter().map(|l| format!("{prefix}_{l}")));
    }
    header.push("rmsd".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.step.to_string(), r.t_norm.to_string()];
        for col in [&r.sigma_hat, &r.weights, &r.residual_norms] {
            row.extend(col.iter().map(f64::to_string));
        }
        row.push(r.rmsd.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
