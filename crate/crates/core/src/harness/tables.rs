use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModalityValues, ResultRecord, SweepKind, SweepOutput};
use crate::error::{Error, Result};
use crate::forward::Modality;
use crate::geometry::{ca_rmsd, to_pdb, Backbone};

/// Mean ± std of the final RMSD over one group of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub combo: String,
    /// `None` when the group pools every noise level.
    pub sigma: Option<f64>,
    pub partial_count: Option<usize>,
    pub distance_count: Option<usize>,
    pub mean_rmsd: Option<f64>,
    pub std_rmsd: Option<f64>,
    /// Records with a reconstruction.
    pub n: usize,
    pub failed: usize,
}

/// Estimated against true noise for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub combo: String,
    pub modality: Modality,
    pub sigma: f64,
    pub mean_sigma_hat: Option<f64>,
    pub std_sigma_hat: Option<f64>,
    pub abs_error: Option<f64>,
    pub n: usize,
}

/// Sample mean and standard deviation (n − 1 denominator, 0 for one value).
fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn group_summary(records: &[&ResultRecord], combo: String, sigma: Option<f64>) -> SummaryRow {
    let rmsd: Vec<f64> = records.iter().filter_map(|r| r.rmsd).collect();
    let (mean_rmsd, std_rmsd) = mean_std(&rmsd);
    SummaryRow {
        combo,
        sigma,
        partial_count: records.first().and_then(|r| r.partial_count),
        distance_count: records.first().and_then(|r| r.distance_count),
        mean_rmsd,
        std_rmsd,
        n: rmsd.len(),
        failed: records.len() - rmsd.len(),
    }
}

/// Groups keyed in first-seen order so rows follow the sweep order.
fn ordered_groups<K: PartialEq + Clone>(
    records: &[ResultRecord],
    key: impl Fn(&ResultRecord) -> K,
) -> Vec<(K, Vec<&ResultRecord>)> {
    let mut groups: Vec<(K, Vec<&ResultRecord>)> = Vec::new();
    for r in records {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
}

/// One row per combination, pooling noise levels and seeds.
pub fn summarize_combos(records: &[ResultRecord]) -> Vec<SummaryRow> {
    ordered_groups(records, |r| r.combo.clone())
        .into_iter()
        .map(|(combo, g)| group_summary(&g, combo, None))
        .collect()
}

/// One row per (count setting, noise level), pooling seeds.
pub fn summarize_sparsity(records: &[ResultRecord]) -> Vec<SummaryRow> {
    ordered_groups(records, |r| (r.partial_count, r.distance_count, r.sigma.to_bits()))
        .into_iter()
        .map(|(_, g)| {
            let combo = g[0].combo.clone();
            let sigma = g[0].sigma;
            group_summary(&g, combo, Some(sigma))
        })
        .collect()
}

/// One row per (combination, modality, noise level), pooling seeds.
pub fn summarize_noise(records: &[ResultRecord]) -> Vec<NoiseRow> {
    let mut rows = Vec::new();
    for (_, g) in ordered_groups(records, |r| (r.combo.clone(), r.sigma.to_bits())) {
        for m in Modality::ALL {
            let est: Vec<f64> = g.iter().filter_map(|r| r.sigma_hat.get(m)).collect();
            if est.is_empty() && !g[0].combo.split('+').any(|c| c == m.name()) {
                continue;
            }
            let (mean, std) = mean_std(&est);
            rows.push(NoiseRow {
                combo: g[0].combo.clone(),
                modality: m,
                sigma: g[0].sigma,
                mean_sigma_hat: mean,
                std_sigma_hat: std,
                abs_error: mean.map(|v| (v - g[0].sigma).abs()),
                n: est.len(),
            });
        }
    }
    rows
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn modality_cells(v: &ModalityValues) -> [String; 3] {
    Modality::ALL.map(|m| opt(v.get(m)))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_results_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "combo",
        "sigma",
        "partial_count",
        "distance_count",
        "seed",
        "rmsd",
        "sigma_hat_P",
        "sigma_hat_D",
        "sigma_hat_E",
        "weight_P",
        "weight_D",
        "weight_E",
        "selected_sample",
        "failed_samples",
        "error",
        "structure_file",
    ])?;
    for r in records {
        let mut row = vec![
            r.combo.clone(),
            r.sigma.to_string(),
            opt(r.partial_count),
            opt(r.distance_count),
            r.seed.to_string(),
            opt(r.rmsd),
        ];
        row.extend(modality_cells(&r.sigma_hat));
        row.extend(modality_cells(&r.weights));
        row.extend([
            opt(r.selected_sample),
            r.failed_samples.to_string(),
            r.error.clone().unwrap_or_default(),
            r.structure_file.clone().unwrap_or_default(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "combo",
        "sigma",
        "partial_count",
        "distance_count",
        "mean_rmsd",
        "std_rmsd",
        "n",
        "failed",
    ])?;
    for r in rows {
        w.write_record([
            r.combo.clone(),
            opt(r.sigma),
            opt(r.partial_count),
            opt(r.distance_count),
            opt(r.mean_rmsd),
            opt(r.std_rmsd),
            r.n.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_noise_csv(path: &Path, rows: &[NoiseRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "combo",
        "modality",
        "sigma",
        "mean_sigma_hat",
        "std_sigma_hat",
        "abs_error",
        "n",
    ])?;
    for r in rows {
        w.write_record([
            r.combo.clone(),
            r.modality.to_string(),
            r.sigma.to_string(),
            opt(r.mean_sigma_hat),
            opt(r.std_sigma_hat),
            opt(r.abs_error),
            r.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the sweep to `dir`:
///
/// - `results.csv`, `results.json`: one row per cell
/// - `summary.csv`, `summary.json`: RMSD table, or the noise table for a
///   noise report
/// - `structures/NNNN.json` (exact coordinates) and `.pdb`
/// - `timings.csv`: wall time per cell, the only non-reproducible file
///
/// Returns the paths written, timings last.
pub fn emit_tables(out: &SweepOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    if out.records.is_empty() {
        return Err(Error::InvalidArgument("no results to write".into()));
    }
    let structures_dir = dir.join("structures");
    fs::create_dir_all(&structures_dir).map_err(|e| Error::io(&structures_dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    write_results_csv(&path, &out.records)?;
    written.push(path);
    let path = dir.join("results.json");
    write_json(&path, &out.records)?;
    written.push(path);

    match out.kind {
        SweepKind::Noise => {
            let rows = summarize_noise(&out.records);
            let path = dir.join("summary.csv");
            write_noise_csv(&path, &rows)?;
            written.push(path);
            let path = dir.join("summary.json");
            write_json(&path, &rows)?;
            written.push(path);
        }
        kind => {
            let rows = if kind == SweepKind::Combos {
                summarize_combos(&out.records)
            } else {
                summarize_sparsity(&out.records)
            };
            let path = dir.join("summary.csv");
            write_summary_csv(&path, &rows)?;
            written.push(path);
            let path = dir.join("summary.json");
            write_json(&path, &rows)?;
            written.push(path);
        }
    }

    for (r, s) in out.records.iter().zip(&out.structures) {
        if let (Some(file), Some(b)) = (&r.structure_file, s) {
            let json = dir.join(file);
            write_json(&json, &b.coords())?;
            written.push(json.clone());
            let pdb = json.with_extension("pdb");
            fs::write(&pdb, to_pdb(b)).map_err(|e| Error::io(&pdb, e))?;
            written.push(pdb);
        }
    }

    let path = dir.join("timings.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["row", "combo", "sigma", "seed", "seconds"])?;
    for (i, (r, t)) in out.records.iter().zip(&out.seconds).enumerate() {
        w.write_record([
            i.to_string(),
            r.combo.clone(),
            r.sigma.to_string(),
            r.seed.to_string(),
            format!("{t:.6}"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Recomputes every stored RMSD from the dumped structures in `dir` and
/// returns the largest absolute disagreement.
pub fn cross_check_rmsd(dir: &Path, truth: &Backbone) -> Result<f64> {
    let records = load_results(&dir.join("results.json"))?;
    let mut worst: f64 = 0.0;
    let mut seen = BTreeMap::new();
    for r in &records {
        let (Some(file), Some(stored)) = (&r.structure_file, r.rmsd) else {
            continue;
        };
        let path = dir.join(file);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let coords: Vec<f64> = serde_json::from_str(&text)?;
        let rmsd = ca_rmsd(&Backbone::new(coords)?, truth)?;
        worst = worst.max((rmsd - stored).abs());
        seen.insert(file.clone(), ());
    }
    if seen.is_empty() {
        return Err(Error::InvalidArgument("no structures to check".into()));
    }
    Ok(worst)
}
