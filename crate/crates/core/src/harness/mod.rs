//! Experiment orchestration: simulated measurements, sweeps over modality
//! combinations, sparsity and noise, and the emitted tables.

mod config;
mod tables;
mod validate;

use std::borrow::Cow;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::dynamic_weights;
use crate::error::{Error, Result};
use crate::forward::{
    select_ca_atoms, select_ca_pairs, simulate_measurement, DensityGridSpec, ForwardOperator,
    Measurement, MeasurementMeta, Modality,
};
use crate::geometry::{ca_rmsd, parse_pdb, synthetic, Backbone};
use crate::prior::{build_library_prior, CovarianceFactor, MixtureDenoiser, NoiseSchedule};
use crate::sampler::{run_adam_pnp, GuidanceConfig, Reconstruction, RunOptions};

pub use config::{
    config_schema, density_sampler, desk_scale_sampler, Combo, CovarianceConfig, DensityConfig, ExperimentConfig,
    ModalityConfig, Selection, SparsityLevel,
};
pub use tables::{
    cross_check_rmsd, emit_tables, load_results, summarize_combos, summarize_noise,
    summarize_sparsity, NoiseRow, SummaryRow,
};
pub use validate::{validate_invariants, Check};

/// SplitMix64 finalizer applied to `a` combined with `b`; used to derive
/// independent sub-seeds from one user seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    fn splitmix(x: u64) -> u64 {
        let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(a ^ splitmix(b))
}

const STREAM_SELECT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SAMPLER: u64 = 3;

fn modality_index(m: Modality) -> u64 {
    match m {
        Modality::P => 0,
        Modality::D => 1,
        Modality::E => 2,
    }
}

/// Measurement counts for P and D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub partial: usize,
    pub distances: usize,
}

/// Values keyed by modality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityValues {
    #[serde(rename = "P")]
    pub p: Option<f64>,
    #[serde(rename = "D")]
    pub d: Option<f64>,
    #[serde(rename = "E")]
    pub e: Option<f64>,
}

impl ModalityValues {
    pub fn from_combo(combo: &Combo, values: &[f64]) -> Self {
        let mut out = Self::default();
        for (&m, &v) in combo.modalities().iter().zip(values) {
            *out.slot(m) = Some(v);
        }
        out
    }

    pub fn get(&self, m: Modality) -> Option<f64> {
        match m {
            Modality::P => self.p,
            Modality::D => self.d,
            Modality::E => self.e,
        }
    }

    fn slot(&mut self, m: Modality) -> &mut Option<f64> {
        match m {
            Modality::P => &mut self.p,
            Modality::D => &mut self.d,
            Modality::E => &mut self.e,
        }
    }
}

/// One cell of a sweep: a combination, noise level, count setting and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub combo: String,
    /// Noise std of every modality in the combination.
    pub sigma: f64,
    pub partial_count: Option<usize>,
    pub distance_count: Option<usize>,
    pub seed: u64,
    /// Cα RMSD of the selected sample after superposition, Å.
    pub rmsd: Option<f64>,
    pub sigma_hat: ModalityValues,
    pub weights: ModalityValues,
    pub selected_sample: Option<usize>,
    pub failed_samples: usize,
    pub error: Option<String>,
    /// Path of the dumped structure relative to the output directory.
    pub structure_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Combos,
    Sparsity,
    Noise,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub kind: SweepKind,
    pub records: Vec<ResultRecord>,
    pub structures: Vec<Option<Backbone>>,
    /// Wall time per record, seconds. Kept apart from the records so the
    /// tables are reproducible byte for byte.
    pub seconds: Vec<f64>,
}

/// The sample chosen among several draws.
#[derive(Debug, Clone)]
pub struct Selected {
    pub reconstruction: Reconstruction,
    pub sample: usize,
    pub failed: usize,
    /// Selection score of every successful sample, in draw order.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
struct Cell {
    combo: Combo,
    sigma: f64,
    counts: Counts,
    seed: u64,
    sparsity: bool,
}

/// Everything derived once from a configuration.
pub struct Experiment {
    config: ExperimentConfig,
    truth: Backbone,
    covariance: CovarianceFactor,
    schedule: NoiseSchedule,
    denoiser: MixtureDenoiser,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let truth = match &config.ground_truth {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_pdb(&text)?
            }
            None => synthetic::helical_bundle(),
        };
        let covariance = CovarianceFactor::new(
            config.covariance.kind,
            truth.n_atoms(),
            config.covariance.scale,
        )?;
        let schedule = NoiseSchedule::new(config.schedule)?;
        let prior = build_library_prior(&truth, &config.prior, &covariance)?;
        let denoiser = MixtureDenoiser::new(prior, schedule.clone());
        Ok(Self {
            config,
            truth,
            covariance,
            schedule,
            denoiser,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn truth(&self) -> &Backbone {
        &self.truth
    }

    pub fn covariance(&self) -> &CovarianceFactor {
        &self.covariance
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn denoiser(&self) -> &MixtureDenoiser {
        &self.denoiser
    }

    pub fn base_counts(&self) -> Counts {
        Counts {
            partial: self.config.modalities.partial_count,
            distances: self.config.modalities.distance_count,
        }
    }

    pub fn density_grid(&self) -> DensityGridSpec {
        let d = &self.config.modalities.density;
        DensityGridSpec::around_with(&self.truth, d.margin, d.spacing, d.atom_width, d.resolution_cutoff)
    }

    /// Simulated observations of the ground truth. For a fixed seed the
    /// observed atoms and pairs do not depend on the noise level, and
    /// smaller counts observe a subset of larger ones.
    pub fn measurements(&self, combo: &Combo, sigma: f64, counts: Counts, seed: u64) -> Result<Vec<Measurement>> {
        combo
            .modalities()
            .iter()
            .map(|&m| {
                let select_seed = mix_seed(mix_seed(seed, STREAM_SELECT), modality_index(m));
                let meta = match m {
                    Modality::P => MeasurementMeta::P {
                        atoms: select_ca_atoms(&self.truth, counts.partial, select_seed)?,
                    },
                    Modality::D => MeasurementMeta::D {
                        pairs: select_ca_pairs(&self.truth, counts.distances, select_seed)?,
                    },
                    Modality::E => MeasurementMeta::E {
                        grid: self.density_grid(),
                    },
                };
                let noise_seed = mix_seed(
                    mix_seed(mix_seed(seed, STREAM_NOISE), modality_index(m)),
                    sigma.to_bits(),
                );
                simulate_measurement(&meta, &self.truth, sigma, noise_seed)
            })
            .collect()
    }

    /// Draws `samples_per_run` reconstructions and keeps one according to
    /// the configured selection rule.
    pub fn reconstruct(&self, measurements: &[Measurement], seed: u64, record_trace: bool) -> Result<Selected> {
        let combo = Combo::new(measurements.iter().map(|m| m.modality()).collect())?;
        self.reconstruct_with(self.config.sampler_for(&combo), measurements, seed, record_trace)
    }

    fn reconstruct_with(
        &self,
        sampler: &GuidanceConfig,
        measurements: &[Measurement],
        seed: u64,
        record_trace: bool,
    ) -> Result<Selected> {
        let truth = Some(&self.truth);
        let mut ok: Vec<(usize, Reconstruction)> = Vec::new();
        let mut last_err = None;
        for k in 0..self.config.samples_per_run {
            let options = RunOptions {
                seed: mix_seed(mix_seed(seed, STREAM_SAMPLER), k as u64),
                truth,
                record_trace,
            };
            match run_adam_pnp(
                measurements,
                &self.denoiser,
                &self.schedule,
                &self.covariance,
                sampler,
                &options,
            ) {
                Ok(rec) => ok.push((k, rec)),
                Err(e @ Error::Invariant { .. }) => return Err(e),
                Err(e) => last_err = Some(e),
            }
        }
        let failed = self.config.samples_per_run - ok.len();
        if ok.is_empty() {
            return Err(last_err.expect("at least one sample was attempted"));
        }
        let scores: Vec<(usize, f64)> = match self.config.selection {
            Selection::Misfit => {
                let scored = misfit_scores(measurements, &ok, sampler.adaptive_params.epsilon)?;
                ok.iter().map(|(k, _)| *k).zip(scored).collect()
            }
            Selection::OracleRmsd => ok
                .iter()
                .map(|(k, rec)| Ok((*k, ca_rmsd(&rec.structure, &self.truth)?)))
                .collect::<Result<_>>()?,
        };
        let best = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (sample, reconstruction) = ok.swap_remove(best);
        Ok(Selected {
            reconstruction,
            sample,
            failed,
            scores,
        })
    }

    fn run_cell(&self, cell: &Cell, index: usize) -> (ResultRecord, Option<Backbone>, f64) {
        let start = Instant::now();
        let mut record = ResultRecord {
            combo: cell.combo.to_string(),
            sigma: cell.sigma,
            partial_count: (cell.sparsity || cell.combo.contains(Modality::P)).then_some(cell.counts.partial),
            distance_count: (cell.sparsity || cell.combo.contains(Modality::D)).then_some(cell.counts.distances),
            seed: cell.seed,
            rmsd: None,
            sigma_hat: ModalityValues::default(),
            weights: ModalityValues::default(),
            selected_sample: None,
            failed_samples: self.config.samples_per_run,
            error: None,
            structure_file: None,
        };
        let outcome = self.sampler_for(cell).and_then(|sampler| {
            let ms = self.measurements(&cell.combo, cell.sigma, cell.counts, cell.seed)?;
            let sel = self.reconstruct_with(&sampler, &ms, cell.seed, false)?;
            let rmsd = ca_rmsd(&sel.reconstruction.structure, &self.truth)?;
            Ok((sel, rmsd))
        });
        let structure = match outcome {
            Ok((sel, rmsd)) => {
                let rec = &sel.reconstruction;
                record.rmsd = Some(rmsd);
                let sig: Vec<f64> = rec.sigma_sq.iter().map(|s| s.sqrt()).collect();
                record.sigma_hat = ModalityValues::from_combo(&cell.combo, &sig);
                record.weights = ModalityValues::from_combo(&cell.combo, &rec.weights);
                record.selected_sample = Some(sel.sample);
                record.failed_samples = sel.failed;
                record.structure_file = Some(format!("structures/{index:04}.json"));
                Some(sel.reconstruction.structure)
            }
            Err(e) => {
                record.error = Some(format!("{}: {e}", e.kind()));
                None
            }
        };
        (record, structure, start.elapsed().as_secs_f64())
    }

    /// With adaptive estimation off and no fixed values given, sweeps use the
    /// true noise level for every modality.
    fn sampler_for(&self, cell: &Cell) -> Result<Cow<'_, GuidanceConfig>> {
        let sampler = self.config.sampler_for(&cell.combo);
        if sampler.adaptive || sampler.fixed_sigmas.is_some() {
            return Ok(Cow::Borrowed(sampler));
        }
        if !(cell.sigma > 0.0) {
            return Err(Error::InvalidArgument(
                "fixed-noise runs need a positive noise level".into(),
            ));
        }
        let mut fixed = sampler.clone();
        fixed.fixed_sigmas = Some(vec![cell.sigma; cell.combo.modalities().len()]);
        Ok(Cow::Owned(fixed))
    }

    fn run_cells(&self, kind: SweepKind, cells: Vec<Cell>) -> Result<SweepOutput> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        let results: Vec<_> = pool.install(|| {
            cells
                .par_iter()
                .enumerate()
                .map(|(i, c)| self.run_cell(c, i))
                .collect()
        });
        let mut out = SweepOutput {
            kind,
            records: Vec::with_capacity(results.len()),
            structures: Vec::with_capacity(results.len()),
            seconds: Vec::with_capacity(results.len()),
        };
        for (r, s, t) in results {
            out.records.push(r);
            out.structures.push(s);
            out.seconds.push(t);
        }
        Ok(out)
    }

    /// Every configured combination at every noise level and seed.
    pub fn run_combo_sweep(&self) -> Result<SweepOutput> {
        let counts = self.base_counts();
        let mut cells = Vec::new();
        for combo in &self.config.combos {
            for &sigma in &self.config.noise_levels {
                for &seed in &self.config.seeds {
                    cells.push(Cell {
                        combo: combo.clone(),
                        sigma,
                        counts,
                        seed,
                        sparsity: false,
                    });
                }
            }
        }
        self.run_cells(SweepKind::Combos, cells)
    }

    /// The sparsity combination at every row of the paired count grid.
    pub fn run_sparsity_sweep(&self) -> Result<SweepOutput> {
        if self.config.sparsity.is_empty() {
            return Err(Error::InvalidArgument("the sparsity grid is empty".into()));
        }
        let mut cells = Vec::new();
        for level in &self.config.sparsity {
            let combo = self.config.sparsity_combo.without_empty(level.partial, level.distances)?;
            for &sigma in &self.config.noise_levels {
                for &seed in &self.config.seeds {
                    cells.push(Cell {
                        combo: combo.clone(),
                        sigma,
                        counts: Counts {
                            partial: level.partial,
                            distances: level.distances,
                        },
                        seed,
                        sparsity: true,
                    });
                }
            }
        }
        self.run_cells(SweepKind::Sparsity, cells)
    }

    /// Estimated against true noise for every combination containing D.
    pub fn run_noise_estimation_report(&self) -> Result<SweepOutput> {
        let combos: Vec<&Combo> = self
            .config
            .combos
            .iter()
            .filter(|c| c.contains(Modality::D))
            .collect();
        if combos.is_empty() {
            return Err(Error::InvalidArgument("the noise report needs a combination with D".into()));
        }
        if combos.iter().any(|c| !self.config.sampler_for(c).adaptive) {
            return Err(Error::InvalidArgument("the noise report needs adaptive estimation".into()));
        }
        let counts = self.base_counts();
        let mut cells = Vec::new();
        for combo in combos {
            for &sigma in &self.config.noise_levels {
                for &seed in &self.config.seeds {
                    cells.push(Cell {
                        combo: combo.clone(),
                        sigma,
                        counts,
                        seed,
                        sparsity: false,
                    });
                }
            }
        }
        self.run_cells(SweepKind::Noise, cells)
    }
}

/// `Σ_i w_i ‖y_i − F_i(x)‖² / (2 σ_i²)` at each sample's final structure,
/// with `σ_i²` pooled over the samples so that no sample is rewarded for
/// inflating its own noise estimate.
fn misfit_scores(measurements: &[Measurement], samples: &[(usize, Reconstruction)], epsilon: f64) -> Result<Vec<f64>> {
    let n = samples.len() as f64;
    let pooled: Vec<f64> = (0..measurements.len())
        .map(|i| samples.iter().map(|(_, r)| r.sigma_sq[i]).sum::<f64>() / n)
        .collect();
    let weights = dynamic_weights(&pooled, epsilon);
    let ops = measurements
        .iter()
        .map(|m| ForwardOperator::new(&m.meta, samples[0].1.structure.n_atoms()))
        .collect::<Result<Vec<_>>>()?;
    samples
        .iter()
        .map(|(_, rec)| {
            let mut total = 0.0;
            for (i, (m, op)) in measurements.iter().zip(&ops).enumerate() {
                let f = match op.apply(rec.structure.coords()) {
                    Ok(f) => f,
                    Err(Error::OutOfGrid { .. }) => return Ok(f64::INFINITY),
                    Err(e) => return Err(e),
                };
                let ss: f64 = m.y.iter().zip(&f).map(|(y, f)| (y - f).powi(2)).sum();
                total += weights[i] * ss / (2.0 * pooled[i].max(epsilon));
            }
            Ok(total)
        })
        .collect()
}
