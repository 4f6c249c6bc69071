use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adaptive::AdaptiveParams;
use crate::error::{Error, Result};
use crate::forward::{DensityGridSpec, Modality};
use crate::prior::{CovarianceKind, LangevinParams, LibrarySpec, ScheduleParams};
use crate::sampler::{CorrectionScale, GainKind, GuidanceConfig};

/// A non-empty set of modalities, written `P+D+E`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Combo(Vec<Modality>);

impl Combo {
    pub fn new(modalities: Vec<Modality>) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::InvalidArgument("modality combination is empty".into()));
        }
        for (i, m) in modalities.iter().enumerate() {
            if modalities[..i].contains(m) {
                return Err(Error::InvalidArgument(format!("modality {m} listed twice")));
            }
        }
        Ok(Self(modalities))
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.0
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0.contains(&m)
    }

    pub fn position(&self, m: Modality) -> Option<usize> {
        self.0.iter().position(|&x| x == m)
    }

    /// The combination without modalities whose measurement count is zero.
    pub fn without_empty(&self, partial: usize, distances: usize) -> Result<Self> {
        let kept = self
            .0
            .iter()
            .copied()
            .filter(|m| match m {
                Modality::P => partial > 0,
                Modality::D => distances > 0,
                Modality::E => true,
            })
            .collect();
        Self::new(kept)
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|m| m.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let modalities = s
            .split('+')
            .map(|p| p.trim().parse::<Modality>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(modalities)
    }
}

impl Serialize for Combo {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Combo {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Density grid placed around the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Distance from the structure's bounding box to the grid edge, Å.
    pub margin: f64,
    pub spacing: f64,
    pub atom_width: f64,
    pub resolution_cutoff: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            margin: 10.0,
            spacing: DensityGridSpec::DEFAULT_SPACING,
            atom_width: DensityGridSpec::DEFAULT_ATOM_WIDTH,
            resolution_cutoff: DensityGridSpec::DEFAULT_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalityConfig {
    /// Observed Cα atoms for P.
    pub partial_count: usize,
    /// Observed Cα pairs for D.
    pub distance_count: usize,
    pub density: DensityConfig,
}

impl Default for ModalityConfig {
    fn default() -> Self {
        Self {
            partial_count: 32,
            distance_count: 504,
            density: DensityConfig::default(),
        }
    }
}

/// One row of the paired count grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsityLevel {
    pub partial: usize,
    pub distances: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub kind: CovarianceKind,
    /// Å per whitened unit.
    pub scale: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            kind: CovarianceKind::Identity,
            scale: 10.0,
        }
    }
}

/// How one reconstruction is chosen among `samples_per_run` draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Lowest weighted data misfit; uses only the measurements.
    #[default]
    Misfit,
    /// Lowest RMSD to the ground truth. Oracle: for analysis only.
    OracleRmsd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// PDB file with the reference backbone; `null` uses the built-in
    /// 64-residue helical bundle.
    pub ground_truth: Option<PathBuf>,
    pub modalities: ModalityConfig,
    /// Combinations run by the combo sweep and the noise report.
    pub combos: Vec<Combo>,
    /// Noise std applied to every modality, in that modality's units.
    pub noise_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub sparsity: Vec<SparsityLevel>,
    /// Combination run at every row of the sparsity grid.
    pub sparsity_combo: Combo,
    pub sampler: GuidanceConfig,
    /// Replaces `sampler` for the named combinations, keyed like `"P+D"`.
    pub combo_samplers: BTreeMap<String, GuidanceConfig>,
    pub schedule: ScheduleParams,
    pub covariance: CovarianceConfig,
    pub prior: LibrarySpec,
    /// Used by `sample-prior` only.
    pub langevin: LangevinParams,
    pub selection: Selection,
    pub samples_per_run: usize,
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ground_truth: None,
            modalities: ModalityConfig::default(),
            combos: ["P", "D", "P+D", "E"]
                .iter()
                .map(|s| s.parse().expect("valid combo"))
                .collect(),
            noise_levels: vec![0.2, 0.4, 0.7],
            seeds: vec![1, 2, 3],
            sparsity: [(11, 63), (16, 126), (22, 252), (32, 504), (45, 1008), (63, 2016)]
                .iter()
                .map(|&(partial, distances)| SparsityLevel { partial, distances })
                .collect(),
            sparsity_combo: "P+D+E".parse().expect("valid combo"),
            sampler: desk_scale_sampler(),
            combo_samplers: BTreeMap::from([
                ("E".to_string(), density_sampler(3e-5)),
                ("P+D+E".to_string(), density_sampler(1e-5)),
            ]),
            schedule: ScheduleParams::default(),
            covariance: CovarianceConfig::default(),
            prior: LibrarySpec::default(),
            langevin: LangevinParams::default(),
            selection: Selection::Misfit,
            samples_per_run: 16,
            output_dir: PathBuf::from("out"),
            threads: 0,
        }
    }
}

/// Guidance settings for the coordinate modalities on the default
/// synthetic problem.
pub fn desk_scale_sampler() -> GuidanceConfig {
    GuidanceConfig {
        eta: 1e-3,
        rho: 0.5,
        gain: GainKind::Typical,
        correction_scale: CorrectionScale::Denoiser,
        adaptive_params: AdaptiveParams {
            gamma: 0.0,
            epsilon: 1e-4,
            ..AdaptiveParams::default()
        },
        ..GuidanceConfig::default()
    }
}

/// As [`desk_scale_sampler`] with step size `eta`. The density model is far
/// stiffer than P and D and needs a step one to two orders smaller.
pub fn density_sampler(eta: f64) -> GuidanceConfig {
    GuidanceConfig {
        eta,
        ..desk_scale_sampler()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.combos.is_empty() {
            return Err(Error::InvalidArgument("at least one modality combination is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.noise_levels.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("noise levels must be finite and non-negative".into()));
        }
        if self.samples_per_run == 0 {
            return Err(Error::InvalidArgument("samples_per_run must be at least 1".into()));
        }
        let d = &self.modalities.density;
        if ![d.margin, d.spacing, d.atom_width, d.resolution_cutoff]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            return Err(Error::InvalidArgument("density settings must be positive".into()));
        }
        self.sampler.adaptive_params.validate()?;
        for (key, sampler) in &self.combo_samplers {
            key.parse::<Combo>()?;
            sampler.adaptive_params.validate()?;
        }
        Ok(())
    }

    /// Guidance settings used for `combo`.
    pub fn sampler_for(&self, combo: &Combo) -> &GuidanceConfig {
        self.combo_samplers
            .get(&combo.to_string())
            .unwrap_or(&self.sampler)
    }
}

/// Default configuration with a description of every field, keyed by its
/// dotted path.
pub fn config_schema() -> serde_json::Value {
    let defaults = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    let mut fields = serde_json::Map::new();
    collect_fields("", &defaults, &mut fields);
    serde_json::json!({
        "description": "Experiment configuration. Every field is optional; missing fields take the default shown.",
        "fields": fields,
    })
}

fn collect_fields(prefix: &str, v: &serde_json::Value, out: &mut serde_json::Map<String, serde_json::Value>) {
    if let serde_json::Value::Object(map) = v {
        if !prefix.is_empty() && describe(prefix).is_some() {
            out.insert(prefix.into(), entry(prefix, v));
            return;
        }
        for (k, child) in map {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            collect_fields(&path, child, out);
        }
    } else {
        out.insert(prefix.into(), entry(prefix, v));
    }
}

fn entry(path: &str, default: &serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "default": default,
        "description": describe(path).unwrap_or(""),
    })
}

fn describe(path: &str) -> Option<&'static str> {
    Some(match path {
        "ground_truth" => "PDB file with the reference backbone (N, CA, C, O per residue); null uses the built-in 64-residue helical bundle",
        "modalities.partial_count" => "number of Cα atoms whose coordinates are observed (P)",
        "modalities.distance_count" => "number of Cα-Cα distances observed (D)",
        "modalities.density.margin" => "grid margin around the ground truth bounding box, Å",
        "modalities.density.spacing" => "voxel edge, Å; at most half the resolution cutoff",
        "modalities.density.atom_width" => "std of the Gaussian rendered per atom, Å",
        "modalities.density.resolution_cutoff" => "Fourier modes with |k| <= 1/cutoff are observed, Å",
        "combos" => "modality combinations for sweep-combos and noise-report, e.g. \"P+D\"",
        "noise_levels" => "noise std added to every observation (Å for P and D, coefficient units for E)",
        "seeds" => "one reconstruction per seed for every cell",
        "sparsity" => "paired (partial, distances) counts for sweep-sparsity",
        "sparsity_combo" => "combination run at every sparsity row; modalities with a zero count are dropped",
        "sampler.eta" => "guidance step size",
        "sampler.rho" => "momentum decay in [0, 1)",
        "sampler.adaptive" => "estimate per-modality noise online; when false fixed_sigmas is used",
        "sampler.fixed_sigmas" => "per-modality noise std when adaptive is off (sweeps substitute the true level when null)",
        "sampler.gradient_sign" => "descent (move toward the data) or literal",
        "sampler.correction_scale" => "constant: denoiser error taken as tau_t; denoiser: error reported by the denoiser",
        "sampler.gain" => "bound: worst-case per-entry Lipschitz constant; typical: root-mean-square per-entry gain",
        "sampler.adaptive_params.gamma" => "weight of the denoiser-error correction to the variance estimate",
        "sampler.adaptive_params.epsilon" => "variance floor",
        "sampler.adaptive_params.ema_decay" => "EMA decay across diffusion steps",
        "sampler.adaptive_params.kappa" => "multiplier on the median squared residual",
        "combo_samplers" => "complete sampler settings replacing `sampler` for the named combinations",
        "schedule.n_steps" => "diffusion steps T",
        "schedule.beta_min" => "first-step beta of the linear schedule",
        "schedule.beta_max" => "last-step beta of the linear schedule",
        "covariance.kind" => "identity or chain",
        "covariance.scale" => "Å per whitened unit",
        "prior.truth_copies" => "perturbed copies of the ground truth in the prior library",
        "prior.perturbation" => "per-coordinate std of copy perturbations, Å",
        "prior.decoys" => "alternative folds derived from the ground truth (mirror, reversed, register_shift)",
        "prior.copies_per_decoy" => "perturbed copies of each decoy",
        "prior.library_dir" => "directory of extra reference PDB files",
        "prior.component_std" => "std of each mixture component, whitened units",
        "prior.seed" => "seed for the copy perturbations",
        "langevin.lambda_0" => "final inverse temperature for sample-prior",
        "langevin.psi" => "Langevin equilibration rate for sample-prior",
        "langevin.lambda_t" => "per-step temperature schedule; empty means 1",
        "selection" => "misfit: lowest weighted data misfit; oracle_rmsd: lowest RMSD to the truth (oracle, analysis only)",
        "samples_per_run" => "independent samples drawn per cell before selection",
        "output_dir" => "directory receiving tables and structures",
        "threads" => "worker threads; 0 lets the pool decide",
        _ => return None,
    })
}
