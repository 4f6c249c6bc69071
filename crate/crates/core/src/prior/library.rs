//! Builds a mixture prior from a library of reference backbones.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CovarianceFactor, GaussianMixturePrior};
use crate::error::{Error, Result};
use crate::geometry::{parse_pdb, synthetic, Backbone};

/// Alternative folds derived from the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoyKind {
    /// Mirror image: identical pairwise distances, opposite chirality.
    Mirror,
    /// Same atom positions threaded in reverse residue order.
    Reversed,
    /// Same atom positions threaded with a cyclic register shift.
    RegisterShift(usize),
}

impl DecoyKind {
    pub fn build(self, truth: &Backbone) -> Backbone {
        match self {
            DecoyKind::Mirror => synthetic::mirror(truth),
            DecoyKind::Reversed => synthetic::reverse_residues(truth),
            DecoyKind::RegisterShift(k) => synthetic::shift_register(truth, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibrarySpec {
    /// Perturbed copies of the ground truth in the library.
    pub truth_copies: usize,
    /// Per-coordinate std of the copy perturbations, Å.
    pub perturbation: f64,
    pub decoys: Vec<DecoyKind>,
    pub copies_per_decoy: usize,
    /// Extra reference backbones, one PDB file per component.
    pub library_dir: Option<PathBuf>,
    /// Std of each mixture component in the whitened space. With the default
    /// scale of 10 Å per unit this matches the copy perturbation.
    pub component_std: f64,
    pub seed: u64,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            truth_copies: 2,
            perturbation: 0.5,
            decoys: vec![
                DecoyKind::Mirror,
                DecoyKind::Reversed,
                DecoyKind::RegisterShift(21),
                DecoyKind::RegisterShift(43),
            ],
            copies_per_decoy: 2,
            library_dir: None,
            component_std: 0.05,
            seed: 0,
        }
    }
}

/// Reads every `*.pdb` file in `dir`, sorted by file name.
pub fn load_library_dir(dir: &Path) -> Result<Vec<Backbone>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pdb")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_pdb(&text)
        })
        .collect()
}

fn perturbed(b: &Backbone, std: f64, rng: &mut ChaCha8Rng) -> Backbone {
    let coords = b
        .coords()
        .iter()
        .map(|c| {
            let e: f64 = StandardNormal.sample(rng);
            c + std * e
        })
        .collect();
    Backbone::new(coords).expect("perturbation keeps shape")
}

/// Reference structures (in coordinate space) making up the library.
pub fn library_structures(truth: &Backbone, spec: &LibrarySpec) -> Result<Vec<Backbone>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for _ in 0..spec.truth_copies {
        out.push(perturbed(truth, spec.perturbation, &mut rng));
    }
    for decoy in &spec.decoys {
        let base = decoy.build(truth);
        for _ in 0..spec.copies_per_decoy {
            out.push(perturbed(&base, spec.perturbation, &mut rng));
        }
    }
    if let Some(dir) = &spec.library_dir {
        for b in load_library_dir(dir)? {
            if b.n_residues() != truth.n_residues() {
                return Err(Error::Dimension {
                    expected: truth.n_residues(),
                    got: b.n_residues(),
                });
            }
            out.push(b);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("prior library is empty".into()));
    }
    Ok(out)
}

/// Uniform-weight mixture over the whitened library structures.
pub fn build_library_prior(
    truth: &Backbone,
    spec: &LibrarySpec,
    covariance: &CovarianceFactor,
) -> Result<GaussianMixturePrior> {
    let means = library_structures(truth, spec)?
        .iter()
        .map(|b| covariance.whiten(b.coords()))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixturePrior::uniform(means, spec.component_std)
}
