//! Backbone coordinates, PDB ingestion and rigid-body superposition.

mod kabsch;
mod pdb;
pub mod synthetic;

pub use kabsch::{ca_rmsd, kabsch_align, kabsch_align_masked, kabsch_points, Alignment};
pub use pdb::{parse_pdb, to_pdb};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone atom type, in the fixed per-residue order N, CA, C, O.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AtomKind {
    N,
    CA,
    C,
    O,
}

impl AtomKind {
    pub const ORDER: [AtomKind; 4] = [AtomKind::N, AtomKind::CA, AtomKind::C, AtomKind::O];

    pub fn offset(self) -> usize {
        match self {
            AtomKind::N => 0,
            AtomKind::CA => 1,
            AtomKind::C => 2,
            AtomKind::O => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AtomKind::N => "N",
            AtomKind::CA => "CA",
            AtomKind::C => "C",
            AtomKind::O => "O",
        }
    }
}

pub const ATOMS_PER_RESIDUE: usize = 4;

/// Protein backbone as a flat, residue-major coordinate vector.
///
/// Atom `4 * r + k` is atom kind `AtomKind::ORDER[k]` of residue `r`; its
/// coordinates occupy `coords[3 * atom..3 * atom + 3]`. Units are Å.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Backbone {
    coords: Vec<f64>,
}

impl Backbone {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let stride = 3 * ATOMS_PER_RESIDUE;
        if coords.is_empty() || !coords.len().is_multiple_of(stride) {
            return Err(Error::Dimension {
                expected: stride * (coords.len() / stride).max(1),
                got: coords.len(),
            });
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {i} of atom {} is not finite",
                i / 3
            )));
        }
        Ok(Self { coords })
    }

    pub fn from_atoms(atoms: &[[f64; 3]]) -> Result<Self> {
        Self::new(atoms.iter().flatten().copied().collect())
    }

    pub fn n_residues(&self) -> usize {
        self.coords.len() / (3 * ATOMS_PER_RESIDUE)
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn atom(&self, index: usize) -> [f64; 3] {
        let c = &self.coords[3 * index..3 * index + 3];
        [c[0], c[1], c[2]]
    }

    pub fn atoms(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn atom_kind(index: usize) -> AtomKind {
        AtomKind::ORDER[index % ATOMS_PER_RESIDUE]
    }

    pub fn atom_index(residue: usize, kind: AtomKind) -> usize {
        ATOMS_PER_RESIDUE * residue + kind.offset()
    }

    /// Atom labels in storage order.
    pub fn atom_labels(&self) -> impl Iterator<Item = AtomKind> {
        (0..self.n_atoms()).map(Self::atom_kind)
    }

    pub fn ca_indices(&self) -> Vec<usize> {
        (0..self.n_residues())
            .map(|r| Self::atom_index(r, AtomKind::CA))
            .collect()
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.coords)
    }
}

impl TryFrom<Vec<f64>> for Backbone {
    type Error = Error;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        Backbone::new(coords)
    }
}

impl From<Backbone> for Vec<f64> {
    fn from(b: Backbone) -> Self {
        b.coords
    }
}

pub(crate) fn centroid(coords: &[f64]) -> [f64; 3] {
    let n = (coords.len() / 3).max(1) as f64;
    let mut c = [0.0; 3];
    for p in coords.chunks_exact(3) {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / n)
}

/// Translates the structure so its centroid sits at the origin.
pub fn center(b: &Backbone) -> Backbone {
    let c = b.centroid();
    let mut coords = b.coords.clone();
    for p in coords.chunks_exact_mut(3) {
        for k in 0..3 {
            p[k] -= c[k];
        }
    }
    Backbone { coords }
}
