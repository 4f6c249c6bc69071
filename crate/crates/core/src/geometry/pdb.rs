//! Minimal fixed-column PDB reader/writer for backbone atoms.
//!
//! Only the first model and the first chain are read. Alternate locations
//! are resolved by keeping the highest-occupancy copy of each atom.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{AtomKind, Backbone, ATOMS_PER_RESIDUE};
use crate::error::{Error, Result};

struct Slot {
    occupancy: f64,
    xyz: [f64; 3],
}

#[derive(Default)]
struct Residue {
    atoms: [Option<Slot>; ATOMS_PER_RESIDUE],
}

fn field(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        ""
    } else {
        line.get(start..end).unwrap_or("")
    }
}

fn backbone_kind(name: &str) -> Option<AtomKind> {
    match name {
        "N" => Some(AtomKind::N),
        "CA" => Some(AtomKind::CA),
        "C" => Some(AtomKind::C),
        "O" => Some(AtomKind::O),
        _ => None,
    }
}

pub fn parse_pdb(text: &str) -> Result<Backbone> {
    let mut chain: Option<char> = None;
    let mut order: Vec<String> = Vec::new();
    let mut residues: HashMap<String, Residue> = HashMap::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.starts_with("ENDMDL") && chain.is_some() {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        if !line.is_ascii() || line.len() < 54 {
            return Err(Error::Parse {
                line: lineno,
                message: "ATOM record shorter than the coordinate columns".into(),
            });
        }
        let coord = |start: usize, end: usize, axis: &str| -> Result<f64> {
            let raw = field(line, start, end).trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("bad {axis} coordinate {raw:?}"),
                })
        };
        let xyz = [coord(30, 38, "x")?, coord(38, 46, "y")?, coord(46, 54, "z")?];

        let chain_id = line.as_bytes()[21] as char;
        match chain {
            None => chain = Some(chain_id),
            Some(c) if c != chain_id => continue,
            _ => {}
        }

        let Some(kind) = backbone_kind(field(line, 12, 16).trim()) else {
            continue;
        };
        let occupancy = match field(line, 54, 60).trim() {
            "" => 1.0,
            raw => raw.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad occupancy {raw:?}"),
            })?,
        };
        let key = field(line, 22, 27).to_string();
        if field(line, 22, 26).trim().parse::<i64>().is_err() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("bad residue number {:?}", field(line, 22, 26)),
            });
        }

        let residue = residues.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Residue::default()
        });
        let slot = &mut residue.atoms[kind.offset()];
        if slot.as_ref().is_none_or(|s| occupancy > s.occupancy) {
            *slot = Some(Slot { occupancy, xyz });
        }
    }

    let mut coords = Vec::new();
    for key in &order {
        let residue = &residues[key];
        if residue.atoms.iter().all(Option::is_some) {
            for slot in residue.atoms.iter().flatten() {
                coords.extend_from_slice(&slot.xyz);
            }
        }
    }
    if coords.is_empty() {
        return Err(Error::EmptyStructure);
    }
    Backbone::new(coords)
}

/// Writes the backbone as chain A of a poly-alanine PDB file.
pub fn to_pdb(b: &Backbone) -> String {
    let mut out = String::new();
    for (i, p) in b.atoms().enumerate() {
        let kind = Backbone::atom_kind(i);
        let name = match kind {
            AtomKind::CA => " CA ",
            AtomKind::N => " N  ",
            AtomKind::C => " C  ",
            AtomKind::O => " O  ",
        };
        let element = &kind.name()[..1];
        let _ = writeln!(
            out,
            "ATOM  {:>5} {} ALA A{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
            i + 1,
            name,
            i / ATOMS_PER_RESIDUE + 1,
            p[0],
            p[1],
            p[2],
            1.0,
            0.0,
            element
        );
    }
    out.push_str("TER\nEND\n");
    out
}
