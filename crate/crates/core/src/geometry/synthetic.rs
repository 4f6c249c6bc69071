//! Deterministic synthetic backbones for tests and desk-scale experiments.

use nalgebra::{Rotation3, Unit, Vector3};

use super::{center, Backbone};

const N_CA: f64 = 1.458;
const CA_C: f64 = 1.525;
const C_N: f64 = 1.329;
const C_O: f64 = 1.231;
const ANGLE_N_CA_C: f64 = 111.2;
const ANGLE_CA_C_N: f64 = 116.2;
const ANGLE_C_N_CA: f64 = 121.7;
const ANGLE_CA_C_O: f64 = 120.5;
const HELIX_PHI: f64 = -57.8;
const HELIX_PSI: f64 = -47.0;
const CA_CA: f64 = 3.8;

type V3 = Vector3<f64>;

/// Places atom D from A, B, C given |CD|, angle BCD and dihedral ABCD (degrees).
fn place(a: V3, b: V3, c: V3, bond: f64, angle: f64, torsion: f64) -> V3 {
    let (angle, torsion) = (angle.to_radians(), torsion.to_radians());
    let bc = (c - b).normalize();
    let n = (b - a).cross(&bc).normalize();
    let m = n.cross(&bc);
    let d = V3::new(
        -bond * angle.cos(),
        bond * angle.sin() * torsion.cos(),
        bond * angle.sin() * torsion.sin(),
    );
    c + bc * d.x + m * d.y + n * d.z
}

/// Ideal right-handed α-helix built from internal coordinates, atoms in N, CA, C, O order.
pub fn ideal_helix(n_residues: usize) -> Vec<V3> {
    let mut n = vec![V3::zeros()];
    let mut ca = vec![V3::new(N_CA, 0.0, 0.0)];
    let theta = ANGLE_N_CA_C.to_radians();
    let mut c = vec![ca[0] + V3::new(-CA_C * theta.cos(), CA_C * theta.sin(), 0.0)];
    for i in 1..n_residues {
        let ni = place(n[i - 1], ca[i - 1], c[i - 1], C_N, ANGLE_CA_C_N, HELIX_PSI);
        let cai = place(ca[i - 1], c[i - 1], ni, N_CA, ANGLE_C_N_CA, 180.0);
        let ci = place(c[i - 1], ni, cai, CA_C, ANGLE_N_CA_C, HELIX_PHI);
        n.push(ni);
        ca.push(cai);
        c.push(ci);
    }
    let mut atoms = Vec::with_capacity(4 * n_residues);
    for i in 0..n_residues {
        let o = place(n[i], ca[i], c[i], C_O, ANGLE_CA_C_O, HELIX_PSI + 180.0);
        atoms.extend([n[i], ca[i], c[i], o]);
    }
    atoms
}

/// Principal axis of the Cα trace, oriented from the first to the last residue.
fn helix_axis(atoms: &[V3]) -> (V3, V3) {
    let cas: Vec<V3> = atoms.iter().skip(1).step_by(4).copied().collect();
    let centroid = cas.iter().sum::<V3>() / cas.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in &cas {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let imax = eig.eigenvalues.imax();
    let mut axis: V3 = eig.eigenvectors.column(imax).into();
    if axis.dot(&(cas[cas.len() - 1] - cas[0])) < 0.0 {
        axis = -axis;
    }
    (centroid, axis)
}

struct HelixPlacement {
    length: usize,
    center: V3,
    direction: V3,
    spin: f64,
}

fn placed_helix(p: &HelixPlacement) -> Vec<V3> {
    let atoms = ideal_helix(p.length);
    let (c0, axis) = helix_axis(&atoms);
    let target = p.direction.normalize();
    let align = Rotation3::rotation_between(&axis, &target).unwrap_or_else(Rotation3::identity);
    let spin = Rotation3::from_axis_angle(&Unit::new_normalize(target), p.spin);
    let rot = spin * align;
    atoms.iter().map(|a| rot * (a - c0) + p.center).collect()
}

fn bezier(a: V3, ctrl: V3, b: V3, s: f64) -> V3 {
    a * (1.0 - s) * (1.0 - s) + ctrl * 2.0 * s * (1.0 - s) + b * s * s
}

/// Cα positions of a loop of `n` residues bridging `a` and `b`, bulging along `out`.
fn loop_trace(a: V3, b: V3, out: V3, n: usize) -> Vec<V3> {
    const SAMPLES: usize = 2000;
    let target = (n + 1) as f64 * CA_CA;
    let mid = (a + b) / 2.0;
    let polyline = |h: f64| -> Vec<V3> {
        (0..=SAMPLES)
            .map(|k| bezier(a, mid + out * h, b, k as f64 / SAMPLES as f64))
            .collect()
    };
    let length = |pts: &[V3]| pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>();

    let (mut lo, mut hi) = (0.0, 4.0 * target);
    for _ in 0..60 {
        let h = 0.5 * (lo + hi);
        if length(&polyline(h)) < target {
            lo = h;
        } else {
            hi = h;
        }
    }
    let pts = polyline(0.5 * (lo + hi));
    let mut cumulative = vec![0.0];
    for w in pts.windows(2) {
        cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cumulative.last().unwrap();
    let mut chain: Vec<V3> = std::iter::once(a)
        .chain((1..=n).map(|j| {
            let want = total * j as f64 / (n + 1) as f64;
            let k = cumulative.partition_point(|&c| c < want).min(SAMPLES);
            pts[k]
        }))
        .chain(std::iter::once(b))
        .collect();
    // Bond-length relaxation with fixed endpoints.
    for _ in 0..500 {
        for i in 0..=n {
            let d = chain[i + 1] - chain[i];
            let corr = d * (0.5 * (d.norm() - CA_CA) / d.norm());
            if i > 0 {
                chain[i] += corr;
            }
            if i < n {
                chain[i + 1] -= corr;
            }
        }
    }
    chain[1..=n].to_vec()
}

fn loop_residue(prev: V3, ca: V3, next: V3) -> [V3; 4] {
    let up = (prev - ca).normalize();
    let un = (next - ca).normalize();
    let mut out = -(up + un);
    if out.norm() < 1e-6 {
        out = up.cross(&V3::new(0.3, 0.5, 0.8));
    }
    let out = out.normalize();
    let mut side = up.cross(&un);
    if side.norm() < 1e-6 {
        side = out.cross(&up);
    }
    let side = side.normalize();
    let n = ca + (up * 0.9 + out * 0.3 + side * 0.3).normalize() * N_CA;
    let c = ca + (un * 0.9 + out * 0.3 - side * 0.3).normalize() * CA_C;
    let o = c + (out * 0.7 + side * 0.5 + un * 0.2).normalize() * C_O;
    [n, ca, c, o]
}

/// Asymmetric 64-residue three-helix bundle (helices of 20, 16 and 18
/// residues joined by two 5-residue loops), centred at the origin.
pub fn helical_bundle() -> Backbone {
    let helices = [
        HelixPlacement {
            length: 20,
            center: V3::new(0.0, 0.0, 0.0),
            direction: V3::new(0.1, 0.0, 1.0),
            spin: 0.4,
        },
        HelixPlacement {
            length: 16,
            center: V3::new(9.8, 1.5, 2.0),
            direction: V3::new(-0.15, 0.1, -1.0),
            spin: 1.9,
        },
        HelixPlacement {
            length: 18,
            center: V3::new(4.2, 8.9, -1.0),
            direction: V3::new(0.05, -0.12, 1.0),
            spin: -0.7,
        },
    ];
    let loops = [5usize, 5];

    let segments: Vec<Vec<V3>> = helices.iter().map(placed_helix).collect();
    let mut atoms: Vec<V3> = Vec::new();
    for (h, seg) in segments.iter().enumerate() {
        atoms.extend(seg);
        if h + 1 < segments.len() {
            let next = &segments[h + 1];
            let a = seg[seg.len() - 3];
            let b = next[1];
            let out = (helices[h].direction.normalize() - helices[h + 1].direction.normalize())
                .normalize();
            let trace = loop_trace(a, b, out, loops[h]);
            for j in 0..trace.len() {
                let prev = if j == 0 { a } else { trace[j - 1] };
                let next_ca = if j + 1 == trace.len() { b } else { trace[j + 1] };
                atoms.extend(loop_residue(prev, trace[j], next_ca));
            }
        }
    }
    let coords: Vec<f64> = atoms.iter().flat_map(|a| [a.x, a.y, a.z]).collect();
    center(&Backbone::new(coords).expect("synthetic bundle is well formed"))
}

/// Inversion through the centroid: the mirror image up to a proper rotation,
/// with every coordinate changed (chirality inverted, distances preserved).
pub fn mirror(b: &Backbone) -> Backbone {
    let c = b.centroid();
    let mut coords = b.coords().to_vec();
    for p in coords.chunks_exact_mut(3) {
        for a in 0..3 {
            p[a] = 2.0 * c[a] - p[a];
        }
    }
    Backbone::new(coords).expect("mirror preserves shape")
}

/// Residue `r` of the result takes the atoms of residue `n - 1 - r`.
pub fn reverse_residues(b: &Backbone) -> Backbone {
    permute_residues(b, |r, n| n - 1 - r)
}

/// Residue `r` of the result takes the atoms of residue `(r + shift) mod n`.
pub fn shift_register(b: &Backbone, shift: usize) -> Backbone {
    permute_residues(b, |r, n| (r + shift) % n)
}

fn permute_residues(b: &Backbone, source: impl Fn(usize, usize) -> usize) -> Backbone {
    let n = b.n_residues();
    let stride = 12;
    let mut coords = Vec::with_capacity(b.coords().len());
    for r in 0..n {
        let s = source(r, n);
        coords.extend_from_slice(&b.coords()[s * stride..(s + 1) * stride]);
    }
    Backbone::new(coords).expect("permutation preserves shape")
}
