//! Simulated density maps and their low-resolution Fourier coefficients.
//!
//! Each atom is rendered as an isotropic Gaussian of unit mass onto a
//! regular voxel grid, the grid is Fourier transformed (unnormalised DFT,
//! `F(k) = Σ_v ρ(v) exp(-2πi k·v/n)`), and only modes with spatial
//! frequency `|k| / extent <= 1 / resolution_cutoff` are kept.
//!
//! Retained modes are ordered lexicographically by their signed integer
//! frequency triple `(k_x, k_y, k_z)`. The output vector holds the real parts
//! of all retained modes followed by their imaginary parts.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Backbone;

/// Kernel support, in units of the atom width.
const KERNEL_RADIUS: f64 = 6.0;
/// Required clearance between an atom and the grid boundary, in atom widths.
const MARGIN_WIDTHS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGridSpec {
    /// Position of voxel (0, 0, 0), Å.
    pub origin: [f64; 3],
    /// Box side lengths, Å; each must be a multiple of `spacing`.
    pub extent: [f64; 3],
    pub spacing: f64,
    /// Gaussian std per atom, Å.
    pub atom_width: f64,
    /// Resolution of the retained Fourier modes, Å.
    pub resolution_cutoff: f64,
}

impl DensityGridSpec {
    pub const DEFAULT_SPACING: f64 = 1.0;
    pub const DEFAULT_ATOM_WIDTH: f64 = 0.8;
    pub const DEFAULT_CUTOFF: f64 = 2.0;

    /// Box around `b` with at least `margin` Å of clearance and FFT-friendly sizes.
    pub fn around(b: &Backbone, margin: f64) -> Self {
        Self::around_with(
            b,
            margin,
            Self::DEFAULT_SPACING,
            Self::DEFAULT_ATOM_WIDTH,
            Self::DEFAULT_CUTOFF,
        )
    }

    pub fn around_with(
        b: &Backbone,
        margin: f64,
        spacing: f64,
        atom_width: f64,
        resolution_cutoff: f64,
    ) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in b.atoms() {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut origin = [0.0; 3];
        let mut extent = [0.0; 3];
        for a in 0..3 {
            let span = hi[a] - lo[a] + 2.0 * margin;
            let n = smooth_size((span / spacing).ceil() as usize + 1);
            extent[a] = n as f64 * spacing;
            let centre = 0.5 * (lo[a] + hi[a]);
            origin[a] = centre - 0.5 * (n - 1) as f64 * spacing;
        }
        Self {
            origin,
            extent,
            spacing,
            atom_width,
            resolution_cutoff,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.extent.map(|e| (e / self.spacing).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.spacing > 0.0 && self.atom_width > 0.0 && self.resolution_cutoff > 0.0) {
            return bad("grid spacing, atom width and cutoff must be positive".into());
        }
        if self.spacing > self.resolution_cutoff / 2.0 + 1e-12 {
            return bad(format!(
                "spacing {} exceeds half the resolution cutoff {}",
                self.spacing, self.resolution_cutoff
            ));
        }
        for (a, &e) in self.extent.iter().enumerate() {
            let n = (e / self.spacing).round();
            if n < 2.0 || (n * self.spacing - e).abs() > 1e-6 {
                return bad(format!(
                    "extent {e} on axis {a} is not a multiple of the spacing"
                ));
            }
        }
        Ok(())
    }

    /// Retained modes as signed integer frequency triples, in output order.
    pub fn retained_modes(&self) -> Vec<[i64; 3]> {
        let dims = self.dims();
        let kmax = 1.0 / self.resolution_cutoff;
        let range = |n: usize| -((n / 2) as i64)..n.div_ceil(2) as i64;
        let mut modes = Vec::new();
        for kx in range(dims[0]) {
            for ky in range(dims[1]) {
                for kz in range(dims[2]) {
                    let f = [
                        kx as f64 / self.extent[0],
                        ky as f64 / self.extent[1],
                        kz as f64 / self.extent[2],
                    ];
                    if (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt() <= kmax + 1e-12 {
                        modes.push([kx, ky, kz]);
                    }
                }
            }
        }
        modes
    }

    /// Spatial frequency (cycles/Å) of an integer mode.
    pub fn frequency(&self, k: [i64; 3]) -> [f64; 3] {
        [
            k[0] as f64 / self.extent[0],
            k[1] as f64 / self.extent[1],
            k[2] as f64 / self.extent[2],
        ]
    }
}

/// Smallest size >= n whose only prime factors are 2, 3 and 5.
fn smooth_size(n: usize) -> usize {
    (n.max(2)..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("unbounded search")
}

/// Separable per-atom kernel restricted to its support window.
struct AtomKernel {
    start: [usize; 3],
    values: [Vec<f64>; 3],
    derivs: [Vec<f64>; 3],
}

/// Prepared density forward model with cached FFT plans.
///
/// Plans are immutable and shared; scratch buffers are allocated per call.
pub struct DensityOperator {
    spec: DensityGridSpec,
    dims: [usize; 3],
    modes: Vec<[i64; 3]>,
    mode_index: Vec<usize>,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for DensityOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityOperator")
            .field("spec", &self.spec)
            .field("modes", &self.modes.len())
            .finish()
    }
}

impl DensityOperator {
    pub fn new(spec: &DensityGridSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims();
        let modes = spec.retained_modes();
        let wrap = |k: i64, n: usize| k.rem_euclid(n as i64) as usize;
        let mode_index = modes
            .iter()
            .map(|k| (wrap(k[0], dims[0]) * dims[1] + wrap(k[1], dims[1])) * dims[2] + wrap(k[2], dims[2]))
            .collect();
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Ok(Self {
            spec: spec.clone(),
            dims,
            modes,
            mode_index,
            forward,
            inverse,
        })
    }

    pub fn spec(&self) -> &DensityGridSpec {
        &self.spec
    }

    pub fn modes(&self) -> &[[i64; 3]] {
        &self.modes
    }

    pub fn output_len(&self) -> usize {
        2 * self.modes.len()
    }

    fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    fn kernel(&self, atom: usize, p: [f64; 3]) -> Result<AtomKernel> {
        let s = &self.spec;
        let h = s.spacing;
        let w = s.atom_width;
        let margin = MARGIN_WIDTHS * w;
        for a in 0..3 {
            let lo = s.origin[a] + margin;
            let hi = s.origin[a] + (self.dims[a] - 1) as f64 * h - margin;
            if !(p[a] >= lo && p[a] <= hi) {
                return Err(Error::OutOfGrid {
                    atom,
                    x: p[0],
                    y: p[1],
                    z: p[2],
                });
            }
        }
        let norm = h / ((2.0 * PI).sqrt() * w);
        let radius = KERNEL_RADIUS * w;
        let mut start = [0usize; 3];
        let mut values: [Vec<f64>; 3] = Default::default();
        let mut derivs: [Vec<f64>; 3] = Default::default();
        for a in 0..3 {
            let rel = p[a] - s.origin[a];
            let i0 = ((rel - radius) / h).ceil().max(0.0) as usize;
            let i1 = (((rel + radius) / h).floor() as usize).min(self.dims[a] - 1);
            start[a] = i0;
            for i in i0..=i1 {
                let d = i as f64 * h - rel;
                let g = norm * (-0.5 * d * d / (w * w)).exp();
                values[a].push(g);
                derivs[a].push(g * d / (w * w));
            }
        }
        Ok(AtomKernel {
            start,
            values,
            derivs,
        })
    }

    /// Voxel densities, row-major `(x, y, z)`.
    pub fn render(&self, x: &[f64]) -> Result<Vec<f64>> {
        let [_, ny, nz] = self.dims;
        let mut grid = vec![0.0; self.n_voxels()];
        for (atom, p) in x.chunks_exact(3).enumerate() {
            let k = self.kernel(atom, [p[0], p[1], p[2]])?;
            for (di, gx) in k.values[0].iter().enumerate() {
                for (dj, gy) in k.values[1].iter().enumerate() {
                    let gxy = gx * gy;
                    let row = ((k.start[0] + di) * ny + k.start[1] + dj) * nz + k.start[2];
                    for (cell, gz) in grid[row..row + k.values[2].len()].iter_mut().zip(&k.values[2]) {
                        *cell += gxy * gz;
                    }
                }
            }
        }
        Ok(grid)
    }

    fn transform(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nz] = self.dims;
        plans[2].process(buf);
        let mut line = vec![Complex64::new(0.0, 0.0); ny.max(nx)];
        for i in 0..nx {
            for k in 0..nz {
                for j in 0..ny {
                    line[j] = buf[(i * ny + j) * nz + k];
                }
                plans[1].process(&mut line[..ny]);
                for j in 0..ny {
                    buf[(i * ny + j) * nz + k] = line[j];
                }
            }
        }
        for j in 0..ny {
            for k in 0..nz {
                for i in 0..nx {
                    line[i] = buf[(i * ny + j) * nz + k];
                }
                plans[0].process(&mut line[..nx]);
                for i in 0..nx {
                    buf[(i * ny + j) * nz + k] = line[i];
                }
            }
        }
    }

    /// Retained Fourier coefficients, `[Re..., Im...]`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let grid = self.render(x)?;
        let mut buf: Vec<Complex64> = grid.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        let m = self.modes.len();
        let mut out = vec![0.0; 2 * m];
        for (slot, &idx) in self.mode_index.iter().enumerate() {
            out[slot] = buf[idx].re;
            out[m + slot] = buf[idx].im;
        }
        Ok(out)
    }

    /// Vector-Jacobian product `Jᵀ u` in coordinate space.
    pub fn vjp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let m = self.modes.len();
        if u.len() != 2 * m {
            return Err(Error::Dimension {
                expected: 2 * m,
                got: u.len(),
            });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_voxels()];
        for (slot, &idx) in self.mode_index.iter().enumerate() {
            buf[idx] += Complex64::new(u[slot], u[m + slot]);
        }
        // Σ_k Re(c_k exp(+2πi k·v/n)): the adjoint of "Re/Im of the forward DFT".
        self.transform(&mut buf, &self.inverse);
        let [_, ny, nz] = self.dims;
        let mut grad = vec![0.0; x.len()];
        for (atom, p) in x.chunks_exact(3).enumerate() {
            let k = self.kernel(atom, [p[0], p[1], p[2]])?;
            let mut g = [0.0; 3];
            for di in 0..k.values[0].len() {
                for dj in 0..k.values[1].len() {
                    let row = ((k.start[0] + di) * ny + k.start[1] + dj) * nz + k.start[2];
                    let (mut s0, mut s1) = (0.0, 0.0);
                    for (dk, cell) in buf[row..row + k.values[2].len()].iter().enumerate() {
                        s0 += cell.re * k.values[2][dk];
                        s1 += cell.re * k.derivs[2][dk];
                    }
                    let (gx, gy) = (k.values[0][di], k.values[1][dj]);
                    g[0] += k.derivs[0][di] * gy * s0;
                    g[1] += gx * k.derivs[1][dj] * s0;
                    g[2] += gx * gy * s1;
                }
            }
            grad[3 * atom..3 * atom + 3].copy_from_slice(&g);
        }
        Ok(grad)
    }

    /// Bound on `sup_x |∂F_k/∂x|` over every output entry, for `n_atoms` atoms.
    ///
    /// Per atom, entry `k` depends on the position through `Ĝ(k) exp(-2πi k·x)`
    /// with `|Ĝ(k)| = exp(-2π² w² |k|²)`, so its gradient norm is at most
    /// `2π|k| |Ĝ(k)|`; summing over atoms in quadrature gives the bound.
    pub fn entry_gradient_bound(&self, n_atoms: usize) -> f64 {
        let w2 = self.spec.atom_width.powi(2);
        let per_atom = self
            .modes
            .iter()
            .map(|&k| {
                let f = self.spec.frequency(k);
                let fk = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
                2.0 * PI * fk * (-2.0 * PI * PI * w2 * fk * fk).exp()
            })
            .fold(0.0, f64::max);
        // Allowance for grid sampling of the kernel.
        1.01 * per_atom * (n_atoms as f64).sqrt()
    }

    /// Root-mean-square over entries of the per-entry gradient norm for atoms
    /// at uncorrelated positions, where each real or imaginary part carries
    /// half of the per-atom power.
    pub fn entry_gradient_rms(&self, n_atoms: usize) -> f64 {
        if self.modes.is_empty() {
            return 0.0;
        }
        let w2 = self.spec.atom_width.powi(2);
        let mean_sq = self
            .modes
            .iter()
            .map(|&k| {
                let f = self.spec.frequency(k);
                let fk2 = f[0] * f[0] + f[1] * f[1] + f[2] * f[2];
                4.0 * PI * PI * fk2 * (-4.0 * PI * PI * w2 * fk2).exp()
            })
            .sum::<f64>()
            / self.modes.len() as f64;
        (0.5 * n_atoms as f64 * mean_sq).sqrt()
    }
}
