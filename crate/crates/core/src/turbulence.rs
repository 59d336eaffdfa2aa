//! Isotropic von Kármán turbulence by random Fourier-mode superposition.
//!
//! A field is a sum of `n_modes` plane waves whose wavenumber magnitudes
//! come from log-spaced shells between the domain scale and the grid
//! Nyquist limit, with amplitudes following the von Kármán energy spectrum
//!
//! ```text
//! E(k) ∝ k^4 / (1 + k^2 L^2)^(17/6)
//! ```
//!
//! Each mode's vector amplitude is made orthogonal to the central-difference
//! wavenumber `k̃_j = sin(k_j Δ_j) / Δ_j`, so the field evaluated on the grid
//! has zero discrete divergence mode by mode. The grid is periodic in x and
//! y and clamped in z; frozen-field sampling is trilinear.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurbulenceSpec {
    /// (Lx, Ly, Lz) in meters.
    pub domain_size: [f64; 3],
    /// (Nx, Ny, Nz) grid nodes.
    pub grid: [usize; 3],
    pub n_modes: usize,
    /// Isotropic length scale L of the energy spectrum, meters.
    pub length_scale: f64,
    /// Standard deviation of every component after rescaling, m/s.
    pub target_sigma: f64,
    pub rng_seed: u64,
    /// Optional σ(z) multiplier table as `[z, factor]` pairs sorted by z,
    /// linearly interpolated and held constant beyond its ends. Empty means
    /// a constant intensity.
    pub sigma_profile: Vec<[f64; 2]>,
}

impl Default for TurbulenceSpec {
    fn default() -> Self {
        Self {
            domain_size: [210.0, 210.0, 1010.0],
            grid: [64, 64, 128],
            n_modes: 512,
            length_scale: 100.0,
            target_sigma: 0.5,
            rng_seed: 0,
            sigma_profile: Vec::new(),
        }
    }
}

impl TurbulenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domain_size.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Config(format!(
                "domain extents must be positive, got {:?}",
                self.domain_size
            )));
        }
        if self.grid.iter().any(|n| *n < 8) {
            return Err(Error::Config(format!(
                "every grid count must be at least 8, got {:?}",
                self.grid
            )));
        }
        if self.n_modes == 0 {
            return Err(Error::Config("n_modes must be at least 1".into()));
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(Error::Config(format!(
                "length_scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.target_sigma.is_finite() && self.target_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "target_sigma must be non-negative, got {}",
                self.target_sigma
            )));
        }
        for w in self.sigma_profile.windows(2) {
            if w[1][0] <= w[0][0] {
                return Err(Error::Config("sigma_profile heights must increase".into()));
            }
        }
        if self
            .sigma_profile
            .iter()
            .any(|[z, f]| !z.is_finite() || !f.is_finite() || *f < 0.0)
        {
            return Err(Error::Config(
                "sigma_profile entries must be finite with non-negative factors".into(),
            ));
        }
        Ok(())
    }

    /// Node spacing (Δx, Δy, Δz). x and y are periodic, z spans [0, Lz].
    pub fn spacing(&self) -> [f64; 3] {
        [
            self.domain_size[0] / self.grid[0] as f64,
            self.domain_size[1] / self.grid[1] as f64,
            self.domain_size[2] / (self.grid[2] - 1) as f64,
        ]
    }

    /// Smallest and largest sampled wavenumber magnitudes, rad/m.
    pub fn wavenumber_range(&self) -> (f64, f64) {
        let l_max = self.domain_size.iter().cloned().fold(f64::MIN, f64::max);
        let l_min = self.domain_size.iter().cloned().fold(f64::MAX, f64::min);
        let n_min = *self.grid.iter().min().expect("three axes") as f64;
        (2.0 * PI / l_max, PI * n_min / l_min)
    }

    fn profile_factor(&self, z: f64) -> f64 {
        let p = &self.sigma_profile;
        match p.len() {
            0 => 1.0,
            1 => p[0][1],
            _ => {
                if z <= p[0][0] {
                    return p[0][1];
                }
                if z >= p[p.len() - 1][0] {
                    return p[p.len() - 1][1];
                }
                let i = p.partition_point(|e| e[0] <= z) - 1;
                let (z0, f0) = (p[i][0], p[i][1]);
                let (z1, f1) = (p[i + 1][0], p[i + 1][1]);
                f0 + (f1 - f0) * (z - z0) / (z1 - z0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    U,
    V,
    W,
}

/// Frequency-domain von Kármán PSD for a frozen field crossed at speed `u0`.
pub fn von_karman_psd(
    component: Component,
    omega: f64,
    sigma: f64,
    length: f64,
    u0: f64,
) -> Result<f64> {
    if !(u0 > 0.0) || !(length > 0.0) {
        return Err(Error::Domain(format!(
            "von Kármán PSD needs u0 > 0 and length > 0 (u0 = {u0}, L = {length})"
        )));
    }
    if !(sigma >= 0.0) || !(omega >= 0.0) {
        return Err(Error::Domain(format!(
            "von Kármán PSD needs sigma >= 0 and omega >= 0 (sigma = {sigma}, omega = {omega})"
        )));
    }
    let x = 1.339 * length * omega / u0;
    let x2 = x * x;
    let base = sigma * sigma * length / (PI * u0);
    Ok(match component {
        Component::U => 2.0 * base * (1.0 + x2).powf(-5.0 / 6.0),
        Component::V | Component::W => {
            base * (1.0 + 8.0 / 3.0 * x2) / (1.0 + x2).powf(11.0 / 6.0)
        }
    })
}

/// `k L` at the maximum of the energy spectrum, `sqrt(12/5)`.
pub const PEAK_KL: f64 = 1.549_193_338_482_966_7;

/// Unnormalized von Kármán energy spectrum shape.
pub fn energy_spectrum(k: f64, length: f64) -> f64 {
    let kl2 = (k * length).powi(2);
    k.powi(4) / (1.0 + kl2).powf(17.0 / 6.0)
}

/// One circularly polarized plane wave of the superposition,
/// `amplitude_cos * cos(k·x + phase) + amplitude_sin * sin(k·x + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierMode {
    pub wavevector: [f64; 3],
    pub amplitude_cos: [f64; 3],
    pub amplitude_sin: [f64; 3],
    pub phase: f64,
}

impl FourierMode {
    /// Wavevector as seen by second-order central differences on a grid
    /// with the given spacing.
    pub fn grid_wavevector(&self, spacing: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|j| modified_wavenumber(self.wavevector[j], spacing[j]))
    }
}

fn modified_wavenumber(k: f64, h: f64) -> f64 {
    (k * h).sin() / h
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurbulentField {
    pub spec: TurbulenceSpec,
    /// Component grids, x fastest: `i + Nx * (j + Ny * k)`.
    pub grid_u: Vec<f64>,
    pub grid_v: Vec<f64>,
    pub grid_w: Vec<f64>,
    /// Standard deviation of the raw superposition before normalization.
    /// Unknown for fields read back from disk.
    pub sigma0: Option<f64>,
    /// Modes that built the field (empty for fields read from disk).
    pub modes: Vec<FourierMode>,
}

fn unit_on_sphere(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let cos_t: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    [sin_t * phi.cos(), sin_t * phi.sin(), cos_t]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Component of `a` orthogonal to `dir`, or `None` when `a` is nearly
/// parallel to it.
fn reject(a: [f64; 3], dir: [f64; 3]) -> Option<[f64; 3]> {
    let d2 = dot(dir, dir);
    let along = dot(a, dir) / d2;
    let r = [a[0] - along * dir[0], a[1] - along * dir[1], a[2] - along * dir[2]];
    (norm(r) > 1e-3 * norm(a)).then_some(r)
}

/// Random right-handed orthonormal frame, each axis uniform on the sphere.
fn random_frame(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let e1 = unit_on_sphere(rng);
    let e2 = loop {
        if let Some(r) = reject(unit_on_sphere(rng), e1) {
            break unit(r);
        }
    };
    [e1, e2, cross(e1, e2)]
}

/// Draws the mode set for `spec`; deterministic in `rng_seed`.
///
/// Each log-spaced shell holds three modes whose wavevectors form a random
/// orthonormal frame. Circular polarization of each mode then gives every
/// velocity component the same share of the shell's energy.
pub fn draw_modes(spec: &TurbulenceSpec) -> Result<Vec<FourierMode>> {
    spec.validate()?;
    let (k_min, k_max) = spec.wavenumber_range();
    if k_max <= k_min {
        return Err(Error::Config(format!(
            "grid {:?} cannot resolve wavenumbers above the domain scale (k_min = {k_min:.4}, Nyquist = {k_max:.4})",
            spec.grid
        )));
    }
    let k_peak = PEAK_KL / spec.length_scale;
    if k_peak >= k_max || k_peak <= k_min {
        return Err(Error::Config(format!(
            "energy-containing wavenumber {k_peak:.4} rad/m of length_scale {} m lies outside the resolved band [{k_min:.4}, {k_max:.4}]",
            spec.length_scale
        )));
    }
    let spacing = spec.spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let ratio = (k_max / k_min).ln();
    let n = spec.n_modes;
    let shells = n.div_ceil(3);
    let mut modes = Vec::with_capacity(n);
    for shell in 0..shells {
        let lo = k_min * (ratio * shell as f64 / shells as f64).exp();
        let hi = k_min * (ratio * (shell + 1) as f64 / shells as f64).exp();
        let k = (rng.random_range(lo.ln()..hi.ln()) as f64).exp();
        let magnitude = (energy_spectrum(k, spec.length_scale) * (hi - lo) / 3.0).sqrt();
        let frame = random_frame(&mut rng);
        for axis in 0..3 {
            if modes.len() == n {
                break;
            }
            let dir = frame[axis];
            let wavevector = [k * dir[0], k * dir[1], k * dir[2]];
            let phase = rng.random_range(0.0..2.0 * PI);
            let kt: [f64; 3] =
                std::array::from_fn(|j| modified_wavenumber(wavevector[j], spacing[j]));
            let normal = if norm(kt) > 1e-9 * k { kt } else { wavevector };
            let first = reject(frame[(axis + 1) % 3], normal)
                .or_else(|| reject(frame[(axis + 2) % 3], normal))
                .expect("two frame axes cannot both be parallel to one vector");
            let a = unit(first);
            let b = unit(cross(normal, a));
            modes.push(FourierMode {
                wavevector,
                amplitude_cos: a.map(|v| magnitude * v),
                amplitude_sin: b.map(|v| magnitude * v),
                phase,
            });
        }
    }
    Ok(modes)
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Grid values of one velocity component for each of three mode groups.
type GroupGrids = [[Vec<f64>; 3]; 3];

/// Evaluates the mode superposition on every grid node, split into three
/// groups. Mode `m` enters group `j` with weight `k̂_j²`, so the groups sum
/// to the full field and each group is itself a sum of solenoidal modes.
fn superpose(spec: &TurbulenceSpec, modes: &[FourierMode]) -> GroupGrids {
    let [nx, ny, nz] = spec.grid;
    let [dx, dy, dz] = spec.spacing();
    let axis_phasors = |n: usize, h: f64, axis: usize| -> Vec<Vec<(f64, f64)>> {
        modes
            .iter()
            .map(|m| {
                (0..n)
                    .map(|i| {
                        let a = m.wavevector[axis] * i as f64 * h;
                        (a.cos(), a.sin())
                    })
                    .collect()
            })
            .collect()
    };
    let px = axis_phasors(nx, dx, 0);
    let py = axis_phasors(ny, dy, 1);
    let pz = axis_phasors(nz, dz, 2);
    let px_re: Vec<Vec<f64>> = px.iter().map(|p| p.iter().map(|c| c.0).collect()).collect();
    let px_im: Vec<Vec<f64>> = px.iter().map(|p| p.iter().map(|c| c.1).collect()).collect();
    // Per mode and group: cos and sin amplitudes of u, v, w.
    let weighted: Vec<[[f64; 6]; 3]> = modes
        .iter()
        .map(|m| {
            let k2 = dot(m.wavevector, m.wavevector);
            std::array::from_fn(|j| {
                let w = m.wavevector[j] * m.wavevector[j] / k2;
                let (a, b) = (m.amplitude_cos, m.amplitude_sin);
                [a[0], a[1], a[2], b[0], b[1], b[2]].map(|v| v * w)
            })
        })
        .collect();

    let slab = nx * ny;
    let slices: Vec<[[Vec<f64>; 3]; 3]> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut out: [[Vec<f64>; 3]; 3] =
                std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; slab]));
            let mut re = vec![0.0; nx];
            let mut im = vec![0.0; nx];
            for j in 0..ny {
                let row = j * nx;
                for (m, mode) in modes.iter().enumerate() {
                    // exp(i (ky y + kz z + phase)), then times the x phasor.
                    let (cy, sy) = py[m][j];
                    let (cz, sz) = pz[m][k];
                    let (cp, sp) = (mode.phase.cos(), mode.phase.sin());
                    let (c1, s1) = (cy * cz - sy * sz, cy * sz + sy * cz);
                    let (cr, ci) = (c1 * cp - s1 * sp, c1 * sp + s1 * cp);
                    let (xr, xi) = (&px_re[m], &px_im[m]);
                    for i in 0..nx {
                        re[i] = xr[i] * cr - xi[i] * ci;
                        im[i] = xr[i] * ci + xi[i] * cr;
                    }
                    for (group, amp) in out.iter_mut().zip(&weighted[m]) {
                        for (c, grid) in group.iter_mut().enumerate() {
                            let (ac, bc) = (amp[c], amp[c + 3]);
                            let dst = &mut grid[row..row + nx];
                            for i in 0..nx {
                                dst[i] += ac * re[i] + bc * im[i];
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut out: GroupGrids =
        std::array::from_fn(|_| std::array::from_fn(|_| Vec::with_capacity(slab * nz)));
    for s in slices {
        for (dst, src) in out.iter_mut().zip(s) {
            for (d, v) in dst.iter_mut().zip(src) {
                d.extend_from_slice(&v);
            }
        }
    }
    out
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n
}

/// Finds non-negative group weights `λ` with `λᵀ C_c λ = target²` for every
/// component `c`, starting from the isotropic guess. Returns `None` when
/// Newton's method does not settle on an admissible solution.
fn balance_groups(cov: &[Matrix3<f64>; 3], start: f64, target: f64) -> Option<Vector3<f64>> {
    let mut lambda = Vector3::repeat(start);
    let t2 = target * target;
    for _ in 0..50 {
        let f = Vector3::from_fn(|c, _| lambda.dot(&(cov[c] * lambda)) - t2);
        if f.amax() <= 1e-13 * t2 {
            return lambda.iter().all(|l| *l > 0.0).then_some(lambda);
        }
        let jac = Matrix3::from_fn(|c, j| 2.0 * (cov[c] * lambda)[j]);
        let step = jac.try_inverse()? * f;
        lambda -= step;
        if !lambda.iter().all(|l| l.is_finite()) {
            return None;
        }
    }
    None
}

/// Generates a zero-mean, discretely divergence-free fluctuation volume
/// with per-component standard deviation `target_sigma`.
///
/// The raw superposition has standard deviation `sigma0`. Rather than
/// multiplying each velocity component by its own factor, which would
/// reintroduce divergence, the three mode groups of [`superpose`] are
/// reweighted so that every component reaches `target_sigma` exactly. When
/// no admissible weights exist the per-component factors are used instead.
pub fn synthesize_field(spec: &TurbulenceSpec) -> Result<TurbulentField> {
    let modes = draw_modes(spec)?;
    let groups = superpose(spec, &modes);
    let n = groups[0][0].len();

    let raw: [Vec<f64>; 3] = std::array::from_fn(|c| {
        (0..n)
            .map(|i| groups[0][c][i] + groups[1][c][i] + groups[2][c][i])
            .collect()
    });
    let sigma0 = (raw.iter().map(|g| mean_and_std(g).1.powi(2)).sum::<f64>() / 3.0).sqrt();
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::Numerical(format!(
            "raw mode superposition has degenerate spread {sigma0}"
        )));
    }

    let cov: [Matrix3<f64>; 3] = std::array::from_fn(|c| {
        Matrix3::from_fn(|a, b| covariance(&groups[a][c], &groups[b][c]))
    });
    let target = spec.target_sigma;
    let mut grids: [Vec<f64>; 3] = match balance_groups(&cov, target / sigma0, target) {
        Some(lambda) if target > 0.0 => std::array::from_fn(|c| {
            (0..n)
                .map(|i| {
                    lambda[0] * groups[0][c][i]
                        + lambda[1] * groups[1][c][i]
                        + lambda[2] * groups[2][c][i]
                })
                .collect()
        }),
        _ => {
            if target > 0.0 {
                log::warn!("mode-group balancing failed; scaling components independently");
            }
            raw.map(|g| {
                let s = mean_and_std(&g).1;
                let scale = if s > 0.0 { target / s } else { 0.0 };
                g.into_iter().map(|v| v * scale).collect()
            })
        }
    };
    for g in grids.iter_mut() {
        let (mean, _) = mean_and_std(g);
        g.iter_mut().for_each(|x| *x -= mean);
    }
    if !spec.sigma_profile.is_empty() {
        let [nx, ny, nz] = spec.grid;
        let dz = spec.spacing()[2];
        for k in 0..nz {
            let f = spec.profile_factor(k as f64 * dz);
            for g in grids.iter_mut() {
                g[k * nx * ny..(k + 1) * nx * ny]
                    .iter_mut()
                    .for_each(|x| *x *= f);
            }
        }
    }
    let [grid_u, grid_v, grid_w] = grids;
    Ok(TurbulentField {
        spec: spec.clone(),
        grid_u,
        grid_v,
        grid_w,
        sigma0: Some(sigma0),
        modes,
    })
}

impl TurbulentField {
    /// A field that is identically zero (turbulence switched off).
    pub fn zeros(spec: &TurbulenceSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.grid.iter().product();
        let mut spec = spec.clone();
        spec.target_sigma = 0.0;
        Ok(Self {
            spec,
            grid_u: vec![0.0; n],
            grid_v: vec![0.0; n],
            grid_w: vec![0.0; n],
            sigma0: None,
            modes: Vec::new(),
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.spec.grid;
        i + nx * (j + ny * k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = self.index(i, j, k);
        [self.grid_u[idx], self.grid_v[idx], self.grid_w[idx]]
    }

    /// Position of node (i, j, k) in meters.
    pub fn node_position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let [dx, dy, dz] = self.spec.spacing();
        [i as f64 * dx, j as f64 * dy, k as f64 * dz]
    }

    pub fn grids(&self) -> [&[f64]; 3] {
        [&self.grid_u, &self.grid_v, &self.grid_w]
    }

    /// Trilinear sample at `position - shift`, periodic in x/y and clamped
    /// in z.
    pub fn sample(&self, position: [f64; 3], shift: [f64; 3]) -> Result<[f64; 3]> {
        if position.iter().chain(shift.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite sample request at {position:?} shifted by {shift:?}"
            )));
        }
        let [nx, ny, nz] = self.spec.grid;
        let [dx, dy, dz] = self.spec.spacing();
        let (i0, fx) = periodic_cell((position[0] - shift[0]) / dx, nx);
        let (j0, fy) = periodic_cell((position[1] - shift[1]) / dy, ny);
        let zc = ((position[2] - shift[2]) / dz).clamp(0.0, (nz - 1) as f64);
        let zc = snap(zc);
        let k0 = (zc.floor() as usize).min(nz - 2);
        let fz = zc - k0 as f64;
        let i1 = (i0 + 1) % nx;
        let j1 = (j0 + 1) % ny;
        let k1 = k0 + 1;

        let mut out = [0.0; 3];
        for (c, grid) in self.grids().iter().enumerate() {
            let at = |i, j, k| grid[self.index(i, j, k)];
            let c00 = at(i0, j0, k0) * (1.0 - fx) + at(i1, j0, k0) * fx;
            let c10 = at(i0, j1, k0) * (1.0 - fx) + at(i1, j1, k0) * fx;
            let c01 = at(i0, j0, k1) * (1.0 - fx) + at(i1, j0, k1) * fx;
            let c11 = at(i0, j1, k1) * (1.0 - fx) + at(i1, j1, k1) * fx;
            let c0 = c00 * (1.0 - fy) + c10 * fy;
            let c1 = c01 * (1.0 - fy) + c11 * fy;
            out[c] = c0 * (1.0 - fz) + c1 * fz;
        }
        Ok(out)
    }

    /// Writes the little-endian grid format: `Nx, Ny, Nz` as u32, `Lx, Ly,
    /// Lz, sigma` as f64, then the u, v and w grids as f32, x fastest.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in self.spec.grid {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for l in self.spec.domain_size {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&self.spec.target_sigma.to_le_bytes())?;
        for grid in self.grids() {
            let mut buf = Vec::with_capacity(grid.len() * 4);
            for v in grid {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated field file: {e}"));
        let mut u32buf = [0u8; 4];
        let mut grid = [0usize; 3];
        for n in grid.iter_mut() {
            r.read_exact(&mut u32buf).map_err(fmt)?;
            *n = u32::from_le_bytes(u32buf) as usize;
        }
        let mut f64buf = [0u8; 8];
        let mut domain_size = [0.0; 3];
        for l in domain_size.iter_mut() {
            r.read_exact(&mut f64buf).map_err(fmt)?;
            *l = f64::from_le_bytes(f64buf);
        }
        r.read_exact(&mut f64buf).map_err(fmt)?;
        let sigma = f64::from_le_bytes(f64buf);
        let spec = TurbulenceSpec {
            domain_size,
            grid,
            target_sigma: sigma,
            ..TurbulenceSpec::default()
        };
        spec.validate()?;
        let n: usize = grid.iter().product();
        let mut read_grid = || -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(fmt)?;
            Ok(bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect())
        };
        let grid_u = read_grid()?;
        let grid_v = read_grid()?;
        let grid_w = read_grid()?;
        Ok(Self {
            spec,
            grid_u,
            grid_v,
            grid_w,
            sigma0: None,
            modes: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(std::io::BufReader::new(file))
    }

    /// Central-difference divergence and velocity-gradient norm over the
    /// interior nodes, as `(rms divergence, rms |∇u|)`.
    pub fn divergence_stats(&self) -> (f64, f64) {
        let [nx, ny, nz] = self.spec.grid;
        let [dx, dy, dz] = self.spec.spacing();
        let h = [dx, dy, dz];
        let grids = self.grids();
        let mut div2 = 0.0;
        let mut grad2 = 0.0;
        let mut count = 0usize;
        for k in 1..nz - 1 {
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    let mut div = 0.0;
                    for (c, g) in grids.iter().enumerate() {
                        let d = [
                            (g[self.index(i + 1, j, k)] - g[self.index(i - 1, j, k)]) / (2.0 * h[0]),
                            (g[self.index(i, j + 1, k)] - g[self.index(i, j - 1, k)]) / (2.0 * h[1]),
                            (g[self.index(i, j, k + 1)] - g[self.index(i, j, k - 1)]) / (2.0 * h[2]),
                        ];
                        div += d[c];
                        grad2 += d.iter().map(|x| x * x).sum::<f64>();
                    }
                    div2 += div * div;
                    count += 1;
                }
            }
        }
        let n = count as f64;
        ((div2 / n).sqrt(), (grad2 / n).sqrt())
    }
}

/// Snaps values within 1e-9 of an integer so exact node queries do not fall
/// into the neighbouring cell through rounding.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

fn periodic_cell(x: f64, n: usize) -> (usize, f64) {
    let x = snap(x.rem_euclid(n as f64));
    let x = if x >= n as f64 { 0.0 } else { x };
    let i = (x.floor() as usize).min(n - 1);
    (i, x - i as f64)
}
