//! Fourier representation of real fields on the torus `[0, 2π]²`.
//!
//! Coefficients are normalized so that `f(x) = Σ_k f̂(k) e^{ik·x}`; with that
//! convention `∫|f|² = (2π)² Σ_k |f̂(k)|²`. Storage is the full complex
//! spectrum (row-major, `index = j·nx + i` with `i` along x), so Hermitian
//! symmetry is carried implicitly by only ever building fields from real
//! samples or from real-even / imaginary-odd multipliers.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::noise::WienerPath;
use crate::{Error, Result};

/// Area of the torus.
pub const AREA: f64 = 4.0 * PI * PI;

pub struct Grid {
    nx: usize,
    ny: usize,
    dealias_fraction: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    // first-derivative wavenumbers; the Nyquist entry is zeroed so odd
    // multipliers keep real fields real
    dkx: Vec<f64>,
    dky: Vec<f64>,
    k2: Vec<f64>,
    mask: Vec<bool>,
    fx: Arc<dyn Fft<f64>>,
    fx_inv: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    fy_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("dealias_fraction", &self.dealias_fraction)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.dealias_fraction == other.dealias_fraction
    }
}

fn wavenumbers(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 })
        .collect()
}

/// Build a grid. Resolutions must be even and at least 8.
pub fn make_grid(nx: usize, ny: usize, dealias_fraction: f64) -> Result<Arc<Grid>> {
    Grid::new(nx, ny, dealias_fraction).map(Arc::new)
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dealias_fraction: f64) -> Result<Grid> {
        if !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
            return Err(Error::Sizing(format!("odd resolution {nx}x{ny}")));
        }
        if nx < 8 || ny < 8 {
            return Err(Error::Sizing(format!("resolution {nx}x{ny} below 8")));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::Sizing(format!("dealias fraction {dealias_fraction} outside (0,1]")));
        }
        let kx = wavenumbers(nx);
        let ky = wavenumbers(ny);
        let nyq = |k: &Vec<f64>, n: usize| {
            let mut d = k.clone();
            d[n / 2] = 0.0;
            d
        };
        let dkx = nyq(&kx, nx);
        let dky = nyq(&ky, ny);
        let mut k2 = Vec::with_capacity(nx * ny);
        let mut mask = Vec::with_capacity(nx * ny);
        let hx = (nx / 2) as f64;
        let hy = (ny / 2) as f64;
        // small slack so fractions like 2/3 given in floating point keep |k| = n/3 modes
        let cut = dealias_fraction + 1e-12;
        for j in 0..ny {
            for i in 0..nx {
                k2.push(kx[i] * kx[i] + ky[j] * ky[j]);
                let r = (kx[i].abs() / hx).max(ky[j].abs() / hy);
                mask.push(r <= cut);
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Grid {
            nx,
            ny,
            dealias_fraction,
            fx: planner.plan_fft_forward(nx),
            fx_inv: planner.plan_fft_inverse(nx),
            fy: planner.plan_fft_forward(ny),
            fy_inv: planner.plan_fft_inverse(ny),
            kx,
            ky,
            dkx,
            dky,
            k2,
            mask,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }
    /// Wavevector of flattened index `idx`.
    pub fn k(&self, idx: usize) -> (f64, f64) {
        (self.kx[idx % self.nx], self.ky[idx / self.nx])
    }
    /// Wavevector used for first derivatives (Nyquist components zeroed).
    pub fn k_deriv(&self, idx: usize) -> (f64, f64) {
        (self.dkx[idx % self.nx], self.dky[idx / self.nx])
    }
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }
    pub fn retained(&self, idx: usize) -> bool {
        self.mask[idx]
    }
    /// Flattened index of wavevector `(kx, ky)`.
    pub fn index_of(&self, kx: i64, ky: i64) -> usize {
        let i = kx.rem_euclid(self.nx as i64) as usize;
        let j = ky.rem_euclid(self.ny as i64) as usize;
        j * self.nx + i
    }
    /// Real-space point of sample `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (2.0 * PI * i as f64 / self.nx as f64, 2.0 * PI * j as f64 / self.ny as f64)
    }
    /// Quadrature weight of one real-space sample.
    pub fn cell_area(&self) -> f64 {
        AREA / self.len() as f64
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (nx, ny) = (self.nx, self.ny);
        if inverse {
            self.fx_inv.process(buf);
        } else {
            self.fx.process(buf);
        }
        let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                t[i * ny + j] = buf[j * nx + i];
            }
        }
        if inverse {
            self.fy_inv.process(&mut t);
        } else {
            self.fy.process(&mut t);
        }
        for i in 0..nx {
            for j in 0..ny {
                buf[j * nx + i] = t[i * ny + j];
            }
        }
    }

    /// Real samples to normalized coefficients.
    pub fn forward(&self, samples: &[f64]) -> Result<Vec<Complex64>> {
        if samples.len() != self.len() {
            return Err(Error::Shape(format!("{} samples for a {}x{} grid", samples.len(), self.nx, self.ny)));
        }
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft2(&mut buf, false);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= s);
        Ok(buf)
    }

    /// Normalized coefficients to real samples (imaginary round-off dropped).
    pub fn backward(&self, coeffs: &[Complex64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.len() {
            return Err(Error::Shape(format!("{} coefficients for a {}x{} grid", coeffs.len(), self.nx, self.ny)));
        }
        let mut buf = coeffs.to_vec();
        self.fft2(&mut buf, true);
        Ok(buf.into_iter().map(|c| c.re).collect())
    }

    /// Backward transforms of Hermitian spectra, two per complex FFT.
    pub fn backward_batch(&self, coeffs: &[&[Complex64]]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(coeffs.len());
        for pair in coeffs.chunks(2) {
            if pair.len() == 1 {
                out.push(self.backward(pair[0]).expect("grid-sized"));
                continue;
            }
            let i = Complex64::new(0.0, 1.0);
            let mut buf: Vec<Complex64> = pair[0].iter().zip(pair[1]).map(|(&a, &b)| a + i * b).collect();
            self.fft2(&mut buf, true);
            out.push(buf.iter().map(|c| c.re).collect());
            out.push(buf.iter().map(|c| c.im).collect());
        }
        out
    }

    /// Forward transforms of real samples, two per complex FFT.
    pub fn forward_batch(&self, samples: &[&[f64]]) -> Vec<Vec<Complex64>> {
        let (nx, ny) = (self.nx, self.ny);
        let s = 1.0 / self.len() as f64;
        let mut out = Vec::with_capacity(samples.len());
        for pair in samples.chunks(2) {
            if pair.len() == 1 {
                out.push(self.forward(pair[0]).expect("grid-sized"));
                continue;
            }
            let mut buf: Vec<Complex64> = pair[0].iter().zip(pair[1]).map(|(&a, &b)| Complex64::new(a, b)).collect();
            self.fft2(&mut buf, false);
            let mut a = vec![Complex64::new(0.0, 0.0); nx * ny];
            let mut b = vec![Complex64::new(0.0, 0.0); nx * ny];
            for j in 0..ny {
                let jm = (ny - j) % ny;
                for i in 0..nx {
                    let im = (nx - i) % nx;
                    let c = buf[j * nx + i];
                    let cm = buf[jm * nx + im].conj();
                    a[j * nx + i] = (c + cm) * (0.5 * s);
                    let d = (c - cm) * (0.5 * s);
                    b[j * nx + i] = Complex64::new(d.im, -d.re);
                }
            }
            out.push(a);
            out.push(b);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Scalar,
    Velocity,
    Director,
}

impl FieldKind {
    pub fn ncomp(self) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Velocity => 2,
            FieldKind::Director => 3,
        }
    }
}

/// Direction argument of [`spectral_transform`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Either side of a transform.
#[derive(Clone, Debug)]
pub enum Transformed {
    Spectral(SpectralField),
    Samples(Vec<Vec<f64>>),
}

/// Forward: real samples (one array per component) to a field of `kind`.
/// Backward: the field's samples. Exactly one of `samples`/`field` is read.
pub fn spectral_transform(
    grid: &Arc<Grid>,
    kind: FieldKind,
    samples: Option<&[Vec<f64>]>,
    field: Option<&SpectralField>,
    direction: Direction,
) -> Result<Transformed> {
    match direction {
        Direction::Forward => {
            let s = samples.ok_or_else(|| Error::Missing("samples for forward transform".into()))?;
            Ok(Transformed::Spectral(SpectralField::from_real(grid, kind, s)?))
        }
        Direction::Backward => {
            let f = field.ok_or_else(|| Error::Missing("field for backward transform".into()))?;
            Ok(Transformed::Samples(f.to_real()))
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<Grid>,
    kind: FieldKind,
    comps: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>, kind: FieldKind) -> Self {
        let comps = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; kind.ncomp()];
        SpectralField { grid: grid.clone(), kind, comps }
    }

    pub fn from_real(grid: &Arc<Grid>, kind: FieldKind, samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() != kind.ncomp() {
            return Err(Error::Shape(format!("{} components for {:?}", samples.len(), kind)));
        }
        let comps = samples.iter().map(|s| grid.forward(s)).collect::<Result<Vec<_>>>()?;
        Ok(SpectralField { grid: grid.clone(), kind, comps })
    }

    /// Sample `f(x, y)` on the grid; only the first `ncomp` entries are used.
    pub fn from_fn(grid: &Arc<Grid>, kind: FieldKind, f: impl Fn(f64, f64) -> [f64; 3]) -> Self {
        let mut samples = vec![vec![0.0; grid.len()]; kind.ncomp()];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.point(i, j);
                let val = f(x, y);
                for (c, s) in samples.iter_mut().enumerate() {
                    s[j * grid.nx + i] = val[c];
                }
            }
        }
        Self::from_real(grid, kind, &samples).expect("shape is consistent by construction")
    }

    pub fn from_coeffs(grid: &Arc<Grid>, kind: FieldKind, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.len() != kind.ncomp() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Shape("coefficient arrays do not match grid/kind".into()));
        }
        Ok(SpectralField { grid: grid.clone(), kind, comps })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn kind(&self) -> FieldKind {
        self.kind
    }
    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }
    pub fn comp(&self, c: usize) -> &[Complex64] {
        &self.comps[c]
    }
    pub fn comp_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.comps[c]
    }
    pub fn comps(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    /// Same coefficients under another tag with the same component count.
    pub fn retag(mut self, kind: FieldKind) -> Result<Self> {
        if kind.ncomp() != self.ncomp() {
            return Err(Error::Shape(format!("cannot retag {:?} as {:?}", self.kind, kind)));
        }
        self.kind = kind;
        Ok(self)
    }

    pub fn to_real(&self) -> Vec<Vec<f64>> {
        self.comps.iter().map(|c| self.grid.backward(c).expect("grid-sized")).collect()
    }

    pub fn to_real_comp(&self, c: usize) -> Vec<f64> {
        self.grid.backward(&self.comps[c]).expect("grid-sized")
    }

    /// Spectral coefficients of `∂_axis` of component `c` (axis 0 = x).
    pub fn deriv_coeffs(&self, c: usize, axis: usize) -> Vec<Complex64> {
        let g = &self.grid;
        self.comps[c]
            .iter()
            .enumerate()
            .map(|(idx, &z)| {
                let (kx, ky) = g.k_deriv(idx);
                let k = if axis == 0 { kx } else { ky };
                Complex64::new(0.0, k) * z
            })
            .collect()
    }

    /// Real samples of `∂_axis` of component `c`.
    pub fn deriv_real(&self, c: usize, axis: usize) -> Vec<f64> {
        self.grid.backward(&self.deriv_coeffs(c, axis)).expect("grid-sized")
    }

    pub fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        if *self.grid != *other.grid || self.ncomp() != other.ncomp() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.kind, other.kind)));
        }
        Ok(())
    }

    fn zip_with(&self, other: &SpectralField, f: impl Fn(Complex64, Complex64) -> Complex64) -> SpectralField {
        self.check_compatible(other).expect("incompatible fields");
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        SpectralField { grid: self.grid.clone(), kind: self.kind, comps }
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        self.zip_with(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        self.zip_with(other, |a, b| a - b)
    }
    pub fn scale(&self, s: f64) -> SpectralField {
        self.map_coeffs(|_, z| z * s)
    }
    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        self.check_compatible(other).expect("incompatible fields");
        for (x, y) in self.comps.iter_mut().zip(&other.comps) {
            for (p, q) in x.iter_mut().zip(y) {
                *p += q * a;
            }
        }
    }

    /// Apply `f(flat_index, coefficient)` to every coefficient of every component.
    pub fn map_coeffs(&self, f: impl Fn(usize, Complex64) -> Complex64) -> SpectralField {
        let comps = self
            .comps
            .iter()
            .map(|c| c.iter().enumerate().map(|(i, &z)| f(i, z)).collect())
            .collect();
        SpectralField { grid: self.grid.clone(), kind: self.kind, comps }
    }

    /// Multiply each mode by the real multiplier `m(|k|²)`.
    pub fn multiply(&self, m: impl Fn(f64) -> f64) -> SpectralField {
        let k2 = self.grid.k2();
        self.map_coeffs(|i, z| z * m(k2[i]))
    }

    /// `⟨f, g⟩_{L²}` summed over components.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.check_compatible(other).expect("incompatible fields");
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (x, y) in a.iter().zip(b) {
                s += x.re * y.re + x.im * y.im;
            }
        }
        AREA * s
    }

    /// `Σ_k w(|k|²) |f̂(k)|²` times the torus area.
    pub fn weighted_sq(&self, w: impl Fn(f64) -> f64) -> f64 {
        let k2 = self.grid.k2();
        let mut s = 0.0;
        for c in &self.comps {
            for (i, z) in c.iter().enumerate() {
                let a = z.norm_sqr();
                if a != 0.0 {
                    s += w(k2[i]) * a;
                }
            }
        }
        AREA * s
    }

    pub fn l2_sq(&self) -> f64 {
        self.weighted_sq(|_| 1.0)
    }
    pub fn l2(&self) -> f64 {
        self.l2_sq().sqrt()
    }
    /// `|∇f|²_{L²}`.
    pub fn grad_sq(&self) -> f64 {
        self.weighted_sq(|k2| k2)
    }
    /// Shifted `‖f‖²_{H^s}` with multiplier `(1+|k|²)^s`.
    pub fn hs_sq(&self, s: f64) -> f64 {
        match s {
            x if x == 0.0 => self.l2_sq(),
            x if x == 1.0 => self.weighted_sq(|k2| 1.0 + k2),
            x if x == 2.0 => self.weighted_sq(|k2| (1.0 + k2) * (1.0 + k2)),
            x if x == 3.0 => self.weighted_sq(|k2| (1.0 + k2).powi(3)),
            _ => self.weighted_sq(|k2| (1.0 + k2).powf(s)),
        }
    }

    /// Zero all modes outside the dealiasing mask.
    pub fn dealias(&self) -> SpectralField {
        let g = self.grid.clone();
        self.map_coeffs(|i, z| if g.retained(i) { z } else { Complex64::new(0.0, 0.0) })
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flat_map(|c| c.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        self.sub(other).max_abs()
    }

    /// Spectral divergence `i k·û` of a two-component field, using the full
    /// wavevector so Nyquist modes are tested too.
    pub fn divergence(&self) -> SpectralField {
        let g = &self.grid;
        let mut out = vec![Complex64::new(0.0, 0.0); g.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let (kx, ky) = g.k(idx);
            *o = Complex64::new(0.0, 1.0) * (self.comps[0][idx] * kx + self.comps[1][idx] * ky);
        }
        SpectralField { grid: self.grid.clone(), kind: FieldKind::Scalar, comps: vec![out] }
    }

    /// Bitwise equality of coefficients and tag.
    pub fn bit_eq(&self, other: &SpectralField) -> bool {
        self.kind == other.kind
            && *self.grid == *other.grid
            && self.comps.iter().zip(&other.comps).all(|(a, b)| {
                a.iter().zip(b).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
            })
    }
}

/// Order and shift of a Sobolev norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolevLevel {
    pub s: f64,
    pub shifted: bool,
}

impl SobolevLevel {
    pub fn shifted(s: f64) -> Self {
        SobolevLevel { s, shifted: true }
    }
    pub fn seminorm(s: f64) -> Self {
        SobolevLevel { s, shifted: false }
    }
}

/// `(Σ_k w(k)^s |f̂(k)|²)^{1/2}` scaled to the torus, with `w = 1+|k|²` when
/// shifted and `w = |k|²` otherwise. Unshifted levels with `s < 0` skip `k = 0`.
pub fn sobolev_norm(f: &SpectralField, level: SobolevLevel) -> Result<f64> {
    if !(-2.0..=4.0).contains(&level.s) {
        return Err(Error::Range(format!("Sobolev order {} outside [-2, 4]", level.s)));
    }
    let s = level.s;
    let v = if level.shifted {
        f.hs_sq(s)
    } else if s == 0.0 {
        f.l2_sq()
    } else {
        f.weighted_sq(|k2| if k2 == 0.0 { 0.0 } else { k2.powf(s) })
    };
    Ok(v.sqrt())
}

/// The pair `y = (v, n)` at time `t`.
#[derive(Clone, Debug)]
pub struct SystemState {
    pub v: SpectralField,
    pub n: SpectralField,
    pub t: f64,
}

impl SystemState {
    pub fn new(v: SpectralField, n: SpectralField, t: f64) -> Result<Self> {
        if *v.grid() != *n.grid() {
            return Err(Error::Shape("velocity and director on different grids".into()));
        }
        if v.ncomp() != 2 || n.ncomp() != 3 {
            return Err(Error::Shape("state needs a 2-component v and 3-component n".into()));
        }
        Ok(SystemState { v, n, t })
    }

    pub fn zeros(grid: &Arc<Grid>, t: f64) -> Self {
        SystemState {
            v: SpectralField::zeros(grid, FieldKind::Velocity),
            n: SpectralField::zeros(grid, FieldKind::Director),
            t,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.v.grid()
    }

    /// `‖y‖²_𝓥 = ‖v‖²_{H¹} + ‖n‖²_{H²}` (shifted).
    pub fn v_norm_sq(&self) -> f64 {
        self.v.hs_sq(1.0) + self.n.hs_sq(2.0)
    }

    /// `‖y‖²_𝓔 = ‖v‖²_{H²} + ‖n‖²_{H³}` (shifted).
    pub fn e_norm_sq(&self) -> f64 {
        self.v.hs_sq(2.0) + self.n.hs_sq(3.0)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.n.is_finite()
    }

    pub fn sub(&self, other: &SystemState) -> SystemState {
        SystemState { v: self.v.sub(&other.v), n: self.n.sub(&other.n), t: self.t }
    }

    pub fn bit_eq(&self, other: &SystemState) -> bool {
        self.v.bit_eq(&other.v) && self.n.bit_eq(&other.n)
    }
}

/// Uniformly sampled trajectory `t_j = t0 + j·dt`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Arc<Grid>,
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<SystemState>,
    /// Increments that drove the run, one per step and channel.
    pub noise_record: Option<WienerPath>,
}

impl Trajectory {
    pub fn new(grid: &Arc<Grid>, t0: f64, dt: f64, states: Vec<SystemState>) -> Self {
        Trajectory { grid: grid.clone(), t0, dt, states, noise_record: None }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|j| self.t0 + j as f64 * self.dt).collect()
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + (self.states.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Index of grid time `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        grid_index(self.t0, self.dt, self.states.len(), t)
    }
}

/// Index `j` with `t0 + j·dt == t` up to 1e-9 relative to `dt`.
pub fn grid_index(t0: f64, dt: f64, len: usize, t: f64) -> Result<usize> {
    let r = (t - t0) / dt;
    let j = r.round();
    if (r - j).abs() > 1e-9 || j < 0.0 || j as usize >= len {
        return Err(Error::Unaligned(t));
    }
    Ok(j as usize)
}

/// `(sup ‖y‖²_𝓥 + ∫‖y‖²_𝓔)^{1/2}` over `[a, b]`, trapezoid rule in time.
pub fn xnorm(traj: &Trajectory, a: f64, b: f64) -> Result<f64> {
    let ia = traj.index_of(a)?;
    let ib = traj.index_of(b)?;
    if ib < ia {
        return Err(Error::Range(format!("xnorm interval [{a}, {b}] reversed")));
    }
    Ok(xnorm_states(&traj.states[ia..=ib], traj.dt))
}

/// X-norm of a contiguous run of states with spacing `dt`.
pub fn xnorm_states(states: &[SystemState], dt: f64) -> f64 {
    let mut acc = RunningXNorm::new(dt);
    for s in states {
        acc.push_norms(s.v_norm_sq(), s.e_norm_sq());
    }
    acc.value()
}

/// Incremental `|y|_{X_t}` from the first pushed state up to the latest one.
#[derive(Clone, Debug)]
pub struct RunningXNorm {
    dt: f64,
    sup: f64,
    integral: f64,
    last_e: Option<f64>,
}

impl RunningXNorm {
    pub fn new(dt: f64) -> Self {
        RunningXNorm { dt, sup: 0.0, integral: 0.0, last_e: None }
    }

    pub fn push(&mut self, s: &SystemState) -> f64 {
        self.push_norms(s.v_norm_sq(), s.e_norm_sq())
    }

    /// Push squared 𝓥 and 𝓔 norms of the next state.
    pub fn push_norms(&mut self, v_sq: f64, e_sq: f64) -> f64 {
        self.sup = self.sup.max(v_sq);
        if let Some(prev) = self.last_e {
            self.integral += 0.5 * self.dt * (prev + e_sq);
        }
        self.last_e = Some(e_sq);
        self.value()
    }

    pub fn value(&self) -> f64 {
        (self.sup + self.integral).sqrt()
    }
    pub fn sup_part(&self) -> f64 {
        self.sup
    }
    pub fn integral_part(&self) -> f64 {
        self.integral
    }
}

/// Band-limited random field with Gaussian spectral envelope
/// `exp(-|k|²/(2 k_scale²))`, dealiased, scaled to L² norm `amplitude`.
/// Velocity fields are Leray-projected.
pub fn sample_field<R: Rng + ?Sized>(
    grid: &Arc<Grid>,
    kind: FieldKind,
    rng: &mut R,
    amplitude: f64,
    k_scale: f64,
) -> SpectralField {
    let k2 = grid.k2();
    let comps: Vec<Vec<Complex64>> = (0..kind.ncomp())
        .map(|_| {
            (0..grid.len())
                .map(|i| {
                    let env = (-k2[i] / (2.0 * k_scale * k_scale)).exp();
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re, im) * env
                })
                .collect()
        })
        .collect();
    let raw = SpectralField { grid: grid.clone(), kind, comps };
    // real part of the synthesized samples restores Hermitian symmetry
    let mut f = SpectralField::from_real(grid, kind, &raw.to_real()).expect("shape").dealias();
    if kind == FieldKind::Velocity {
        f = crate::operators::leray_project(&f);
    }
    let norm = f.l2();
    if norm > 0.0 {
        f = f.scale(amplitude / norm);
    }
    f
}

/// Write `NEMATIQ1 nx ny c t` followed by little-endian f64 samples,
/// component-major then row-major (rows along y).
pub fn write_snapshot<W: Write>(w: &mut W, f: &SpectralField, t: f64) -> Result<()> {
    let g = f.grid();
    writeln!(w, "NEMATIQ1 {} {} {} {}", g.nx(), g.ny(), f.ncomp(), t)?;
    for comp in f.to_real() {
        for x in comp {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a snapshot back into real samples: `(nx, ny, t, samples)`.
pub fn read_snapshot<R: BufRead>(r: &mut R) -> Result<(usize, usize, f64, Vec<Vec<f64>>)> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "NEMATIQ1" {
        return Err(Error::Io(format!("bad snapshot header {header:?}")));
    }
    let p = |s: &str| s.parse::<usize>().map_err(|e| Error::Io(e.to_string()));
    let (nx, ny, c) = (p(parts[1])?, p(parts[2])?, p(parts[3])?);
    let t: f64 = parts[4].parse().map_err(|e: std::num::ParseFloatError| Error::Io(e.to_string()))?;
    let mut samples = vec![vec![0.0; nx * ny]; c];
    let mut b = [0u8; 8];
    for comp in samples.iter_mut() {
        for x in comp.iter_mut() {
            r.read_exact(&mut b)?;
            *x = f64::from_le_bytes(b);
        }
    }
    Ok((nx, ny, t, samples))
}
