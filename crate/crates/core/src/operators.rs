//! Linear and nonlinear spatial operators on the torus.
//!
//! Nonlinear terms are evaluated pseudo-spectrally: derivatives in Fourier
//! space, products on the sample grid, then transformed back and dealiased.
//! For inputs supported on the retained modes, quadratic products are
//! alias-free, which is what keeps the skew-symmetry identities at round-off.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fields::{FieldKind, Grid, SpectralField};
use crate::{Error, Result};

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Helmholtz–Leray projection onto divergence-free fields.
pub fn leray_project(u: &SpectralField) -> SpectralField {
    assert_eq!(u.ncomp(), 2, "Leray projection needs a 2-component field");
    let g = u.grid().clone();
    let mut out = u.clone().retag(FieldKind::Velocity).expect("2 components");
    let (a, b) = (u.comp(0), u.comp(1));
    let mut ox = vec![zero(); g.len()];
    let mut oy = vec![zero(); g.len()];
    for idx in 0..g.len() {
        let (kx, ky) = g.k(idx);
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            ox[idx] = a[idx];
            oy[idx] = b[idx];
        } else {
            let d = (a[idx] * kx + b[idx] * ky) / k2;
            ox[idx] = a[idx] - d * kx;
            oy[idx] = b[idx] - d * ky;
        }
    }
    out.comp_mut(0).copy_from_slice(&ox);
    out.comp_mut(1).copy_from_slice(&oy);
    out
}

fn mean_is_zero(f: &SpectralField) -> bool {
    (0..f.ncomp()).all(|c| f.comp(c)[0].norm() == 0.0)
}

/// Multiplier `|k|^{2p}` with the `k = 0` convention shared by A and A₁.
fn power_multiplier(f: &SpectralField, power: f64, what: &str) -> Result<SpectralField> {
    if power < 0.0 && !mean_is_zero(f) {
        return Err(Error::Range(format!("negative power of {what} on a field with a nonzero mean mode")));
    }
    if power == 0.0 {
        return Ok(f.clone());
    }
    Ok(f.multiply(|k2| if k2 == 0.0 { 0.0 } else if power == 1.0 { k2 } else { k2.powf(power) }))
}

/// Stokes operator power `A^p`; on the torus A = −Δ on divergence-free modes.
pub fn apply_stokes(v: &SpectralField, power: f64) -> Result<SpectralField> {
    if !(-1.0..=1.0).contains(&power) {
        return Err(Error::Range(format!("Stokes power {power} outside [-1, 1]")));
    }
    power_multiplier(v, power, "A")
}

/// `A₁^p` (multiplier `|k|^{2p}`) or `Â₁^p = (I + A₁)^p` when shifted.
pub fn apply_a1(n: &SpectralField, power: f64, shifted: bool) -> Result<SpectralField> {
    if !(-2.0..=2.0).contains(&power) {
        return Err(Error::Range(format!("A1 power {power} outside [-2, 2]")));
    }
    if shifted {
        Ok(n.multiply(|k2| (1.0 + k2).powf(power)))
    } else {
        power_multiplier(n, power, "A1")
    }
}

/// Heat semigroup `e^{−t|k|²}`.
pub fn semigroup_apply(f: &SpectralField, t: f64) -> Result<SpectralField> {
    if t < 0.0 {
        return Err(Error::Range(format!("negative semigroup time {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    Ok(f.multiply(|k2| (-t * k2).exp()))
}

fn grads_only(f: &SpectralField) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let c = f.ncomp();
    ((0..c).map(|k| f.deriv_real(k, 0)).collect(), (0..c).map(|k| f.deriv_real(k, 1)).collect())
}

/// Samples of `(u·∇)w`, one array per component of `w`.
fn advect_real(u: &[Vec<f64>], w: &SpectralField) -> Vec<Vec<f64>> {
    let (dx, dy) = grads_only(w);
    (0..w.ncomp())
        .map(|c| u[0].iter().zip(&u[1]).zip(dx[c].iter().zip(&dy[c])).map(|((a, b), (p, q))| a * p + b * q).collect())
        .collect()
}

fn from_samples_dealiased(grid: &Arc<Grid>, kind: FieldKind, s: &[Vec<f64>]) -> SpectralField {
    SpectralField::from_real(grid, kind, s).expect("grid-sized samples").dealias()
}

/// `b(u, v, w) = Σ_{i,j} ∫ u^i ∂_i v^j w^j` by grid quadrature.
pub fn trilinear_b(u: &SpectralField, v: &SpectralField, w: &SpectralField) -> Result<f64> {
    if u.ncomp() != 2 || v.ncomp() != w.ncomp() || v.ncomp() < 2 {
        return Err(Error::Shape(format!("b needs (2, m, m) components, got ({}, {}, {})", u.ncomp(), v.ncomp(), w.ncomp())));
    }
    if *u.grid() != *v.grid() || *v.grid() != *w.grid() {
        return Err(Error::Shape("b arguments on different grids".into()));
    }
    let ur = u.to_real();
    let adv = advect_real(&ur, v);
    let wr = w.to_real();
    let mut s = 0.0;
    for (a, b) in adv.iter().zip(&wr) {
        s += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(s * u.grid().cell_area())
}

/// `B(u, v) = Π(u·∇v)`, dealiased.
pub fn apply_b(u: &SpectralField, v: &SpectralField) -> SpectralField {
    let ur = u.to_real();
    let adv = advect_real(&ur, v);
    leray_project(&from_samples_dealiased(u.grid(), FieldKind::Velocity, &adv))
}

/// `B̃(v, n) = v·∇n`, dealiased.
pub fn apply_btilde(v: &SpectralField, n: &SpectralField) -> SpectralField {
    let vr = v.to_real();
    from_samples_dealiased(v.grid(), FieldKind::Director, &advect_real(&vr, n))
}

/// `M(n₁, n₂) = Π[Div(∇n₁ ⊙ ∇n₂)]` with `(∇n₁ ⊙ ∇n₂)_{ij} = Σ_k ∂_i n₁^k ∂_j n₂^k`
/// and the divergence taken over `j`.
pub fn apply_m(n1: &SpectralField, n2: &SpectralField) -> SpectralField {
    let g = n1.grid().clone();
    let (a_x, a_y) = grads_only(n1);
    let (b_x, b_y) = if std::ptr::eq(n1, n2) { (a_x.clone(), a_y.clone()) } else { grads_only(n2) };
    let a = [&a_x, &a_y];
    let b = [&b_x, &b_y];
    let mut out = SpectralField::zeros(&g, FieldKind::Velocity);
    for i in 0..2 {
        let mut acc = vec![zero(); g.len()];
        for j in 0..2 {
            let mut t = vec![0.0; g.len()];
            for k in 0..n1.ncomp() {
                for (p, (x, y)) in t.iter_mut().zip(a[i][k].iter().zip(&b[j][k])) {
                    *p += x * y;
                }
            }
            let th = g.forward(&t).expect("grid-sized");
            for (idx, z) in th.into_iter().enumerate() {
                if g.retained(idx) {
                    let (kx, ky) = g.k_deriv(idx);
                    let kj = if j == 0 { kx } else { ky };
                    acc[idx] += Complex64::new(0.0, kj) * z;
                }
            }
        }
        out.comp_mut(i).copy_from_slice(&acc);
    }
    leray_project(&out)
}

/// `𝔪(n₁, n₂, u) = −Σ ∫ ∂_i n₁^k ∂_j n₂^k ∂_j u^i` by grid quadrature.
pub fn m_form(n1: &SpectralField, n2: &SpectralField, u: &SpectralField) -> f64 {
    let (a_x, a_y) = grads_only(n1);
    let (b_x, b_y) = grads_only(n2);
    let (u_x, u_y) = grads_only(u);
    let a = [&a_x, &a_y];
    let b = [&b_x, &b_y];
    let du = [&u_x, &u_y];
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..n1.ncomp() {
                s += a[i][k].iter().zip(&b[j][k]).zip(&du[j][i]).map(|((x, y), z)| x * y * z).sum::<f64>();
            }
        }
    }
    -s * n1.grid().cell_area()
}

/// `f̃(r) = Σ a_k r^k` with `a_N < 0`, `f(d) = f̃(|d|²) d`, `F(d) = ½ F̃(|d|²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialF {
    coeffs: Vec<f64>,
    epsilon: Option<f64>,
}

impl PolynomialF {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::Range("polynomial needs N >= 1 (at least a0 and a1)".into()));
        }
        let lead = *coeffs.last().unwrap();
        if lead.is_nan() || lead >= 0.0 {
            return Err(Error::Range(format!("leading coefficient a_N = {lead} must be negative")));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Range("non-finite polynomial coefficient".into()));
        }
        Ok(PolynomialF { coeffs, epsilon: None })
    }

    /// Ginzburg–Landau `f̃(r) = (1 − r)/ε²`.
    pub fn gl(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Range(format!("epsilon {eps} must be positive")));
        }
        let a = 1.0 / (eps * eps);
        let mut p = Self::new(vec![a, -a])?;
        p.epsilon = Some(eps);
        Ok(p)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }
    /// Leading coefficient of `F̃`, i.e. `a_N/(N+1)`.
    pub fn a_lead_potential(&self) -> f64 {
        self.coeffs[self.degree()] / (self.degree() + 1) as f64
    }

    pub fn ft(&self, r: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * r + a)
    }
    pub fn ft_prime(&self, r: f64) -> f64 {
        self.coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, &a)| acc * r + k as f64 * a)
    }
    pub fn ft_second(&self, r: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, &a)| acc * r + (k * (k - 1)) as f64 * a)
    }
    /// `F̃(r) = Σ a_k r^{k+1}/(k+1)`.
    pub fn big_ft(&self, r: f64) -> f64 {
        r * self.coeffs.iter().enumerate().rev().fold(0.0, |acc, (k, &a)| acc * r + a / (k + 1) as f64)
    }

    /// Pointwise `f(d)`.
    pub fn f_point(&self, d: [f64; 3]) -> [f64; 3] {
        let s = self.ft(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        [s * d[0], s * d[1], s * d[2]]
    }
}

fn point(s: &[Vec<f64>], i: usize) -> [f64; 3] {
    [s[0][i], s[1][i], s[2][i]]
}

/// `f(n)` pointwise on the grid, transformed and dealiased.
pub fn eval_f(n: &SpectralField, poly: &PolynomialF) -> SpectralField {
    let nr = n.to_real();
    let mut out = vec![vec![0.0; nr[0].len()]; 3];
    for i in 0..nr[0].len() {
        let f = poly.f_point(point(&nr, i));
        for c in 0..3 {
            out[c][i] = f[c];
        }
    }
    from_samples_dealiased(n.grid(), FieldKind::Director, &out)
}

/// `f′(n)[g] = f̃(r) g + 2 f̃′(r)(n·g) n`, dealiased.
pub fn eval_f_prime(n: &SpectralField, g: &SpectralField, poly: &PolynomialF) -> SpectralField {
    let nr = n.to_real();
    let gr = g.to_real();
    let mut out = vec![vec![0.0; nr[0].len()]; 3];
    for i in 0..nr[0].len() {
        let (d, h) = (point(&nr, i), point(&gr, i));
        let r = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let dg = d[0] * h[0] + d[1] * h[1] + d[2] * h[2];
        let (a, b) = (poly.ft(r), 2.0 * poly.ft_prime(r) * dg);
        for c in 0..3 {
            out[c][i] = a * h[c] + b * d[c];
        }
    }
    from_samples_dealiased(n.grid(), FieldKind::Director, &out)
}

/// `f″(n)[g, g] = 4f̃′(n·g)g + 2f̃′|g|²n + 4f̃″(n·g)²n`, dealiased.
pub fn eval_f_second(n: &SpectralField, g: &SpectralField, poly: &PolynomialF) -> SpectralField {
    let nr = n.to_real();
    let gr = g.to_real();
    let mut out = vec![vec![0.0; nr[0].len()]; 3];
    for i in 0..nr[0].len() {
        let (d, h) = (point(&nr, i), point(&gr, i));
        let r = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let dg = d[0] * h[0] + d[1] * h[1] + d[2] * h[2];
        let gg = h[0] * h[0] + h[1] * h[1] + h[2] * h[2];
        let (p1, p2) = (poly.ft_prime(r), poly.ft_second(r));
        for c in 0..3 {
            out[c][i] = 4.0 * p1 * dg * h[c] + (2.0 * p1 * gg + 4.0 * p2 * dg * dg) * d[c];
        }
    }
    from_samples_dealiased(n.grid(), FieldKind::Director, &out)
}

/// `∫ F(n)` with `F(d) = ½ F̃(|d|²)`, grid quadrature.
pub fn eval_f_potential(n: &SpectralField, poly: &PolynomialF) -> f64 {
    let nr = n.to_real();
    let s: f64 = (0..nr[0].len())
        .map(|i| {
            let d = point(&nr, i);
            0.5 * poly.big_ft(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        })
        .sum();
    s * n.grid().cell_area()
}

/// `∫ |n|^q` by grid quadrature.
pub fn lq_norm_pow(n: &SpectralField, q: f64) -> f64 {
    let nr = n.to_real();
    let s: f64 = (0..nr[0].len())
        .map(|i| {
            let r: f64 = nr.iter().map(|c| c[i] * c[i]).sum();
            r.powf(q / 2.0)
        })
        .sum();
    s * n.grid().cell_area()
}

/// Director noise `G(n) = n × h_eff` with `h_eff = amplitude · h`.
#[derive(Clone, Debug)]
pub struct DirectorNoise {
    pub h: SpectralField,
    pub amplitude: f64,
}

impl DirectorNoise {
    pub fn new(h: SpectralField, amplitude: f64) -> Result<Self> {
        if h.ncomp() != 3 {
            return Err(Error::Shape("h must have 3 components".into()));
        }
        if !h.is_finite() || !amplitude.is_finite() {
            return Err(Error::Range("h must be finite".into()));
        }
        Ok(DirectorNoise { h, amplitude })
    }

    /// Noise switched off.
    pub fn off(grid: &Arc<Grid>) -> Self {
        DirectorNoise { h: SpectralField::zeros(grid, FieldKind::Director), amplitude: 0.0 }
    }

    pub fn is_off(&self) -> bool {
        self.amplitude == 0.0 || self.h.max_abs() == 0.0
    }

    pub fn h_eff(&self) -> SpectralField {
        self.h.scale(self.amplitude)
    }

    /// Samples of `h_eff`.
    pub fn h_real(&self) -> Vec<Vec<f64>> {
        self.h_eff().to_real()
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// `G(n) = n × h` (order 1) or `G²(n) = (n × h) × h` (order 2), pointwise then dealiased.
pub fn apply_g(n: &SpectralField, dn: &DirectorNoise, order: u8) -> Result<SpectralField> {
    if order != 1 && order != 2 {
        return Err(Error::Range(format!("G order {order} not in {{1, 2}}")));
    }
    let nr = n.to_real();
    let hr = dn.h_real();
    let mut out = vec![vec![0.0; nr[0].len()]; 3];
    for i in 0..nr[0].len() {
        let h = point(&hr, i);
        let mut g = cross(point(&nr, i), h);
        if order == 2 {
            g = cross(g, h);
        }
        for c in 0..3 {
            out[c][i] = g[c];
        }
    }
    Ok(from_samples_dealiased(n.grid(), FieldKind::Director, &out))
}

/// `⟨∇n, n × ∇h⟩ = Σ_i ∫ ∂_i n · (n × ∂_i h)`.
pub fn grad_n_dot_n_cross_grad_h(n: &SpectralField, dn: &DirectorNoise) -> f64 {
    let nr = n.to_real();
    let (nx_, ny_) = grads_only(n);
    let (hx, hy) = grads_only(&dn.h_eff());
    let mut s = 0.0;
    for i in 0..nr[0].len() {
        let d = point(&nr, i);
        for (dn_, dh) in [(&nx_, &hx), (&ny_, &hy)] {
            let c = cross(d, point(dh, i));
            s += dn_[0][i] * c[0] + dn_[1][i] * c[1] + dn_[2][i] * c[2];
        }
    }
    s * n.grid().cell_area()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VelocityNoiseMode {
    Additive,
    SmoothedMultiplicative,
}

/// Truncated velocity noise `S(v) dW₁ = Σ_j S(v)e_j dW₁^j`.
#[derive(Clone, Debug)]
pub struct VelocityNoise {
    pub mode: VelocityNoiseMode,
    pub sigmas: Vec<f64>,
    pub smoothing_order: f64,
    pub basis: Vec<SpectralField>,
    ell5: f64,
}

/// First `count` divergence-free real Fourier modes `e_⊥ cos(k·x)`, `e_⊥ sin(k·x)`,
/// ordered by `|k|²`, then `k_y`, then `k_x`, over the half-plane
/// `k_y > 0 or (k_y = 0, k_x > 0)`; each has unit L² norm.
pub fn divergence_free_basis(grid: &Arc<Grid>, count: usize) -> Vec<SpectralField> {
    let mut ks: Vec<(i64, i64)> = Vec::new();
    let r = (grid.nx().min(grid.ny()) / 2) as i64;
    for ky in 0..=r {
        for kx in -r..=r {
            if ky > 0 || kx > 0 {
                let idx = grid.index_of(kx, ky);
                if grid.retained(idx) {
                    ks.push((kx, ky));
                }
            }
        }
    }
    ks.sort_by_key(|&(kx, ky)| (kx * kx + ky * ky, ky, kx));
    let norm = 1.0 / (2f64.sqrt() * PI);
    let mut out = Vec::with_capacity(count);
    'outer: for (kx, ky) in ks {
        let kk = ((kx * kx + ky * ky) as f64).sqrt();
        let e = (-(ky as f64) / kk, kx as f64 / kk);
        for trig in 0..2 {
            if out.len() == count {
                break 'outer;
            }
            out.push(SpectralField::from_fn(grid, FieldKind::Velocity, |x, y| {
                let ph = kx as f64 * x + ky as f64 * y;
                let s = if trig == 0 { ph.cos() } else { ph.sin() } * norm;
                [e.0 * s, e.1 * s, 0.0]
            }));
        }
    }
    out
}

impl VelocityNoise {
    /// `S(v)e_j = σ_j (I + A)^{−s} v` with `σ_j = σ₀/j`, `j = 1..J`.
    pub fn smoothed(s: f64, sigma0: f64, j: usize) -> Result<Self> {
        if s < 0.5 {
            return Err(Error::Range(format!("smoothing order {s} below 1/2")));
        }
        let sigmas: Vec<f64> = (1..=j).map(|k| sigma0 / k as f64).collect();
        // ‖(I+A)^{-s} v‖_{H¹} ≤ |v|_{L²} for s ≥ 1/2
        let ell5 = sigmas.iter().map(|x| x * x).sum();
        Ok(VelocityNoise { mode: VelocityNoiseMode::SmoothedMultiplicative, sigmas, smoothing_order: s, basis: vec![], ell5 })
    }

    /// `S(v)e_j = σ_j g_j` over [`divergence_free_basis`], `σ_j = σ₀/j`.
    pub fn additive(grid: &Arc<Grid>, sigma0: f64, j: usize) -> Self {
        let basis = divergence_free_basis(grid, j);
        let sigmas: Vec<f64> = (1..=basis.len()).map(|k| sigma0 / k as f64).collect();
        let ell5 = sigmas.iter().zip(&basis).map(|(s, g)| s * s * g.hs_sq(1.0)).sum();
        VelocityNoise { mode: VelocityNoiseMode::Additive, sigmas, smoothing_order: 0.0, basis, ell5 }
    }

    pub fn off() -> Self {
        VelocityNoise { mode: VelocityNoiseMode::SmoothedMultiplicative, sigmas: vec![], smoothing_order: 1.0, basis: vec![], ell5: 0.0 }
    }

    pub fn j(&self) -> usize {
        self.sigmas.len()
    }
    pub fn ell5(&self) -> f64 {
        self.ell5
    }
    pub fn is_off(&self) -> bool {
        self.sigmas.iter().all(|&s| s == 0.0)
    }

    /// `Σ_j S(v)e_j · w_j` for weights `w_j` (typically increments).
    pub fn combine(&self, v: &SpectralField, w: &[f64]) -> SpectralField {
        match self.mode {
            VelocityNoiseMode::Additive => {
                let mut out = SpectralField::zeros(v.grid(), FieldKind::Velocity);
                for ((s, g), x) in self.sigmas.iter().zip(&self.basis).zip(w) {
                    out.axpy(s * x, g);
                }
                out
            }
            VelocityNoiseMode::SmoothedMultiplicative => {
                let c: f64 = self.sigmas.iter().zip(w).map(|(s, x)| s * x).sum();
                let p = self.smoothing_order;
                v.multiply(|k2| c * (1.0 + k2).powf(-p))
            }
        }
    }

    /// `Σ_j |S(v)e_j|²_{L²}`.
    pub fn hs_l2_sq(&self, v: &SpectralField) -> f64 {
        match self.mode {
            VelocityNoiseMode::Additive => self.sigmas.iter().zip(&self.basis).map(|(s, g)| s * s * g.l2_sq()).sum(),
            VelocityNoiseMode::SmoothedMultiplicative => {
                let c: f64 = self.sigmas.iter().map(|s| s * s).sum();
                let p = self.smoothing_order;
                c * v.weighted_sq(|k2| (1.0 + k2).powf(-2.0 * p))
            }
        }
    }
}

/// `S(v)e_j` for `1 ≤ j ≤ J`.
pub fn apply_s(v: &SpectralField, vn: &VelocityNoise, j: usize) -> Result<SpectralField> {
    if j == 0 || j > vn.j() {
        return Err(Error::Range(format!("noise mode {j} outside 1..={}", vn.j())));
    }
    let sigma = vn.sigmas[j - 1];
    Ok(match vn.mode {
        VelocityNoiseMode::Additive => vn.basis[j - 1].scale(sigma),
        VelocityNoiseMode::SmoothedMultiplicative => {
            let p = vn.smoothing_order;
            v.multiply(|k2| sigma * (1.0 + k2).powf(-p))
        }
    })
}
