//! Euler–Maruyama stepping of the system in Itô form,
//! `dv = −(Av + B(v,v) + M(n))dt + S(v)dW₁`,
//! `dn = −(A₁n + B̃(v,n) − f(n) − ½G²(n))dt + G(n)dW₂`,
//! with the linear part implicit (or exponential) and everything else at the
//! left endpoint.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsConfig, EnergyTrace, StateScalars, TraceBuilder};
use crate::fields::{sample_field, FieldKind, Grid, SpectralField, SystemState, Trajectory};
use crate::noise::{sample_path, StopKind, StoppingTime, WienerPath};
use crate::operators::{leray_project, DirectorNoise, PolynomialF, VelocityNoise};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    SemiImplicitEm,
    ExponentialEm,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VelocityInit {
    Zero,
    /// `a·(sin x cos y, −cos x sin y)`.
    TaylorGreen(f64),
    Random { amplitude: f64, k_scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DirectorInit {
    Zero,
    Constant([f64; 3]),
    /// `(a sin x, 0, 0)`.
    SineX(f64),
    /// Constant `base` plus a random smooth field of L² norm `amplitude`.
    Perturbed { base: [f64; 3], amplitude: f64, k_scale: f64 },
}

#[derive(Clone, Debug)]
pub enum InitialData {
    Preset { v: VelocityInit, n: DirectorInit, seed: u64 },
    State(SystemState),
}

impl InitialData {
    pub fn build(&self, grid: &Arc<Grid>) -> Result<SystemState> {
        match self {
            InitialData::State(s) => {
                if **s.grid() != **grid {
                    return Err(Error::Shape("initial state on another grid".into()));
                }
                Ok(SystemState { t: 0.0, ..s.clone() })
            }
            InitialData::Preset { v, n, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let v = match *v {
                    VelocityInit::Zero => SpectralField::zeros(grid, FieldKind::Velocity),
                    VelocityInit::TaylorGreen(a) => {
                        SpectralField::from_fn(grid, FieldKind::Velocity, |x, y| [a * x.sin() * y.cos(), -a * x.cos() * y.sin(), 0.0])
                    }
                    VelocityInit::Random { amplitude, k_scale } => sample_field(grid, FieldKind::Velocity, &mut rng, amplitude, k_scale),
                };
                let n = match *n {
                    DirectorInit::Zero => SpectralField::zeros(grid, FieldKind::Director),
                    DirectorInit::Constant(c) => SpectralField::from_fn(grid, FieldKind::Director, |_, _| c),
                    DirectorInit::SineX(a) => SpectralField::from_fn(grid, FieldKind::Director, |x, _| [a * x.sin(), 0.0, 0.0]),
                    DirectorInit::Perturbed { base, amplitude, k_scale } => {
                        let p = sample_field(grid, FieldKind::Director, &mut rng, amplitude, k_scale);
                        SpectralField::from_fn(grid, FieldKind::Director, |_, _| base).add(&p)
                    }
                };
                SystemState::new(v.dealias(), n.dealias(), 0.0)
            }
        }
    }
}

/// Smooth director-noise profile `h = (0.3 sin y, 0.2 cos x, 1)`.
pub fn standard_h(grid: &Arc<Grid>) -> SpectralField {
    SpectralField::from_fn(grid, FieldKind::Director, |x, y| [0.3 * y.sin(), 0.2 * x.cos(), 1.0])
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub grid: Arc<Grid>,
    pub dt: f64,
    pub t_end: f64,
    pub poly: PolynomialF,
    pub dnoise: DirectorNoise,
    pub vnoise: VelocityNoise,
    pub scheme: Scheme,
    pub k_levels: Vec<f64>,
    pub seed: u64,
    pub initial: InitialData,
    /// `Q > blowup_k²` or a non-finite state ends the run.
    pub blowup_k: f64,
    /// Step of the underlying Brownian increments; `dt` must be a multiple.
    pub noise_dt: Option<f64>,
    pub output_stride: usize,
    /// Off: drop B, B̃, M and f from the drift.
    pub nonlinear: bool,
    pub keep_states: bool,
    pub diagnostics: DiagnosticsConfig,
}

impl SolverConfig {
    /// Moderate defaults on `grid`.
    pub fn standard(grid: &Arc<Grid>) -> Self {
        SolverConfig {
            grid: grid.clone(),
            dt: 1e-3,
            t_end: 1.0,
            poly: PolynomialF::gl(1.0).expect("valid epsilon"),
            dnoise: DirectorNoise::new(standard_h(grid), 0.5).expect("finite h"),
            vnoise: VelocityNoise::smoothed(1.0, 0.5, 8).expect("valid order"),
            scheme: Scheme::SemiImplicitEm,
            k_levels: vec![10.0, 100.0, 1000.0],
            seed: 0,
            initial: InitialData::Preset {
                v: VelocityInit::TaylorGreen(0.5),
                n: DirectorInit::Perturbed { base: [1.0, 0.0, 0.0], amplitude: 0.5, k_scale: 1.5 },
                seed: 0,
            },
            blowup_k: 1e4,
            noise_dt: None,
            output_stride: 1,
            nonlinear: true,
            keep_states: false,
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    /// Same configuration with both noises off.
    pub fn noise_free(mut self) -> Self {
        self.dnoise = DirectorNoise::off(&self.grid);
        self.vnoise = VelocityNoise::off();
        self
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn channels(&self) -> usize {
        self.vnoise.j() + 1
    }

    pub fn is_noisy(&self) -> bool {
        !self.dnoise.is_off() || !self.vnoise.is_off()
    }

    fn coarsening(&self) -> Result<usize> {
        match self.noise_dt {
            None => Ok(1),
            Some(h) => {
                let r = self.dt / h;
                let c = r.round();
                if !(h > 0.0) || c < 1.0 || (r - c).abs() > 1e-9 * c {
                    return Err(Error::Range(format!("dt = {} is not a multiple of noise_dt = {h}", self.dt)));
                }
                Ok(c as usize)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Range(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::Range(format!("T = {} below dt = {}", self.t_end, self.dt)));
        }
        let r = self.t_end / self.dt;
        if (r - r.round()).abs() > 1e-9 * r {
            return Err(Error::Range(format!("T = {} is not a multiple of dt = {}", self.t_end, self.dt)));
        }
        if self.k_levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Range("k_levels must be strictly increasing".into()));
        }
        if self.output_stride == 0 {
            return Err(Error::Range("output_stride must be at least 1".into()));
        }
        if *self.dnoise.h.grid().as_ref() != *self.grid {
            return Err(Error::Shape("director noise on another grid".into()));
        }
        self.coarsening()?;
        self.diagnostics.validate()
    }

    /// Increments driving the run, one per step and channel
    /// (`0..J` velocity modes, `J` the director channel).
    pub fn noise_path(&self) -> Result<WienerPath> {
        let m = self.steps();
        if !self.is_noisy() {
            return Ok(WienerPath::zeros(self.dt, m, self.channels()));
        }
        let c = self.coarsening()?;
        let fine = self.dt / c as f64;
        sample_path(self.seed, fine, m * c, self.channels())?.coarsen(c)
    }
}

/// Operators and cached samples shared by every step of a run.
#[derive(Clone, Debug)]
pub struct Model {
    pub grid: Arc<Grid>,
    pub poly: PolynomialF,
    pub dnoise: DirectorNoise,
    pub vnoise: VelocityNoise,
    pub nonlinear: bool,
    h: Option<Vec<Vec<f64>>>,
}

impl Model {
    pub fn new(grid: &Arc<Grid>, poly: PolynomialF, dnoise: DirectorNoise, vnoise: VelocityNoise, nonlinear: bool) -> Self {
        let h = if dnoise.is_off() { None } else { Some(dnoise.h_real()) };
        Model { grid: grid.clone(), poly, dnoise, vnoise, nonlinear, h }
    }

    pub fn from_config(cfg: &SolverConfig) -> Self {
        Model::new(&cfg.grid, cfg.poly.clone(), cfg.dnoise.clone(), cfg.vnoise.clone(), cfg.nonlinear)
    }
}

/// Every nonlinear term at one state, from a single batch of transforms.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// `B(v, v)`.
    pub b: SpectralField,
    /// `B̃(v, n)`.
    pub bt: SpectralField,
    /// `M(n)`.
    pub m: SpectralField,
    /// `f(n)`, dealiased.
    pub f: SpectralField,
    /// `G(n)`.
    pub g1: SpectralField,
    /// `G²(n)`.
    pub g2: SpectralField,
    /// `∫F(n)`.
    pub potential: f64,
    /// `∫|n|^{2N+2}`.
    pub lq: f64,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl Evaluation {
    pub fn new(model: &Model, s: &SystemState) -> Evaluation {
        let g = &model.grid;
        let len = g.len();
        let dv: Vec<Vec<Complex64>> = (0..2).flat_map(|c| (0..2).map(move |a| (c, a))).map(|(c, a)| s.v.deriv_coeffs(c, a)).collect();
        let dn: Vec<Vec<Complex64>> = (0..3).flat_map(|c| (0..2).map(move |a| (c, a))).map(|(c, a)| s.n.deriv_coeffs(c, a)).collect();
        let mut refs: Vec<&[Complex64]> = Vec::with_capacity(15);
        refs.extend(s.v.comps().iter().map(|c| c.as_slice()));
        refs.extend(s.n.comps().iter().map(|c| c.as_slice()));
        refs.extend(dv.iter().map(|c| c.as_slice()));
        refs.extend(dn.iter().map(|c| c.as_slice()));
        let r = g.backward_batch(&refs);
        let (rv, rn, rdv, rdn) = (&r[0..2], &r[2..5], &r[5..9], &r[9..15]);

        let with_g = model.h.is_some();
        let nout = if with_g { 17 } else { 11 };
        let mut out = vec![vec![0.0; len]; nout];
        let (mut pot, mut lq) = (0.0, 0.0);
        let poly = &model.poly;
        let np1 = poly.degree() as i32 + 1;
        for i in 0..len {
            let (vx, vy) = (rv[0][i], rv[1][i]);
            for c in 0..2 {
                out[c][i] = vx * rdv[2 * c][i] + vy * rdv[2 * c + 1][i];
            }
            let mut txx = 0.0;
            let mut txy = 0.0;
            let mut tyy = 0.0;
            for c in 0..3 {
                let (ax, ay) = (rdn[2 * c][i], rdn[2 * c + 1][i]);
                out[2 + c][i] = vx * ax + vy * ay;
                txx += ax * ax;
                txy += ax * ay;
                tyy += ay * ay;
            }
            out[5][i] = txx;
            out[6][i] = txy;
            out[7][i] = tyy;
            let d = [rn[0][i], rn[1][i], rn[2][i]];
            let rr = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let ft = poly.ft(rr);
            for c in 0..3 {
                out[8 + c][i] = ft * d[c];
            }
            pot += 0.5 * poly.big_ft(rr);
            lq += rr.powi(np1);
            if let Some(h) = &model.h {
                let hh = [h[0][i], h[1][i], h[2][i]];
                let g1 = cross(d, hh);
                let g2 = cross(g1, hh);
                for c in 0..3 {
                    out[11 + c][i] = g1[c];
                    out[14 + c][i] = g2[c];
                }
            }
        }
        let refs: Vec<&[f64]> = out.iter().map(|x| x.as_slice()).collect();
        let spec = g.forward_batch(&refs);
        let mask = |c: &Vec<Complex64>| -> Vec<Complex64> {
            c.iter().enumerate().map(|(i, &z)| if g.retained(i) { z } else { Complex64::new(0.0, 0.0) }).collect()
        };
        let field = |kind: FieldKind, cs: &[Vec<Complex64>]| SpectralField::from_coeffs(g, kind, cs.iter().map(mask).collect()).expect("sizes");
        let b = leray_project(&field(FieldKind::Velocity, &spec[0..2]));
        let bt = field(FieldKind::Director, &spec[2..5]);
        // M_i = Π Σ_j ∂_j T_ij
        let t = [[&spec[5], &spec[6]], [&spec[6], &spec[7]]];
        let mut mc = vec![vec![Complex64::new(0.0, 0.0); len]; 2];
        for (i, row) in t.iter().enumerate() {
            for idx in 0..len {
                if g.retained(idx) {
                    let (kx, ky) = g.k_deriv(idx);
                    mc[i][idx] = Complex64::new(0.0, kx) * row[0][idx] + Complex64::new(0.0, ky) * row[1][idx];
                }
            }
        }
        let m = leray_project(&SpectralField::from_coeffs(g, FieldKind::Velocity, mc).expect("sizes"));
        let f = field(FieldKind::Director, &spec[8..11]);
        let (g1, g2) = if with_g {
            (field(FieldKind::Director, &spec[11..14]), field(FieldKind::Director, &spec[14..17]))
        } else {
            (SpectralField::zeros(g, FieldKind::Director), SpectralField::zeros(g, FieldKind::Director))
        };
        let ca = g.cell_area();
        Evaluation { b, bt, m, f, g1, g2, potential: pot * ca, lq: lq * ca }
    }

    pub fn scalars(&self, s: &SystemState) -> StateScalars {
        StateScalars::from_parts(s, &self.f, self.potential, self.lq)
    }
}

/// One-step map for a fixed scheme and step size.
#[derive(Clone, Debug)]
pub struct Stepper {
    pub scheme: Scheme,
    pub dt: f64,
    factor: Vec<f64>,
}

impl Stepper {
    pub fn new(grid: &Arc<Grid>, scheme: Scheme, dt: f64) -> Self {
        let factor = grid
            .k2()
            .iter()
            .map(|&k2| match scheme {
                Scheme::SemiImplicitEm => 1.0 / (1.0 + dt * k2),
                Scheme::ExponentialEm => (-dt * k2).exp(),
            })
            .collect();
        Stepper { scheme, dt, factor }
    }

    /// `L·base`.
    pub fn propagate(&self, base: &SystemState) -> SystemState {
        let lin = |b: &SpectralField| b.map_coeffs(|i, z| z * self.factor[i]);
        SystemState { v: lin(&base.v), n: lin(&base.n), t: base.t + self.dt }
    }

    /// `L[base + θ(N(at)dt + σ(at)ΔW)]` with `L` the scheme's linear factor and
    /// the drift and noise evaluated at `at` (already summarized in `ev`).
    #[allow(clippy::too_many_arguments)]
    pub fn advance(&self, model: &Model, base: &SystemState, at: &SystemState, ev: &Evaluation, dw: &[f64], theta: f64) -> SystemState {
        let dt = self.dt;
        let j = model.vnoise.j();
        let mut inc_v = SpectralField::zeros(&model.grid, FieldKind::Velocity);
        let mut inc_n = SpectralField::zeros(&model.grid, FieldKind::Director);
        if model.nonlinear {
            inc_v.axpy(-dt, &ev.b);
            inc_v.axpy(-dt, &ev.m);
            inc_n.axpy(-dt, &ev.bt);
            inc_n.axpy(dt, &ev.f);
        }
        if !model.dnoise.is_off() {
            inc_n.axpy(0.5 * dt, &ev.g2);
            inc_n.axpy(dw[j], &ev.g1);
        }
        if !model.vnoise.is_off() {
            inc_v = inc_v.add(&model.vnoise.combine(&at.v, &dw[..j]));
        }
        let lin = |b: &SpectralField, inc: &SpectralField| {
            let f = &self.factor;
            let comps = b
                .comps()
                .iter()
                .zip(inc.comps())
                .map(|(x, y)| x.iter().zip(y).zip(f).map(|((&p, &q), &l)| (p + q * theta) * l).collect())
                .collect();
            SpectralField::from_coeffs(b.grid(), b.kind(), comps).expect("sizes")
        };
        SystemState { v: lin(&base.v, &inc_v), n: lin(&base.n, &inc_n), t: base.t + dt }
    }
}

/// One step of the configured scheme from `state` with increments `dw`.
pub fn step(state: &SystemState, dw: &[f64], cfg: &SolverConfig) -> Result<SystemState> {
    if !state.is_finite() {
        return Err(Error::Range("non-finite state".into()));
    }
    if dw.len() < cfg.channels() {
        return Err(Error::Shape(format!("{} increments for {} channels", dw.len(), cfg.channels())));
    }
    let model = Model::from_config(cfg);
    let ev = Evaluation::new(&model, state);
    let next = Stepper::new(&cfg.grid, cfg.scheme, cfg.dt).advance(&model, state, state, &ev, dw, 1.0);
    if !next.is_finite() {
        return Err(Error::BlowUp { step: 1, t: next.t });
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Every state, when `keep_states` was set.
    pub trajectory: Option<Trajectory>,
    pub final_state: SystemState,
    pub trace: EnergyTrace,
    /// First crossing of `Q > k²`, one per configured level.
    pub stopping: Vec<StoppingTime>,
    pub blowup: Option<StoppingTime>,
    pub path: WienerPath,
}

/// Integrate to `T` or until blow-up, recording the trace and `τ_k`.
pub fn run_trajectory(cfg: &SolverConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let model = Model::from_config(cfg);
    let stepper = Stepper::new(&cfg.grid, cfg.scheme, cfg.dt);
    let path = cfg.noise_path()?;
    let steps = cfg.steps();
    let dt = cfg.dt;
    let mut s = cfg.initial.build(&cfg.grid)?;
    let mut tb = TraceBuilder::new(&cfg.diagnostics, &cfg.poly, dt, cfg.output_stride);
    let mut crossings: Vec<Option<usize>> = vec![None; cfg.k_levels.len()];
    let mut states = Vec::new();
    let mut blowup = None;
    let limit = cfg.blowup_k * cfg.blowup_k;
    for m in 0..=steps {
        s.t = m as f64 * dt;
        let ev = Evaluation::new(&model, &s);
        let q = tb.push(m, s.t, &ev.scalars(&s));
        for (c, k) in crossings.iter_mut().zip(&cfg.k_levels) {
            if c.is_none() && q > k * k {
                *c = Some(m);
            }
        }
        if cfg.keep_states {
            states.push(s.clone());
        }
        if !q.is_finite() || q > limit {
            blowup = Some(StoppingTime::at_index(0.0, dt, m, StopKind::TauK));
            break;
        }
        if m == steps {
            break;
        }
        let next = stepper.advance(&model, &s, &s, &ev, &path.at(m), 1.0);
        if !next.is_finite() {
            blowup = Some(StoppingTime::at_index(0.0, dt, m + 1, StopKind::TauK));
            break;
        }
        s = next;
    }
    let stopping = crossings
        .iter()
        .map(|c| match c {
            Some(m) => StoppingTime::at_index(0.0, dt, *m, StopKind::TauK),
            None => StoppingTime::infinite(StopKind::TauK),
        })
        .collect();
    let trajectory = cfg.keep_states.then(|| {
        let mut t = Trajectory::new(&cfg.grid, 0.0, dt, states);
        t.noise_record = Some(path.truncate(t.len().saturating_sub(1)));
        t
    });
    Ok(RunOutput { trajectory, final_state: s, trace: tb.finish(), stopping, blowup, path })
}

/// First recorded time with `Q > k²`, or `+∞`.
pub fn detect_tau(trace: &EnergyTrace, k: f64) -> StoppingTime {
    match trace.rows.iter().find(|r| r.q > k * k) {
        Some(r) => StoppingTime { value: r.t, grid_index: Some(r.step), kind: StopKind::TauK },
        None => StoppingTime::infinite(StopKind::TauK),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::TraceRow;
    use crate::fields::make_grid;
    use crate::operators::{apply_b, apply_btilde, apply_g, apply_m, eval_f, eval_f_potential};

    fn g16() -> Arc<Grid> {
        make_grid(16, 16, 2.0 / 3.0).unwrap()
    }

    fn quiet(g: &Arc<Grid>, v: VelocityInit, n: DirectorInit) -> SolverConfig {
        let mut c = SolverConfig::standard(g).noise_free();
        c.initial = InitialData::Preset { v, n, seed: 3 };
        c
    }

    #[test]
    fn evaluation_matches_operators() {
        let g = make_grid(32, 32, 2.0 / 3.0).unwrap();
        let cfg = SolverConfig::standard(&g);
        let s = cfg.initial.build(&g).unwrap();
        let model = Model::from_config(&cfg);
        let ev = Evaluation::new(&model, &s);
        assert!(ev.b.max_abs_diff(&apply_b(&s.v, &s.v)) < 1e-13);
        assert!(ev.bt.max_abs_diff(&apply_btilde(&s.v, &s.n)) < 1e-13);
        assert!(ev.m.max_abs_diff(&apply_m(&s.n, &s.n)) < 1e-13);
        assert!(ev.f.max_abs_diff(&eval_f(&s.n, &cfg.poly)) < 1e-13);
        assert!(ev.g1.max_abs_diff(&apply_g(&s.n, &cfg.dnoise, 1).unwrap()) < 1e-13);
        assert!(ev.g2.max_abs_diff(&apply_g(&s.n, &cfg.dnoise, 2).unwrap()) < 1e-13);
        assert!((ev.potential - eval_f_potential(&s.n, &cfg.poly)).abs() < 1e-11);
    }

    #[test]
    fn equilibria() {
        let g = g16();
        let cfg = SolverConfig::standard(&g).noise_free();
        let z = SystemState::zeros(&g, 0.0);
        let dw = vec![0.0; cfg.channels()];
        let next = step(&z, &dw, &cfg).unwrap();
        assert_eq!(next.v.max_abs(), 0.0);
        assert_eq!(next.n.max_abs(), 0.0);
        let e1 = InitialData::Preset { v: VelocityInit::Zero, n: DirectorInit::Constant([1.0, 0.0, 0.0]), seed: 0 };
        let s = e1.build(&g).unwrap();
        let mut cur = s.clone();
        for _ in 0..10 {
            cur = step(&cur, &dw, &cfg).unwrap();
        }
        assert!(cur.n.max_abs_diff(&s.n) < 1e-15);
        assert_eq!(cur.v.max_abs(), 0.0);
    }

    #[test]
    fn heat_mode_decay() {
        let g = g16();
        let run = |dt: f64| {
            let mut c = quiet(&g, VelocityInit::Zero, DirectorInit::SineX(1.0));
            c.nonlinear = false;
            c.dt = dt;
            c.t_end = 0.5;
            let out = run_trajectory(&c).unwrap();
            let idx = g.index_of(1, 0);
            out.final_state.n.comp(0)[idx].im
        };
        // one step: sin x has coefficient −i/2 at k = (1, 0)
        let mut c = quiet(&g, VelocityInit::Zero, DirectorInit::SineX(1.0));
        c.nonlinear = false;
        let s = c.initial.build(&g).unwrap();
        let next = step(&s, &vec![0.0; c.channels()], &c).unwrap();
        let idx = g.index_of(1, 0);
        assert!((next.n.comp(0)[idx].im - (-0.5 / (1.0 + c.dt))).abs() < 1e-15);
        let exact = -0.5 * (-0.5f64).exp();
        let e1 = (run(0.01) - exact).abs();
        let e2 = (run(0.005) - exact).abs();
        let order = (e1 / e2).log2();
        assert!((order - 1.0).abs() < 0.05, "order {order}");
    }

    #[test]
    fn energy_decreases_for_taylor_green() {
        let g = g16();
        let c = quiet(&g, VelocityInit::TaylorGreen(1.0), DirectorInit::Constant([1.0, 0.0, 0.0]));
        let out = run_trajectory(&c).unwrap();
        assert_eq!(out.trace.rows.len(), 1001);
        for w in out.trace.rows.windows(2) {
            assert!(w[1].e < w[0].e);
        }
    }

    #[test]
    fn determinism() {
        let g = g16();
        let mut c = SolverConfig::standard(&g);
        c.t_end = 0.05;
        c.seed = 11;
        let a = run_trajectory(&c).unwrap();
        let b = run_trajectory(&c).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.final_state.bit_eq(&b.final_state));
        c.seed = 12;
        assert_ne!(run_trajectory(&c).unwrap().trace, a.trace);
    }

    #[test]
    fn tau_crossing_at_start() {
        let g = g16();
        let mut c = SolverConfig::standard(&g);
        c.t_end = 0.01;
        c.k_levels = vec![1.0];
        let out = run_trajectory(&c).unwrap();
        assert_eq!(out.stopping[0].value, 0.0);
        assert_eq!(out.stopping[0].grid_index, Some(0));
    }

    fn q_trace(qs: &[f64], dt: f64) -> EnergyTrace {
        let rows = qs
            .iter()
            .enumerate()
            .map(|(i, &q)| TraceRow {
                step: i,
                t: i as f64 * dt,
                e: 0.0,
                d: 0.0,
                psi1: 0.0,
                psi2: 0.0,
                phi: 1.0,
                q,
                xnorm: 0.0,
                v_l2: 0.0,
                n_h1: 0.0,
                n_h2: 0.0,
                e_gl: 0.0,
                e_ito: 0.0,
                lq: 0.0,
                av_sq: 0.0,
                grad_y_sq: 0.0,
            })
            .collect();
        EnergyTrace { rows, ..Default::default() }
    }

    #[test]
    fn detect_tau_examples() {
        assert!(!detect_tau(&q_trace(&[0.0; 10], 1.0), 1.0).is_finite());
        let dt = 0.25;
        let qs: Vec<f64> = (0..20).map(|i| i as f64 * dt).collect();
        let tr = q_trace(&qs, dt);
        assert_eq!(detect_tau(&tr, 1.0).value, 1.0 + dt);
        let mut prev = 0.0;
        for k in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let t = detect_tau(&tr, k).value;
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn first_order_convergence() {
        let g = g16();
        let base = quiet(
            &g,
            VelocityInit::Random { amplitude: 1.0, k_scale: 1.5 },
            DirectorInit::Perturbed { base: [0.6, 0.0, 0.8], amplitude: 1.0, k_scale: 1.5 },
        );
        let run = |dt: f64| {
            let mut c = base.clone();
            c.dt = dt;
            c.t_end = 0.5;
            run_trajectory(&c).unwrap().final_state
        };
        let reference = run(0.02 / 64.0);
        let errs: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&dt| run(dt).sub(&reference).v_norm_sq().sqrt()).collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 0.9, "order {order} from {errs:?}");
        }
    }

    #[test]
    fn config_validation() {
        let g = g16();
        let mut c = SolverConfig::standard(&g);
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::standard(&g);
        c.k_levels = vec![2.0, 1.0];
        assert!(c.validate().is_err());
        let mut c = SolverConfig::standard(&g);
        c.noise_dt = Some(c.dt / 2.5);
        assert!(c.validate().is_err());
        c.noise_dt = Some(c.dt / 4.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn coarse_path_matches_fine_sum() {
        let g = g16();
        let mut c = SolverConfig::standard(&g);
        c.t_end = 0.01;
        c.noise_dt = Some(c.dt / 2.0);
        let p = c.noise_path().unwrap();
        let fine = sample_path(c.seed, c.dt / 2.0, 20, c.channels()).unwrap();
        assert_eq!(p.steps(), 10);
        assert!((p.increments[3][4] - (fine.increments[3][8] + fine.increments[3][9])).abs() < 1e-15);
    }
}
