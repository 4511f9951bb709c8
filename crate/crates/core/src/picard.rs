//! Truncated fixed-point construction of mild solutions on short windows.
//!
//! The discrete map is `Ψ_{m+1} = S_dt[Ψ_m + θ_n(|u|_{X_{t_m}})(F(u_m)dt + σ(u_m)ΔW_m)]`
//! with `S_dt = e^{−dt|k|²}`, so it is exactly affine in the increments and with
//! `θ = 1` reproduces the exponential Euler–Maruyama step bit for bit.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::fields::{sample_field, FieldKind, RunningXNorm, SystemState, Trajectory};
use crate::integrator::{Evaluation, Model, Scheme, SolverConfig, Stepper};
use crate::noise::{StopKind, StoppingTime, WienerPath};
use crate::operators::leray_project;
use crate::{Error, Result};

/// Truncation level `n` of the cutoff `θ_n(x) = θ(x/n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CutoffSpec {
    pub n: f64,
    pub lipschitz_bound: f64,
}

impl CutoffSpec {
    pub fn new(n: f64) -> Result<Self> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Range(format!("cutoff level {n} must be positive")));
        }
        Ok(CutoffSpec { n, lipschitz_bound: 15.0 / 8.0 })
    }
}

/// 1 on `[0, n]`, quintic smoothstep down on `(n, 2n)`, 0 beyond.
pub fn theta(x: f64, spec: &CutoffSpec) -> f64 {
    let n = spec.n;
    if x <= n {
        1.0
    } else if x >= 2.0 * n {
        0.0
    } else {
        let s = (x - n) / n;
        1.0 - s * s * s * (s * (6.0 * s - 15.0) + 10.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub window: usize,
    pub iter: usize,
    pub distance: f64,
    /// `distance / previous distance`.
    pub factor: Option<f64>,
}

/// The window `[δ, T]` of the space of candidates fixed to the anchor on `[0, δ]`.
/// The anchor prefix enters the map only through its end state and its running
/// X-norm, which is all that is kept.
#[derive(Clone, Debug)]
pub struct PicardWindow {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub dt: f64,
    pub anchor_end: SystemState,
    pub anchor_norm: RunningXNorm,
    pub path: Arc<WienerPath>,
    pub cutoff: CutoffSpec,
    pub iterates: Vec<IterRecord>,
}

impl PicardWindow {
    /// Window `[0, T]` anchored at the single state `a(0)`.
    pub fn initial(a0: SystemState, steps: usize, path: Arc<WienerPath>, cutoff: CutoffSpec) -> Result<Self> {
        let dt = path.dt();
        let mut anchor_norm = RunningXNorm::new(dt);
        anchor_norm.push(&a0);
        PicardWindow::new(0, 0, steps, a0, anchor_norm, path, cutoff)
    }

    pub fn new(
        index: usize,
        start: usize,
        end: usize,
        anchor_end: SystemState,
        anchor_norm: RunningXNorm,
        path: Arc<WienerPath>,
        cutoff: CutoffSpec,
    ) -> Result<Self> {
        if end <= start {
            return Err(Error::Range(format!("empty window [{start}, {end}]")));
        }
        if end > path.steps() {
            return Err(Error::Shape(format!("window ends at step {end}, path has {}", path.steps())));
        }
        Ok(PicardWindow { index, start, end, dt: path.dt(), anchor_end, anchor_norm, path, cutoff, iterates: Vec::new() })
    }

    pub fn steps(&self) -> usize {
        self.end - self.start
    }

    /// Candidate constant in time at the anchor end.
    pub fn frozen_candidate(&self) -> Vec<SystemState> {
        (0..=self.steps())
            .map(|m| SystemState { t: self.anchor_end.t + m as f64 * self.dt, ..self.anchor_end.clone() })
            .collect()
    }
}

/// The operators the map is built from; always the exponential step.
#[derive(Clone, Debug)]
pub struct PicardSystem {
    pub model: Model,
    pub stepper: Stepper,
}

impl PicardSystem {
    pub fn new(model: Model, dt: f64) -> Self {
        let stepper = Stepper::new(&model.grid, Scheme::ExponentialEm, dt);
        PicardSystem { model, stepper }
    }

    pub fn from_config(cfg: &SolverConfig) -> Self {
        PicardSystem::new(Model::from_config(cfg), cfg.dt)
    }
}

/// `Ψ(u)` on the window; `u[0]` must be the anchor end.
pub fn psi_map(u: &[SystemState], win: &PicardWindow, sys: &PicardSystem) -> Result<Vec<SystemState>> {
    let len = win.steps() + 1;
    if u.len() != len {
        return Err(Error::Shape(format!("candidate has {} states, window needs {len}", u.len())));
    }
    if !u[0].bit_eq(&win.anchor_end) {
        return Err(Error::AnchorMismatch(win.start));
    }
    let mut xn = win.anchor_norm.clone();
    let mut out = Vec::with_capacity(len);
    out.push(win.anchor_end.clone());
    for m in 0..len - 1 {
        let x = if m == 0 { xn.value() } else { xn.push(&u[m]) };
        let th = theta(x, &win.cutoff);
        let next = if th == 0.0 {
            sys.stepper.propagate(&out[m])
        } else {
            let ev = Evaluation::new(&sys.model, &u[m]);
            sys.stepper.advance(&sys.model, &out[m], &u[m], &ev, &win.path.at(win.start + m), th)
        };
        out.push(next);
    }
    Ok(out)
}

/// `‖a − b‖_X` over the window.
pub fn window_distance(a: &[SystemState], b: &[SystemState], dt: f64) -> f64 {
    let mut acc = RunningXNorm::new(dt);
    for (x, y) in a.iter().zip(b) {
        let d = x.sub(y);
        acc.push(&d);
    }
    acc.value()
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub states: Vec<SystemState>,
    pub records: Vec<IterRecord>,
    /// First `k` with `‖Ψ(uᵏ) − uᵏ‖_X ≤ tol`, `uᵏ = Ψᵏ(u⁰)`.
    pub converged_at: usize,
    /// Largest ratio of successive nonzero distances.
    pub max_factor: f64,
    /// Last two iterates agree bit for bit.
    pub exact: bool,
}

/// Iterate `Ψ` from the frozen candidate until the distance drops to `tol`,
/// then on to bitwise fixity within `max_iter`.
pub fn fixed_point(win: &mut PicardWindow, sys: &PicardSystem, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    let mut u = win.frozen_candidate();
    let mut prev: Option<f64> = None;
    let mut converged_at = None;
    let mut max_factor: f64 = 0.0;
    let mut streak = 0;
    for k in 1..=max_iter {
        let next = psi_map(&u, win, sys)?;
        let d = window_distance(&next, &u, win.dt);
        let exact = d == 0.0 && next.iter().zip(&u).all(|(a, b)| a.bit_eq(b));
        let factor = prev.filter(|&p| p > 0.0).map(|p| d / p);
        win.iterates.push(IterRecord { window: win.index, iter: k, distance: d, factor });
        if !d.is_finite() {
            return Err(Error::NoConvergence { iters: k, distance: d });
        }
        if let Some(f) = factor {
            if d > 0.0 {
                max_factor = max_factor.max(f);
            }
            streak = if f >= 1.0 { streak + 1 } else { 0 };
            if streak >= 3 {
                return Err(Error::WindowTooLong { factor: f });
            }
        }
        if converged_at.is_none() && d <= tol {
            converged_at = Some(k - 1);
        }
        u = next;
        prev = Some(d);
        if exact {
            break;
        }
    }
    let exact = win.iterates.last().map(|r| r.distance == 0.0).unwrap_or(false);
    match converged_at {
        Some(c) => Ok(FixedPoint { states: u, records: win.iterates.clone(), converged_at: c, max_factor, exact }),
        None => Err(Error::NoConvergence { iters: max_iter, distance: prev.unwrap_or(f64::NAN) }),
    }
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub trajectory: Trajectory,
    /// First grid time with `|uⁿ|_{X_t} ≥ n`.
    pub tau: StoppingTime,
    pub records: Vec<IterRecord>,
    pub max_factor: f64,
    pub max_iterations: usize,
}

/// Solve consecutive windows of length `window_len`, each anchored on the glued
/// solution so far, and locate `τ_n`.
pub fn chain_windows(cfg: &SolverConfig, cutoff: CutoffSpec, window_len: f64, tol: f64, max_iter: usize) -> Result<ChainOutput> {
    cfg.validate()?;
    let steps = cfg.steps();
    let w = (window_len / cfg.dt).round() as usize;
    if w == 0 || ((window_len / cfg.dt) - w as f64).abs() > 1e-9 * w as f64 || !steps.is_multiple_of(w) {
        return Err(Error::Range(format!("window {window_len} does not divide T = {}", cfg.t_end)));
    }
    let sys = PicardSystem::from_config(cfg);
    let path = Arc::new(cfg.noise_path()?);
    let a0 = cfg.initial.build(&cfg.grid)?;
    let mut norm = RunningXNorm::new(cfg.dt);
    norm.push(&a0);
    let mut states = vec![a0];
    let mut records = Vec::new();
    let mut max_factor: f64 = 0.0;
    let mut max_iterations = 0;
    for (i, start) in (0..steps).step_by(w).enumerate() {
        let anchor = states.last().expect("nonempty").clone();
        let mut win = PicardWindow::new(i, start, start + w, anchor, norm.clone(), path.clone(), cutoff)?;
        let fp = fixed_point(&mut win, &sys, tol, max_iter)?;
        max_factor = max_factor.max(fp.max_factor);
        max_iterations = max_iterations.max(fp.records.len());
        records.extend(fp.records);
        for s in fp.states.into_iter().skip(1) {
            norm.push(&s);
            states.push(s);
        }
    }
    let tau = truncation_time(&states, cfg.dt, cutoff.n);
    let mut trajectory = Trajectory::new(&cfg.grid, 0.0, cfg.dt, states);
    trajectory.noise_record = Some((*path).clone());
    Ok(ChainOutput { trajectory, tau, records, max_factor, max_iterations })
}

/// First grid time with running `|u|_{X_t} ≥ n`.
pub fn truncation_time(states: &[SystemState], dt: f64, n: f64) -> StoppingTime {
    let mut acc = RunningXNorm::new(dt);
    for (m, s) in states.iter().enumerate() {
        if acc.push(s) >= n {
            return StoppingTime::at_index(0.0, dt, m, StopKind::TauNTruncation);
        }
    }
    StoppingTime::infinite(StopKind::TauNTruncation)
}

/// 𝓥-norm of `Ψ(u) − u` at every grid time, with `Ψ` over the whole horizon.
pub fn truncated_residual(traj: &Trajectory, cutoff: CutoffSpec, sys: &PicardSystem, path: Arc<WienerPath>) -> Result<Vec<f64>> {
    let steps = traj.len().saturating_sub(1);
    let win = PicardWindow::initial(traj.states[0].clone(), steps, path, cutoff)?;
    let psi = psi_map(&traj.states, &win, sys)?;
    Ok(psi.iter().zip(&traj.states).map(|(a, b)| a.sub(b).v_norm_sq().sqrt()).collect())
}

/// Largest `‖Ψ(u₁) − Ψ(u₂)‖_X / ‖u₁ − u₂‖_X` over random pairs near `base`.
/// Pairs are smooth perturbations of relative size up to `rel` on each state
/// after the anchor.
pub fn contraction_probe<R: Rng + ?Sized>(
    base: &[SystemState],
    win: &PicardWindow,
    sys: &PicardSystem,
    pairs: usize,
    rel: f64,
    rng: &mut R,
) -> Result<f64> {
    let grid = base[0].grid().clone();
    let scale = base.iter().map(|s| s.v_norm_sq()).fold(0.0, f64::max).sqrt().max(1e-3);
    let perturb = |rng: &mut R| -> Vec<SystemState> {
        let a = rel * scale * rng.gen_range(0.1..1.0);
        base.iter()
            .enumerate()
            .map(|(m, s)| {
                if m == 0 {
                    return s.clone();
                }
                let dv = leray_project(&sample_field(&grid, FieldKind::Velocity, rng, a, 1.5));
                let dn = sample_field(&grid, FieldKind::Director, rng, a, 1.5);
                SystemState { v: s.v.add(&dv).dealias(), n: s.n.add(&dn).dealias(), t: s.t }
            })
            .collect()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u1 = perturb(rng);
        let u2 = perturb(rng);
        let num = window_distance(&psi_map(&u1, win, sys)?, &psi_map(&u2, win, sys)?, win.dt);
        let den = window_distance(&u1, &u2, win.dt);
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_grid, Grid};
    use crate::integrator::{run_trajectory, DirectorInit, InitialData, VelocityInit};
    use crate::operators::{semigroup_apply, DirectorNoise, VelocityNoise};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g16() -> Arc<Grid> {
        make_grid(16, 16, 2.0 / 3.0).unwrap()
    }

    fn small(g: &Arc<Grid>) -> SolverConfig {
        let mut c = SolverConfig::standard(g);
        c.initial = InitialData::Preset {
            v: VelocityInit::Random { amplitude: 0.3, k_scale: 1.5 },
            n: DirectorInit::Perturbed { base: [0.0, 0.0, 1.0], amplitude: 0.3, k_scale: 1.5 },
            seed: 5,
        };
        c.t_end = 0.1;
        c
    }

    #[test]
    fn theta_examples() {
        let c = CutoffSpec::new(4.0).unwrap();
        assert_eq!(theta(3.0, &c), 1.0);
        assert_eq!(theta(4.0, &c), 1.0);
        assert_eq!(theta(8.0, &c), 0.0);
        assert_eq!(theta(6.0, &c), 0.5);
        assert!(CutoffSpec::new(0.0).is_err());
    }

    #[test]
    fn linear_map_is_semigroup() {
        let g = g16();
        let mut cfg = small(&g).noise_free();
        cfg.nonlinear = false;
        cfg.initial = InitialData::Preset { v: VelocityInit::Zero, n: DirectorInit::SineX(1.0), seed: 0 };
        let sys = PicardSystem::from_config(&cfg);
        let path = Arc::new(cfg.noise_path().unwrap());
        let a0 = cfg.initial.build(&g).unwrap();
        let mut win = PicardWindow::initial(a0.clone(), 10, path, CutoffSpec::new(100.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut u = win.frozen_candidate();
        for s in u.iter_mut().skip(1) {
            s.n = sample_field(&g, FieldKind::Director, &mut rng, 1.0, 2.0);
        }
        let psi = psi_map(&u, &win, &sys).unwrap();
        for (m, s) in psi.iter().enumerate() {
            let exact = semigroup_apply(&a0.n, m as f64 * cfg.dt).unwrap();
            assert!(s.n.max_abs_diff(&exact) < 1e-14);
        }
        let fp = fixed_point(&mut win, &sys, 1e-12, 30).unwrap();
        assert_eq!(fp.converged_at, 1);
    }

    #[test]
    fn large_candidate_sees_only_semigroup() {
        let g = g16();
        let cfg = small(&g);
        let sys = PicardSystem::from_config(&cfg);
        let path = Arc::new(cfg.noise_path().unwrap());
        let a0 = cfg.initial.build(&g).unwrap();
        let x0 = a0.v_norm_sq().sqrt();
        let win = PicardWindow::initial(a0.clone(), 10, path, CutoffSpec::new(x0 / 2.0).unwrap()).unwrap();
        let psi = psi_map(&win.frozen_candidate(), &win, &sys).unwrap();
        for (m, s) in psi.iter().enumerate() {
            let t = m as f64 * cfg.dt;
            assert!(s.n.max_abs_diff(&semigroup_apply(&a0.n, t).unwrap()) < 1e-14);
            assert!(s.v.max_abs_diff(&semigroup_apply(&a0.v, t).unwrap()) < 1e-14);
        }
    }

    #[test]
    fn anchor_mismatch_rejected() {
        let g = g16();
        let cfg = small(&g);
        let sys = PicardSystem::from_config(&cfg);
        let a0 = cfg.initial.build(&g).unwrap();
        let win = PicardWindow::initial(a0, 5, Arc::new(cfg.noise_path().unwrap()), CutoffSpec::new(10.0).unwrap()).unwrap();
        let mut u = win.frozen_candidate();
        u[0].v = u[0].v.scale(1.5);
        assert!(matches!(psi_map(&u, &win, &sys), Err(Error::AnchorMismatch(0))));
    }

    #[test]
    fn small_data_contracts_and_matches_exponential_scheme() {
        let g = g16();
        let mut cfg = small(&g);
        cfg.scheme = Scheme::ExponentialEm;
        cfg.keep_states = true;
        let out = chain_windows(&cfg, CutoffSpec::new(1e3).unwrap(), 1e-2, 1e-8, 30).unwrap();
        assert!(out.max_factor <= 0.6, "factor {}", out.max_factor);
        assert!(!out.tau.is_finite());
        let reference = run_trajectory(&cfg).unwrap().trajectory.unwrap();
        for (a, b) in out.trajectory.states.iter().zip(&reference.states) {
            assert!(a.v.bit_eq(&b.v) && a.n.bit_eq(&b.n));
        }
        let sys = PicardSystem::from_config(&cfg);
        let path = Arc::new(out.trajectory.noise_record.clone().unwrap());
        let r = truncated_residual(&out.trajectory, CutoffSpec::new(1e3).unwrap(), &sys, path).unwrap();
        assert!(r.iter().all(|&x| x <= 1e-8));
    }

    #[test]
    fn random_pair_contraction() {
        let g = g16();
        let cfg = small(&g);
        let sys = PicardSystem::from_config(&cfg);
        let path = Arc::new(cfg.noise_path().unwrap());
        let a0 = cfg.initial.build(&g).unwrap();
        let mut win = PicardWindow::initial(a0, 10, path, CutoffSpec::new(1e3).unwrap()).unwrap();
        let fp = fixed_point(&mut win, &sys, 1e-10, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ratio = contraction_probe(&fp.states, &win, &sys, 20, 0.2, &mut rng).unwrap();
        assert!(ratio <= 0.5, "ratio {ratio}");
    }

    #[test]
    fn linear_chain_equals_one_shot() {
        let g = g16();
        let mut cfg = small(&g);
        cfg.nonlinear = false;
        cfg.dnoise = DirectorNoise::off(&g);
        cfg.vnoise = VelocityNoise::off();
        cfg.t_end = 0.02;
        let out = chain_windows(&cfg, CutoffSpec::new(10.0).unwrap(), 0.01, 1e-12, 30).unwrap();
        let a0 = cfg.initial.build(&g).unwrap();
        let sys = PicardSystem::from_config(&cfg);
        let win = PicardWindow::initial(a0, 20, Arc::new(cfg.noise_path().unwrap()), CutoffSpec::new(10.0).unwrap()).unwrap();
        let one = psi_map(&win.frozen_candidate(), &win, &sys).unwrap();
        for (a, b) in out.trajectory.states.iter().zip(&one) {
            assert!(a.v.bit_eq(&b.v) && a.n.bit_eq(&b.n));
        }
    }

    #[test]
    fn tau_monotone_and_levels_agree_before_tau() {
        let g = g16();
        let mut cfg = SolverConfig::standard(&g);
        cfg.t_end = 0.05;
        let outs: Vec<ChainOutput> =
            [2.0, 4.0, 8.0, 16.0].iter().map(|&n| chain_windows(&cfg, CutoffSpec::new(n).unwrap(), 0.01, 1e-8, 30).unwrap()).collect();
        for w in outs.windows(2) {
            assert!(w[0].tau.value <= w[1].tau.value);
            let stop = w[0].tau.grid_index.unwrap_or(usize::MAX).min(w[0].trajectory.len());
            for m in 0..stop {
                let d = w[0].trajectory.states[m].sub(&w[1].trajectory.states[m]).v_norm_sq().sqrt();
                assert!(d <= 1e-8);
            }
        }
    }

    #[test]
    fn misaligned_window_rejected() {
        let g = g16();
        let cfg = small(&g);
        assert!(chain_windows(&cfg, CutoffSpec::new(10.0).unwrap(), 0.03, 1e-8, 30).is_err());
    }
}
