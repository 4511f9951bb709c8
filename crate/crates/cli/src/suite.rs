//! Check suites behind `verify` and `convolution-test`.

use std::sync::Arc;

use nematiq_core::diagnostics::{
    inequality_probe, ito_residual_energy, ito_residual_psi1, lin_liu_residual, orthogonality_ledger, CheckRecord, ProbeKind, ProbeSetup,
};
use nematiq_core::fields::{sample_field, FieldKind, Grid, SpectralField, SystemState};
use nematiq_core::integrator::{run_trajectory, DirectorInit, InitialData, SolverConfig, VelocityInit};
use nematiq_core::noise::{sample_path, stochastic_convolution, stopped_convolution, HeatSemigroup, Semigroup, StopKind, StoppingTime};
use nematiq_core::operators::{apply_btilde, leray_project, trilinear_b};
use nematiq_core::picard::{chain_windows, theta, CutoffSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SKEW_TOL: f64 = 1e-10;
pub const COUPLING_TOL: f64 = 1e-8;
pub const LERAY_TOL: f64 = 1e-10;
pub const MIN_ORDER: f64 = 1.9;
pub const CONTRACTION_MAX: f64 = 0.6;
pub const CONVOLUTION_TOL: f64 = 1e-12;

/// Smooth random state: amplitudes log-uniform in `[0.5, 2]`, envelope width 1.5.
pub fn random_state<R: Rng + ?Sized>(grid: &Arc<Grid>, rng: &mut R) -> SystemState {
    let mut amp = || (0.5f64.ln() + rng.gen::<f64>() * 4f64.ln()).exp();
    let (a, b) = (amp(), amp());
    let v = sample_field(grid, FieldKind::Velocity, rng, a, 1.5);
    let n = sample_field(grid, FieldKind::Director, rng, b, 1.5);
    SystemState { v, n, t: 0.0 }
}

fn max_abs(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, |a, b| a.max(b.abs()))
}

fn below(check: &str, statistic: &str, value: f64, tol: f64) -> CheckRecord {
    CheckRecord::new(check, statistic, value, value <= tol)
}

/// Exact structural identities on `samples` random states.
pub fn identity_checks(cfg: &SolverConfig, samples: usize, seed: u64) -> Vec<CheckRecord> {
    let grid = &cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 7];
    for _ in 0..samples {
        let s = random_state(grid, &mut rng);
        let w = random_state(grid, &mut rng).v;
        let ledger = orthogonality_ledger(&s, &cfg.poly);
        // first two director components: a generic, non-solenoidal vector field
        let u = SpectralField::from_coeffs(grid, FieldKind::Velocity, s.n.comps()[..2].to_vec()).expect("sizes");
        let p = leray_project(&u);
        let vals = [
            trilinear_b(&s.v, &s.v, &w).unwrap() + trilinear_b(&s.v, &w, &s.v).unwrap(),
            trilinear_b(&s.v, &w, &w).unwrap(),
            apply_btilde(&s.v, &s.n).inner(&s.n),
            ledger[1],
            ledger[2],
            leray_project(&p).max_abs_diff(&p),
            p.divergence().max_abs(),
        ];
        for (a, b) in worst.iter_mut().zip(vals) {
            *a = a.max(b.abs());
        }
    }
    vec![
        below("b_antisymmetry", "max|b(u,v,w)+b(u,w,v)|", worst[0], SKEW_TOL),
        below("b_vanishing", "max|b(u,v,v)|", worst[1], SKEW_TOL),
        below("btilde_orthogonal", "max|<B~(v,n),n>|", worst[2], SKEW_TOL),
        below("coupling_cancellation", "max|<B~(v,n),A1 n>+<M(n),v>|", worst[3], COUPLING_TOL),
        below("divergence_identity", "max|<v.grad n,f(n)>|", worst[4], COUPLING_TOL),
        below("leray_idempotent", "max|PPu-Pu|", worst[5], LERAY_TOL),
        below("leray_divergence_free", "max|div Pu|", worst[6], LERAY_TOL),
    ]
}

/// Observed orders of the per-step residuals of the energy, Ψ₁ and
/// Ginzburg–Landau energy laws without noise, over three halvings of `dt`.
pub fn residual_orders(cfg: &SolverConfig) -> [Vec<f64>; 3] {
    let levels: Vec<[f64; 3]> = (0..3)
        .map(|i| {
            let mut c = cfg.clone().noise_free();
            c.dt = 2e-3 / (1 << i) as f64;
            c.t_end = 8e-3;
            c.noise_dt = None;
            c.keep_states = true;
            let out = run_trajectory(&c).expect("valid config");
            let tr = out.trajectory.expect("kept states");
            [
                max_abs(ito_residual_energy(&tr, &c.poly, &c.dnoise, &c.vnoise, &out.path).expect("aligned").into_iter()),
                max_abs(ito_residual_psi1(&tr, &c.poly, &c.dnoise, &out.path).expect("aligned").into_iter()),
                max_abs(lin_liu_residual(&tr, &c.poly).into_iter()),
            ]
        })
        .collect();
    let order = |i: usize| levels.windows(2).map(|w| (w[0][i] / w[1][i]).log2()).collect();
    [order(0), order(1), order(2)]
}

fn order_check(name: &str, orders: &[f64]) -> CheckRecord {
    let min = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    CheckRecord::new(name, "min observed order", min, min >= MIN_ORDER)
}

/// Largest `|θ_n(x) − θ_n(y)|/|x − y|` minus `(15/8)/n`, and the exactness flags.
pub fn cutoff_contract<R: Rng + ?Sized>(levels: &[f64], samples: usize, rng: &mut R) -> (bool, f64) {
    let mut exact = true;
    let mut excess = f64::NEG_INFINITY;
    for &n in levels {
        let c = CutoffSpec::new(n).expect("positive level");
        for _ in 0..samples {
            let a = rng.gen::<f64>() * n;
            let b = 2.0 * n + rng.gen::<f64>() * 10.0 * n;
            exact &= theta(a, &c) == 1.0 && theta(n, &c) == 1.0 && theta(b, &c) == 0.0 && theta(2.0 * n, &c) == 0.0;
            let x = rng.gen::<f64>() * 3.0 * n;
            let y = x + (rng.gen::<f64>() - 0.5) * n * 10f64.powf(-4.0 * rng.gen::<f64>());
            if x != y {
                let r = (theta(x, &c) - theta(y, &c)).abs() / (x - y).abs();
                excess = excess.max(r - c.lipschitz_bound / n);
            }
        }
    }
    (exact, excess)
}

/// Small-data configuration for contraction measurements.
pub fn small_data(cfg: &SolverConfig) -> SolverConfig {
    let mut c = cfg.clone();
    c.initial = InitialData::Preset {
        v: VelocityInit::Random { amplitude: 0.3, k_scale: 1.5 },
        n: DirectorInit::Perturbed { base: [0.0, 0.0, 1.0], amplitude: 0.3, k_scale: 1.5 },
        seed: 5,
    };
    c.t_end = 0.05;
    c.noise_dt = None;
    c
}

/// The full `verify` suite.
pub fn verify_suite(cfg: &SolverConfig, samples: usize, seed: u64) -> Vec<CheckRecord> {
    let mut out = identity_checks(cfg, samples, seed);
    let [e, p, l] = residual_orders(cfg);
    out.push(order_check("ito_energy_order", &e));
    out.push(order_check("psi1_ito_order", &p));
    out.push(order_check("gl_energy_order", &l));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (exact, excess) = cutoff_contract(&[1.0, 4.0, 16.0], samples, &mut rng);
    out.push(CheckRecord::new("cutoff_exact", "exact on [0,n] and [2n,inf)", if exact { 1.0 } else { 0.0 }, exact));
    out.push(below("cutoff_lipschitz", "max ratio - (15/8)/n", excess, 1e-12));

    let small = small_data(cfg);
    match chain_windows(&small, CutoffSpec::new(1e3).expect("positive"), 0.01, 1e-8, 30) {
        Ok(ch) => out.push(below("picard_contraction", "max successive distance ratio", ch.max_factor, CONTRACTION_MAX)),
        Err(e) => out.push(CheckRecord::new(&format!("picard_contraction ({e})"), "error", f64::NAN, false)),
    }

    let fine = sample_path(seed, cfg.dt / 2.0, 40, 2).expect("positive dt");
    let coarse = fine.coarsen(2).expect("divides");
    let dev = max_abs((0..2).flat_map(|c| (0..20).map(move |m| (c, m))).map(|(c, m)| {
        coarse.increments[c][m] - fine.increments[c][2 * m] - fine.increments[c][2 * m + 1]
    }));
    out.push(below("path_refinement", "max|coarse - sum fine|", dev, 1e-15));

    let setup = ProbeSetup::new(&cfg.grid, cfg.poly.clone(), cfg.dnoise.clone());
    for kind in ProbeKind::ALL {
        let r = inequality_probe(kind, samples, &setup, &mut rng);
        out.push(CheckRecord::new(&format!("probe_{}", kind.name()), "max ratio", r.max_ratio, r.max_ratio.is_finite()));
    }
    out
}

/// Discrete stopped-convolution identities over random `(path, τ)` pairs.
pub fn convolution_suite(grid: &Arc<Grid>, dt: f64, samples: usize, seed: u64) -> Vec<CheckRecord> {
    let steps = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<SpectralField> = (0..steps).map(|_| sample_field(grid, FieldKind::Director, &mut rng, 1.0, 2.0)).collect();
    let sg = HeatSemigroup;
    let mut worst = [0.0f64; 3];
    for k in 0..samples {
        let path = sample_path(seed.wrapping_add(k as u64), dt, steps, 1).expect("positive dt");
        let it = rng.gen_range(0..=steps);
        let itau = rng.gen_range(0..=steps);
        let isig = rng.gen_range(0..=itau);
        let t = it as f64 * dt;
        let tau = StoppingTime::at_index(0.0, dt, itau, StopKind::Synthetic);
        let sigma = StoppingTime::at_index(0.0, dt, isig, StopKind::Synthetic);
        let tmin = it.min(itau) as f64 * dt;
        let i_min = stochastic_convolution(&sg, &xi, &path, 0, tmin).expect("aligned");
        let lhs = sg.apply(&i_min, t - tmin);
        let rhs = stopped_convolution(&sg, &xi, &path, 0, &tau, t).expect("aligned");
        worst[0] = worst[0].max(lhs.max_abs_diff(&rhs));
        let r2 = stopped_convolution(&sg, &xi, &path, 0, &tau, tmin).expect("aligned");
        worst[1] = worst[1].max(i_min.max_abs_diff(&r2));
        let ts = it.min(isig) as f64 * dt;
        let a = stopped_convolution(&sg, &xi, &path, 0, &tau, ts).expect("aligned");
        let b = stopped_convolution(&sg, &xi, &path, 0, &sigma, ts).expect("aligned");
        worst[2] = worst[2].max(a.max_abs_diff(&b));
    }
    vec![
        below("semigroup_of_stopped", "max|S I(t^tau) - I_tau(t)|", worst[0], CONVOLUTION_TOL),
        below("stopped_at_stop", "max|I(t^tau) - I_tau(t^tau)|", worst[1], CONVOLUTION_TOL),
        below("nested_stops", "max|I_tau(t^s) - I_s(t^s)|", worst[2], CONVOLUTION_TOL),
    ]
}
