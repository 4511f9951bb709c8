//! Brownian increments, stopping times and discrete stochastic convolutions.
//!
//! Increments come from counter-addressed ChaCha8 streams: the stream id is
//! the channel and the word position is a fixed multiple of the step, so any
//! `(seed, channel, step)` draw can be regenerated on its own.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fields::SpectralField;
use crate::operators::semigroup_apply;
use crate::{Error, Result};

/// 32-bit words consumed per draw (two u64 for Box–Muller).
const WORDS_PER_STEP: u128 = 4;

fn box_muller(a: u64, b: u64) -> f64 {
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn stream(seed: u64, channel: usize, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    rng
}

/// Standard normal draw addressed by `(seed, channel, step)`.
pub fn gaussian(seed: u64, channel: usize, step: usize) -> f64 {
    let mut rng = stream(seed, channel, step);
    let a = rng.next_u64();
    let b = rng.next_u64();
    box_muller(a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WienerPath {
    pub seed: u64,
    pub dt_fine: f64,
    /// Fine steps per stored increment.
    pub coarsening: usize,
    pub channels: usize,
    /// `increments[channel][step]`, each `N(0, dt)` with `dt = coarsening·dt_fine`.
    pub increments: Vec<Vec<f64>>,
}

/// Independent Gaussian increments of variance `dt_fine` per channel.
pub fn sample_path(seed: u64, dt_fine: f64, steps: usize, channels: usize) -> Result<WienerPath> {
    if !(dt_fine > 0.0 && dt_fine.is_finite()) {
        return Err(Error::Range(format!("dt_fine = {dt_fine} must be positive")));
    }
    let sd = dt_fine.sqrt();
    let increments = (0..channels)
        .map(|c| {
            let mut rng = stream(seed, c, 0);
            (0..steps)
                .map(|_| {
                    let a = rng.next_u64();
                    let b = rng.next_u64();
                    sd * box_muller(a, b)
                })
                .collect()
        })
        .collect();
    Ok(WienerPath { seed, dt_fine, coarsening: 1, channels, increments })
}

impl WienerPath {
    /// All-zero increments (noise switched off).
    pub fn zeros(dt: f64, steps: usize, channels: usize) -> Self {
        WienerPath { seed: 0, dt_fine: dt, coarsening: 1, channels, increments: vec![vec![0.0; steps]; channels] }
    }

    pub fn dt(&self) -> f64 {
        self.dt_fine * self.coarsening as f64
    }

    pub fn steps(&self) -> usize {
        self.increments.first().map_or(0, |c| c.len())
    }

    /// Increments of all channels at `step`.
    pub fn at(&self, step: usize) -> Vec<f64> {
        self.increments.iter().map(|c| c[step]).collect()
    }

    /// Path at step `m·dt` obtained by summing `m` consecutive increments.
    pub fn coarsen(&self, m: usize) -> Result<WienerPath> {
        if m == 0 || !self.steps().is_multiple_of(m) {
            return Err(Error::Range(format!("coarsening {m} does not divide {} steps", self.steps())));
        }
        let increments = self.increments.iter().map(|c| c.chunks(m).map(|w| w.iter().sum()).collect()).collect();
        Ok(WienerPath { coarsening: self.coarsening * m, increments, ..self.clone() })
    }

    /// `W(t_step)` on `channel`.
    pub fn value(&self, channel: usize, step: usize) -> f64 {
        self.increments[channel][..step].iter().sum()
    }

    /// First `steps` increments.
    pub fn truncate(&self, steps: usize) -> WienerPath {
        let increments = self.increments.iter().map(|c| c[..steps.min(c.len())].to_vec()).collect();
        WienerPath { increments, ..self.clone() }
    }

    /// One NDJSON record `{channel, step, increment}` per increment.
    pub fn write_ndjson<W: Write>(&self, w: &mut W) -> Result<()> {
        for (c, inc) in self.increments.iter().enumerate() {
            for (s, x) in inc.iter().enumerate() {
                writeln!(w, "{{\"channel\":{c},\"step\":{s},\"increment\":{x:?}}}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    TauK,
    TauNTruncation,
    Synthetic,
}

/// A grid-aligned stopping time; `value = +∞` when never reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingTime {
    pub value: f64,
    pub grid_index: Option<usize>,
    pub kind: StopKind,
}

impl StoppingTime {
    pub fn infinite(kind: StopKind) -> Self {
        StoppingTime { value: f64::INFINITY, grid_index: None, kind }
    }

    pub fn at_index(t0: f64, dt: f64, index: usize, kind: StopKind) -> Self {
        StoppingTime { value: t0 + index as f64 * dt, grid_index: Some(index), kind }
    }

    pub fn is_finite(&self) -> bool {
        self.grid_index.is_some()
    }

    /// `min(self, other)` on grid indices.
    pub fn min(self, other: StoppingTime) -> StoppingTime {
        match (self.grid_index, other.grid_index) {
            (Some(a), Some(b)) if b < a => other,
            (None, Some(_)) => other,
            _ => self,
        }
    }
}

/// Linear evolution family `S_t` used inside convolutions.
pub trait Semigroup {
    fn apply(&self, f: &SpectralField, t: f64) -> SpectralField;
}

/// `e^{−t|k|²}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeatSemigroup;

impl Semigroup for HeatSemigroup {
    fn apply(&self, f: &SpectralField, t: f64) -> SpectralField {
        semigroup_apply(f, t).expect("nonnegative time")
    }
}

/// `S_t = I`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentitySemigroup;

impl Semigroup for IdentitySemigroup {
    fn apply(&self, f: &SpectralField, _t: f64) -> SpectralField {
        f.clone()
    }
}

fn step_index(path: &WienerPath, t: f64) -> Result<usize> {
    crate::fields::grid_index(0.0, path.dt(), path.steps() + 1, t)
}

fn check_xi(xi: &[SpectralField], upto: usize) -> Result<()> {
    if xi.len() < upto {
        return Err(Error::Shape(format!("integrand has {} values, need {upto}", xi.len())));
    }
    if let Some(first) = xi.first() {
        for x in &xi[1..upto.max(1).min(xi.len())] {
            first.check_compatible(x)?;
        }
    }
    Ok(())
}

fn convolve(sg: &dyn Semigroup, xi: &[SpectralField], path: &WienerPath, channel: usize, upto: usize, m_stop: usize) -> Result<SpectralField> {
    if channel >= path.channels {
        return Err(Error::Range(format!("channel {channel} >= {}", path.channels)));
    }
    check_xi(xi, m_stop.min(upto))?;
    let dt = path.dt();
    let mut acc = match xi.first() {
        Some(f) => SpectralField::zeros(f.grid(), f.kind()),
        None => return Err(Error::Missing("empty integrand".into())),
    };
    for m in 0..m_stop.min(upto) {
        let term = sg.apply(&xi[m], (upto - m) as f64 * dt);
        acc.axpy(path.increments[channel][m], &term);
    }
    Ok(acc)
}

/// `I(t_M) = Σ_{m<M} S_{t_M − t_m} ξ(t_m) ΔW_m` on one channel.
pub fn stochastic_convolution(sg: &dyn Semigroup, xi: &[SpectralField], path: &WienerPath, channel: usize, t: f64) -> Result<SpectralField> {
    let m = step_index(path, t)?;
    convolve(sg, xi, path, channel, m, m)
}

/// `I_τ(t_M) = Σ_{m<M, t_m<τ} S_{t_M − t_m} ξ(t_m) ΔW_m`.
pub fn stopped_convolution(
    sg: &dyn Semigroup,
    xi: &[SpectralField],
    path: &WienerPath,
    channel: usize,
    tau: &StoppingTime,
    t: f64,
) -> Result<SpectralField> {
    let m = step_index(path, t)?;
    let stop = match tau.grid_index {
        None => usize::MAX,
        Some(i) => {
            if (tau.value - i as f64 * path.dt()).abs() > 1e-9 * path.dt() {
                return Err(Error::Unaligned(tau.value));
            }
            i
        }
    };
    convolve(sg, xi, path, channel, m, stop)
}
