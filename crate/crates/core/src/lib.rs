//! Pseudo-spectral laboratory for the 2D stochastic Ericksen–Leslie system with
//! Ginzburg–Landau penalization on the periodic torus.
//!
//! The unknown is `y = (v, n)`: a divergence-free velocity `v` and a director
//! field `n` with three components. Time stepping is Itô Euler–Maruyama with
//! the Stratonovich correction written out explicitly.

pub mod diagnostics;
pub mod fields;
pub mod integrator;
pub mod noise;
pub mod operators;
pub mod picard;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid sizing: {0}")]
    Sizing(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("time {0} is not aligned to the trajectory grid")]
    Unaligned(f64),
    #[error("blow-up at step {step} (t = {t})")]
    BlowUp { step: usize, t: f64 },
    #[error("window too long: contraction factor {factor:.3} >= 1 for 3 consecutive iterations; halve the window")]
    WindowTooLong { factor: f64 },
    #[error("no convergence after {iters} iterations (last distance {distance:e})")]
    NoConvergence { iters: usize, distance: f64 },
    #[error("candidate disagrees with anchor at step {0}")]
    AnchorMismatch(usize),
    #[error("missing data: {0}")]
    Missing(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
