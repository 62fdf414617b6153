//! Small from-scratch networks backing the filter's learned gates.
//!
//! Everything here is plain `f64` math with explicit forward traces and
//! hand-written backward passes; there is no general autodiff.

mod adamw;
mod lstm;
mod mlp;
mod weights;

pub use adamw::{AdamW, OptState};
pub use lstm::{LstmParams, LstmTrace};
pub use mlp::{Dense, Mlp, MlpTrace};
pub use weights::{GateArch, GateWeights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("input has {got} elements, layer expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("parameter shape mismatch for {name}: file has {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unsupported weight file version {found} (this build reads {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform draw in `[-bound, bound]`.
pub(crate) fn uniform_fill(rng: &mut impl rand::Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect()
}
