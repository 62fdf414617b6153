//! MeMoSORT: a tracking-by-detection engine built around a memory-assisted
//! Kalman filter and motion-adaptive IoU association.
//!
//! Module map:
//!
//! * [`geometry`]: boxes, IoU, expanded/height IoU, motion-adaptive parameters
//! * [`linalg`]: small dense matrices and Cholesky solves
//! * [`nnet`]: MLP/LSTM forward and backward passes, AdamW, weight files
//! * [`mekf`]: the memory-assisted Kalman filter
//! * [`assign`]: Hungarian assignment with gating
//! * [`pipeline`]: the two-stage tracker
//! * [`synthgen`]: synthetic scenarios
//! * [`trainer`]: windowed BPTT training of the filter's gates
//! * [`metrics`]: MOTA, IDF1, prediction RMSE
//! * [`io`]: MOT text format
//! * [`config`]: JSON run configuration
//! * [`selftest`]: quick built-in consistency checks
//!
//! The `parallel` feature (on by default) runs data-parallel loops on rayon.
//! Without it the same loops run sequentially and give identical results.

pub mod assign;
pub mod config;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod mekf;
pub mod nnet;
pub mod par;
pub mod pipeline;
pub mod selftest;
pub mod synthgen;
pub mod trainer;

pub use geometry::{BBox, MatConfig};
pub use linalg::Matrix;
pub use mekf::{MemoryKalmanFilter, NoiseModel, TrackState};
pub use nnet::{GateArch, GateWeights};
