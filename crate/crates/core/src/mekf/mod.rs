//! Memory-assisted Kalman filter.
//!
//! A constant-velocity Kalman filter over `[x, y, w, h, ẋ, ẏ, ẇ, ḣ]` whose
//! predict and update steps are additively corrected by small networks:
//!
//! * memory update: an LSTM cell advanced on every filtered (or coasted) mean;
//!   the memory `m_t` is the LSTM hidden state,
//! * prediction: `b' = F b + Δᶠ(m)`, `P' = F P Fᵀ + f(m) f(m)ᵀ + Q`,
//! * update: `K = P' Hᵀ (H P' Hᵀ + R + k kᵀ)⁻¹` with `k = k(b')`, innovation
//!   `z − H b' − Δʰ(b')`, `P = (I − K H) P'`.
//!
//! The measurement-side heads take the prediction `b'` as input, not the
//! detection. With all head outputs at zero the filter is exactly the plain
//! Kalman filter, and any non-finite head output falls back to that plain
//! step for the current frame.

mod grad;

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::linalg::{Cholesky, LinalgError, Matrix};
use crate::nnet::{GateArch, GateWeights, LstmTrace, MlpTrace};

pub const STATE_DIM: usize = 8;
pub const MEAS_DIM: usize = 4;
/// Smallest width/height the filter lets a box shrink to, in pixels.
pub const MIN_SIZE: f64 = 1.0;

pub type StateVec = [f64; STATE_DIM];
pub type MeasVec = [f64; MEAS_DIM];

/// Scale-proportional process and measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Position/size process std as a fraction of (w, h) per frame.
    pub sigma_p: f64,
    /// Velocity process std as a fraction of (w, h) per frame.
    pub sigma_v: f64,
    /// Measurement std as a fraction of (w, h).
    pub sigma_m: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_p: 0.05,
            sigma_v: 0.00625,
            sigma_m: 0.05,
        }
    }
}

impl NoiseModel {
    pub fn process_diag(&self, w: f64, h: f64) -> StateVec {
        let (pw, ph) = ((self.sigma_p * w).powi(2), (self.sigma_p * h).powi(2));
        let (vw, vh) = ((self.sigma_v * w).powi(2), (self.sigma_v * h).powi(2));
        [pw, ph, pw, ph, vw, vh, vw, vh]
    }

    pub fn measurement_diag(&self, w: f64, h: f64) -> MeasVec {
        let (mw, mh) = ((self.sigma_m * w).powi(2), (self.sigma_m * h).powi(2));
        [mw, mh, mw, mh]
    }

    /// Initial covariance: position std `2σp·(w,h)`, velocity std `10σv·(w,h)`.
    pub fn initial_cov(&self, w: f64, h: f64) -> Matrix {
        let (pw, ph) = ((2.0 * self.sigma_p * w).powi(2), (2.0 * self.sigma_p * h).powi(2));
        let (vw, vh) = ((10.0 * self.sigma_v * w).powi(2), (10.0 * self.sigma_v * h).powi(2));
        Matrix::from_diag(&[pw, ph, pw, ph, vw, vh, vw, vh])
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("sigma_p", self.sigma_p), ("sigma_v", self.sigma_v), ("sigma_m", self.sigma_m)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("noise.{name} must be finite and > 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Maps pixel-space states to network inputs and network outputs back to
/// pixels. Positions and sizes are divided by the frame size; velocities are
/// expressed in units of 1% of the frame per frame; head outputs are
/// likewise in units of 1% of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameNormalizer {
    pub width: f64,
    pub height: f64,
}

impl Default for FrameNormalizer {
    fn default() -> Self {
        Self {
            width: 1280.0,
            height: 720.0,
        }
    }
}

const VELOCITY_UNIT: f64 = 0.01;
const OUTPUT_UNIT: f64 = 0.01;

impl FrameNormalizer {
    pub fn input_scale(&self) -> StateVec {
        let (w, h) = (self.width, self.height);
        let (vw, vh) = (w * VELOCITY_UNIT, h * VELOCITY_UNIT);
        [w, h, w, h, vw, vh, vw, vh]
    }

    pub fn state_output_scale(&self) -> StateVec {
        let (w, h) = (self.width * OUTPUT_UNIT, self.height * OUTPUT_UNIT);
        [w, h, w, h, w, h, w, h]
    }

    pub fn meas_output_scale(&self) -> MeasVec {
        let (w, h) = (self.width * OUTPUT_UNIT, self.height * OUTPUT_UNIT);
        [w, h, w, h]
    }

    pub fn normalize(&self, mean: &StateVec) -> Vec<f64> {
        mean.iter().zip(self.input_scale()).map(|(v, s)| v / s).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(format!("frame size must be positive, got {}x{}", self.width, self.height));
        }
        Ok(())
    }
}

/// Recurrent memory: LSTM hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Memory {
    pub fn zeros(size: usize) -> Self {
        Self {
            h: vec![0.0; size],
            c: vec![0.0; size],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: StateVec,
    pub cov: Matrix,
    pub memory: Memory,
}

impl TrackState {
    pub fn bbox(&self) -> BBox {
        state_box(&self.mean)
    }
}

/// Output of the prediction gate. Carries the memory it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: StateVec,
    pub cov: Matrix,
    /// The mean compensation that was added to `F b`.
    pub comp_mean: StateVec,
    pub memory: Memory,
    pub failsafe: bool,
}

impl Prediction {
    pub fn bbox(&self) -> BBox {
        state_box(&self.mean)
    }
}

fn state_box(mean: &StateVec) -> BBox {
    BBox::new(mean[0], mean[1], mean[2].max(MIN_SIZE), mean[3].max(MIN_SIZE))
        .expect("filter means stay finite")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    /// A compensation head produced NaN/inf; the plain step was used.
    NonFiniteCompensation { gate: &'static str },
    /// The innovation covariance could not be factored; the update was skipped.
    UpdateSkipped { reason: String },
    /// The memory recurrence produced NaN/inf and was reset.
    MemoryReset,
}

pub(crate) struct PredictTrace {
    pub prev_mean: StateVec,
    pub mean_head: MlpTrace,
    pub cov_head: MlpTrace,
    pub factor: StateVec,
    pub failsafe: bool,
}

pub(crate) struct UpdateTrace {
    pub pred_mean: StateVec,
    pub pred_cov: Matrix,
    pub mean_head: MlpTrace,
    pub cov_head: MlpTrace,
    pub factor: MeasVec,
    pub gain: Matrix,
    pub s_inv: Matrix,
    pub innovation: MeasVec,
    pub clamped: [bool; 2],
    pub failsafe: bool,
}

/// The filter: shared gate weights plus the noise model and normalizer.
#[derive(Debug, Clone)]
pub struct MemoryKalmanFilter {
    weights: Arc<GateWeights>,
    noise: NoiseModel,
    norm: FrameNormalizer,
}

impl MemoryKalmanFilter {
    pub fn new(weights: Arc<GateWeights>, noise: NoiseModel, norm: FrameNormalizer) -> Self {
        Self { weights, noise, norm }
    }

    /// Zero-head weights: behaves exactly like a constant-velocity Kalman filter.
    pub fn plain(noise: NoiseModel, norm: FrameNormalizer) -> Self {
        Self::new(Arc::new(GateWeights::init(GateArch::default(), 0)), noise, norm)
    }

    pub fn weights(&self) -> &GateWeights {
        &self.weights
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn normalizer(&self) -> &FrameNormalizer {
        &self.norm
    }

    /// New track from a first detection: zero velocity, memory advanced once.
    pub fn initiate(&self, det: &BBox) -> TrackState {
        let mean = [det.x(), det.y(), det.w(), det.h(), 0.0, 0.0, 0.0, 0.0];
        let cov = self.noise.initial_cov(det.w(), det.h());
        let memory = self.mug_update(&Memory::zeros(self.weights.arch.memory), &mean);
        TrackState { mean, cov, memory }
    }

    /// Advances the memory with one LSTM step on the normalized state.
    pub fn mug_update(&self, mem: &Memory, state_mean: &StateVec) -> Memory {
        let (next, _) = self.memory_traced(mem, state_mean);
        if next.is_finite() {
            next
        } else {
            warn!("memory update produced non-finite values; resetting memory");
            Memory::zeros(mem.h.len())
        }
    }

    pub(crate) fn memory_traced(&self, mem: &Memory, state_mean: &StateVec) -> (Memory, LstmTrace) {
        let x = self.norm.normalize(state_mean);
        let (h, c, trace) = self
            .weights
            .lstm
            .step_traced(&x, &mem.h, &mem.c)
            .expect("memory size matches the lstm");
        (Memory { h, c }, trace)
    }

    pub fn spg_predict(&self, s: &TrackState) -> Prediction {
        let (pred, _) = self.predict_traced(&s.mean, &s.cov, &s.memory);
        if pred.failsafe {
            warn!("prediction compensation was non-finite; using the plain Kalman prediction");
        }
        pred
    }

    pub(crate) fn predict_traced(&self, mean: &StateVec, cov: &Matrix, memory: &Memory) -> (Prediction, PredictTrace) {
        let w = &self.weights;
        let (u, mean_head) = w.pred_mean.forward_traced(&memory.h).expect("memory matches head");
        let (v, cov_head) = w.pred_cov.forward_traced(&memory.h).expect("memory matches head");
        let failsafe = !(u.iter().all(|x| x.is_finite()) && v.iter().all(|x| x.is_finite()));
        let scale = self.norm.state_output_scale();
        let mut comp = [0.0; STATE_DIM];
        let mut factor = [0.0; STATE_DIM];
        if !failsafe {
            for i in 0..STATE_DIM {
                comp[i] = scale[i] * u[i];
                factor[i] = scale[i] * v[i];
            }
        }

        let mut pred_mean = transition(mean);
        for i in 0..STATE_DIM {
            pred_mean[i] += comp[i];
        }

        let mut pred_cov = transition_cov(cov);
        let q = self.noise.process_diag(mean[2], mean[3]);
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                pred_cov[(i, j)] += factor[i] * factor[j];
            }
            pred_cov[(i, i)] += q[i];
        }

        let pred = Prediction {
            mean: pred_mean,
            cov: pred_cov,
            comp_mean: comp,
            memory: memory.clone(),
            failsafe,
        };
        let trace = PredictTrace {
            prev_mean: *mean,
            mean_head,
            cov_head,
            factor,
            failsafe,
        };
        (pred, trace)
    }

    /// Corrects the prediction with a detection and advances the memory on
    /// the corrected mean. If the innovation covariance cannot be factored
    /// the prediction is kept (as when coasting) and a diagnostic returned.
    pub fn sug_update(&self, pred: &Prediction, det: &BBox) -> (TrackState, Option<Diagnostic>) {
        match self.update_traced(pred, &det.to_array()) {
            Ok((mean, cov, trace)) => {
                let memory = self.mug_update(&pred.memory, &mean);
                let diag = trace
                    .failsafe
                    .then_some(Diagnostic::NonFiniteCompensation { gate: "update" });
                if diag.is_some() {
                    warn!("update compensation was non-finite; using the plain Kalman update");
                }
                (TrackState { mean, cov, memory }, diag)
            }
            Err(e) => {
                warn!("skipping update: {e}");
                (
                    self.coast(pred),
                    Some(Diagnostic::UpdateSkipped { reason: e.to_string() }),
                )
            }
        }
    }

    pub(crate) fn update_traced(
        &self,
        pred: &Prediction,
        z: &MeasVec,
    ) -> Result<(StateVec, Matrix, UpdateTrace), LinalgError> {
        let w = &self.weights;
        let x_hat = self.norm.normalize(&pred.mean);
        let (a, mean_head) = w.meas_mean.forward_traced(&x_hat).expect("state matches head");
        let (e, cov_head) = w.meas_cov.forward_traced(&x_hat).expect("state matches head");
        let failsafe = !(a.iter().all(|x| x.is_finite()) && e.iter().all(|x| x.is_finite()));
        let scale = self.norm.meas_output_scale();
        let mut comp = [0.0; MEAS_DIM];
        let mut factor = [0.0; MEAS_DIM];
        if !failsafe {
            for i in 0..MEAS_DIM {
                comp[i] = scale[i] * a[i];
                factor[i] = scale[i] * e[i];
            }
        }

        let p = &pred.cov;
        let r = self.noise.measurement_diag(pred.mean[2], pred.mean[3]);
        let mut s = Matrix::zeros(MEAS_DIM, MEAS_DIM);
        for i in 0..MEAS_DIM {
            for j in 0..MEAS_DIM {
                s[(i, j)] = p[(i, j)] + factor[i] * factor[j];
            }
            s[(i, i)] += r[i];
        }
        let s_inv = Cholesky::new(&s)?.inverse();

        // K = P' Hᵀ S⁻¹, with P' Hᵀ the first four columns of P'
        let mut gain = Matrix::zeros(STATE_DIM, MEAS_DIM);
        for i in 0..STATE_DIM {
            for j in 0..MEAS_DIM {
                gain[(i, j)] = (0..MEAS_DIM).map(|k| p[(i, k)] * s_inv[(k, j)]).sum();
            }
        }

        let mut innovation = [0.0; MEAS_DIM];
        for i in 0..MEAS_DIM {
            innovation[i] = z[i] - pred.mean[i] - comp[i];
        }

        let mut mean = pred.mean;
        for i in 0..STATE_DIM {
            mean[i] += (0..MEAS_DIM).map(|k| gain[(i, k)] * innovation[k]).sum::<f64>();
        }
        let clamped = clamp_size(&mut mean);

        // P = P' − K (H P'), with H P' the first four rows of P'
        let mut cov = p.clone();
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                cov[(i, j)] -= (0..MEAS_DIM).map(|k| gain[(i, k)] * p[(k, j)]).sum::<f64>();
            }
        }
        let cov = cov.symmetrized();

        let trace = UpdateTrace {
            pred_mean: pred.mean,
            pred_cov: pred.cov.clone(),
            mean_head,
            cov_head,
            factor,
            gain,
            s_inv,
            innovation,
            clamped,
            failsafe,
        };
        Ok((mean, cov, trace))
    }

    /// Adopts a prediction as the new state (no detection this frame).
    pub fn coast(&self, pred: &Prediction) -> TrackState {
        let mut mean = pred.mean;
        clamp_size(&mut mean);
        let memory = self.mug_update(&pred.memory, &mean);
        TrackState {
            mean,
            cov: pred.cov.clone(),
            memory,
        }
    }

    pub fn predict_only_step(&self, s: &TrackState) -> TrackState {
        self.coast(&self.spg_predict(s))
    }
}

/// Clamps width and height to [`MIN_SIZE`]; reports which were clamped.
pub(crate) fn clamp_size(mean: &mut StateVec) -> [bool; 2] {
    let mut out = [false; 2];
    for (k, i) in [2usize, 3].into_iter().enumerate() {
        if mean[i] < MIN_SIZE {
            mean[i] = MIN_SIZE;
            out[k] = true;
        }
    }
    out
}

/// `F b` for the constant-velocity transition `[I I; 0 I]`.
pub fn transition(b: &StateVec) -> StateVec {
    let mut out = *b;
    for i in 0..MEAS_DIM {
        out[i] += b[i + MEAS_DIM];
    }
    out
}

/// `F P Fᵀ` for the constant-velocity transition.
pub fn transition_cov(p: &Matrix) -> Matrix {
    let n = MEAS_DIM;
    let mut out = Matrix::zeros(STATE_DIM, STATE_DIM);
    for i in 0..STATE_DIM {
        for j in 0..STATE_DIM {
            let mut v = p[(i, j)];
            if i < n {
                v += p[(i + n, j)];
            }
            if j < n {
                v += p[(i, j + n)];
            }
            if i < n && j < n {
                v += p[(i + n, j + n)];
            }
            out[(i, j)] = v;
        }
    }
    out
}
