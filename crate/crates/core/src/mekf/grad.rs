//! Reverse-mode adjoints of the filter steps, used for training by
//! backpropagation through time. Each function takes the adjoints of a
//! step's outputs, accumulates parameter gradients into `grads`, and returns
//! the adjoints of the step's inputs.

use super::{MemoryKalmanFilter, PredictTrace, StateVec, UpdateTrace, MEAS_DIM, STATE_DIM};
use crate::linalg::Matrix;
use crate::nnet::{GateWeights, LstmTrace};

/// Adjoints flowing into a step's inputs.
pub(crate) struct StepAdjoint {
    pub d_mean: StateVec,
    pub d_cov: Matrix,
}

impl MemoryKalmanFilter {
    /// Backward through the prediction. Returns the adjoints of the previous
    /// mean/covariance and of the memory hidden vector.
    pub(crate) fn predict_backward(
        &self,
        t: &PredictTrace,
        d_pred_mean: &StateVec,
        d_pred_cov: &Matrix,
        grads: &mut GateWeights,
    ) -> (StepAdjoint, Vec<f64>) {
        let n = MEAS_DIM;
        // Fᵀ v = [v_top, v_top + v_bottom]
        let mut d_mean = *d_pred_mean;
        for i in 0..n {
            d_mean[i + n] += d_pred_mean[i];
        }

        // Fᵀ Ā F
        let a = d_pred_cov;
        let mut d_cov = Matrix::zeros(STATE_DIM, STATE_DIM);
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                let mut v = a[(i, j)];
                if i >= n {
                    v += a[(i - n, j)];
                }
                if j >= n {
                    v += a[(i, j - n)];
                }
                if i >= n && j >= n {
                    v += a[(i - n, j - n)];
                }
                d_cov[(i, j)] = v;
            }
        }

        // Q depends on the previous width/height.
        let nm = &self.noise;
        let (w, h) = (t.prev_mean[2], t.prev_mean[3]);
        let dq: Vec<f64> = (0..STATE_DIM).map(|i| a[(i, i)]).collect();
        d_mean[2] += 2.0 * nm.sigma_p.powi(2) * w * (dq[0] + dq[2]) + 2.0 * nm.sigma_v.powi(2) * w * (dq[4] + dq[6]);
        d_mean[3] += 2.0 * nm.sigma_p.powi(2) * h * (dq[1] + dq[3]) + 2.0 * nm.sigma_v.powi(2) * h * (dq[5] + dq[7]);

        let mem_dim = self.weights.arch.memory;
        let mut d_h = vec![0.0; mem_dim];
        if !t.failsafe {
            let scale = self.norm.state_output_scale();
            let d_u: Vec<f64> = (0..STATE_DIM).map(|i| scale[i] * d_pred_mean[i]).collect();
            let dh1 = self.weights.pred_mean.backward(&t.mean_head, &d_u, &mut grads.pred_mean);
            // d(f fᵀ) → (Ā + Āᵀ) f
            let d_v: Vec<f64> = (0..STATE_DIM)
                .map(|i| {
                    let s: f64 = (0..STATE_DIM).map(|j| (a[(i, j)] + a[(j, i)]) * t.factor[j]).sum();
                    scale[i] * s
                })
                .collect();
            let dh2 = self.weights.pred_cov.backward(&t.cov_head, &d_v, &mut grads.pred_cov);
            for k in 0..mem_dim {
                d_h[k] = dh1[k] + dh2[k];
            }
        }
        (StepAdjoint { d_mean, d_cov }, d_h)
    }

    /// Backward through the update. `d_innov` is any extra adjoint on the
    /// innovation (from a loss term that reads it). Returns adjoints of the
    /// predicted mean and covariance.
    pub(crate) fn update_backward(
        &self,
        t: &UpdateTrace,
        d_mean_out: &StateVec,
        d_cov_out: &Matrix,
        d_innov: &[f64; MEAS_DIM],
        grads: &mut GateWeights,
    ) -> StepAdjoint {
        let n = MEAS_DIM;
        let p = &t.pred_cov;
        let k = &t.gain;
        let g = &t.s_inv;
        let y = &t.innovation;

        let mut d_b = *d_mean_out;
        for (j, c) in [2usize, 3].into_iter().enumerate() {
            if t.clamped[j] {
                d_b[c] = 0.0;
            }
        }

        let d_raw = d_cov_out.add(&d_cov_out.transpose()).expect("square").scale(0.5);
        let mut d_p = d_raw.clone();

        // P_raw = P' − K B with B = H P' (first four rows of P')
        let mut d_k = Matrix::zeros(STATE_DIM, n);
        for i in 0..STATE_DIM {
            for j in 0..n {
                // −(d_raw Bᵀ)_{ij} = −Σ_l d_raw[i,l] P'[j,l]
                let s: f64 = (0..STATE_DIM).map(|l| d_raw[(i, l)] * p[(j, l)]).sum();
                d_k[(i, j)] = -s + d_b[i] * y[j];
            }
        }
        for r in 0..n {
            for c in 0..STATE_DIM {
                // d_B = −Kᵀ d_raw
                let s: f64 = (0..STATE_DIM).map(|i| k[(i, r)] * d_raw[(i, c)]).sum();
                d_p[(r, c)] -= s;
            }
        }

        // b = b' + K y
        let mut d_pred_mean = d_b;
        let mut d_y = *d_innov;
        for j in 0..n {
            d_y[j] += (0..STATE_DIM).map(|i| k[(i, j)] * d_b[i]).sum::<f64>();
        }
        // y = z − H b' − Δʰ
        for j in 0..n {
            d_pred_mean[j] -= d_y[j];
        }

        // K = A G, A = P' Hᵀ; Ā = K̄ G, S̄ = −Kᵀ K̄ G
        let d_a = d_k.matmul(g).expect("shapes");
        let kt_dk = k.transpose().matmul(&d_k).expect("shapes");
        let d_s = kt_dk.matmul(g).expect("shapes").scale(-1.0);
        for i in 0..STATE_DIM {
            for j in 0..n {
                d_p[(i, j)] += d_a[(i, j)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                d_p[(i, j)] += d_s[(i, j)];
            }
        }

        // R depends on the predicted width/height.
        let sm2 = self.noise.sigma_m.powi(2);
        let (w, h) = (t.pred_mean[2], t.pred_mean[3]);
        d_pred_mean[2] += 2.0 * sm2 * w * (d_s[(0, 0)] + d_s[(2, 2)]);
        d_pred_mean[3] += 2.0 * sm2 * h * (d_s[(1, 1)] + d_s[(3, 3)]);

        if !t.failsafe {
            let scale = self.norm.meas_output_scale();
            let d_a_head: Vec<f64> = (0..n).map(|i| -d_y[i] * scale[i]).collect();
            let dx1 = self.weights.meas_mean.backward(&t.mean_head, &d_a_head, &mut grads.meas_mean);
            let d_e: Vec<f64> = (0..n)
                .map(|i| {
                    let s: f64 = (0..n).map(|j| (d_s[(i, j)] + d_s[(j, i)]) * t.factor[j]).sum();
                    scale[i] * s
                })
                .collect();
            let dx2 = self.weights.meas_cov.backward(&t.cov_head, &d_e, &mut grads.meas_cov);
            let in_scale = self.norm.input_scale();
            for i in 0..STATE_DIM {
                d_pred_mean[i] += (dx1[i] + dx2[i]) / in_scale[i];
            }
        }

        StepAdjoint {
            d_mean: d_pred_mean,
            d_cov: d_p,
        }
    }

    /// Backward through the memory update. Adds the state adjoint from the
    /// LSTM input into `d_mean` and returns `(d_h_prev, d_c_prev)`.
    pub(crate) fn memory_backward(
        &self,
        t: &LstmTrace,
        d_h: &[f64],
        d_c: &[f64],
        d_mean: &mut StateVec,
        grads: &mut GateWeights,
    ) -> (Vec<f64>, Vec<f64>) {
        let (dx, dh, dc) = self.weights.lstm.backward(t, d_h, d_c, &mut grads.lstm);
        let in_scale = self.norm.input_scale();
        for i in 0..STATE_DIM {
            d_mean[i] += dx[i] / in_scale[i];
        }
        (dh, dc)
    }
}
