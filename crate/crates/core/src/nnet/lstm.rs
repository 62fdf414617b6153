use rand::Rng;

use super::{sigmoid, uniform_fill, NnetError};
use crate::linalg::Matrix;

/// LSTM cell parameters. Gate rows are stacked in the order
/// input, forget, candidate, output (`4H` rows in total).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Vec<f64>,
}

/// Values cached by [`LstmParams::step_traced`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * hidden, input),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` with `fan_in = input + hidden`.
    pub fn uniform(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        Self {
            w_x: Matrix::from_vec(4 * hidden, input, uniform_fill(rng, 4 * hidden * input, bound)),
            w_h: Matrix::from_vec(4 * hidden, hidden, uniform_fill(rng, 4 * hidden * hidden, bound)),
            b: uniform_fill(rng, 4 * hidden, bound),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols()
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnetError> {
        let (h2, c2, _) = self.step_traced(x, h, c)?;
        Ok((h2, c2))
    }

    pub fn step_traced(
        &self,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, LstmTrace), NnetError> {
        let hd = self.hidden_dim();
        if x.len() != self.input_dim() {
            return Err(NnetError::InputDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        for v in [h, c] {
            if v.len() != hd {
                return Err(NnetError::InputDim { expected: hd, got: v.len() });
            }
        }
        let mut z = self.b.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            let wx: f64 = self.w_x.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
            let wh: f64 = self.w_h.row(r).iter().zip(h).map(|(a, b)| a * b).sum();
            *zr += wx + wh;
        }
        let i: Vec<f64> = z[..hd].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = z[hd..2 * hd].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = z[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hd..].iter().map(|v| sigmoid(*v)).collect();
        let c2: Vec<f64> = (0..hd).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c2.iter().map(|v| v.tanh()).collect();
        let h2: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        let trace = LstmTrace {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((h2, c2, trace))
    }

    /// Backpropagates `(dh', dc')` through one step. Parameter gradients are
    /// accumulated into `grads`; returns `(dx, dh, dc)`.
    pub fn backward(
        &self,
        t: &LstmTrace,
        dh_next: &[f64],
        dc_next: &[f64],
        grads: &mut LstmParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let do_ = dh_next[k] * t.tanh_c[k];
            let dc = dc_next[k] + dh_next[k] * t.o[k] * (1.0 - t.tanh_c[k] * t.tanh_c[k]);
            let di = dc * t.g[k];
            let df = dc * t.c_prev[k];
            let dg = dc * t.i[k];
            dc_prev[k] = dc * t.f[k];
            dz[k] = di * t.i[k] * (1.0 - t.i[k]);
            dz[hd + k] = df * t.f[k] * (1.0 - t.f[k]);
            dz[2 * hd + k] = dg * (1.0 - t.g[k] * t.g[k]);
            dz[3 * hd + k] = do_ * t.o[k] * (1.0 - t.o[k]);
        }
        let (ni, nh) = (self.input_dim(), hd);
        for (r, d) in dz.iter().enumerate() {
            grads.b[r] += d;
            if *d == 0.0 {
                continue;
            }
            let gx = &mut grads.w_x.as_mut_slice()[r * ni..(r + 1) * ni];
            for (g, xi) in gx.iter_mut().zip(&t.x) {
                *g += d * xi;
            }
            let gh = &mut grads.w_h.as_mut_slice()[r * nh..(r + 1) * nh];
            for (g, hi) in gh.iter_mut().zip(&t.h_prev) {
                *g += d * hi;
            }
        }
        let dx = self.w_x.matvec_t(&dz).expect("trace matches params");
        let dh = self.w_h.matvec_t(&dz).expect("trace matches params");
        (dx, dh, dc_prev)
    }

    pub(crate) fn tensors(&self) -> Vec<(&[f64], Vec<usize>)> {
        let hd = self.hidden_dim();
        vec![
            (self.w_x.as_slice(), vec![4 * hd, self.input_dim()]),
            (self.w_h.as_slice(), vec![4 * hd, hd]),
            (self.b.as_slice(), vec![4 * hd]),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w_x.as_mut_slice(), self.w_h.as_mut_slice(), self.b.as_mut_slice()]
    }
}
