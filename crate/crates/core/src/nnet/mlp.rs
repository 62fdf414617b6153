use rand::Rng;

use super::{uniform_fill, NnetError};
use crate::linalg::Matrix;

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn uniform(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: Matrix::from_vec(output, input, uniform_fill(rng, output * input, bound)),
            b: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += self.w.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        y
    }
}

/// Feed-forward network: tanh on every hidden layer, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs recorded during a forward pass: `inputs[0]` is the network
/// input, `inputs[k]` the tanh activations feeding layer `k`.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Self {
        for pair in layers.windows(2) {
            assert_eq!(pair[0].output_dim(), pair[1].input_dim(), "layer dimensions must chain");
        }
        Self { layers }
    }

    /// One tanh hidden layer; the output layer starts at zero when `zero_output`.
    pub fn one_hidden(input: usize, hidden: usize, output: usize, zero_output: bool, rng: &mut impl Rng) -> Self {
        let first = Dense::uniform(input, hidden, rng);
        let last = if zero_output {
            Dense::zeros(hidden, output)
        } else {
            let mut d = Dense::uniform(hidden, output, rng);
            d.b = uniform_fill(rng, output, 1.0 / (hidden as f64).sqrt());
            d
        };
        Self::new(vec![first, last])
    }

    pub fn zeros_like(&self) -> Self {
        Self::new(
            self.layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("mlp has layers").output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnetError> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTrace), NnetError> {
        if x.len() != self.input_dim() {
            return Err(NnetError::InputDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&cur);
            if k < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut cur, z));
        }
        Ok((cur, MlpTrace { inputs }))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, trace: &MlpTrace, d_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.inputs[k];
            let g = &mut grads.layers[k];
            for (r, d) in delta.iter().enumerate() {
                g.b[r] += d;
                if *d == 0.0 {
                    continue;
                }
                let row = &mut g.w.as_mut_slice()[r * input.len()..(r + 1) * input.len()];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            let mut d_in = layer.w.matvec_t(&delta).expect("trace matches layer");
            if k > 0 {
                // input[k] = tanh(z_{k-1})
                for (di, a) in d_in.iter_mut().zip(input) {
                    *di *= 1.0 - a * a;
                }
            }
            delta = d_in;
        }
        delta
    }

    pub(crate) fn tensors(&self) -> Vec<(&[f64], Vec<usize>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((l.w.as_slice(), vec![l.output_dim(), l.input_dim()]));
            out.push((l.b.as_slice(), vec![l.output_dim()]));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out
    }
}
