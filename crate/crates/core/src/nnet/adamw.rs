use serde::{Deserialize, Serialize};

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment accumulators for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub hyper: AdamW,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptState {
    pub fn new(hyper: AdamW, n_params: usize) -> Self {
        Self {
            hyper,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    /// One AdamW update in place: `θ ← θ(1 − lr·wd) − lr·m̂/(√v̂ + ε)`.
    pub fn adamw_step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under optimizer");
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let AdamW {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_grads_no_decay_is_identity() {
        let mut s = OptState::new(AdamW { weight_decay: 0.0, ..AdamW::default() }, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        s.adamw_step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = OptState::new(AdamW { weight_decay: 0.0, ..AdamW::default() }, 1);
        let mut p = vec![0.0];
        s.adamw_step(&mut p, &[1.0]);
        // m̂ = 1, v̂ = 1 after bias correction
        assert!((p[0] + 1e-4).abs() < 1e-11, "{}", p[0]);
    }

    #[test]
    fn decay_is_multiplicative_shrink() {
        let hyper = AdamW { lr: 1e-2, weight_decay: 0.5, ..AdamW::default() };
        let mut s = OptState::new(hyper, 2);
        let mut p = vec![4.0, -8.0];
        s.adamw_step(&mut p, &[0.0, 0.0]);
        let k = 1.0 - 1e-2 * 0.5;
        assert_eq!(p, vec![4.0 * k, -8.0 * k]);
    }

    proptest! {
        #[test]
        fn zero_lr_is_identity(p0 in proptest::collection::vec(-5.0..5.0f64, 6), g in proptest::collection::vec(-5.0..5.0f64, 6)) {
            let mut s = OptState::new(AdamW { lr: 0.0, ..AdamW::default() }, 6);
            let mut p = p0.clone();
            for _ in 0..3 {
                s.adamw_step(&mut p, &g);
            }
            prop_assert_eq!(p, p0);
        }
    }
}
