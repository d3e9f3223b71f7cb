use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, ParamTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(tensors: impl IntoIterator<Item = &'a ParamTensor>) -> Self {
        let (m, v) = tensors
            .into_iter()
            .map(|p| {
                let (r, c) = p.shape();
                (Matrix::zeros(r, c), Matrix::zeros(r, c))
            })
            .unzip();
        Self { m, v, t: 0 }
    }
}

/// One bias-corrected Adam update using each tensor's accumulated `grad`.
pub fn adam_step(tensors: &mut [&mut ParamTensor], state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in tensors.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.as_slice().to_vec();
        let values = p.value.as_mut_slice();
        let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
        for k in 0..values.len() {
            let g = grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            values[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> ParamTensor {
        ParamTensor::new("w", Matrix::column(vec![w]))
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [0.003, -2.0, 150.0] {
            let mut p = ParamTensor::new("w", Matrix::column(vec![0.5; 4]));
            p.grad.fill(g);
            let mut state = AdamState::new([&p]);
            adam_step(&mut [&mut p], &mut state, &cfg);
            for v in p.value.as_slice() {
                assert!(((0.5 - v).abs() - cfg.learning_rate).abs() < 1e-6);
                assert_eq!((0.5 - v).signum(), g.signum());
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        let mut fresh = scalar(0.25);
        let mut fresh_state = AdamState::new([&fresh]);
        adam_step(&mut [&mut fresh], &mut fresh_state, &cfg);
        assert_eq!(fresh.value.get(0, 0), 0.25);
        assert_eq!(fresh_state.m[0].get(0, 0), 0.0);

        // with history, a zero gradient only decays the moments
        let mut p = scalar(1.0);
        let mut state = AdamState::new([&p]);
        p.grad.fill(1.0);
        adam_step(&mut [&mut p], &mut state, &cfg);
        let (m, v) = (state.m[0].get(0, 0), state.v[0].get(0, 0));
        p.grad.fill(0.0);
        adam_step(&mut [&mut p], &mut state, &cfg);
        assert_eq!(state.m[0].get(0, 0), cfg.beta1 * m);
        assert_eq!(state.v[0].get(0, 0), cfg.beta2 * v);
        assert_eq!(state.t, 2);
    }

    #[test]
    fn trajectory_matches_scalar_oracle_on_square() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        // independent oracle
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            expected.push(w);
        }
        let mut p = scalar(1.0);
        let mut state = AdamState::new([&p]);
        for e in expected {
            let w = p.value.get(0, 0);
            p.grad.fill(2.0 * w);
            adam_step(&mut [&mut p], &mut state, &cfg);
            assert!((p.value.get(0, 0) - e).abs() < 1e-12);
        }
    }
}
