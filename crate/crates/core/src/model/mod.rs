//! LSTM encoder with additive single-unit attention and a ReLU dense head
//! that emits the whole horizon in one shot.
//!
//! Per step `t` with input `x_t`:
//!
//! ```text
//! f_t = σ(W_f x_t + U_f h_{t-1} + b_f)      i_t = σ(W_i x_t + U_i h_{t-1} + b_i)
//! Ĉ_t = tanh(W_C x_t + U_C h_{t-1} + b_C)   o_t = σ(W_o x_t + U_o h_{t-1} + b_o)
//! C_t = f_t ⊙ C_{t-1} + i_t ⊙ Ĉ_t           h_t = o_t ⊙ tanh(C_t)
//! ```
//!
//! then `e_t = tanh(w_a·h_t + b_a)`, `a = softmax(e)`, `c = Σ a_t h_t` and
//! `ŷ = relu(W_out c + b_out)`. States start at zero.

mod checkpoint;
mod params;

use thiserror::Error;

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_FORMAT};
pub use params::{
    AttentionParams, Gradients, HeadInput, HeadParams, LstmParams, ModelConfig, ModelParams,
    HEAD_BIAS_INIT,
};

use crate::nn::activation::{relu, sigmoid, softmax, softmax_backward};
use crate::nn::matrix::{axpy, dot, matvec_acc, matvec_t_acc, outer_acc};
use crate::nn::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("window shape {actual:?} does not match model input {expected:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("non-finite value detected in {stage}")]
    NumericFailure { stage: &'static str },
    #[error("forward trace already consumed by a previous backward call")]
    TraceReused,
    #[error("upstream gradient has length {actual}, expected {expected}")]
    UpstreamLength { expected: usize, actual: usize },
}

/// Gate activations of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateCache {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    pub gates: GateCache,
}

/// Writes one step into the output slices (all of length `hidden`).
#[allow(clippy::too_many_arguments)]
fn step_into(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    f: &mut [f64],
    i: &mut [f64],
    g: &mut [f64],
    o: &mut [f64],
    c: &mut [f64],
    tc: &mut [f64],
    h: &mut [f64],
) {
    for (gate, w, u, b) in [
        (&mut *f, &p.w_f, &p.u_f, &p.b_f),
        (&mut *i, &p.w_i, &p.u_i, &p.b_i),
        (&mut *g, &p.w_c, &p.u_c, &p.b_c),
        (&mut *o, &p.w_o, &p.u_o, &p.b_o),
    ] {
        gate.copy_from_slice(b.value.as_slice());
        matvec_acc(&w.value, x, gate);
        matvec_acc(&u.value, h_prev, gate);
    }
    for k in 0..h.len() {
        f[k] = sigmoid(f[k]);
        i[k] = sigmoid(i[k]);
        g[k] = g[k].tanh();
        o[k] = sigmoid(o[k]);
        c[k] = f[k] * c_prev[k] + i[k] * g[k];
        tc[k] = c[k].tanh();
        h[k] = o[k] * tc[k];
    }
}

/// One LSTM step from `(h_prev, c_prev)` with input `x`.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmParams,
) -> Result<StepOutput, ModelError> {
    let (hidden, width) = (params.hidden(), params.input_width());
    if x.len() != width || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(ModelError::Shape {
            expected: (hidden, width),
            actual: (h_prev.len().max(c_prev.len()), x.len()),
        });
    }
    let zero = || vec![0.0; hidden];
    let (mut f, mut i, mut g, mut o) = (zero(), zero(), zero(), zero());
    let (mut c, mut tc, mut h) = (zero(), zero(), zero());
    step_into(
        params, x, h_prev, c_prev, &mut f, &mut i, &mut g, &mut o, &mut c, &mut tc, &mut h,
    );
    Ok(StepOutput {
        hidden: h,
        cell: c,
        gates: GateCache {
            forget: f,
            input: i,
            candidate: g,
            output: o,
        },
    })
}

/// Attention over a `steps × hidden` row-major block of hidden states.
/// Returns `(scores e, weights a, context c)`.
pub fn attention(
    hidden_states: &[f64],
    hidden: usize,
    params: &AttentionParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = params.w_a.value.as_slice();
    let b = params.b_a.value.as_slice()[0];
    let scores: Vec<f64> = hidden_states
        .chunks_exact(hidden)
        .map(|h| (dot(w, h) + b).tanh())
        .collect();
    let weights = softmax(&scores);
    let mut context = vec![0.0; hidden];
    for (h, &a) in hidden_states.chunks_exact(hidden).zip(&weights) {
        axpy(a, h, &mut context);
    }
    (scores, weights, context)
}

/// Everything the backward pass and the attention export need from one
/// forward call. Per-step vectors are stored row-major as `lookback × hidden`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pub forget: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub cell: Vec<f64>,
    cell_tanh: Vec<f64>,
    pub hidden: Vec<f64>,
    /// `e_t`, empty without attention.
    pub scores: Vec<f64>,
    /// `a_t`, empty without attention.
    pub weights: Vec<f64>,
    /// What the head consumed (context, flattened weighted states or `h_p`).
    pub head_input: Vec<f64>,
    pre_activation: Vec<f64>,
    pub forecast: Vec<f64>,
    spent: bool,
}

impl ForwardTrace {
    pub fn hidden_at(&self, t: usize, hidden: usize) -> &[f64] {
        &self.hidden[t * hidden..(t + 1) * hidden]
    }
}

fn check_finite(values: &[f64], stage: &'static str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NumericFailure { stage })
    }
}

impl ModelParams {
    fn check_window(&self, window: &[f64]) -> Result<(), ModelError> {
        let cfg = &self.config;
        if window.len() != cfg.lookback * cfg.input_width {
            return Err(ModelError::Shape {
                expected: (cfg.lookback, cfg.input_width),
                actual: (window.len() / cfg.input_width.max(1), cfg.input_width),
            });
        }
        Ok(())
    }

    /// Forward pass over a `lookback × input_width` window.
    pub fn forward(&self, window: &Matrix) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
        let cfg = &self.config;
        if window.shape() != (cfg.lookback, cfg.input_width) {
            return Err(ModelError::Shape {
                expected: (cfg.lookback, cfg.input_width),
                actual: window.shape(),
            });
        }
        self.forward_slice(window.as_slice())
    }

    /// Forward pass over a row-major window slice.
    pub fn forward_slice(&self, window: &[f64]) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
        self.check_window(window)?;
        let cfg = self.config;
        let (hd, n, p) = (cfg.hidden, cfg.input_width, cfg.lookback);
        let zeros = vec![0.0; hd];
        let mut f = vec![0.0; p * hd];
        let mut i = vec![0.0; p * hd];
        let mut g = vec![0.0; p * hd];
        let mut o = vec![0.0; p * hd];
        let mut c = vec![0.0; p * hd];
        let mut tc = vec![0.0; p * hd];
        let mut h = vec![0.0; p * hd];
        for t in 0..p {
            let x = &window[t * n..(t + 1) * n];
            let (h_done, h_rest) = h.split_at_mut(t * hd);
            let (c_done, c_rest) = c.split_at_mut(t * hd);
            let h_prev = if t == 0 { &zeros[..] } else { &h_done[(t - 1) * hd..] };
            let c_prev = if t == 0 { &zeros[..] } else { &c_done[(t - 1) * hd..] };
            let r = 0..hd;
            let s = t * hd..(t + 1) * hd;
            step_into(
                &self.lstm,
                x,
                h_prev,
                c_prev,
                &mut f[s.clone()],
                &mut i[s.clone()],
                &mut g[s.clone()],
                &mut o[s.clone()],
                &mut c_rest[r.clone()],
                &mut tc[s],
                &mut h_rest[r],
            );
        }
        check_finite(&h, "lstm")?;

        let (scores, weights, head_input) = match (&self.attention, cfg.head_input) {
            (Some(att), HeadInput::Context) => attention(&h, hd, att),
            (Some(att), HeadInput::WeightedFlatten) => {
                let (e, a, _) = attention(&h, hd, att);
                let flat = h
                    .chunks_exact(hd)
                    .zip(&a)
                    .flat_map(|(ht, &at)| ht.iter().map(move |v| v * at))
                    .collect();
                (e, a, flat)
            }
            (None, _) => (Vec::new(), Vec::new(), h[(p - 1) * hd..].to_vec()),
        };
        check_finite(&weights, "attention")?;
        check_finite(&head_input, "attention")?;

        let mut pre = self.head.b_out.value.as_slice().to_vec();
        matvec_acc(&self.head.w_out.value, &head_input, &mut pre);
        let forecast: Vec<f64> = pre.iter().map(|&z| relu(z)).collect();
        check_finite(&pre, "head")?;

        Ok((
            forecast.clone(),
            ForwardTrace {
                input: window.to_vec(),
                forget: f,
                input_gate: i,
                candidate: g,
                output_gate: o,
                cell: c,
                cell_tanh: tc,
                hidden: h,
                scores,
                weights,
                head_input,
                pre_activation: pre,
                forecast,
                spent: false,
            },
        ))
    }

    /// Forecast only.
    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.forward_slice(window).map(|(y, _)| y)
    }

    /// Reverse-mode gradients of a loss with `∂loss/∂forecast = upstream`.
    pub fn backward(
        &self,
        trace: &mut ForwardTrace,
        upstream: &[f64],
    ) -> Result<Gradients, ModelError> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads`.
    pub fn backward_into(
        &self,
        trace: &mut ForwardTrace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<(), ModelError> {
        let cfg = self.config;
        if upstream.len() != cfg.horizon {
            return Err(ModelError::UpstreamLength {
                expected: cfg.horizon,
                actual: upstream.len(),
            });
        }
        if trace.spent {
            return Err(ModelError::TraceReused);
        }
        trace.spent = true;
        let (hd, n, p) = (cfg.hidden, cfg.input_width, cfg.lookback);
        let has_att = self.attention.is_some();
        // indices into grads.tensors, matching ModelParams::tensors()
        let (w_a_idx, b_a_idx) = (12, 13);
        let head_idx = if has_att { 14 } else { 12 };

        // head
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&trace.pre_activation)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        outer_acc(&mut grads.tensors[head_idx], &dz, &trace.head_input);
        crate::nn::matrix::add_into(grads.tensors[head_idx + 1].as_mut_slice(), &dz);
        let mut d_head_in = vec![0.0; trace.head_input.len()];
        matvec_t_acc(&self.head.w_out.value, &dz, &mut d_head_in);

        // attention
        let mut dh_ext = vec![0.0; p * hd];
        match (&self.attention, cfg.head_input) {
            (None, _) => dh_ext[(p - 1) * hd..].copy_from_slice(&d_head_in),
            (Some(att), mode) => {
                let mut d_weights = vec![0.0; p];
                for t in 0..p {
                    let ht = &trace.hidden[t * hd..(t + 1) * hd];
                    let du = match mode {
                        HeadInput::Context => &d_head_in[..],
                        HeadInput::WeightedFlatten => &d_head_in[t * hd..(t + 1) * hd],
                    };
                    d_weights[t] = dot(du, ht);
                    axpy(trace.weights[t], du, &mut dh_ext[t * hd..(t + 1) * hd]);
                }
                let d_scores = softmax_backward(&trace.weights, &d_weights);
                let w_a = att.w_a.value.as_slice();
                for t in 0..p {
                    let e = trace.scores[t];
                    let ds = d_scores[t] * (1.0 - e * e);
                    let ht = &trace.hidden[t * hd..(t + 1) * hd];
                    axpy(ds, ht, grads.tensors[w_a_idx].as_mut_slice());
                    grads.tensors[b_a_idx].as_mut_slice()[0] += ds;
                    axpy(ds, w_a, &mut dh_ext[t * hd..(t + 1) * hd]);
                }
            }
        }

        // BPTT
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dzs = vec![vec![0.0; hd]; 4];
        let zeros = vec![0.0; hd];
        let lstm = &self.lstm;
        let us = [&lstm.u_f.value, &lstm.u_i.value, &lstm.u_c.value, &lstm.u_o.value];
        for t in (0..p).rev() {
            let s = t * hd..(t + 1) * hd;
            let (f, i, g, o) = (
                &trace.forget[s.clone()],
                &trace.input_gate[s.clone()],
                &trace.candidate[s.clone()],
                &trace.output_gate[s.clone()],
            );
            let tc = &trace.cell_tanh[s.clone()];
            let c_prev = if t == 0 { &zeros[..] } else { &trace.cell[(t - 1) * hd..t * hd] };
            let h_prev = if t == 0 { &zeros[..] } else { &trace.hidden[(t - 1) * hd..t * hd] };
            for k in 0..hd {
                let dh = dh_ext[t * hd + k] + dh_next[k];
                let d_o = dh * tc[k];
                let dc = dc_next[k] + dh * o[k] * (1.0 - tc[k] * tc[k]);
                let d_f = dc * c_prev[k];
                let d_i = dc * g[k];
                let d_g = dc * i[k];
                dc_next[k] = dc * f[k];
                dzs[0][k] = d_f * f[k] * (1.0 - f[k]);
                dzs[1][k] = d_i * i[k] * (1.0 - i[k]);
                dzs[2][k] = d_g * (1.0 - g[k] * g[k]);
                dzs[3][k] = d_o * o[k] * (1.0 - o[k]);
            }
            let x = &trace.input[t * n..(t + 1) * n];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (gate, dz) in dzs.iter().enumerate() {
                outer_acc(&mut grads.tensors[gate], dz, x);
                if t > 0 {
                    outer_acc(&mut grads.tensors[4 + gate], dz, h_prev);
                    matvec_t_acc(us[gate], dz, &mut dh_next);
                }
                crate::nn::matrix::add_into(grads.tensors[8 + gate].as_mut_slice(), dz);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(attention: bool, head_input: HeadInput) -> ModelConfig {
        ModelConfig {
            input_width: 2,
            hidden: 3,
            lookback: 4,
            horizon: 2,
            attention,
            head_input,
        }
    }

    fn randomize(p: &mut ModelParams, rng: &mut ChaCha8Rng, scale: f64) {
        for t in p.tensors_mut() {
            t.value
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }

    fn random_window(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Matrix {
        Matrix::from_fn(cfg.lookback, cfg.input_width, |_, _| rng.random_range(0.0..1.0))
    }

    /// Scalar-loop reimplementation of one LSTM step, written from the gate
    /// equations without the crate's matrix helpers.
    fn scalar_step(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let pre = |w: &Matrix, u: &Matrix, b: &Matrix, k: usize| {
            let mut z = b.get(k, 0);
            for j in 0..x.len() {
                z += w.get(k, j) * x[j];
            }
            for j in 0..hd {
                z += u.get(k, j) * h[j];
            }
            z
        };
        let mut h_new = vec![0.0; hd];
        let mut c_new = vec![0.0; hd];
        for k in 0..hd {
            let f = sig(pre(&p.w_f.value, &p.u_f.value, &p.b_f.value, k));
            let i = sig(pre(&p.w_i.value, &p.u_i.value, &p.b_i.value, k));
            let g = pre(&p.w_c.value, &p.u_c.value, &p.b_c.value, k).tanh();
            let o = sig(pre(&p.w_o.value, &p.u_o.value, &p.b_o.value, k));
            c_new[k] = f * c[k] + i * g;
            h_new[k] = o * c_new[k].tanh();
        }
        (h_new, c_new)
    }

    #[test]
    fn zero_params_zero_state_step() {
        let p = LstmParams::zeros(3, 4);
        let out = lstm_step(&[0.3, -1.0, 2.0], &[0.0; 4], &[0.0; 4], &p).unwrap();
        assert!(out.gates.forget.iter().all(|v| *v == 0.5));
        assert!(out.gates.input.iter().all(|v| *v == 0.5));
        assert!(out.gates.output.iter().all(|v| *v == 0.5));
        assert!(out.gates.candidate.iter().all(|v| *v == 0.0));
        assert!(out.cell.iter().all(|v| *v == 0.0));
        assert!(out.hidden.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig { input_width: 3, hidden: 4, lookback: 1, horizon: 1, attention: false, head_input: HeadInput::Context };
        let mut params = ModelParams::zeros(cfg).unwrap();
        randomize(&mut params, &mut rng, 0.5);
        params.lstm.b_f.value.fill(50.0);
        let x = [0.1, 0.2, 0.3];
        let h = [0.2, -0.1, 0.0, 0.4];
        let c = [1.0, -2.0, 0.5, 3.0];
        let out = lstm_step(&x, &h, &c, &params.lstm).unwrap();
        for k in 0..4 {
            let expected = c[k] + out.gates.input[k] * out.gates.candidate[k];
            assert!((out.cell[k] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = ModelConfig { input_width: 3, hidden: 4, lookback: 1, horizon: 1, attention: false, head_input: HeadInput::Context };
        for _ in 0..10 {
            let mut params = ModelParams::zeros(cfg).unwrap();
            randomize(&mut params, &mut rng, 1.0);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = lstm_step(&x, &h, &c, &params.lstm).unwrap();
            let (h2, c2) = scalar_step(&x, &h, &c, &params.lstm);
            for k in 0..4 {
                assert!((out.hidden[k] - h2[k]).abs() < 1e-12);
                assert!((out.cell[k] - c2[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let p = LstmParams::zeros(3, 4);
        assert!(lstm_step(&[0.0; 2], &[0.0; 4], &[0.0; 4], &p).is_err());
    }

    #[test]
    fn attention_single_step_and_identical_states() {
        let mut att = AttentionParams::zeros(2);
        att.w_a.value = Matrix::from_rows(&[vec![0.7, -0.3]]).unwrap();
        let (_, a, c) = attention(&[0.4, 0.9], 2, &att);
        assert_eq!(a, vec![1.0]);
        assert_eq!(c, vec![0.4, 0.9]);

        let states = [0.2, -0.5, 0.2, -0.5, 0.2, -0.5];
        let (_, a, c) = attention(&states, 2, &att);
        for w in &a {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((c[0] - 0.2).abs() < 1e-15 && (c[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn attention_hand_computed() {
        let mut att = AttentionParams::zeros(2);
        att.w_a.value = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        att.b_a.value.set(0, 0, 0.5);
        let h = [1.0, 0.0, 0.0, 1.0, 0.5, 0.5];
        let (e, a, c) = attention(&h, 2, &att);
        let e_direct = [1.5f64.tanh(), (-0.5f64).tanh(), 0.5f64.tanh()];
        let z: f64 = e_direct.iter().map(|v| v.exp()).sum();
        let a_direct: Vec<f64> = e_direct.iter().map(|v| v.exp() / z).collect();
        let c_direct = [
            a_direct[0] * 1.0 + a_direct[2] * 0.5,
            a_direct[1] * 1.0 + a_direct[2] * 0.5,
        ];
        for t in 0..3 {
            assert!((e[t] - e_direct[t]).abs() < 1e-15);
            assert!((a[t] - a_direct[t]).abs() < 1e-15);
        }
        assert!((c[0] - c_direct[0]).abs() < 1e-15 && (c[1] - c_direct[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_window_zero_params_forecasts_zero() {
        let cfg = ModelConfig { input_width: 3, hidden: 5, lookback: 6, horizon: 4, attention: true, head_input: HeadInput::Context };
        let p = ModelParams::zeros(cfg).unwrap();
        let (y, trace) = p.forward(&Matrix::zeros(6, 3)).unwrap();
        assert_eq!(y, vec![0.0; 4]);
        assert!((trace.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_forward_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = ModelConfig { input_width: 3, hidden: 5, lookback: 8, horizon: 4, attention: true, head_input: HeadInput::Context };
        for seed in 0..100 {
            let p = ModelParams::init(cfg, seed).unwrap();
            let (y, trace) = p.forward(&random_window(&mut rng, &cfg)).unwrap();
            assert!(y.iter().all(|v| *v >= 0.0));
            assert!((trace.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(trace.weights.iter().all(|a| *a > 0.0 && *a < 1.0));
            for v in trace.forget.iter().chain(&trace.input_gate).chain(&trace.output_gate) {
                assert!(*v > 0.0 && *v < 1.0);
            }
            assert!(trace.candidate.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn order_matters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ModelConfig { input_width: 3, hidden: 5, lookback: 8, horizon: 4, attention: true, head_input: HeadInput::Context };
        let mut p = ModelParams::init(cfg, 1).unwrap();
        p.head.b_out.value.fill(1.0);
        let w = random_window(&mut rng, &cfg);
        let reversed = Matrix::from_fn(8, 3, |r, c| w.get(7 - r, c));
        assert_ne!(p.forward(&w).unwrap().0, p.forward(&reversed).unwrap().0);
    }

    #[test]
    fn bad_window_shape() {
        let cfg = tiny(true, HeadInput::Context);
        let p = ModelParams::zeros(cfg).unwrap();
        assert!(matches!(p.forward(&Matrix::zeros(3, 2)), Err(ModelError::Shape { .. })));
    }

    #[test]
    fn nan_input_names_stage() {
        let cfg = tiny(true, HeadInput::Context);
        let p = ModelParams::init(cfg, 0).unwrap();
        let mut w = Matrix::zeros(4, 2);
        w.set(1, 1, f64::NAN);
        assert_eq!(
            p.forward(&w).unwrap_err(),
            ModelError::NumericFailure { stage: "lstm" }
        );
    }

    #[test]
    fn zero_upstream_gives_zero_grads_and_trace_is_single_use() {
        let cfg = tiny(true, HeadInput::Context);
        let p = ModelParams::init(cfg, 2).unwrap();
        let (_, mut trace) = p.forward(&Matrix::from_fn(4, 2, |r, c| (r + c) as f64 * 0.1)).unwrap();
        let g = p.backward(&mut trace, &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
        assert_eq!(p.backward(&mut trace, &[0.0, 0.0]).unwrap_err(), ModelError::TraceReused);
    }

    fn finite_difference_check(cfg: ModelConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::zeros(cfg).unwrap();
        randomize(&mut params, &mut rng, 0.8);
        // keep the head in the active ReLU region
        params.head.b_out.value.fill(2.0);
        let window = random_window(&mut rng, &cfg);
        let target: Vec<f64> = (0..cfg.horizon).map(|_| rng.random_range(0.0..1.0)).collect();
        let loss = |p: &ModelParams| -> f64 {
            let y = p.forward(&window).unwrap().0;
            y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
        };
        let (y, mut trace) = params.forward(&window).unwrap();
        let upstream: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / y.len() as f64).collect();
        let grads = params.backward(&mut trace, &upstream).unwrap();
        let eps = 1e-5;
        for (ti, g) in grads.tensors.iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].value.as_mut_slice()[k] += eps;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].value.as_mut_slice()[k] -= eps;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let analytic = g.as_slice()[k];
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8);
                assert!(rel < 1e-4, "tensor {} [{k}]: {analytic} vs {numeric}", params.tensors()[ti].name);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(tiny(true, HeadInput::Context), 1);
        finite_difference_check(tiny(false, HeadInput::Context), 2);
        finite_difference_check(tiny(true, HeadInput::WeightedFlatten), 3);
    }

    #[test]
    fn attention_sum_is_invariant_to_w_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = tiny(true, HeadInput::Context);
        let p = ModelParams::init(cfg, 5).unwrap();
        let w = random_window(&mut rng, &cfg);
        let dir: Vec<f64> = (0..cfg.hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = 1e-5;
        let sum_at = |k: f64| {
            let mut q = p.clone();
            let att = q.attention.as_mut().unwrap();
            for (v, d) in att.w_a.value.as_mut_slice().iter_mut().zip(&dir) {
                *v += k * d;
            }
            q.forward(&w).unwrap().1.weights.iter().sum::<f64>()
        };
        let directional = (sum_at(eps) - sum_at(-eps)) / (2.0 * eps);
        assert!(directional.abs() < 1e-8);
    }

    #[test]
    fn flatten_requires_attention() {
        assert!(ModelParams::zeros(tiny(false, HeadInput::WeightedFlatten)).is_err());
    }
}
