use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{fan_in_uniform, glorot_uniform, Matrix, ParamTensor};

pub const HEAD_BIAS_INIT: f64 = 0.25;

/// What the output layer reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// Attention context vector `c = Σ a_t h_t` (length `hidden`).
    #[default]
    Context,
    /// Concatenation of `a_t h_t` over all steps (length `lookback·hidden`).
    WeightedFlatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_width: usize,
    pub hidden: usize,
    pub lookback: usize,
    pub horizon: usize,
    /// Without attention the head reads the last hidden state.
    pub attention: bool,
    #[serde(default)]
    pub head_input: HeadInput,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_width == 0 || self.hidden == 0 || self.lookback == 0 || self.horizon == 0 {
            return Err(ModelError::Config("all model dimensions must be positive".into()));
        }
        if !self.attention && self.head_input == HeadInput::WeightedFlatten {
            return Err(ModelError::Config(
                "weighted_flatten head requires attention".into(),
            ));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        match (self.attention, self.head_input) {
            (true, HeadInput::WeightedFlatten) => self.lookback * self.hidden,
            _ => self.hidden,
        }
    }
}

/// Gate weights. `w_*` are `hidden × input_width`, `u_*` are
/// `hidden × hidden`, biases are `hidden × 1`. Gate order is forget, input,
/// candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_f: ParamTensor,
    pub w_i: ParamTensor,
    pub w_c: ParamTensor,
    pub w_o: ParamTensor,
    pub u_f: ParamTensor,
    pub u_i: ParamTensor,
    pub u_c: ParamTensor,
    pub u_o: ParamTensor,
    pub b_f: ParamTensor,
    pub b_i: ParamTensor,
    pub b_c: ParamTensor,
    pub b_o: ParamTensor,
}

impl LstmParams {
    pub fn zeros(input_width: usize, hidden: usize) -> Self {
        let w = |name: &str| ParamTensor::zeros(name, hidden, input_width);
        let u = |name: &str| ParamTensor::zeros(name, hidden, hidden);
        let b = |name: &str| ParamTensor::zeros(name, hidden, 1);
        Self {
            w_f: w("lstm.w_f"),
            w_i: w("lstm.w_i"),
            w_c: w("lstm.w_c"),
            w_o: w("lstm.w_o"),
            u_f: u("lstm.u_f"),
            u_i: u("lstm.u_i"),
            u_c: u("lstm.u_c"),
            u_o: u("lstm.u_o"),
            b_f: b("lstm.b_f"),
            b_i: b("lstm.b_i"),
            b_c: b("lstm.b_c"),
            b_o: b("lstm.b_o"),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.value.rows()
    }

    pub fn input_width(&self) -> usize {
        self.w_f.value.cols()
    }

    pub fn tensors(&self) -> [&ParamTensor; 12] {
        [
            &self.w_f, &self.w_i, &self.w_c, &self.w_o, &self.u_f, &self.u_i, &self.u_c,
            &self.u_o, &self.b_f, &self.b_i, &self.b_c, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut ParamTensor; 12] {
        [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.u_f,
            &mut self.u_i,
            &mut self.u_c,
            &mut self.u_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

/// Single-unit scoring layer: `e_t = tanh(w_a · h_t + b_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_a: ParamTensor,
    pub b_a: ParamTensor,
}

impl AttentionParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w_a: ParamTensor::zeros("attention.w_a", 1, hidden),
            b_a: ParamTensor::zeros("attention.b_a", 1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w_out: ParamTensor,
    pub b_out: ParamTensor,
}

impl HeadParams {
    pub fn zeros(inputs: usize, horizon: usize) -> Self {
        Self {
            w_out: ParamTensor::zeros("head.w_out", horizon, inputs),
            b_out: ParamTensor::zeros("head.b_out", horizon, 1),
        }
    }
}

/// All trainable weights of the forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lstm: LstmParams,
    pub attention: Option<AttentionParams>,
    pub head: HeadParams,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            lstm: LstmParams::zeros(config.input_width, config.hidden),
            attention: config.attention.then(|| AttentionParams::zeros(config.hidden)),
            head: HeadParams::zeros(config.head_width(), config.horizon),
        })
    }

    /// Glorot-uniform input, attention and output weights; fan-in uniform
    /// recurrent weights; zero biases except the forget gate (1.0) and the
    /// output layer ([`HEAD_BIAS_INIT`], so no ReLU unit starts dead).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, n) = (config.hidden, config.input_width);
        for w in [&mut p.lstm.w_f, &mut p.lstm.w_i, &mut p.lstm.w_c, &mut p.lstm.w_o] {
            w.value = glorot_uniform(&mut rng, h, n);
        }
        for u in [&mut p.lstm.u_f, &mut p.lstm.u_i, &mut p.lstm.u_c, &mut p.lstm.u_o] {
            u.value = fan_in_uniform(&mut rng, h, h);
        }
        p.lstm.b_f.value.fill(1.0);
        if let Some(att) = p.attention.as_mut() {
            att.w_a.value = glorot_uniform(&mut rng, 1, h);
        }
        p.head.w_out.value = glorot_uniform(&mut rng, config.horizon, config.head_width());
        p.head.b_out.value.fill(HEAD_BIAS_INIT);
        Ok(p)
    }

    /// Every tensor in a fixed order: LSTM (12), attention (2, if present), head (2).
    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out: Vec<&ParamTensor> = self.lstm.tensors().into_iter().collect();
        if let Some(att) = &self.attention {
            out.push(&att.w_a);
            out.push(&att.b_a);
        }
        out.push(&self.head.w_out);
        out.push(&self.head.b_out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out: Vec<&mut ParamTensor> = self.lstm.tensors_mut().into_iter().collect();
        if let Some(att) = self.attention.as_mut() {
            out.push(&mut att.w_a);
            out.push(&mut att.b_a);
        }
        out.push(&mut self.head.w_out);
        out.push(&mut self.head.b_out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.value.all_finite())
    }
}

/// Gradients for every tensor of a [`ModelParams`], in
/// [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params
                .tensors()
                .iter()
                .map(|t| Matrix::zeros(t.value.rows(), t.value.cols()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            crate::nn::matrix::add_into(a.as_mut_slice(), b.as_slice());
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.as_mut_slice().iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.as_slice().iter().all(|v| *v == 0.0))
    }

    /// Adds these gradients into each tensor's `grad` field.
    pub fn accumulate_into(&self, params: &mut ModelParams) {
        for (t, g) in params.tensors_mut().into_iter().zip(&self.tensors) {
            if t.grad.shape() != g.shape() {
                t.zero_grad();
            }
            crate::nn::matrix::add_into(t.grad.as_mut_slice(), g.as_slice());
        }
    }
}
