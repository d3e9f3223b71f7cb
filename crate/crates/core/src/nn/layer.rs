//! Single-sample differentiable layers with an explicit tape.
//!
//! A forward call returns the output together with a [`LayerTape`]; the
//! matching backward call consumes the tape once, returns the gradient with
//! respect to the input, and accumulates parameter gradients into
//! [`ParamTensor::grad`].

use rand::Rng;

use super::activation::{relu, sigmoid, softmax, softmax_backward};
use super::matrix::{add_into, matvec_acc, matvec_t_acc, outer_acc};
use super::param::glorot_uniform;
use super::{Matrix, NnError, ParamTensor};

/// Activations cached by one forward call.
#[derive(Debug, Clone)]
pub struct LayerTape {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    spent: bool,
}

impl LayerTape {
    fn new(input: Vec<f64>, output: Vec<f64>) -> Self {
        Self {
            input,
            output,
            spent: false,
        }
    }

    fn consume(&mut self) -> Result<(), NnError> {
        if self.spent {
            return Err(NnError::TapeReused);
        }
        self.spent = true;
        Ok(())
    }

    pub fn is_spent(&self) -> bool {
        self.spent
    }
}

pub trait Layer {
    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, LayerTape), NnError>;

    fn backward(&mut self, tape: &mut LayerTape, upstream: &[f64]) -> Result<Vec<f64>, NnError>;

    fn params(&self) -> Vec<&ParamTensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        Vec::new()
    }
}

fn check_len(expected: usize, actual: usize) -> Result<(), NnError> {
    if expected != actual {
        return Err(NnError::BadLength { expected, actual });
    }
    Ok(())
}

/// `y = W x + b`
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: ParamTensor::new("weight", glorot_uniform(rng, outputs, inputs)),
            bias: ParamTensor::zeros("bias", outputs, 1),
        }
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self, NnError> {
        if weight.rows() != bias.len() {
            return Err(NnError::ShapeMismatch {
                left: weight.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Self {
            weight: ParamTensor::new("weight", weight),
            bias: ParamTensor::new("bias", Matrix::column(bias)),
        })
    }
}

impl Layer for Dense {
    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, LayerTape), NnError> {
        check_len(self.weight.value.cols(), input.len())?;
        let mut out = self.bias.value.as_slice().to_vec();
        matvec_acc(&self.weight.value, input, &mut out);
        Ok((out.clone(), LayerTape::new(input.to_vec(), out)))
    }

    fn backward(&mut self, tape: &mut LayerTape, upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(self.weight.value.rows(), upstream.len())?;
        tape.consume()?;
        outer_acc(&mut self.weight.grad, upstream, &tape.input);
        add_into(self.bias.grad.as_mut_slice(), upstream);
        let mut dx = vec![0.0; tape.input.len()];
        matvec_t_acc(&self.weight.value, upstream, &mut dx);
        Ok(dx)
    }

    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Elementwise activation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => relu(x),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl Layer for Activation {
    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, LayerTape), NnError> {
        let out: Vec<f64> = input.iter().map(|&x| self.apply(x)).collect();
        Ok((out.clone(), LayerTape::new(input.to_vec(), out)))
    }

    fn backward(&mut self, tape: &mut LayerTape, upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(tape.output.len(), upstream.len())?;
        tape.consume()?;
        Ok(tape
            .input
            .iter()
            .zip(&tape.output)
            .zip(upstream)
            .map(|((&x, &y), &g)| g * self.derivative(x, y))
            .collect())
    }
}

/// Softmax over the whole input vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct Softmax;

impl Layer for Softmax {
    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, LayerTape), NnError> {
        let out = softmax(input);
        Ok((out.clone(), LayerTape::new(input.to_vec(), out)))
    }

    fn backward(&mut self, tape: &mut LayerTape, upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(tape.output.len(), upstream.len())?;
        tape.consume()?;
        Ok(softmax_backward(&tape.output, upstream))
    }
}
