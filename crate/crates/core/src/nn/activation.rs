//! Scalar and vector activations used by the recurrent model.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    // Same value as 1/(1+e^-x); the branch avoids overflow of e^-x for large negative x.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Softmax with max subtraction. Empty input gives an empty output.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Vector-Jacobian product of softmax: given `a = softmax(e)` and `∂L/∂a`,
/// returns `∂L/∂e = a ⊙ (g − ⟨a, g⟩)`.
pub fn softmax_backward(weights: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner: f64 = weights.iter().zip(upstream).map(|(a, g)| a * g).sum();
    weights
        .iter()
        .zip(upstream)
        .map(|(a, g)| a * (g - inner))
        .collect()
}
