//! Layer normalization without learned scale or shift.

pub const LAYERNORM_EPS: f64 = 1e-5;

/// `(v − mean) / sqrt(var + ε)` with the population variance.
pub fn layernorm(v: &[f64]) -> Vec<f64> {
    let (mean, inv_std) = moments(v);
    v.iter().map(|x| (x - mean) * inv_std).collect()
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYERNORM_EPS).sqrt())
}

/// Gradient with respect to the input, given the input `v` and the gradient
/// `dy` with respect to `layernorm(v)`.
pub fn layernorm_backward(v: &[f64], dy: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let (mean, inv_std) = moments(v);
    let y: Vec<f64> = v.iter().map(|x| (x - mean) * inv_std).collect();
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_y = dy.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n;
    dy.iter()
        .zip(&y)
        .map(|(d, y)| inv_std * (d - mean_dy - y * mean_dy_y))
        .collect()
}
