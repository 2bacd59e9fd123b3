//! Scalar and row-wise numeric kernels. The autodiff ops in `tape` call
//! these same routines on their forward paths.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Row-wise softmax with max-subtraction for stability. Each output row is
/// nonnegative and sums to 1.
pub fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Normalize a vector to zero mean and unit population variance, then apply
/// the elementwise affine `scale * x + shift`.
pub fn layer_norm(
    x: ArrayView1<f64>,
    scale: ArrayView1<f64>,
    shift: ArrayView1<f64>,
    eps: f64,
) -> Array1<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    let mut out = Array1::zeros(x.len());
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * inv * scale[i] + shift[i];
    }
    out
}

/// Log of softmax for one row, with max-subtraction.
pub fn log_softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.map(|v| v - log_sum)
}

/// Mean negative log-likelihood of the target ids under row-wise softmax.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> Result<f64> {
    assert_eq!(
        logits.nrows(),
        targets.len(),
        "one target per logits row"
    );
    assert!(!targets.is_empty(), "cross_entropy needs at least one row");
    let vocab = logits.ncols();
    let mut total = 0.0;
    for (row, &target) in logits.rows().into_iter().zip(targets) {
        if target >= vocab {
            return Err(Error::TokenIdOutOfRange {
                id: target,
                vocab_size: vocab,
            });
        }
        total -= log_softmax_row(row)[target];
    }
    Ok(total / targets.len() as f64)
}

/// Smooth GELU activation (tanh form).
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

/// Derivative of `gelu`; smooth everywhere, so finite-difference probes
/// need no exclusion set.
pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * A * x * x)
}
