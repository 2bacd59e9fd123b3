//! Training objectives: masked-token prediction and the hypersphere term.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::hlogformer::RecordOutputs;
use crate::model_core::kernels;

/// Record summaries for one batch with their dynamically computed center.
/// Gradients are blocked through the center: it is data, not a parameter.
#[derive(Debug, Clone)]
pub struct BatchSummaries {
    pub summaries: Array2<f64>,
    pub center: Array1<f64>,
}

impl BatchSummaries {
    pub fn new(summaries: Array2<f64>) -> Self {
        let n = summaries.nrows().max(1) as f64;
        let center = summaries.sum_axis(Axis(0)) / n;
        BatchSummaries { summaries, center }
    }

    pub fn from_rows(rows: &[Array1<f64>]) -> Self {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut summaries = Array2::zeros((rows.len(), dim));
        for (i, row) in rows.iter().enumerate() {
            summaries.row_mut(i).assign(row);
        }
        BatchSummaries::new(summaries)
    }

    pub fn len(&self) -> usize {
        self.summaries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.nrows() == 0
    }
}

/// Mean distance of each summary to the batch center. Fewer than two
/// summaries cannot define a meaningful spread; that degenerate case is 0
/// with a warning.
pub fn vhm_loss(batch: &BatchSummaries) -> f64 {
    let n = batch.len();
    if n < 2 {
        log::warn!("hypersphere loss needs at least 2 summaries, got {n}; returning 0");
        return 0.0;
    }
    // Identical rows are exactly at their own center; report exact zero
    // rather than accumulated rounding from the mean.
    let first = batch.summaries.row(0);
    if batch.summaries.rows().into_iter().all(|r| r == first) {
        return 0.0;
    }
    let mut total = 0.0;
    for row in batch.summaries.rows() {
        let dist = row
            .iter()
            .zip(batch.center.iter())
            .map(|(s, c)| (s - c) * (s - c))
            .sum::<f64>()
            .sqrt();
        total += dist;
    }
    total / n as f64
}

/// Mean negative log-likelihood over every masked token in the batch.
pub fn mlm_loss(outputs: &[RecordOutputs]) -> Result<f64> {
    let mut total_nll = 0.0;
    let mut total_masked = 0usize;
    for out in outputs {
        if out.masked_logits.nrows() != out.targets.len() {
            return Err(Error::ShapeMismatch {
                context: "masked-token loss".into(),
                expected: format!("{} logit rows", out.targets.len()),
                actual: format!("{}", out.masked_logits.nrows()),
            });
        }
        if out.targets.is_empty() {
            continue;
        }
        total_nll +=
            kernels::cross_entropy(&out.masked_logits, &out.targets)? * out.targets.len() as f64;
        total_masked += out.targets.len();
    }
    if total_masked == 0 {
        return Ok(0.0);
    }
    Ok(total_nll / total_masked as f64)
}

pub fn total_loss(mlm: f64, vhm: f64, lambda: f64) -> f64 {
    mlm + lambda * vhm
}
