//! Finite-difference verification of analytic gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderStack, Gradients};

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// Both sides sit under the finite-difference resolution bound, so
    /// the probe certifies "zero within measurement resolution" and its
    /// rel_err carries no information. Structurally inert parameters
    /// (e.g. the key bias, which cancels in the row softmax) land here.
    pub below_resolution: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over the measurable probes.
    pub max_rel_err: f64,
    pub probes: Vec<ProbeResult>,
    pub measurable: usize,
    pub below_resolution: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ProbeResult> {
        self.probes
            .iter()
            .filter(|p| !p.below_resolution)
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Central difference of a scalar function.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Relative error used for every probe: |a - n| / max(|a|, |n|, 1e-8).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients against central finite differences at
/// `probes` parameter entries chosen round-robin across tensors, so every
/// parameter group is probed when `probes >= tensor count`.
///
/// The model is smooth (GELU activations), so no probe exclusions are
/// needed.
pub fn grad_check<L, G>(
    stack: &mut EncoderStack,
    loss_fn: L,
    grad_fn: G,
    probes: usize,
    eps: f64,
    seed: u64,
) -> GradCheckReport
where
    L: Fn(&EncoderStack) -> f64,
    G: Fn(&EncoderStack) -> Gradients,
{
    let analytic = grad_fn(stack);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensor_count = stack.params.len();
    let mut results = Vec::with_capacity(probes);
    for i in 0..probes {
        let t = i % tensor_count;
        let (rows, cols) = {
            let shape = stack.params[t].value.raw_dim();
            (shape[0], shape[1])
        };
        let row = rng.random_range(0..rows);
        let col = rng.random_range(0..cols);
        let original = stack.params[t].value[[row, col]];

        stack.params[t].value[[row, col]] = original + eps;
        let plus = loss_fn(stack);
        stack.params[t].value[[row, col]] = original - eps;
        let minus = loss_fn(stack);
        stack.params[t].value[[row, col]] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        // Central differences cannot resolve slopes below roughly
        // eps_machine * |loss| / eps; below that, agreement with zero is
        // all that can be certified.
        let resolution = 8.0 * f64::EPSILON * plus.abs().max(minus.abs()).max(1.0) / eps;
        let a = analytic[t][[row, col]];
        let below_resolution = a.abs() < resolution && numeric.abs() < resolution;
        results.push(ProbeResult {
            param: stack.params[t].name.clone(),
            row,
            col,
            analytic: a,
            numeric,
            rel_err: if below_resolution { 0.0 } else { rel_err(a, numeric) },
            below_resolution,
        });
    }
    let max_rel_err = results
        .iter()
        .filter(|p| !p.below_resolution)
        .map(|p| p.rel_err)
        .fold(0.0_f64, f64::max);
    let below = results.iter().filter(|p| p.below_resolution).count();
    GradCheckReport {
        max_rel_err,
        measurable: results.len() - below,
        below_resolution: below,
        probes: results,
    }
}
