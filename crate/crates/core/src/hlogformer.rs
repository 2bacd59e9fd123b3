//! Running the encoder over a segment schedule.
//!
//! Each step encodes `[previous summary slots | segment tokens | fresh
//! summary placeholders]` in one window; the hidden states at the trailing
//! placeholder positions become the summary passed to the next step. The
//! forward pass walks segments children-before-parents, and the reverse
//! pass walks them back the other way seeded with the forward result, so
//! every token can see both lower and higher context.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log_tree::segment::SegmentPlan;
use crate::model_core::tape::{Tape, Var};
use crate::model_core::{EncoderStack, TapeBinding, POS_EMBED, SIGMA_INIT, TOK_EMBED};
use crate::tokenizer::{MASK_ID, SUM_ID};

/// How a record is processed end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Forward chain then reverse chain; outputs read from the reverse pass.
    Bidirectional,
    /// Forward chain only.
    ForwardOnly,
    /// Every step starts from the initial summary; steps are independent.
    NoSummary,
    /// Full attention over the linearized record in fixed-size windows.
    Flat,
}

impl RunMode {
    pub fn is_flat(self) -> bool {
        self == RunMode::Flat
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            RunMode::Bidirectional => "hlog",
            RunMode::ForwardOnly => "forward-only",
            RunMode::NoSummary => "no-summary",
            RunMode::Flat => "flat",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hlog" | "bidirectional" => Ok(RunMode::Bidirectional),
            "forward-only" => Ok(RunMode::ForwardOnly),
            "no-summary" => Ok(RunMode::NoSummary),
            "flat" => Ok(RunMode::Flat),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode `{other}` (expected hlog, flat, forward-only, or no-summary)"
            ))),
        }
    }
}

/// Which pass supplies token representations and the record summary when
/// both passes run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadPass {
    Reverse,
    Forward,
}

impl Default for ReadPass {
    fn default() -> Self {
        ReadPass::Reverse
    }
}

/// The summary state threaded between steps: one row per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryState {
    pub slots: Array2<f64>,
}

impl SummaryState {
    pub fn mean(&self) -> Array1<f64> {
        let k = self.slots.nrows() as f64;
        self.slots.sum_axis(Axis(0)) / k
    }
}

/// The learnable starting summary.
pub fn init_summary(stack: &EncoderStack) -> SummaryState {
    SummaryState {
        slots: stack.params[SIGMA_INIT].value.clone(),
    }
}

/// One encoded step: hidden states at segment positions plus the refreshed
/// summary.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub z: Array2<f64>,
    pub sigma_next: SummaryState,
}

/// A record with masking already applied to its token ids.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub input: PreparedInput,
    /// Original ids at the masked sites, aligned with the site lists.
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum PreparedInput {
    Hier {
        /// Token ids per step in forward order, MASK substituted.
        steps: Vec<Vec<usize>>,
        /// Masked sites as (step, offset within segment).
        masked: Vec<(usize, usize)>,
    },
    Flat {
        /// The linearized ids, MASK substituted.
        ids: Vec<usize>,
        /// Masked sites as positions in the linearized sequence.
        masked: Vec<usize>,
    },
}

impl PreparedRecord {
    /// Copy a segment plan's ids and substitute MASK at the given sites.
    pub fn hierarchical(
        plan: &SegmentPlan,
        masked: &[(usize, usize)],
        targets: Vec<usize>,
    ) -> Self {
        let mut steps: Vec<Vec<usize>> =
            plan.steps.iter().map(|s| s.token_ids.clone()).collect();
        for &(step, offset) in masked {
            steps[step][offset] = MASK_ID;
        }
        PreparedRecord {
            input: PreparedInput::Hier {
                steps,
                masked: masked.to_vec(),
            },
            targets,
        }
    }

    pub fn flat(mut ids: Vec<usize>, masked: &[usize], targets: Vec<usize>) -> Self {
        for &pos in masked {
            ids[pos] = MASK_ID;
        }
        PreparedRecord {
            input: PreparedInput::Flat {
                ids,
                masked: masked.to_vec(),
            },
            targets,
        }
    }

    pub fn masked_count(&self) -> usize {
        self.targets.len()
    }
}

/// Tape handles produced by running one record; values live on the tape.
pub struct RecordRun {
    /// Logits at masked sites (one row per site), absent when nothing was
    /// masked.
    pub logits: Var,
    pub has_logits: bool,
    pub targets: Vec<usize>,
    /// 1 x d mean of the final summary slots (flat mode: mean over all
    /// token states).
    pub summary: Var,
    /// Final-pass hidden states per step (plan order) or per flat window.
    pub step_z: Vec<Var>,
    pub forward_final: Option<Var>,
    pub reverse_final: Option<Var>,
    /// Encoder windows executed.
    pub windows: usize,
    /// Largest attention window materialized.
    pub max_attn_window: usize,
}

/// Full outputs of one record as plain arrays.
#[derive(Debug, Clone)]
pub struct RecordOutputs {
    pub masked_logits: Array2<f64>,
    pub targets: Vec<usize>,
    pub record_summary: Array1<f64>,
    pub step_z: Vec<Array2<f64>>,
    pub forward_final: Option<SummaryState>,
    pub reverse_final: Option<SummaryState>,
    pub windows: usize,
    pub max_attn_window: usize,
}

/// Encode one segment with the incoming summary and read the refreshed
/// summary off the trailing placeholder positions.
pub fn step_on_tape(
    stack: &EncoderStack,
    tape: &mut Tape,
    binding: &TapeBinding,
    sigma_prev: Var,
    token_ids: &[usize],
) -> Result<(Var, Var)> {
    let k = stack.config.summary_slots;
    let n = token_ids.len();
    let window = 2 * k + n;
    if window > stack.config.max_window {
        return Err(Error::WindowOverflow {
            required: window,
            max: stack.config.max_window,
        });
    }
    let seg_emb = tape.select_rows(binding.var(TOK_EMBED), token_ids);
    let sum_ids = vec![SUM_ID; k];
    let sum_emb = tape.select_rows(binding.var(TOK_EMBED), &sum_ids);
    let stacked = tape.concat_rows(&[sigma_prev, seg_emb, sum_emb]);
    let pos = tape.slice_rows(binding.var(POS_EMBED), 0, window);
    let input = tape.add(stacked, pos);

    let allowed: Vec<usize> = (0..window).collect();
    let hidden = stack.encode_on_tape(tape, binding, input, &allowed);
    let z = tape.slice_rows(hidden, k, k + n);
    let sigma_next = tape.slice_rows(hidden, k + n, k + n + k);
    Ok((z, sigma_next))
}

/// Convenience wrapper over `step_on_tape` returning plain arrays.
pub fn step(
    stack: &EncoderStack,
    sigma_prev: &SummaryState,
    token_ids: &[usize],
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let binding = stack.bind(&mut tape);
    let sigma = tape.constant(sigma_prev.slots.clone());
    let (z, sigma_next) = step_on_tape(stack, &mut tape, &binding, sigma, token_ids)?;
    Ok(StepOutput {
        z: tape.value(z).clone(),
        sigma_next: SummaryState {
            slots: tape.value(sigma_next).clone(),
        },
    })
}

/// Chain the summary through steps in the given order. With
/// `reset_each_step` the chain is broken and every step starts from
/// `sigma_start`.
fn chain_pass(
    stack: &EncoderStack,
    tape: &mut Tape,
    binding: &TapeBinding,
    steps: &[&[usize]],
    sigma_start: Var,
    reset_each_step: bool,
) -> Result<(Vec<Var>, Var)> {
    let mut sigma = sigma_start;
    let mut zs = Vec::with_capacity(steps.len());
    for ids in steps {
        let entering = if reset_each_step { sigma_start } else { sigma };
        let (z, sigma_next) = step_on_tape(stack, tape, binding, entering, ids)?;
        zs.push(z);
        sigma = sigma_next;
    }
    Ok((zs, sigma))
}

/// Run one prepared record on the tape.
pub fn run_record_on_tape(
    stack: &EncoderStack,
    tape: &mut Tape,
    binding: &TapeBinding,
    record: &PreparedRecord,
    mode: RunMode,
    read_pass: ReadPass,
) -> Result<RecordRun> {
    match (&record.input, mode) {
        (PreparedInput::Flat { ids, masked }, RunMode::Flat) => {
            run_flat(stack, tape, binding, ids, masked, &record.targets)
        }
        (PreparedInput::Hier { steps, masked }, mode) if !mode.is_flat() => run_hier(
            stack,
            tape,
            binding,
            steps,
            masked,
            &record.targets,
            mode,
            read_pass,
        ),
        _ => Err(Error::InvalidConfig(
            "prepared record layout does not match the run mode".into(),
        )),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_hier(
    stack: &EncoderStack,
    tape: &mut Tape,
    binding: &TapeBinding,
    steps: &[Vec<usize>],
    masked: &[(usize, usize)],
    targets: &[usize],
    mode: RunMode,
    read_pass: ReadPass,
) -> Result<RecordRun> {
    if steps.is_empty() {
        return Err(Error::EmptyTree);
    }
    let k = stack.config.summary_slots;
    let forward_steps: Vec<&[usize]> = steps.iter().map(|s| s.as_slice()).collect();
    let sigma_init = binding.var(SIGMA_INIT);
    let reset = mode == RunMode::NoSummary;

    let (fwd_z, fwd_final) =
        chain_pass(stack, tape, binding, &forward_steps, sigma_init, reset)?;

    let (final_z, final_sigma, reverse_final, windows) = match mode {
        RunMode::ForwardOnly => (fwd_z, fwd_final, None, steps.len()),
        RunMode::Bidirectional | RunMode::NoSummary => {
            let reversed: Vec<&[usize]> =
                forward_steps.iter().rev().copied().collect();
            // Without the chain, the reverse pass also starts every step
            // from the initial summary.
            let reverse_start = if reset { sigma_init } else { fwd_final };
            let (rev_z_reversed, rev_final) =
                chain_pass(stack, tape, binding, &reversed, reverse_start, reset)?;
            // Back to plan order.
            let mut rev_z = rev_z_reversed;
            rev_z.reverse();
            let (z, sigma) = match read_pass {
                ReadPass::Reverse => (rev_z, rev_final),
                ReadPass::Forward => (fwd_z, fwd_final),
            };
            (z, sigma, Some(rev_final), 2 * steps.len())
        }
        RunMode::Flat => unreachable!("flat handled separately"),
    };

    let summary = tape.mean_rows(final_sigma);
    let (logits, has_logits) = gather_logits_hier(tape, binding, &final_z, masked);
    let max_attn_window = steps.iter().map(|s| 2 * k + s.len()).max().unwrap_or(0);
    Ok(RecordRun {
        logits,
        has_logits,
        targets: targets.to_vec(),
        summary,
        step_z: final_z,
        forward_final: Some(fwd_final),
        reverse_final,
        windows,
        max_attn_window,
    })
}

fn gather_logits_hier(
    tape: &mut Tape,
    binding: &TapeBinding,
    step_z: &[Var],
    masked: &[(usize, usize)],
) -> (Var, bool) {
    if masked.is_empty() {
        let empty = tape.constant(Array2::zeros((0, 0)));
        return (empty, false);
    }
    // Gather masked rows step by step, preserving the site order.
    let mut rows = Vec::with_capacity(masked.len());
    for &(step, offset) in masked {
        rows.push(tape.select_rows(step_z[step], &[offset]));
    }
    let hidden = tape.concat_rows(&rows);
    let logits = tape.matmul_nt(hidden, binding.var(TOK_EMBED));
    (logits, true)
}

fn run_flat(
    stack: &EncoderStack,
    tape: &mut Tape,
    binding: &TapeBinding,
    ids: &[usize],
    masked: &[usize],
    targets: &[usize],
) -> Result<RecordRun> {
    if ids.is_empty() {
        return Err(Error::EmptyTree);
    }
    let w = stack.config.max_window;
    let mut window_z = Vec::new();
    let mut max_attn_window = 0;
    for chunk in ids.chunks(w) {
        let emb = tape.select_rows(binding.var(TOK_EMBED), chunk);
        let pos = tape.slice_rows(binding.var(POS_EMBED), 0, chunk.len());
        let input = tape.add(emb, pos);
        let allowed: Vec<usize> = (0..chunk.len()).collect();
        let hidden = stack.encode_on_tape(tape, binding, input, &allowed);
        window_z.push(hidden);
        max_attn_window = max_attn_window.max(chunk.len());
    }
    let all_states = if window_z.len() == 1 {
        window_z[0]
    } else {
        tape.concat_rows(&window_z)
    };
    let summary = tape.mean_rows(all_states);

    let (logits, has_logits) = if masked.is_empty() {
        (tape.constant(Array2::zeros((0, 0))), false)
    } else {
        let mut rows = Vec::with_capacity(masked.len());
        for &pos in masked {
            rows.push(tape.select_rows(window_z[pos / w], &[pos % w]));
        }
        let hidden = tape.concat_rows(&rows);
        (tape.matmul_nt(hidden, binding.var(TOK_EMBED)), true)
    };
    Ok(RecordRun {
        logits,
        has_logits,
        targets: targets.to_vec(),
        summary,
        step_z: window_z,
        forward_final: None,
        reverse_final: None,
        windows: ids.len().div_ceil(w),
        max_attn_window,
    })
}

/// Run one record on a private tape and return plain arrays.
pub fn run_record(
    stack: &EncoderStack,
    record: &PreparedRecord,
    mode: RunMode,
    read_pass: ReadPass,
) -> Result<RecordOutputs> {
    let mut tape = Tape::new();
    let binding = stack.bind(&mut tape);
    let run = run_record_on_tape(stack, &mut tape, &binding, record, mode, read_pass)?;
    let masked_logits = if run.has_logits {
        tape.value(run.logits).clone()
    } else {
        Array2::zeros((0, stack.config.vocab_size))
    };
    Ok(RecordOutputs {
        masked_logits,
        targets: run.targets.clone(),
        record_summary: tape.value(run.summary).row(0).to_owned(),
        step_z: run.step_z.iter().map(|&z| tape.value(z).clone()).collect(),
        forward_final: run.forward_final.map(|v| SummaryState {
            slots: tape.value(v).clone(),
        }),
        reverse_final: run.reverse_final.map(|v| SummaryState {
            slots: tape.value(v).clone(),
        }),
        windows: run.windows,
        max_attn_window: run.max_attn_window,
    })
}
