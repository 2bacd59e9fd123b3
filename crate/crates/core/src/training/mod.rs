//! Self-supervised training: per-epoch masking, combined objective,
//! deterministic splits, and best-checkpoint tracking.

pub mod loss;
pub mod masking;

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hlogformer::{
    run_record_on_tape, PreparedRecord, ReadPass, RecordRun, RunMode,
};
use crate::log_tree::segment::{
    build_segments, linearize_with_provenance, SegmentPlan, TokenProvenance,
};
use crate::log_tree::LogTree;
use crate::model_core::adam::{Adam, AdamConfig};
use crate::model_core::checkpoint::Checkpoint;
use crate::model_core::tape::Tape;
use crate::model_core::{EncoderConfig, EncoderStack, Gradients};
use crate::tokenizer::Vocab;

use loss::BatchSummaries;
use masking::{apply_masking, MaskPlan};

/// Mix distinct seed streams out of one base seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    fn splitmix64(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

const STREAM_SPLIT: u64 = 1;
const STREAM_EPOCH_ORDER: u64 = 2;
const STREAM_TRAIN_MASK: u64 = 3;
const STREAM_EVAL_MASK: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub lambda_vhm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub mode: RunMode,
    pub read_pass: ReadPass,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_rate: 0.2,
            lambda_vhm: 0.1,
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            mode: RunMode::Bidirectional,
            read_pass: ReadPass::Reverse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mask_rate must be in (0, 1), got {}",
                self.mask_rate
            )));
        }
        if self.lambda_vhm < 0.0 {
            return Err(Error::InvalidConfig("lambda_vhm must be >= 0".into()));
        }
        if self.lambda_vhm > 0.0 && self.adam.weight_decay <= 0.0 {
            // Without decay the hypersphere term admits a collapsed
            // constant-summary solution.
            return Err(Error::InvalidConfig(
                "hypersphere training requires nonzero weight decay".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive index split. Validation and test each get a
/// seventh of the data; the remainder stays in train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_dataset(n_records: usize, seed: u64) -> Result<SplitIndices> {
    if n_records < 7 {
        return Err(Error::TooFewRecords {
            required: 7,
            actual: n_records,
        });
    }
    let mut order: Vec<usize> = (0..n_records).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_SPLIT]));
    order.shuffle(&mut rng);
    let part = n_records / 7;
    let train_n = n_records - 2 * part;
    let train = order[..train_n].to_vec();
    let val = order[train_n..train_n + part].to_vec();
    let test = order[train_n + part..].to_vec();
    Ok(SplitIndices { train, val, test })
}

/// A record with both layouts precomputed against one vocabulary.
#[derive(Debug, Clone)]
pub struct EncodedRecord {
    pub record_id: String,
    pub plan: SegmentPlan,
    pub flat_ids: Vec<usize>,
    pub flat_prov: Vec<TokenProvenance>,
}

pub fn prepare_records(
    trees: &[LogTree],
    vocab: &Vocab,
    max_segment_len: usize,
) -> Result<Vec<EncodedRecord>> {
    trees
        .iter()
        .map(|tree| {
            let plan = build_segments(tree, vocab, max_segment_len)?;
            let (flat_ids, flat_prov) = linearize_with_provenance(tree, vocab)?;
            Ok(EncodedRecord {
                record_id: tree.record_id.clone(),
                plan,
                flat_ids,
                flat_prov,
            })
        })
        .collect()
}

impl EncodedRecord {
    /// Prepared input for the given mode with masking already applied.
    pub fn prepared(&self, mask: Option<&MaskPlan>, mode: RunMode) -> Result<PreparedRecord> {
        match (mode, mask) {
            (RunMode::Flat, Some(m)) => m.flat_record(&self.plan, &self.flat_ids, &self.flat_prov),
            (RunMode::Flat, None) => Ok(PreparedRecord::flat(self.flat_ids.clone(), &[], vec![])),
            (_, Some(m)) => Ok(m.hier_record(&self.plan)),
            (_, None) => Ok(PreparedRecord::hierarchical(&self.plan, &[], vec![])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub mlm: f64,
    pub vhm: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub epoch: usize,
    pub wallclock: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
    pub split: SplitIndices,
    pub best_epoch: usize,
    /// Set when a non-finite loss or gradient stopped training early; the
    /// checkpoint then holds the last good parameters.
    pub diverged: Option<Divergence>,
}

struct RecordPass {
    tape: Tape,
    run: RecordRun,
}

fn record_pass(
    stack: &EncoderStack,
    enc: &EncodedRecord,
    mask: Option<&MaskPlan>,
    mode: RunMode,
    read_pass: ReadPass,
) -> Result<RecordPass> {
    let prepared = enc.prepared(mask, mode)?;
    let mut tape = Tape::new();
    let binding = stack.bind(&mut tape);
    let run = run_record_on_tape(stack, &mut tape, &binding, &prepared, mode, read_pass)?;
    Ok(RecordPass { tape, run })
}

fn batch_center(passes: &[RecordPass]) -> Array1<f64> {
    let dim = passes[0].passes_summary_dim();
    let mut center = Array1::zeros(dim);
    for p in passes {
        center += &p.summary_row();
    }
    center / passes.len() as f64
}

impl RecordPass {
    fn summary_row(&self) -> Array1<f64> {
        self.tape.value(self.run.summary).row(0).to_owned()
    }

    fn passes_summary_dim(&self) -> usize {
        self.tape.value(self.run.summary).ncols()
    }
}

/// Loss pieces of one processed batch.
struct BatchStats {
    nll_sum: f64,
    masked: usize,
    vhm_value: f64,
    records: usize,
}

/// Forward + backward over one batch; gradients are summed in batch order.
fn batch_step(
    stack: &EncoderStack,
    encs: &[EncodedRecord],
    batch: &[usize],
    masks: &[MaskPlan],
    config: &TrainConfig,
) -> Result<(Gradients, BatchStats)> {
    let mut passes: Vec<RecordPass> = batch
        .par_iter()
        .zip(masks.par_iter())
        .map(|(&idx, mask)| record_pass(stack, &encs[idx], Some(mask), config.mode, config.read_pass))
        .collect::<Result<_>>()?;

    let total_masked: usize = passes.iter().map(|p| p.run.targets.len()).sum();
    let n = passes.len();
    let use_vhm = config.lambda_vhm > 0.0 && n >= 2;
    // The center is data: recomputed per batch, blocked in the gradients.
    let center = if n >= 2 {
        Some(batch_center(&passes))
    } else {
        None
    };

    let per_record: Vec<(Vec<Option<Array2<f64>>>, f64, f64)> = passes
        .par_iter_mut()
        .map(|p| {
            let ce = p.tape.cross_entropy_sum(p.run.logits, &p.run.targets);
            let nll = p.tape.scalar(ce);
            let mut objective = p.tape.scale(ce, 1.0 / total_masked as f64);
            let mut dist = 0.0;
            if let Some(c) = &center {
                let c_row = c.clone().insert_axis(Axis(0));
                let d = p.tape.norm_diff(p.run.summary, c_row);
                dist = p.tape.scalar(d);
                if use_vhm {
                    let weighted = p.tape.scale(d, config.lambda_vhm / n as f64);
                    objective = p.tape.add(objective, weighted);
                }
            }
            let sparse = p.tape.backward(objective, stack.params.len());
            (sparse, nll, dist)
        })
        .collect();

    let mut grads = stack.zero_grads();
    let mut nll_sum = 0.0;
    let mut dist_sum = 0.0;
    for (sparse, nll, dist) in per_record {
        for (slot, maybe) in grads.iter_mut().zip(sparse) {
            if let Some(g) = maybe {
                *slot += &g;
            }
        }
        nll_sum += nll;
        dist_sum += dist;
    }
    Ok((
        grads,
        BatchStats {
            nll_sum,
            masked: total_masked,
            vhm_value: if n >= 2 { dist_sum / n as f64 } else { 0.0 },
            records: n,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mlm: f64,
    pub vhm: f64,
    pub records: usize,
    pub masked_tokens: usize,
}

/// Masked-token loss and summary spread over a record subset, with masks
/// drawn deterministically from `eval_seed` per record position.
pub fn evaluate(
    stack: &EncoderStack,
    encs: &[EncodedRecord],
    subset: &[usize],
    config: &TrainConfig,
    eval_seed: u64,
) -> Result<EvalReport> {
    let results: Vec<(f64, usize, Array1<f64>)> = subset
        .par_iter()
        .enumerate()
        .map(|(pos, &idx)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(&[eval_seed, STREAM_EVAL_MASK, pos as u64]));
            let mask = apply_masking(&encs[idx].plan, config.mask_rate, &mut rng)?;
            let mut pass = record_pass(stack, &encs[idx], Some(&mask), config.mode, config.read_pass)?;
            let ce = pass.tape.cross_entropy_sum(pass.run.logits, &pass.run.targets);
            let nll = pass.tape.scalar(ce);
            Ok((nll, pass.run.targets.len(), pass.summary_row()))
        })
        .collect::<Result<_>>()?;

    let masked_tokens: usize = results.iter().map(|(_, m, _)| m).sum();
    let nll_total: f64 = results.iter().map(|(nll, _, _)| nll).sum();
    let summaries: Vec<Array1<f64>> = results.into_iter().map(|(_, _, s)| s).collect();
    let vhm = loss::vhm_loss(&BatchSummaries::from_rows(&summaries));
    Ok(EvalReport {
        mlm: if masked_tokens == 0 {
            0.0
        } else {
            nll_total / masked_tokens as f64
        },
        vhm,
        records: subset.len(),
        masked_tokens,
    })
}

/// Record summary over unmasked input (used for the persisted center,
/// exports, and downstream evaluations).
pub fn clean_summary(
    stack: &EncoderStack,
    enc: &EncodedRecord,
    mode: RunMode,
    read_pass: ReadPass,
) -> Result<Array1<f64>> {
    let pass = record_pass(stack, enc, None, mode, read_pass)?;
    Ok(pass.summary_row())
}

pub fn clean_summaries(
    stack: &EncoderStack,
    encs: &[EncodedRecord],
    subset: &[usize],
    mode: RunMode,
    read_pass: ReadPass,
) -> Result<Vec<Array1<f64>>> {
    subset
        .par_iter()
        .map(|&idx| clean_summary(stack, &encs[idx], mode, read_pass))
        .collect()
}

/// Full training loop over a corpus already split 5:1:1.
pub fn train(
    records: &[LogTree],
    vocab: &Vocab,
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    encoder.validate()?;
    if encoder.vocab_size != vocab.len() {
        return Err(Error::InvalidConfig(format!(
            "encoder vocab_size {} disagrees with the vocabulary ({} tokens)",
            encoder.vocab_size,
            vocab.len()
        )));
    }
    let split = split_dataset(records.len(), config.seed)?;
    let encs = prepare_records(records, vocab, encoder.max_segment_len())?;
    let mut stack = EncoderStack::new(encoder.clone())?;
    let mut adam = Adam::new(config.adam, &stack.params);

    let mut history = Vec::new();
    let mut timings = Vec::new();
    let mut best: Option<(f64, usize, EncoderStack)> = None;
    let mut diverged = None;

    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order = split.train.clone();
        let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            config.seed,
            STREAM_EPOCH_ORDER,
            epoch as u64,
        ]));
        order.shuffle(&mut order_rng);

        let mut epoch_nll = 0.0;
        let mut epoch_masked = 0usize;
        let mut epoch_vhm_weighted = 0.0;
        let mut epoch_records = 0usize;

        for batch in order.chunks(config.batch_size) {
            let masks: Vec<MaskPlan> = batch
                .iter()
                .map(|&idx| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                        config.seed,
                        STREAM_TRAIN_MASK,
                        epoch as u64,
                        idx as u64,
                    ]));
                    apply_masking(&encs[idx].plan, config.mask_rate, &mut rng)
                })
                .collect::<Result<_>>()?;

            let (grads, stats) = batch_step(&stack, &encs, batch, &masks, config)?;
            if !stats.nll_sum.is_finite() || !stats.vhm_value.is_finite() {
                log::error!("non-finite loss in epoch {epoch}; stopping");
                diverged = Some(Divergence { epoch });
                break 'epochs;
            }
            if let Err(Error::NonFiniteGradient { param }) = adam.step(&mut stack.params, &grads) {
                log::error!("non-finite gradient in `{param}` at epoch {epoch}; stopping");
                diverged = Some(Divergence { epoch });
                break 'epochs;
            }
            epoch_nll += stats.nll_sum;
            epoch_masked += stats.masked;
            epoch_vhm_weighted += stats.vhm_value * stats.records as f64;
            epoch_records += stats.records;
        }

        let train_mlm = epoch_nll / epoch_masked.max(1) as f64;
        let train_vhm = epoch_vhm_weighted / epoch_records.max(1) as f64;
        history.push(MetricsRow {
            epoch,
            split: "train".into(),
            mlm: train_mlm,
            vhm: train_vhm,
            total: loss::total_loss(train_mlm, train_vhm, config.lambda_vhm),
        });

        let val = evaluate(&stack, &encs, &split.val, config, config.seed)?;
        let val_total = loss::total_loss(val.mlm, val.vhm, config.lambda_vhm);
        history.push(MetricsRow {
            epoch,
            split: "val".into(),
            mlm: val.mlm,
            vhm: val.vhm,
            total: val_total,
        });
        if !val_total.is_finite() {
            diverged = Some(Divergence { epoch });
            break 'epochs;
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_total < *b) {
            best = Some((val_total, epoch, stack.clone()));
        }
        timings.push(TimingRow {
            epoch,
            wallclock: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train mlm {train_mlm:.4} vhm {train_vhm:.4} | val mlm {:.4} vhm {:.4}",
            val.mlm,
            val.vhm
        );
    }

    let (best_epoch, best_stack) = match best {
        Some((_, epoch, stack)) => (epoch, stack),
        // Divergence in the very first epoch: keep the initial parameters.
        None => (0, stack),
    };

    let train_summaries = clean_summaries(
        &best_stack,
        &encs,
        &split.train,
        config.mode,
        config.read_pass,
    )?;
    let center = BatchSummaries::from_rows(&train_summaries).center;

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            stack: best_stack,
            vocab: vocab.clone(),
            mode: config.mode,
            read_pass: config.read_pass,
            center: Some(center),
        },
        history,
        timings,
        split,
        best_epoch,
        diverged,
    })
}

/// The full-attention baseline: same protocol over linearized records.
/// The encoder config chooses the (deeper) backbone depth.
pub fn train_flat_baseline(
    records: &[LogTree],
    vocab: &Vocab,
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let flat_config = TrainConfig {
        mode: RunMode::Flat,
        ..config.clone()
    };
    train(records, vocab, encoder, &flat_config)
}

/// A frozen batch objective for gradient verification: the mask plans and
/// the hypersphere center are fixed at construction, so analytic and
/// numeric derivatives see the same function.
pub struct LossProbe {
    records: Vec<PreparedRecord>,
    mode: RunMode,
    read_pass: ReadPass,
    lambda: f64,
    total_masked: usize,
    frozen_center: Option<Array2<f64>>,
}

impl LossProbe {
    pub fn new(
        stack: &EncoderStack,
        records: Vec<PreparedRecord>,
        mode: RunMode,
        read_pass: ReadPass,
        lambda: f64,
    ) -> Result<Self> {
        let total_masked = records.iter().map(PreparedRecord::masked_count).sum();
        let mut probe = LossProbe {
            records,
            mode,
            read_pass,
            lambda,
            total_masked,
            frozen_center: None,
        };
        if lambda > 0.0 && probe.records.len() >= 2 {
            let summaries: Vec<Array1<f64>> = probe
                .records
                .iter()
                .map(|r| {
                    let mut tape = Tape::new();
                    let binding = stack.bind(&mut tape);
                    let run = run_record_on_tape(stack, &mut tape, &binding, r, mode, read_pass)?;
                    Ok(tape.value(run.summary).row(0).to_owned())
                })
                .collect::<Result<_>>()?;
            let center = BatchSummaries::from_rows(&summaries).center;
            probe.frozen_center = Some(center.insert_axis(Axis(0)));
        }
        Ok(probe)
    }

    fn run(&self, stack: &EncoderStack, with_grads: bool) -> Result<(f64, Option<Gradients>)> {
        let n = self.records.len();
        let mut total = 0.0;
        let mut grads = with_grads.then(|| stack.zero_grads());
        for record in &self.records {
            let mut tape = Tape::new();
            let binding = stack.bind(&mut tape);
            let run =
                run_record_on_tape(stack, &mut tape, &binding, record, self.mode, self.read_pass)?;
            let mut objective = if run.has_logits && self.total_masked > 0 {
                let ce = tape.cross_entropy_sum(run.logits, &run.targets);
                Some(tape.scale(ce, 1.0 / self.total_masked as f64))
            } else {
                None
            };
            if let Some(center) = &self.frozen_center {
                let d = tape.norm_diff(run.summary, center.clone());
                let weighted = tape.scale(d, self.lambda / n as f64);
                objective = Some(match objective {
                    Some(o) => tape.add(o, weighted),
                    None => weighted,
                });
            }
            let Some(objective) = objective else { continue };
            total += tape.scalar(objective);
            if let Some(buf) = grads.as_mut() {
                let sparse = tape.backward(objective, stack.params.len());
                for (slot, maybe) in buf.iter_mut().zip(sparse) {
                    if let Some(g) = maybe {
                        *slot += &g;
                    }
                }
            }
        }
        Ok((total, grads))
    }

    pub fn loss(&self, stack: &EncoderStack) -> f64 {
        self.run(stack, false).expect("probe loss").0
    }

    pub fn grads(&self, stack: &EncoderStack) -> Gradients {
        self.run(stack, true).expect("probe gradients").1.unwrap()
    }
}

/// Trailing moving average; entry `i` averages the last `window` values
/// ending at `i`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0);
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let from = (i + 1).saturating_sub(window);
            let slice = &values[from..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

pub fn metrics_to_json(history: &[MetricsRow]) -> String {
    let mut text = serde_json::to_string_pretty(history).expect("metrics serialization");
    text.push('\n');
    text
}

pub fn timings_to_json(timings: &[TimingRow]) -> String {
    let mut text = serde_json::to_string_pretty(timings).expect("timings serialization");
    text.push('\n');
    text
}
