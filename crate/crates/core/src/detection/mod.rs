//! Synthetic-anomaly pipeline: fake-record generation, loss- and
//! rate-based detection, threshold classification, and summary export.

pub mod classify;
pub mod pca;
pub mod recommend;

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::log_tree::LogTree;
use crate::model_core::checkpoint::Checkpoint;
use crate::model_core::tape::Tape;
use crate::training::masking::apply_masking;
use crate::training::{clean_summary, derive_seed, EncodedRecord};

/// Masking protocol shared by detection runs: same rate as training.
pub const DETECT_MASK_RATE: f64 = 0.2;

const STREAM_DETECT_MASK: u64 = 11;
const STREAM_FAKE_MARK: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FakeGenConfig {
    /// Per-leaf probability of being drawn into the value mismatch.
    pub swap_probability: f64,
    pub seed: u64,
}

impl Default for FakeGenConfig {
    fn default() -> Self {
        FakeGenConfig {
            swap_probability: 0.2,
            seed: 0,
        }
    }
}

impl FakeGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.swap_probability > 0.0 && self.swap_probability < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "swap probability must be in (0, 1), got {}",
                self.swap_probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    /// Candidate-set size T.
    pub candidate_size: usize,
    /// Fake-rate threshold.
    pub threshold: f64,
    pub mask_seed: u64,
}

impl DetectionConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.candidate_size == 0 || self.candidate_size > vocab_size {
            return Err(Error::InvalidConfig(format!(
                "candidate size must be in 1..={vocab_size}, got {}",
                self.candidate_size
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Mismatch key-value pairs: each leaf is marked with probability p. Two or
/// more marked leaves rotate their values cyclically; exactly one marked
/// leaf takes a value from another record; zero marked leaves force one.
/// Records with fewer than two leaves are skipped with a warning.
pub fn gen_fake(records: &[LogTree], cfg: &FakeGenConfig) -> Result<Vec<LogTree>> {
    cfg.validate()?;
    // Value pool across records, tagged with the source record index.
    let pool: Vec<(usize, String)> = records
        .iter()
        .enumerate()
        .flat_map(|(idx, tree)| {
            tree.leaves().into_iter().map(move |leaf| {
                (idx, tree.node(leaf).value_text.clone().unwrap_or_default())
            })
        })
        .collect();

    let mut out = Vec::with_capacity(records.len());
    for (idx, tree) in records.iter().enumerate() {
        let leaves = tree.leaves();
        if leaves.len() < 2 {
            log::warn!(
                "record {} has {} leaves; need at least 2, skipping",
                tree.record_id,
                leaves.len()
            );
            continue;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, STREAM_FAKE_MARK, idx as u64]));
        let mut marked: Vec<_> = leaves
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < cfg.swap_probability)
            .collect();
        if marked.is_empty() {
            marked.push(leaves[rng.random_range(0..leaves.len())]);
        }

        let mut fake = tree.clone();
        fake.record_id = format!("{}-fake", tree.record_id);
        if marked.len() >= 2 {
            // Cyclic rotation: every marked leaf takes its predecessor's
            // value, so (x, y, z) becomes (z, x, y).
            let values: Vec<String> = marked
                .iter()
                .map(|&id| tree.node(id).value_text.clone().unwrap_or_default())
                .collect();
            for (i, &leaf) in marked.iter().enumerate() {
                let source = (i + values.len() - 1) % values.len();
                fake.nodes[leaf.0].value_text = Some(values[source].clone());
            }
        } else {
            let leaf = marked[0];
            let original = tree.node(leaf).value_text.clone().unwrap_or_default();
            let replacement = sample_foreign_value(&pool, idx, &original, &mut rng);
            match replacement {
                Some(value) => fake.nodes[leaf.0].value_text = Some(value),
                None => {
                    log::warn!(
                        "record {}: no differing value available in the pool, skipping",
                        tree.record_id
                    );
                    continue;
                }
            }
        }
        out.push(fake);
    }
    Ok(out)
}

fn sample_foreign_value(
    pool: &[(usize, String)],
    current: usize,
    original: &str,
    rng: &mut impl Rng,
) -> Option<String> {
    for _ in 0..100 {
        let (src, value) = &pool[rng.random_range(0..pool.len())];
        if *src != current && value != original {
            return Some(value.clone());
        }
    }
    pool.iter()
        .find(|(src, value)| *src != current && value != original)
        .map(|(_, value)| value.clone())
}

/// Write fake records as JSONL beside the source corpus, suffix
/// `.fake.jsonl`.
pub fn fake_corpus_path(source: &Path) -> std::path::PathBuf {
    let mut name = source
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    name.push_str(".fake.jsonl");
    source.with_file_name(name)
}

pub fn write_jsonl(records: &[LogTree], path: &Path) -> Result<()> {
    let mut text = String::new();
    for record in records {
        text.push_str(&record.to_json_string());
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| Error::io(format!("writing records to {}", path.display()), e))
}

/// Ids with the T highest logits; ties broken toward lower ids.
pub fn top_candidates(logits: &[f64], t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(t);
    order
}

/// Per-record scores under a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordMetrics {
    pub record_id: String,
    pub mlm: f64,
    pub vhm_distance: f64,
    pub fake_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSummary {
    pub records: usize,
    pub mean_mlm: f64,
    pub mean_vhm_distance: f64,
    pub mean_fake_rate: f64,
}

impl SetSummary {
    fn over(rows: &[RecordMetrics]) -> SetSummary {
        let n = rows.len().max(1) as f64;
        SetSummary {
            records: rows.len(),
            mean_mlm: rows.iter().map(|r| r.mlm).sum::<f64>() / n,
            mean_vhm_distance: rows.iter().map(|r| r.vhm_distance).sum::<f64>() / n,
            mean_fake_rate: rows.iter().map(|r| r.fake_rate).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdAccuracy {
    pub alpha: f64,
    pub real_accuracy: f64,
    pub fake_accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub candidate_size: usize,
    pub mask_seed: u64,
    pub real: Vec<RecordMetrics>,
    pub fake: Vec<RecordMetrics>,
    pub real_summary: SetSummary,
    pub fake_summary: SetSummary,
    pub thresholds: Vec<ThresholdAccuracy>,
    pub best_threshold: ThresholdAccuracy,
}

/// Masked run of one record: per-record mean masked-token loss plus the
/// fraction of masked tokens whose true id misses the top-T candidates.
pub fn mlm_and_fake_rate(
    ckpt: &Checkpoint,
    enc: &EncodedRecord,
    candidate_size: usize,
    mask_seed: u64,
    record_pos: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        mask_seed,
        STREAM_DETECT_MASK,
        record_pos,
    ]));
    let mask = apply_masking(&enc.plan, DETECT_MASK_RATE, &mut rng)?;
    let prepared = enc.prepared(Some(&mask), ckpt.mode)?;
    let mut tape = Tape::new();
    let binding = ckpt.stack.bind(&mut tape);
    let run = crate::hlogformer::run_record_on_tape(
        &ckpt.stack,
        &mut tape,
        &binding,
        &prepared,
        ckpt.mode,
        ckpt.read_pass,
    )?;
    let ce = tape.cross_entropy_sum(run.logits, &run.targets);
    let mlm = tape.scalar(ce) / run.targets.len() as f64;

    let logits = tape.value(run.logits);
    let mut misses = 0usize;
    for (row, &target) in logits.rows().into_iter().zip(&run.targets) {
        let row_vec: Vec<f64> = row.to_vec();
        let candidates = top_candidates(&row_vec, candidate_size);
        if !candidates.contains(&target) {
            misses += 1;
        }
    }
    let fake_rate = misses as f64 / run.targets.len() as f64;
    Ok((mlm, fake_rate))
}

/// Distance of the record's clean summary to the persisted training-set
/// center.
pub fn vhm_distance(ckpt: &Checkpoint, enc: &EncodedRecord) -> Result<f64> {
    let center = ckpt.center.as_ref().ok_or(Error::MissingCenter)?;
    let summary = clean_summary(&ckpt.stack, enc, ckpt.mode, ckpt.read_pass)?;
    Ok(distance(&summary, center))
}

fn distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn score_set(
    ckpt: &Checkpoint,
    encs: &[EncodedRecord],
    cfg: &DetectionConfig,
) -> Result<Vec<RecordMetrics>> {
    encs.par_iter()
        .enumerate()
        .map(|(pos, enc)| {
            let (mlm, fake_rate) =
                mlm_and_fake_rate(ckpt, enc, cfg.candidate_size, cfg.mask_seed, pos as u64)?;
            let vhm = vhm_distance(ckpt, enc)?;
            Ok(RecordMetrics {
                record_id: enc.record_id.clone(),
                mlm,
                vhm_distance: vhm,
                fake_rate,
            })
        })
        .collect()
}

/// Loss-only view (no thresholds): per-record and mean losses of both sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossDetection {
    pub real: Vec<RecordMetrics>,
    pub fake: Vec<RecordMetrics>,
    pub real_summary: SetSummary,
    pub fake_summary: SetSummary,
}

pub fn detect_by_loss(
    ckpt: &Checkpoint,
    real: &[EncodedRecord],
    fake: &[EncodedRecord],
    mask_seed: u64,
) -> Result<LossDetection> {
    let cfg = DetectionConfig {
        candidate_size: 1,
        threshold: 0.0,
        mask_seed,
    };
    let real_rows = score_set(ckpt, real, &cfg)?;
    let fake_rows = score_set(ckpt, fake, &cfg)?;
    Ok(LossDetection {
        real_summary: SetSummary::over(&real_rows),
        fake_summary: SetSummary::over(&fake_rows),
        real: real_rows,
        fake: fake_rows,
    })
}

/// Predict fake when the rate exceeds alpha; report per-class accuracies
/// and their mean.
pub fn classify_by_rate(
    rates_real: &[f64],
    rates_fake: &[f64],
    alpha: f64,
) -> ThresholdAccuracy {
    assert!(
        !rates_real.is_empty() && !rates_fake.is_empty(),
        "both rate lists must be nonempty"
    );
    let real_ok = rates_real.iter().filter(|&&r| r <= alpha).count();
    let fake_ok = rates_fake.iter().filter(|&&r| r > alpha).count();
    let real_accuracy = real_ok as f64 / rates_real.len() as f64;
    let fake_accuracy = fake_ok as f64 / rates_fake.len() as f64;
    ThresholdAccuracy {
        alpha,
        real_accuracy,
        fake_accuracy,
        balanced_accuracy: (real_accuracy + fake_accuracy) / 2.0,
    }
}

/// The full pipeline: score both sets, then sweep thresholds.
pub fn run_detection(
    ckpt: &Checkpoint,
    real: &[EncodedRecord],
    fake: &[EncodedRecord],
    cfg: &DetectionConfig,
    alpha_grid: &[f64],
) -> Result<DetectionReport> {
    cfg.validate(ckpt.stack.config.vocab_size)?;
    if real.is_empty() || fake.is_empty() {
        return Err(Error::TooFewRecords {
            required: 1,
            actual: 0,
        });
    }
    let real_rows = score_set(ckpt, real, cfg)?;
    let fake_rows = score_set(ckpt, fake, cfg)?;
    let rates_real: Vec<f64> = real_rows.iter().map(|r| r.fake_rate).collect();
    let rates_fake: Vec<f64> = fake_rows.iter().map(|r| r.fake_rate).collect();
    let thresholds: Vec<ThresholdAccuracy> = alpha_grid
        .iter()
        .map(|&alpha| classify_by_rate(&rates_real, &rates_fake, alpha))
        .collect();
    let best_threshold = thresholds
        .iter()
        .max_by(|a, b| {
            a.balanced_accuracy
                .total_cmp(&b.balanced_accuracy)
                .then(b.alpha.total_cmp(&a.alpha))
        })
        .cloned()
        .unwrap_or_else(|| classify_by_rate(&rates_real, &rates_fake, cfg.threshold));
    Ok(DetectionReport {
        candidate_size: cfg.candidate_size,
        mask_seed: cfg.mask_seed,
        real_summary: SetSummary::over(&real_rows),
        fake_summary: SetSummary::over(&fake_rows),
        real: real_rows,
        fake: fake_rows,
        thresholds,
        best_threshold,
    })
}

pub fn report_to_json(report: &DetectionReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serialization");
    text.push('\n');
    text
}

/// One CSV row per record: `record_id,label,dim_0..dim_{d-1}`.
pub fn export_summaries(
    ckpt: &Checkpoint,
    encs: &[EncodedRecord],
    labels: &[String],
) -> Result<String> {
    assert_eq!(encs.len(), labels.len(), "one label per record");
    let d = ckpt.stack.config.model_width;
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["record_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("dim_{i}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::io("writing embeddings header", std::io::Error::other(e)))?;

    let summaries: Vec<Array1<f64>> = encs
        .par_iter()
        .map(|enc| clean_summary(&ckpt.stack, enc, ckpt.mode, ckpt.read_pass))
        .collect::<Result<_>>()?;
    for ((enc, label), summary) in encs.iter().zip(labels).zip(&summaries) {
        let mut row = vec![enc.record_id.clone(), label.clone()];
        row.extend(summary.iter().map(|v| v.to_string()));
        writer
            .write_record(&row)
            .map_err(|e| Error::io("writing embeddings row", std::io::Error::other(e)))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::io("flushing embeddings", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Read back an embeddings CSV into (record_id, label, vector) rows.
pub fn read_summaries_csv(text: &str) -> Result<Vec<(String, String, Array1<f64>)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::io("reading embeddings CSV", std::io::Error::other(e)))?;
        if row.len() < 3 {
            return Err(Error::InvalidConfig(
                "embeddings CSV needs record_id, label, and at least one dimension".into(),
            ));
        }
        let values: std::result::Result<Vec<f64>, _> =
            row.iter().skip(2).map(str::parse::<f64>).collect();
        let values = values.map_err(|e| {
            Error::InvalidConfig(format!("bad number in embeddings CSV: {e}"))
        })?;
        out.push((
            row[0].to_string(),
            row[1].to_string(),
            Array1::from_vec(values),
        ));
    }
    Ok(out)
}

/// Sanity check used by generators: every leaf value multiset is preserved
/// under within-record rotation.
pub fn leaf_value_multiset(tree: &LogTree) -> Vec<String> {
    let mut values: Vec<String> = tree
        .leaves()
        .into_iter()
        .map(|id| tree.node(id).value_text.clone().unwrap_or_default())
        .collect();
    values.sort();
    values
}

/// True when the two trees differ in at least one leaf value.
pub fn differs_in_some_leaf(a: &LogTree, b: &LogTree) -> bool {
    let la = a.leaves();
    let lb = b.leaves();
    la.len() != lb.len()
        || la
            .iter()
            .zip(&lb)
            .any(|(&x, &y)| a.node(x).value_text != b.node(y).value_text)
}

/// Leaf ids whose values changed between source and fake.
pub fn changed_leaves(source: &LogTree, fake: &LogTree) -> HashSet<usize> {
    source
        .leaves()
        .into_iter()
        .filter(|&id| source.node(id).value_text != fake.node(id).value_text)
        .map(|id| id.0)
        .collect()
}
