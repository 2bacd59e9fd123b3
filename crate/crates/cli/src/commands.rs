//! Subcommand implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde_json::json;

use hlogformer::detection::classify::{classify_supervised, ClassifyConfig};
use hlogformer::detection::pca::pca_project;
use hlogformer::detection::recommend::{read_histories_jsonl, recommend_eval};
use hlogformer::detection::{
    self, export_summaries, fake_corpus_path, gen_fake, read_summaries_csv, run_detection,
    DetectionConfig, FakeGenConfig,
};
use hlogformer::log_tree::segment::{
    build_segments, flat_attention_cost, flat_text, plan_attention_cost, plan_max_window,
};
use hlogformer::log_tree::{load_corpus, parse_corpus, LogTree};
use hlogformer::model_core::gradcheck::grad_check;
use hlogformer::model_core::{count_block_params, count_params, EncoderStack};
use hlogformer::synth::{
    gen_copurchase_corpus, gen_log_corpus, histories_to_jsonl, labels_to_csv, CopurchaseConfig,
    LogCorpusConfig,
};
use hlogformer::tokenizer::build_vocab;
use hlogformer::training::masking::seeded_mask;
use hlogformer::training::{
    clean_summaries, evaluate, metrics_to_json, prepare_records, split_dataset, timings_to_json,
    train, EncodedRecord, LossProbe, TrainConfig,
};
use hlogformer::{Checkpoint, Error, Result, RunMode, Vocab};

use crate::artifacts::{require_exists, write_artifact, write_artifact_str};
use crate::config::RunConfig;
use crate::Command;

pub struct Outcome {
    pub result: serde_json::Value,
    pub exit_code: u8,
}

impl Outcome {
    fn ok(result: serde_json::Value) -> Self {
        Outcome {
            result,
            exit_code: 0,
        }
    }
}

pub fn dispatch(command: Command, force: bool) -> Result<Outcome> {
    match command {
        Command::BuildVocab {
            corpus,
            min_freq,
            out,
        } => build_vocab_cmd(&corpus, min_freq, &out, force),
        Command::Train {
            config,
            mode,
            out,
            set,
        } => train_cmd(&config, mode, out, &set, force),
        Command::EvalMlm {
            ckpt,
            data,
            seed,
            out,
        } => eval_mlm_cmd(&ckpt, &data, seed, out.as_deref(), force),
        Command::GenFake { data, p, seed, out } => gen_fake_cmd(&data, p, seed, out, force),
        Command::Detect {
            ckpt,
            real,
            fake,
            t,
            alpha_grid,
            mask_seed,
            out,
        } => detect_cmd(&ckpt, &real, &fake, t, alpha_grid, mask_seed, &out, force),
        Command::ExportEmbeddings {
            ckpt,
            data,
            labels,
            out,
        } => export_cmd(&ckpt, &data, labels.as_deref(), &out, force),
        Command::Pca { input, dims, out } => pca_cmd(&input, dims, &out, force),
        Command::Classify {
            ckpt,
            data,
            labels,
            seed,
            epochs,
            out,
        } => classify_cmd(&ckpt, &data, &labels, seed, epochs, out.as_deref(), force),
        Command::Recommend {
            ckpt,
            items,
            histories,
            k_list,
            seed,
            out,
        } => recommend_cmd(&ckpt, &items, &histories, &k_list, seed, out.as_deref(), force),
        Command::ParamCount { config, set } => param_count_cmd(&config, &set),
        Command::MemReport {
            data,
            config,
            max_segment_len,
            set,
            out,
        } => mem_report_cmd(&data, &config, max_segment_len, &set, out.as_deref(), force),
        Command::Gradcheck {
            config,
            probes,
            eps,
            seed,
            set,
        } => gradcheck_cmd(&config, probes, eps, seed, &set),
        Command::GenCorpus {
            kind,
            records,
            seed,
            out,
        } => gen_corpus_cmd(&kind, records, seed, &out, force),
    }
}

fn corpus_texts(records: &[LogTree]) -> Result<Vec<String>> {
    records.iter().map(flat_text).collect()
}

fn load_or_build_vocab(config: &RunConfig, records: &[LogTree]) -> Result<Vocab> {
    if let Some(path) = &config.data.vocab {
        if path.exists() {
            return Vocab::load(path);
        }
    }
    build_vocab(&corpus_texts(records)?, config.data.min_freq)
}

/// Records of a data file prepared against a checkpoint's vocabulary.
fn prepare_for(ckpt: &Checkpoint, data: &Path) -> Result<Vec<EncodedRecord>> {
    let records = load_corpus(data)?;
    prepare_records(
        &records,
        &ckpt.vocab,
        ckpt.stack.config.max_segment_len(),
    )
}

fn eval_train_config(ckpt: &Checkpoint, seed: u64) -> TrainConfig {
    TrainConfig {
        mode: ckpt.mode,
        read_pass: ckpt.read_pass,
        seed,
        ..TrainConfig::default()
    }
}

fn build_vocab_cmd(corpus: &Path, min_freq: usize, out: &Path, force: bool) -> Result<Outcome> {
    require_exists(corpus, "corpus")?;
    let records = load_corpus(corpus)?;
    let vocab = build_vocab(&corpus_texts(&records)?, min_freq)?;
    if out.exists() && !force {
        return Err(Error::ArtifactExists(out.display().to_string()));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    vocab.save(out)?;
    Ok(Outcome::ok(json!({
        "vocab": out.display().to_string(),
        "tokens": vocab.len(),
        "records": records.len(),
    })))
}

fn train_cmd(
    config_path: &Path,
    mode_flag: Option<String>,
    out_flag: Option<PathBuf>,
    overrides: &[String],
    force: bool,
) -> Result<Outcome> {
    let mut config = RunConfig::load(config_path, overrides)?;
    if let Some(mode) = mode_flag {
        config.train.mode = mode;
    }
    if let Some(out) = out_flag {
        config.out_dir = out;
    }
    require_exists(&config.data.corpus, "corpus")?;
    let mode = config.run_mode()?;
    let out_dir = config.out_dir.clone();

    let records = load_corpus(&config.data.corpus)?;
    let vocab = load_or_build_vocab(&config, &records)?;
    let encoder = config.encoder_config(vocab.len(), mode);
    let train_config = config.train_config(mode)?;

    let started = Instant::now();
    let outcome = train(&records, &vocab, &encoder, &train_config)?;
    let elapsed = started.elapsed().as_secs_f64();

    write_artifact_str(
        &out_dir.join("config.effective.toml"),
        &config.to_toml(),
        force,
    )?;
    let vocab_path = out_dir.join("vocab.txt");
    if !vocab_path.exists() || force {
        if vocab_path.exists() {
            std::fs::remove_file(&vocab_path)
                .map_err(|e| Error::io(format!("removing {}", vocab_path.display()), e))?;
        }
        vocab.save(&vocab_path)?;
    }
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    write_artifact(&ckpt_path, &outcome.checkpoint.to_bytes(), force)?;
    write_artifact_str(
        &out_dir.join("metrics.json"),
        &metrics_to_json(&outcome.history),
        force,
    )?;
    write_artifact_str(
        &out_dir.join("timing.json"),
        &timings_to_json(&outcome.timings),
        force,
    )?;
    for (name, subset) in [
        ("train", &outcome.split.train),
        ("val", &outcome.split.val),
        ("test", &outcome.split.test),
    ] {
        let mut text = String::new();
        for &idx in subset {
            text.push_str(&records[idx].to_json_string());
            text.push('\n');
        }
        write_artifact_str(&out_dir.join(format!("{name}.jsonl")), &text, force)?;
    }

    let last_val = outcome
        .history
        .iter()
        .rev()
        .find(|r| r.split == "val")
        .cloned();
    let diverged = outcome.diverged.is_some();
    let result = json!({
        "checkpoint": ckpt_path.display().to_string(),
        "mode": mode.to_string(),
        "epochs_run": outcome.timings.len(),
        "best_epoch": outcome.best_epoch,
        "final_val": last_val.map(|r| json!({"mlm": r.mlm, "vhm": r.vhm, "total": r.total})),
        "diverged": diverged,
        "elapsed_sec": elapsed,
    });
    Ok(Outcome {
        result,
        exit_code: if diverged { 4 } else { 0 },
    })
}

fn eval_mlm_cmd(
    ckpt_path: &Path,
    data: &Path,
    seed: u64,
    out: Option<&Path>,
    force: bool,
) -> Result<Outcome> {
    require_exists(ckpt_path, "checkpoint")?;
    require_exists(data, "data file")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let encs = prepare_for(&ckpt, data)?;
    let subset: Vec<usize> = (0..encs.len()).collect();
    let report = evaluate(
        &ckpt.stack,
        &encs,
        &subset,
        &eval_train_config(&ckpt, seed),
        seed,
    )?;
    let result = json!({
        "mlm": report.mlm,
        "vhm": report.vhm,
        "records": report.records,
        "masked_tokens": report.masked_tokens,
    });
    if let Some(path) = out {
        write_artifact_str(
            path,
            &format!("{}\n", serde_json::to_string_pretty(&result).unwrap()),
            force,
        )?;
    }
    Ok(Outcome::ok(result))
}

fn gen_fake_cmd(
    data: &Path,
    p: f64,
    seed: u64,
    out: Option<PathBuf>,
    force: bool,
) -> Result<Outcome> {
    require_exists(data, "data file")?;
    let records = load_corpus(data)?;
    let fakes = gen_fake(&records, &FakeGenConfig {
        swap_probability: p,
        seed,
    })?;
    let target = out.unwrap_or_else(|| fake_corpus_path(data));
    if target.exists() && !force {
        return Err(Error::ArtifactExists(target.display().to_string()));
    }
    detection::write_jsonl(&fakes, &target)?;
    Ok(Outcome::ok(json!({
        "fake_corpus": target.display().to_string(),
        "source_records": records.len(),
        "fake_records": fakes.len(),
    })))
}

#[allow(clippy::too_many_arguments)]
fn detect_cmd(
    ckpt_path: &Path,
    real: &Path,
    fake: &Path,
    t: usize,
    alpha_grid: Option<String>,
    mask_seed: u64,
    out_dir: &Path,
    force: bool,
) -> Result<Outcome> {
    require_exists(ckpt_path, "checkpoint")?;
    require_exists(real, "real corpus")?;
    require_exists(fake, "fake corpus")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let real_encs = prepare_for(&ckpt, real)?;
    let fake_encs = prepare_for(&ckpt, fake)?;
    let grid: Vec<f64> = match alpha_grid {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidConfig(format!("bad alpha `{s}` in --alpha-grid: {e}"))
                })
            })
            .collect::<Result<_>>()?,
        None => (0..=20).map(|i| i as f64 * 0.05).collect(),
    };
    let cfg = DetectionConfig {
        candidate_size: t,
        threshold: grid.first().copied().unwrap_or(0.0),
        mask_seed,
    };
    let report = run_detection(&ckpt, &real_encs, &fake_encs, &cfg, &grid)?;
    write_artifact_str(
        &out_dir.join("report.json"),
        &detection::report_to_json(&report),
        force,
    )?;
    Ok(Outcome::ok(json!({
        "report": out_dir.join("report.json").display().to_string(),
        "real_mean_mlm": report.real_summary.mean_mlm,
        "fake_mean_mlm": report.fake_summary.mean_mlm,
        "real_mean_vhm_distance": report.real_summary.mean_vhm_distance,
        "fake_mean_vhm_distance": report.fake_summary.mean_vhm_distance,
        "real_mean_fake_rate": report.real_summary.mean_fake_rate,
        "fake_mean_fake_rate": report.fake_summary.mean_fake_rate,
        "best_alpha": report.best_threshold.alpha,
        "best_balanced_accuracy": report.best_threshold.balanced_accuracy,
    })))
}

fn read_labels_csv(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading labels from {}", path.display()), e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::io("reading labels CSV", std::io::Error::other(e)))?;
        if row.len() < 2 {
            return Err(Error::InvalidConfig(
                "labels CSV needs record_id,label columns".into(),
            ));
        }
        out.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(out)
}

fn export_cmd(
    ckpt_path: &Path,
    data: &Path,
    labels: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<Outcome> {
    require_exists(ckpt_path, "checkpoint")?;
    require_exists(data, "data file")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let encs = prepare_for(&ckpt, data)?;
    let label_map = labels.map(read_labels_csv).transpose()?;
    let labels: Vec<String> = encs
        .iter()
        .map(|enc| match &label_map {
            Some(map) => map.get(&enc.record_id).cloned().ok_or_else(|| {
                Error::InvalidConfig(format!("no label for record `{}`", enc.record_id))
            }),
            None => Ok("real".to_string()),
        })
        .collect::<Result<_>>()?;
    let csv_text = export_summaries(&ckpt, &encs, &labels)?;
    write_artifact_str(out, &csv_text, force)?;
    Ok(Outcome::ok(json!({
        "embeddings": out.display().to_string(),
        "records": encs.len(),
        "dims": ckpt.stack.config.model_width,
    })))
}

fn pca_cmd(input: &Path, dims: usize, out: &Path, force: bool) -> Result<Outcome> {
    require_exists(input, "embeddings CSV")?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::io(format!("reading {}", input.display()), e))?;
    let rows = read_summaries_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let d = rows[0].2.len();
    let mut matrix = Array2::zeros((rows.len(), d));
    for (r, (_, _, vec)) in rows.iter().enumerate() {
        matrix.row_mut(r).assign(vec);
    }
    let projected = pca_project(&matrix, dims)?;

    let mut csv_text = String::from("record_id,label");
    for k in 0..dims {
        csv_text.push_str(&format!(",pc_{k}"));
    }
    csv_text.push('\n');
    for (r, (id, label, _)) in rows.iter().enumerate() {
        csv_text.push_str(id);
        csv_text.push(',');
        csv_text.push_str(label);
        for k in 0..dims {
            csv_text.push_str(&format!(",{}", projected.coordinates[[r, k]]));
        }
        csv_text.push('\n');
    }
    write_artifact_str(out, &csv_text, force)?;
    Ok(Outcome::ok(json!({
        "coordinates": out.display().to_string(),
        "records": rows.len(),
        "explained_variance_ratio": projected.explained_variance_ratio,
        "rank_deficient_dims": projected.rank_deficient_dims,
    })))
}

fn classify_cmd(
    ckpt_path: &Path,
    data: &Path,
    labels_path: &Path,
    seed: u64,
    epochs: usize,
    out: Option<&Path>,
    force: bool,
) -> Result<Outcome> {
    require_exists(ckpt_path, "checkpoint")?;
    require_exists(data, "data file")?;
    require_exists(labels_path, "labels CSV")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let encs = prepare_for(&ckpt, data)?;
    let label_map = read_labels_csv(labels_path)?;
    let labels: Vec<String> = encs
        .iter()
        .map(|enc| {
            label_map.get(&enc.record_id).cloned().ok_or_else(|| {
                Error::InvalidConfig(format!("no label for record `{}`", enc.record_id))
            })
        })
        .collect::<Result<_>>()?;

    let subset: Vec<usize> = (0..encs.len()).collect();
    let summaries = clean_summaries(&ckpt.stack, &encs, &subset, ckpt.mode, ckpt.read_pass)?;
    let d = ckpt.stack.config.model_width;
    let mut embeddings = Array2::zeros((encs.len(), d));
    for (r, summary) in summaries.iter().enumerate() {
        embeddings.row_mut(r).assign(summary);
    }
    let split = split_dataset(encs.len(), seed)?;
    let report = classify_supervised(
        &embeddings,
        &labels,
        &split,
        &ClassifyConfig {
            epochs,
            ..ClassifyConfig::default()
        },
    )?;
    let result = serde_json::to_value(&report).unwrap();
    if let Some(path) = out {
        write_artifact_str(
            path,
            &format!("{}\n", serde_json::to_string_pretty(&result).unwrap()),
            force,
        )?;
    }
    Ok(Outcome::ok(result))
}

#[allow(clippy::too_many_arguments)]
fn recommend_cmd(
    ckpt_path: &Path,
    items: &Path,
    histories_path: &Path,
    k_list: &str,
    seed: u64,
    out: Option<&Path>,
    force: bool,
) -> Result<Outcome> {
    require_exists(ckpt_path, "checkpoint")?;
    require_exists(items, "item corpus")?;
    require_exists(histories_path, "histories file")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let encs = prepare_for(&ckpt, items)?;
    let subset: Vec<usize> = (0..encs.len()).collect();
    let summaries = clean_summaries(&ckpt.stack, &encs, &subset, ckpt.mode, ckpt.read_pass)?;
    let item_embeddings: Vec<(String, Array1<f64>)> = encs
        .iter()
        .zip(summaries)
        .map(|(enc, s)| (enc.record_id.clone(), s))
        .collect();

    let histories_text = std::fs::read_to_string(histories_path)
        .map_err(|e| Error::io(format!("reading {}", histories_path.display()), e))?;
    let histories = read_histories_jsonl(&histories_text)?;
    let ks: Vec<usize> = k_list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("bad K `{s}` in --k-list: {e}")))
        })
        .collect::<Result<_>>()?;
    let report = recommend_eval(&item_embeddings, &histories, &ks, seed)?;
    let result = serde_json::to_value(&report).unwrap();
    if let Some(path) = out {
        write_artifact_str(
            path,
            &format!("{}\n", serde_json::to_string_pretty(&result).unwrap()),
            force,
        )?;
    }
    Ok(Outcome::ok(result))
}

fn param_count_cmd(config_path: &Path, overrides: &[String]) -> Result<Outcome> {
    let config = RunConfig::load(config_path, overrides)?;
    require_exists(&config.data.corpus, "corpus")?;
    let records = load_corpus(&config.data.corpus)?;
    let vocab = load_or_build_vocab(&config, &records)?;
    let hier = config.encoder_config(vocab.len(), RunMode::Bidirectional);
    let flat = config.encoder_config(vocab.len(), RunMode::Flat);
    let hier_blocks = count_block_params(&hier);
    let flat_blocks = count_block_params(&flat);
    Ok(Outcome::ok(json!({
        "vocab_size": vocab.len(),
        "hierarchical": {
            "blocks": hier.blocks,
            "total_params": count_params(&hier),
            "block_params": hier_blocks,
        },
        "flat_baseline": {
            "blocks": flat.blocks,
            "total_params": count_params(&flat),
            "block_params": flat_blocks,
        },
        "block_param_ratio": hier_blocks as f64 / flat_blocks as f64,
    })))
}

fn mem_report_cmd(
    data: &Path,
    config_path: &Path,
    max_segment_len: Option<usize>,
    overrides: &[String],
    out: Option<&Path>,
    force: bool,
) -> Result<Outcome> {
    let config = RunConfig::load(config_path, overrides)?;
    require_exists(data, "data file")?;
    let records = load_corpus(data)?;
    let vocab = build_vocab(&corpus_texts(&records)?, config.data.min_freq)?;
    let slots = config.model.summary_slots;
    let window = config.model.max_window;
    let segment_cap = max_segment_len.unwrap_or_else(|| window.saturating_sub(2 * slots));

    let mut rows = Vec::new();
    let mut total_flat: u64 = 0;
    let mut total_hier: u64 = 0;
    for record in &records {
        let plan = build_segments(record, &vocab, segment_cap)?;
        let flat_len = hlogformer::log_tree::segment::linearize(record, &vocab)?.len();
        let hier_cost = plan_attention_cost(&plan, slots);
        let flat_cost = flat_attention_cost(flat_len, window);
        total_flat += flat_cost;
        total_hier += hier_cost;
        rows.push(json!({
            "record_id": record.record_id,
            "flat_tokens": flat_len,
            "flat_windows": flat_len.div_ceil(window),
            "flat_cost": flat_cost,
            "segments": plan.num_segments,
            "steps": plan.steps.len(),
            "max_step_window": plan_max_window(&plan, slots),
            "hier_cost": hier_cost,
            "ratio": hier_cost as f64 / flat_cost as f64,
        }));
    }
    let result = json!({
        "summary_slots": slots,
        "max_window": window,
        "max_segment_len": segment_cap,
        "records": rows.len(),
        "total_flat_cost": total_flat,
        "total_hier_cost": total_hier,
        "total_ratio": total_hier as f64 / total_flat as f64,
        "rows": rows,
    });
    if let Some(path) = out {
        write_artifact_str(
            path,
            &format!("{}\n", serde_json::to_string_pretty(&result).unwrap()),
            force,
        )?;
    }
    Ok(Outcome::ok(result))
}

/// Fixed micro-corpus for gradient verification; the model dimensions come
/// from the config, the data just has to exercise nesting and masking.
const GRADCHECK_CORPUS: &str = r#"{"name":"alpha","meta":{"kind":"k1","tags":["t1","t2"]},"value":"v1"}
{"name":"beta","meta":{"kind":"k2","tags":["t3","t2"]},"value":"v2"}
"#;

fn gradcheck_cmd(
    config_path: &Path,
    probes: usize,
    eps: f64,
    seed: u64,
    overrides: &[String],
) -> Result<Outcome> {
    let config = RunConfig::load(config_path, overrides)?;
    let mode = config.run_mode()?;
    let records = parse_corpus(GRADCHECK_CORPUS)?;
    let vocab = build_vocab(&corpus_texts(&records)?, 1)?;
    let mut encoder = config.encoder_config(vocab.len(), mode);
    encoder.seed = seed;
    // A generic parameter point: the training-time init is too small for
    // chain-routed slopes to clear finite-difference resolution.
    let mut stack = EncoderStack::new_with_init_std(encoder.clone(), 0.3)?;
    let encs = prepare_records(&records, &vocab, encoder.max_segment_len())?;
    let prepared: Vec<_> = encs
        .iter()
        .enumerate()
        .map(|(i, enc)| {
            let mask = seeded_mask(&enc.plan, 0.3, seed.wrapping_add(i as u64))?;
            enc.prepared(Some(&mask), mode)
        })
        .collect::<Result<_>>()?;
    let probe = LossProbe::new(&stack, prepared, mode, config.read_pass()?, 0.1)?;

    let started = Instant::now();
    let report = grad_check(
        &mut stack,
        |s| probe.loss(s),
        |s| probe.grads(s),
        probes,
        eps,
        seed,
    );
    let elapsed = started.elapsed().as_secs_f64();
    let exit_code = if report.max_rel_err.is_finite() { 0 } else { 4 };
    let mut probed: Vec<&str> = report.probes.iter().map(|p| p.param.as_str()).collect();
    probed.sort_unstable();
    probed.dedup();
    let params_probed = probed.len();
    let worst = report.worst().map(|p| {
        json!({
            "param": p.param,
            "row": p.row,
            "col": p.col,
            "analytic": p.analytic,
            "numeric": p.numeric,
            "rel_err": p.rel_err,
        })
    });
    Ok(Outcome {
        result: json!({
            "max_rel_err": report.max_rel_err,
            "probes": report.probes.len(),
            "measurable": report.measurable,
            "below_resolution": report.below_resolution,
            "params_probed": params_probed,
            "param_tensors": stack.params.len(),
            "eps": eps,
            "worst": worst,
            "elapsed_sec": elapsed,
        }),
        exit_code,
    })
}

fn gen_corpus_cmd(
    kind: &str,
    records: usize,
    seed: u64,
    out_dir: &Path,
    force: bool,
) -> Result<Outcome> {
    match kind {
        "logs" => {
            let corpus = gen_log_corpus(&LogCorpusConfig { records, seed });
            let corpus_path = out_dir.join("corpus.jsonl");
            write_artifact_str(&corpus_path, &corpus.jsonl, force)?;
            let labels_path = out_dir.join("labels.csv");
            write_artifact_str(&labels_path, &labels_to_csv(&corpus.labels), force)?;
            Ok(Outcome::ok(json!({
                "corpus": corpus_path.display().to_string(),
                "labels": labels_path.display().to_string(),
                "records": records,
            })))
        }
        "copurchase" => {
            let corpus = gen_copurchase_corpus(&CopurchaseConfig {
                items: records,
                seed,
                ..CopurchaseConfig::default()
            });
            let items_path = out_dir.join("items.jsonl");
            write_artifact_str(&items_path, &corpus.items_jsonl, force)?;
            let histories_path = out_dir.join("histories.jsonl");
            write_artifact_str(&histories_path, &histories_to_jsonl(&corpus.histories), force)?;
            let categories: Vec<(String, String)> = corpus
                .item_categories
                .iter()
                .enumerate()
                .map(|(i, cat)| (format!("L{:06}", i + 1), cat.clone()))
                .collect();
            let categories_path = out_dir.join("categories.csv");
            write_artifact_str(&categories_path, &labels_to_csv(&categories), force)?;
            Ok(Outcome::ok(json!({
                "items": items_path.display().to_string(),
                "histories": histories_path.display().to_string(),
                "categories": categories_path.display().to_string(),
                "records": records,
                "users": corpus.histories.len(),
            })))
        }
        other => Err(Error::InvalidConfig(format!(
            "unknown corpus kind `{other}` (expected logs or copurchase)"
        ))),
    }
}
