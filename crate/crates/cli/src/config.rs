//! Run configuration: a TOML file with every knob, overridable from the
//! command line via `--set section.key=value`.

use std::path::{Path, PathBuf};

use hlogformer::model_core::adam::AdamConfig;
use hlogformer::model_core::EncoderConfig;
use hlogformer::training::TrainConfig;
use hlogformer::{Error, ReadPass, Result, RunMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub detect: DetectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            detect: DetectSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub corpus: PathBuf,
    /// Optional vocabulary file; built from the corpus when absent.
    pub vocab: Option<PathBuf>,
    pub min_freq: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            corpus: PathBuf::new(),
            vocab: None,
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub model_width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    /// Encoder depth for the segment-chain modes.
    pub blocks: usize,
    /// Encoder depth for the flat baseline.
    pub backbone_blocks: usize,
    pub max_window: usize,
    pub summary_slots: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            model_width: 64,
            heads: 4,
            ffn_width: 128,
            blocks: 1,
            backbone_blocks: 2,
            max_window: 128,
            summary_slots: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mask_rate: f64,
    pub lambda_vhm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub mode: String,
    pub read_pass: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            mask_rate: 0.2,
            lambda_vhm: 0.1,
            epochs: 100,
            batch_size: 16,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            mode: "hlog".to_string(),
            read_pass: "reverse".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub candidate_size: usize,
    pub alpha_grid: Vec<f64>,
    /// Detection mask stream; falls back to the run seed when zero.
    pub mask_seed: u64,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            candidate_size: 10,
            alpha_grid: (0..=20).map(|i| i as f64 * 0.05).collect(),
            mask_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config from {}", path.display()), e))?;
        Self::parse(&text, overrides)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("bad TOML: {e}")))?;
        let mut value = toml::Value::Table(table);
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        value
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn run_mode(&self) -> Result<RunMode> {
        self.train.mode.parse()
    }

    pub fn read_pass(&self) -> Result<ReadPass> {
        match self.train.read_pass.as_str() {
            "reverse" => Ok(ReadPass::Reverse),
            "forward" => Ok(ReadPass::Forward),
            other => Err(Error::InvalidConfig(format!(
                "unknown read_pass `{other}` (expected reverse or forward)"
            ))),
        }
    }

    /// Encoder for the given mode: flat runs use the deeper backbone.
    pub fn encoder_config(&self, vocab_size: usize, mode: RunMode) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            model_width: self.model.model_width,
            heads: self.model.heads,
            ffn_width: self.model.ffn_width,
            blocks: if mode.is_flat() {
                self.model.backbone_blocks
            } else {
                self.model.blocks
            },
            max_window: self.model.max_window,
            summary_slots: self.model.summary_slots,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, mode: RunMode) -> Result<TrainConfig> {
        Ok(TrainConfig {
            mask_rate: self.train.mask_rate,
            lambda_vhm: self.train.lambda_vhm,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam: AdamConfig {
                lr: self.train.lr,
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                eps: self.train.eps,
                weight_decay: self.train.weight_decay,
            },
            mode,
            read_pass: self.read_pass()?,
            seed: self.seed,
        })
    }

}

/// Apply one `section.key=value` override onto the parsed TOML tree.
fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw_value) = entry.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override `{entry}` is not of the form key=value"))
    })?;
    let parsed: toml::Value = format!("x = {raw_value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("x").cloned())
        .unwrap_or_else(|| toml::Value::String(raw_value.to_string()));

    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cursor = root;
    for key in &keys[..keys.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{path}` is not a table path")))?
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    cursor
        .as_table_mut()
        .ok_or_else(|| Error::InvalidConfig(format!("`{path}` is not a table path")))?
        .insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
