//! Transformer encoder: configuration, parameter storage, and the
//! pre-norm block stack, all built on the autodiff tape.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod tape;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::NUM_SPECIALS;

use tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub model_width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub blocks: usize,
    /// Longest attention window a single encoder call may see.
    pub max_window: usize,
    /// Number of summary slots carried between steps.
    pub summary_slots: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            model_width: 64,
            heads: 4,
            ffn_width: 128,
            blocks: 1,
            max_window: 128,
            summary_slots: 10,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vocab_size < NUM_SPECIALS {
            return fail(format!(
                "vocab_size {} is smaller than the {} specials",
                self.vocab_size, NUM_SPECIALS
            ));
        }
        if self.model_width < 2 {
            return fail("model_width must be at least 2".into());
        }
        if self.heads == 0 || self.model_width % self.heads != 0 {
            return fail(format!(
                "model_width {} must divide evenly into {} heads",
                self.model_width, self.heads
            ));
        }
        if self.summary_slots == 0 {
            return fail("summary_slots must be at least 1".into());
        }
        if self.max_window < 2 * self.summary_slots + 4 {
            return fail(format!(
                "max_window {} is too small for {} summary slots (need at least {})",
                self.max_window,
                self.summary_slots,
                2 * self.summary_slots + 4
            ));
        }
        Ok(())
    }

    /// Longest segment chunk that keeps `slots + segment + slots` within
    /// the window.
    pub fn max_segment_len(&self) -> usize {
        self.max_window - 2 * self.summary_slots
    }
}

/// Exact trainable parameter count:
/// `V*d + W*d + k*d + B * (4(d^2+d) + (d*f+f) + (f*d+d) + 4d)`.
/// The output head is tied to the token embeddings and adds nothing.
pub fn count_params(config: &EncoderConfig) -> usize {
    let d = config.model_width;
    let f = config.ffn_width;
    let per_block = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d;
    config.vocab_size * d
        + config.max_window * d
        + config.summary_slots * d
        + config.blocks * per_block
}

/// Parameter count of the block stack alone (no embeddings).
pub fn count_block_params(config: &EncoderConfig) -> usize {
    let d = config.model_width;
    let f = config.ffn_width;
    config.blocks * (4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Array2<f64>,
}

/// All trainable parameters plus their layout.
///
/// Declared order: token embeddings, positional table, initial summary
/// slots, then 16 tensors per block (ln1, attention q/k/v/o with biases,
/// ln2, ffn in/out with biases).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub config: EncoderConfig,
    pub params: Vec<Tensor>,
}

pub const TOK_EMBED: usize = 0;
pub const POS_EMBED: usize = 1;
pub const SIGMA_INIT: usize = 2;
const PER_BLOCK: usize = 16;

/// Offsets of the block tensors relative to `block_base`.
mod block_offset {
    pub const LN1_SCALE: usize = 0;
    pub const LN1_SHIFT: usize = 1;
    pub const Q_W: usize = 2;
    pub const Q_B: usize = 3;
    pub const K_W: usize = 4;
    pub const K_B: usize = 5;
    pub const V_W: usize = 6;
    pub const V_B: usize = 7;
    pub const O_W: usize = 8;
    pub const O_B: usize = 9;
    pub const LN2_SCALE: usize = 10;
    pub const LN2_SHIFT: usize = 11;
    pub const FFN_W1: usize = 12;
    pub const FFN_B1: usize = 13;
    pub const FFN_W2: usize = 14;
    pub const FFN_B2: usize = 15;
}

pub fn block_base(block: usize) -> usize {
    3 + PER_BLOCK * block
}

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

/// Per-parameter gradients, aligned with `EncoderStack::params`.
pub type Gradients = Vec<Array2<f64>>;

/// Tape handles for every parameter of a stack, registered once per tape.
pub struct TapeBinding {
    vars: Vec<Var>,
}

impl TapeBinding {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl EncoderStack {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        Self::new_with_init_std(config, INIT_STD)
    }

    /// Same layout with a chosen weight scale. Training uses the default;
    /// gradient verification uses a larger scale so that signals routed
    /// through the summary chain stay above finite-difference resolution.
    pub fn new_with_init_std(config: EncoderConfig, init_std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, init_std).expect("valid std");
        let d = config.model_width;
        let f = config.ffn_width;
        let mut gauss = |rows: usize, cols: usize| -> Array2<f64> {
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        };

        let mut params = Vec::new();
        let mut push = |name: String, value: Array2<f64>| {
            params.push(Tensor { name, value });
        };
        push("tok_embed".into(), gauss(config.vocab_size, d));
        push("pos_embed".into(), gauss(config.max_window, d));
        push("sigma_init".into(), gauss(config.summary_slots, d));
        for b in 0..config.blocks {
            push(format!("block{b}.ln1.scale"), Array2::ones((1, d)));
            push(format!("block{b}.ln1.shift"), Array2::zeros((1, d)));
            push(format!("block{b}.attn.q_w"), gauss(d, d));
            push(format!("block{b}.attn.q_b"), Array2::zeros((1, d)));
            push(format!("block{b}.attn.k_w"), gauss(d, d));
            push(format!("block{b}.attn.k_b"), Array2::zeros((1, d)));
            push(format!("block{b}.attn.v_w"), gauss(d, d));
            push(format!("block{b}.attn.v_b"), Array2::zeros((1, d)));
            push(format!("block{b}.attn.o_w"), gauss(d, d));
            push(format!("block{b}.attn.o_b"), Array2::zeros((1, d)));
            push(format!("block{b}.ln2.scale"), Array2::ones((1, d)));
            push(format!("block{b}.ln2.shift"), Array2::zeros((1, d)));
            push(format!("block{b}.ffn.w1"), gauss(d, f));
            push(format!("block{b}.ffn.b1"), Array2::zeros((1, f)));
            push(format!("block{b}.ffn.w2"), gauss(f, d));
            push(format!("block{b}.ffn.b2"), Array2::zeros((1, d)));
        }
        let stack = EncoderStack { config, params };
        debug_assert_eq!(stack.actual_param_count(), count_params(&stack.config));
        Ok(stack)
    }

    pub fn actual_param_count(&self) -> usize {
        self.params.iter().map(|t| t.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        self.params
            .iter()
            .map(|t| Array2::zeros(t.value.raw_dim()))
            .collect()
    }

    /// Register every parameter on a tape (one value copy per parameter).
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t.value.clone()))
            .collect();
        TapeBinding { vars }
    }

    /// Convert sparse backward output into dense gradients, summing in
    /// parameter order.
    pub fn dense_grads(&self, sparse: Vec<Option<Array2<f64>>>) -> Gradients {
        sparse
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Array2::zeros(self.params[i].value.raw_dim())))
            .collect()
    }

    /// Run the block stack over an embedded window already on the tape.
    ///
    /// `allowed` lists the positions (ascending) that participate in
    /// attention; excluded positions neither attend nor are attended to,
    /// and their outputs are unspecified.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        input: Var,
        allowed: &[usize],
    ) -> Var {
        let d = self.config.model_width;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = input;
        for b in 0..self.config.blocks {
            let base = block_base(b);
            let pvar = |off: usize| binding.var(base + off);

            let normed = tape.layer_norm_rows(
                x,
                pvar(block_offset::LN1_SCALE),
                pvar(block_offset::LN1_SHIFT),
                LN_EPS,
            );
            let q0 = tape.matmul(normed, pvar(block_offset::Q_W));
            let q = tape.add_row(q0, pvar(block_offset::Q_B));
            let k0 = tape.matmul(normed, pvar(block_offset::K_W));
            let k = tape.add_row(k0, pvar(block_offset::K_B));
            let v0 = tape.matmul(normed, pvar(block_offset::V_W));
            let v = tape.add_row(v0, pvar(block_offset::V_B));

            let mut head_outputs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
                let kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
                let vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
                let s = tape.scores(qh, kh, scale, allowed);
                let probs = tape.masked_softmax_rows(s, allowed);
                head_outputs.push(tape.attn_context(probs, vh, allowed));
            }
            let ctx = tape.concat_cols(&head_outputs);
            let o0 = tape.matmul(ctx, pvar(block_offset::O_W));
            let o = tape.add_row(o0, pvar(block_offset::O_B));
            x = tape.add(x, o);

            let normed2 = tape.layer_norm_rows(
                x,
                pvar(block_offset::LN2_SCALE),
                pvar(block_offset::LN2_SHIFT),
                LN_EPS,
            );
            let f0 = tape.matmul(normed2, pvar(block_offset::FFN_W1));
            let f1 = tape.add_row(f0, pvar(block_offset::FFN_B1));
            let f2 = tape.gelu(f1);
            let f3 = tape.matmul(f2, pvar(block_offset::FFN_W2));
            let ffn = tape.add_row(f3, pvar(block_offset::FFN_B2));
            x = tape.add(x, ffn);
        }
        x
    }

    /// Inference-only encoder call on raw embeddings with a boolean
    /// attention mask (`true` = real position).
    pub fn encode(&self, input_embeddings: &Array2<f64>, attention_mask: &[bool]) -> Result<Array2<f64>> {
        let n = input_embeddings.nrows();
        if n > self.config.max_window {
            return Err(Error::WindowOverflow {
                required: n,
                max: self.config.max_window,
            });
        }
        assert_eq!(n, attention_mask.len(), "one mask entry per position");
        let allowed: Vec<usize> = attention_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &keep)| keep.then_some(i))
            .collect();
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let input = tape.constant(input_embeddings.clone());
        let out = self.encode_on_tape(&mut tape, &binding, input, &allowed);
        Ok(tape.value(out).clone())
    }
}
