//! Shared fixtures for the benchmark targets.

use hlogformer::log_tree::parse_corpus;
use hlogformer::log_tree::segment::flat_text;
use hlogformer::model_core::EncoderConfig;
use hlogformer::synth::{gen_log_corpus, LogCorpusConfig};
use hlogformer::tokenizer::build_vocab;
use hlogformer::training::{prepare_records, EncodedRecord};
use hlogformer::{EncoderStack, LogTree, Vocab};

pub struct Fixture {
    pub records: Vec<LogTree>,
    pub vocab: Vocab,
    pub encs: Vec<EncodedRecord>,
    pub stack: EncoderStack,
    pub flat_stack: EncoderStack,
}

/// A small trained-shape setup: synthetic records, vocabulary, and two
/// encoder stacks (segment-chain depth 1, flat baseline depth 2).
pub fn fixture(records: usize, model_width: usize) -> Fixture {
    let corpus = gen_log_corpus(&LogCorpusConfig { records, seed: 42 });
    let records = parse_corpus(&corpus.jsonl).expect("synthetic corpus parses");
    let texts: Vec<String> = records
        .iter()
        .map(|t| flat_text(t).expect("flat text"))
        .collect();
    let vocab = build_vocab(&texts, 1).expect("vocab");
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        model_width,
        heads: 4,
        ffn_width: model_width * 2,
        blocks: 1,
        max_window: 128,
        summary_slots: 10,
        seed: 7,
    };
    let encs = prepare_records(&records, &vocab, config.max_segment_len()).expect("plans");
    let stack = EncoderStack::new(config.clone()).expect("stack");
    let flat_stack = EncoderStack::new(EncoderConfig {
        blocks: 2,
        ..config
    })
    .expect("flat stack");
    Fixture {
        records,
        vocab,
        encs,
        stack,
        flat_stack,
    }
}
