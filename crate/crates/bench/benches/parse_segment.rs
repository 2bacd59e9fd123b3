//! Parsing and segmentation throughput over the synthetic corpus.

use criterion::{criterion_group, criterion_main, Criterion};
use hlogformer::log_tree::parse_corpus;
use hlogformer::log_tree::segment::build_segments;
use hlogformer::synth::{gen_log_corpus, LogCorpusConfig};
use hlogformer_bench::fixture;
use std::hint::black_box;

fn bench_parse(c: &mut Criterion) {
    let corpus = gen_log_corpus(&LogCorpusConfig {
        records: 32,
        seed: 3,
    });
    c.bench_function("parse_corpus_32", |b| {
        b.iter(|| black_box(parse_corpus(black_box(&corpus.jsonl)).unwrap()))
    });

    let fx = fixture(32, 32);
    c.bench_function("segment_corpus_32", |b| {
        b.iter(|| {
            for tree in &fx.records {
                black_box(build_segments(black_box(tree), &fx.vocab, 108).unwrap());
            }
        })
    });
}

criterion_group!(benches, bench_parse);
criterion_main!(benches);
