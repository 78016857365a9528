use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evicode_bench::{code_table, document, WORDS};
use evicode_core::candidates::{CandidateIndex, RankMode, Ranker, Weights};
use evicode_core::config::Config;
use evicode_core::corpus::Diagnosis;
use evicode_core::evidence::greedy_retrieve;
use evicode_core::pipeline::Engine;
use evicode_core::toy::toy_bundle;

fn top_n(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_n");
    for size in [1_000, 10_000, 33_000] {
        let (table, tokenizer, embeddings) = code_table(size, 1);
        let index = CandidateIndex::build(&table, &tokenizer, &embeddings);
        let ranker = Ranker {
            table: &table,
            index: &index,
            tokenizer: &tokenizer,
            embeddings: &embeddings,
            weights: Weights::default(),
        };
        let diagnosis = Diagnosis {
            index: 0,
            text: "急性左肺感染".into(),
        };
        for mode in [RankMode::Weighted, RankMode::Tiered] {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), size), &diagnosis, |b, d| {
                b.iter(|| ranker.top_n(d, 50, mode))
            });
        }
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let keywords: Vec<String> = WORDS[..6].iter().map(|s| s.to_string()).collect();
    let mut group = c.benchmark_group("greedy_retrieve");
    for (locations, sentences) in [(5, 8), (12, 40)] {
        let (doc, order) = document(locations, sentences, 2);
        group.bench_function(format!("{locations}x{sentences}"), |b| {
            b.iter(|| greedy_retrieve(&doc, &keywords, &order))
        });
    }
    group.finish();
}

fn toy_record(c: &mut Criterion) {
    let bundle = toy_bundle();
    let (model, _, _) = bundle.train_verifier(&Config::default()).unwrap();
    let engine = Engine::new(Arc::new(bundle.assets(Some(model))), Config::default()).unwrap();
    let docs = bundle.documents();
    c.bench_function("code_document/toy", |b| {
        b.iter(|| engine.code_document(&docs[0]).unwrap())
    });
}

criterion_group!(benches, top_n, retrieval, toy_record);
criterion_main!(benches);
