//! Synthetic inputs shared by the benchmarks.

use std::collections::{BTreeMap, BTreeSet};

use evicode_core::corpus::{EmrDocument, Lexicon, LongestMatchTokenizer, Section, Sentence};
use evicode_core::embedding::EmbeddingTable;
use evicode_core::knowledge::{CodeTable, IcdCode};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 24] = [
    "肺", "炎", "结核", "出血", "骨折", "贫血", "头痛", "胸痛", "急性", "慢性", "左", "右", "肾", "肝", "胃", "肠",
    "感染", "肿瘤", "损伤", "发热", "咳嗽", "结石", "梗阻", "溃疡",
];

/// A code table of `size` codes with word-built descriptions, plus its tokenizer
/// and embeddings.
pub fn code_table(size: usize, seed: u64) -> (CodeTable, LongestMatchTokenizer, EmbeddingTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut codes = Vec::with_capacity(size);
    while codes.len() < size {
        let letter = (b'A' + rng.gen_range(0..26)) as char;
        let code = format!("{letter}{:02}.{}", rng.gen_range(0..100), rng.gen_range(0..100));
        if seen.insert(code.clone()) {
            let description: String = (0..rng.gen_range(2..=5))
                .map(|_| *WORDS.choose(&mut rng).unwrap())
                .collect();
            codes.push(IcdCode::new(&code, &description).unwrap());
        }
    }
    let mut embeddings = EmbeddingTable::new(32);
    for w in WORDS {
        embeddings.insert(w, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    (
        CodeTable::from_codes(codes).unwrap(),
        LongestMatchTokenizer::new(Lexicon::new(WORDS)),
        embeddings,
    )
}

/// A document with `locations` sections of `sentences` sentences each.
pub fn document(locations: usize, sentences: usize, seed: u64) -> (EmrDocument, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = 0;
    let sections = (0..locations)
        .map(|l| Section {
            location_id: format!("l{l}"),
            title: format!("l{l}"),
            sentences: (0..sentences)
                .map(|_| {
                    let text: String = (0..rng.gen_range(3..=10))
                        .map(|_| *WORDS.choose(&mut rng).unwrap())
                        .collect();
                    next += 1;
                    Sentence::new(next - 1, text + "。")
                })
                .collect(),
        })
        .collect();
    let doc = EmrDocument {
        record_id: "bench".into(),
        sections,
        diagnoses: vec![],
        gold_codes: BTreeMap::new(),
    };
    (doc, (0..locations).map(|l| format!("l{l}")).collect())
}
