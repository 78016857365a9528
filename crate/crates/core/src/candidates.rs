//! Candidate generation: rank every code against a diagnosis by a weighted
//! blend of edit-distance, TF-IDF and embedding similarity.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Diagnosis, Tokenizer};
use crate::embedding::{cosine01, EmbeddingTable};
use crate::knowledge::{CodeTable, IcdCode};

#[derive(Debug, Error, PartialEq)]
pub enum CandidateError {
    #[error("edit-distance score needs two nonempty strings")]
    EmptyInput,
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("{candidates} candidate sets but {gold} gold codes")]
    LengthMismatch { candidates: usize, gold: usize },
}

/// Levenshtein distance over unicode scalar values.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ed_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// `1 - levenshtein / max(len)`, character level.
pub fn ed_score(diagnosis: &str, description: &str) -> Result<f64, CandidateError> {
    let a: Vec<char> = diagnosis.chars().collect();
    let b: Vec<char> = description.chars().collect();
    if a.is_empty() || b.is_empty() {
        return Err(CandidateError::EmptyInput);
    }
    Ok(ed_chars(&a, &b))
}

/// Smoothed inverse document frequency over code descriptions:
/// `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfTable {
    documents: usize,
    df: HashMap<String, usize>,
}

impl IdfTable {
    pub fn build<I, D>(documents: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = String>,
    {
        let mut table = IdfTable::default();
        for doc in documents {
            table.documents += 1;
            let mut seen: Vec<String> = doc.into_iter().collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *table.df.entry(t).or_insert(0) += 1;
            }
        }
        table
    }

    pub fn from_code_table(table: &CodeTable, tokenizer: &dyn Tokenizer) -> Self {
        Self::build(table.codes().iter().map(|c| tokenizer.tokenize(&c.description)))
    }

    /// Uniform weights, handy for tests and for corpora without document statistics.
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((1 + self.documents) as f64 / (1 + df) as f64).ln() + 1.0
    }

    fn weigh(&self, tokens: &[String]) -> SparseVec {
        let mut counts: HashMap<&str, f64> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
        let mut entries: Vec<(String, f64)> = counts
            .into_iter()
            .map(|(t, c)| (t.to_string(), c * self.idf(t)))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        SparseVec { entries, norm }
    }
}

#[derive(Debug, Clone, Default)]
struct SparseVec {
    entries: Vec<(String, f64)>,
    norm: f64,
}

impl SparseVec {
    fn cosine(&self, other: &SparseVec) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            match self.entries[i].0.cmp(&other.entries[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    dot += self.entries[i].1 * other.entries[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        (dot / (self.norm * other.norm)).clamp(0.0, 1.0)
    }
}

/// Cosine of TF-IDF vectors; 0 when either side has no tokens.
pub fn tf_score(diagnosis_tokens: &[String], description_tokens: &[String], idf: &IdfTable) -> f64 {
    idf.weigh(diagnosis_tokens).cosine(&idf.weigh(description_tokens))
}

/// Rescaled cosine of mean-pooled embeddings; 0 when either pooled vector is zero.
pub fn fea_score(diagnosis_tokens: &[String], description_tokens: &[String], emb: &EmbeddingTable) -> f64 {
    cosine01(&emb.mean_pool(diagnosis_tokens), &emb.mean_pool(description_tokens))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub ed: f64,
    pub tf: f64,
    pub fea: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            ed: 0.35,
            tf: 0.35,
            fea: 0.3,
        }
    }
}

impl Weights {
    pub fn new(ed: f64, tf: f64, fea: f64) -> Result<Self, CandidateError> {
        let w = Self { ed, tf, fea };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), CandidateError> {
        let parts = [self.ed, self.tf, self.fea];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CandidateError::Weights(format!("{parts:?} has a negative weight")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CandidateError::Weights(format!("{parts:?} sums to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub ed: f64,
    pub tf: f64,
    pub fea: f64,
}

/// Weighted sum of the three component scores.
pub fn sim(components: ComponentScores, weights: &Weights) -> f64 {
    weights.ed * components.ed + weights.tf * components.tf + weights.fea * components.fea
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// Order by the weighted similarity.
    #[default]
    Weighted,
    /// 60% of the slots by edit distance, 20% by TF-IDF, the rest by embeddings.
    Tiered,
}

impl std::str::FromStr for RankMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weighted" => Ok(Self::Weighted),
            "tiered" => Ok(Self::Tiered),
            other => Err(format!("unknown mode `{other}` (expected weighted|tiered)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub code: IcdCode,
    pub sim: f64,
    pub ed: f64,
    pub tf: f64,
    pub fea: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub diagnosis_index: usize,
    pub entries: Vec<CandidateEntry>,
}

impl CandidateSet {
    pub fn contains(&self, code: &str) -> bool {
        self.entries.iter().any(|e| e.code.code == code)
    }

    pub fn entry(&self, code: &str) -> Option<&CandidateEntry> {
        self.entries.iter().find(|e| e.code.code == code)
    }
}

struct PreparedCode {
    chars: Vec<char>,
    tfidf: SparseVec,
    pooled: Vec<f64>,
}

/// Per-code data precomputed once per code table.
pub struct CandidateIndex {
    idf: IdfTable,
    prepared: Vec<PreparedCode>,
}

impl CandidateIndex {
    pub fn build(table: &CodeTable, tokenizer: &dyn Tokenizer, emb: &EmbeddingTable) -> Self {
        let tokens: Vec<Vec<String>> = table
            .codes()
            .iter()
            .map(|c| tokenizer.tokenize(&c.description))
            .collect();
        let idf = IdfTable::build(tokens.iter().cloned());
        let prepared = table
            .codes()
            .iter()
            .zip(&tokens)
            .map(|(c, toks)| PreparedCode {
                chars: c.description.chars().collect(),
                tfidf: idf.weigh(toks),
                pooled: emb.mean_pool(toks),
            })
            .collect();
        Self { idf, prepared }
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }
}

/// Everything needed to rank codes for a diagnosis.
pub struct Ranker<'a> {
    pub table: &'a CodeTable,
    pub index: &'a CandidateIndex,
    pub tokenizer: &'a dyn Tokenizer,
    pub embeddings: &'a EmbeddingTable,
    pub weights: Weights,
}

/// Tier sizes for tiered mode: 30/10/10 at n = 50, proportional otherwise.
pub fn tier_sizes(n: usize) -> [usize; 3] {
    let first = ((n as f64) * 0.6).round() as usize;
    let second = (((n as f64) * 0.2).round() as usize).min(n - first.min(n));
    let first = first.min(n);
    [first, second, n - first - second]
}

fn by_score_then_code(codes: &[IcdCode]) -> impl Fn(&(usize, f64), &(usize, f64)) -> Ordering + '_ {
    move |a, b| b.1.total_cmp(&a.1).then_with(|| codes[a.0].code.cmp(&codes[b.0].code))
}

impl Ranker<'_> {
    /// Component scores of every code, in table order.
    pub fn score_all(&self, diagnosis: &str) -> Vec<ComponentScores> {
        let d_chars: Vec<char> = diagnosis.chars().collect();
        let d_tokens = self.tokenizer.tokenize(diagnosis);
        let d_tfidf = self.index.idf.weigh(&d_tokens);
        let d_pooled = self.embeddings.mean_pool(&d_tokens);
        self.index
            .prepared
            .iter()
            .map(|p| ComponentScores {
                ed: if d_chars.is_empty() || p.chars.is_empty() {
                    0.0
                } else {
                    ed_chars(&d_chars, &p.chars)
                },
                tf: d_tfidf.cosine(&p.tfidf),
                fea: cosine01(&d_pooled, &p.pooled),
            })
            .collect()
    }

    pub fn top_n(&self, diagnosis: &Diagnosis, n: usize, mode: RankMode) -> CandidateSet {
        let codes = self.table.codes();
        let scores = self.score_all(&diagnosis.text);
        let n = n.min(codes.len());
        let chosen: Vec<usize> = match mode {
            RankMode::Weighted => {
                let keyed: Vec<(usize, f64)> = scores
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i, sim(*s, &self.weights)))
                    .collect();
                select_top(keyed, n, codes)
            }
            RankMode::Tiered => {
                let mut taken = vec![false; codes.len()];
                let mut chosen = Vec::with_capacity(n);
                let pickers: [fn(&ComponentScores) -> f64; 3] = [|s| s.ed, |s| s.tf, |s| s.fea];
                for (size, pick) in tier_sizes(n).into_iter().zip(pickers) {
                    let keyed: Vec<(usize, f64)> = scores
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !taken[*i])
                        .map(|(i, s)| (i, pick(s)))
                        .collect();
                    for i in select_top(keyed, size, codes) {
                        taken[i] = true;
                        chosen.push(i);
                    }
                }
                chosen
            }
        };
        let entries = chosen
            .into_iter()
            .enumerate()
            .map(|(r, i)| {
                let s = scores[i];
                CandidateEntry {
                    code: codes[i].clone(),
                    sim: sim(s, &self.weights),
                    ed: s.ed,
                    tf: s.tf,
                    fea: s.fea,
                    rank: r + 1,
                }
            })
            .collect();
        CandidateSet {
            diagnosis_index: diagnosis.index,
            entries,
        }
    }
}

/// Indices of the `n` best keys (score desc, code asc), in that order.
fn select_top(mut keyed: Vec<(usize, f64)>, n: usize, codes: &[IcdCode]) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let cmp = by_score_then_code(codes);
    if n < keyed.len() {
        keyed.select_nth_unstable_by(n - 1, &cmp);
        keyed.truncate(n);
    }
    keyed.sort_by(&cmp);
    keyed.into_iter().map(|(i, _)| i).collect()
}

/// Fraction of diagnoses whose gold code is among their candidates.
pub fn recall_at_n(candidates: &[CandidateSet], gold: &[String]) -> Result<f64, CandidateError> {
    if candidates.len() != gold.len() {
        return Err(CandidateError::LengthMismatch {
            candidates: candidates.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = candidates.iter().zip(gold).filter(|(c, g)| c.contains(g)).count();
    Ok(hits as f64 / gold.len() as f64)
}
