//! Metrics, corpus statistics, splits and verifier training data.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SUMMARY_LOCATION;
use crate::corpus::{EmrDocument, Tokenizer};
use crate::knowledge::CodeTable;
use crate::pipeline::{CandidateAnalysis, CodingResult, Engine};
use crate::verify::Example;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("record `{record}` diagnosis {diagnosis}: gold code `{code}` is not in the code table")]
    UnknownGold {
        record: String,
        diagnosis: usize,
        code: String,
    },
    #[error("record `{record}` diagnosis {diagnosis} has gold but no result")]
    MissingResult { record: String, diagnosis: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("no diagnosis produced a positive example ({misses} gold codes missed the candidate list)")]
    NoPositives { misses: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl CodeCounts {
    fn prf(&self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let p = ratio(self.tp, self.fp);
        let r = ratio(self.tp, self.fn_);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub p_at_5: f64,
    pub n_diagnoses: usize,
    pub per_code: BTreeMap<String, CodeCounts>,
}

/// One scored diagnosis: its gold code and the recommended codes in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct Judged<'a> {
    pub gold: &'a str,
    pub ranked: Vec<&'a str>,
}

/// Metrics over top-1 predictions; p@5 over the first five.
///
/// Macro averages run over codes seen in gold or predictions only.
pub fn score_predictions(items: &[Judged<'_>]) -> MetricReport {
    let mut per_code: BTreeMap<String, CodeCounts> = BTreeMap::new();
    let mut correct = 0;
    let mut in_top5 = 0;
    for item in items {
        let predicted = item.ranked.first().copied();
        if predicted == Some(item.gold) {
            correct += 1;
            per_code.entry(item.gold.to_string()).or_default().tp += 1;
        } else {
            per_code.entry(item.gold.to_string()).or_default().fn_ += 1;
            if let Some(p) = predicted {
                per_code.entry(p.to_string()).or_default().fp += 1;
            }
        }
        if item.ranked.iter().take(5).any(|c| *c == item.gold) {
            in_top5 += 1;
        }
    }
    let n = items.len();
    let share = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let k = per_code.len() as f64;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for counts in per_code.values() {
        let (cp, cr, cf) = counts.prf();
        p += cp;
        r += cr;
        f += cf;
    }
    let mean = |x: f64| if k == 0.0 { 0.0 } else { x / k };
    MetricReport {
        macro_precision: mean(p),
        macro_recall: mean(r),
        macro_f1: mean(f),
        accuracy: share(correct),
        p_at_5: share(in_top5),
        n_diagnoses: n,
        per_code,
    }
}

/// Scores coding results against the gold codes stored in `docs`.
///
/// Results are matched to documents by record id. Diagnoses without a gold code
/// are ignored.
pub fn evaluate(results: &[CodingResult], docs: &[EmrDocument], codes: &CodeTable) -> Result<MetricReport, EvalError> {
    let by_record: HashMap<&str, &CodingResult> = results.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut items = Vec::new();
    for doc in docs {
        for (&index, gold) in &doc.gold_codes {
            if !codes.contains(gold) {
                return Err(EvalError::UnknownGold {
                    record: doc.record_id.clone(),
                    diagnosis: index,
                    code: gold.clone(),
                });
            }
            let diagnosis = by_record
                .get(doc.record_id.as_str())
                .and_then(|r| r.diagnoses.iter().find(|d| d.diagnosis_index == index))
                .ok_or_else(|| EvalError::MissingResult {
                    record: doc.record_id.clone(),
                    diagnosis: index,
                })?;
            items.push(Judged {
                gold,
                ranked: diagnosis.recommendations.iter().map(|r| r.code.code.as_str()).collect(),
            });
        }
    }
    Ok(score_predictions(&items))
}

impl MetricReport {
    /// Aligned two-column text table.
    pub fn render_table(&self) -> String {
        let rows = [
            ("Macro P", self.macro_precision),
            ("Macro R", self.macro_recall),
            ("Macro F1", self.macro_f1),
            ("Accuracy", self.accuracy),
            ("P@5", self.p_at_5),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8}", "Metric", "Value(%)");
        let _ = writeln!(out, "{:-<10} {:->8}", "", "");
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<10} {:>8.2}", v * 100.0);
        }
        let _ = writeln!(out, "{:<10} {:>8}", "Diagnoses", self.n_diagnoses);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// Lower middle element for even counts.
    pub median: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Summary {
        count: values.len(),
        mean,
        variance,
        median: sorted[(sorted.len() - 1) / 2],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub diagnoses: usize,
    pub words_per_diagnosis: Option<Summary>,
    pub words_per_summary: Option<Summary>,
    pub candidates_per_diagnosis: Option<Summary>,
    pub evidence_per_candidate: Option<Summary>,
    pub tokens_per_evidence: Option<Summary>,
}

/// Corpus statistics; the candidate and evidence fields come from `results`.
pub fn corpus_stats(
    docs: &[EmrDocument],
    results: &[CodingResult],
    tokenizer: &dyn Tokenizer,
) -> Result<CorpusStats, EvalError> {
    if docs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let as_f64 = |v: usize| v as f64;
    let words_per_diagnosis: Vec<f64> = docs
        .iter()
        .flat_map(|d| d.diagnoses.iter())
        .map(|d| as_f64(tokenizer.tokenize(&d.text).len()))
        .collect();
    let words_per_summary: Vec<f64> = docs
        .iter()
        .filter_map(|d| d.section(SUMMARY_LOCATION))
        .map(|s| as_f64(s.sentences.iter().map(|x| tokenizer.tokenize(&x.text).len()).sum()))
        .collect();
    let diagnosis_results = results.iter().flat_map(|r| r.diagnoses.iter());
    let candidates: Vec<f64> = diagnosis_results
        .clone()
        .map(|d| as_f64(d.stats.candidate_count))
        .collect();
    let evidence: Vec<f64> = diagnosis_results
        .clone()
        .flat_map(|d| d.stats.evidence_counts.iter().copied().map(as_f64))
        .collect();
    let tokens: Vec<f64> = diagnosis_results
        .flat_map(|d| d.stats.evidence_tokens.iter().copied().map(as_f64))
        .collect();
    Ok(CorpusStats {
        records: docs.len(),
        diagnoses: words_per_diagnosis.len(),
        words_per_diagnosis: summarize(&words_per_diagnosis),
        words_per_summary: summarize(&words_per_summary),
        candidates_per_diagnosis: summarize(&candidates),
        evidence_per_candidate: summarize(&evidence),
        tokens_per_evidence: summarize(&tokens),
    })
}

/// Train, dev and test parts.
pub type Split<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Seeded shuffle, then consecutive train/dev/test slices sized by `ratios`.
pub fn split_corpus<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<Split<T>, EvalError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EvalError::Ratios(ratios));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let dev = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    let test = shuffled.split_off(train + dev);
    let dev_part = shuffled.split_off(train);
    Ok((shuffled, dev_part, test))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifierDataset {
    pub examples: Vec<Example>,
    pub positives: usize,
    pub negatives: usize,
    /// Gold codes that were not among their diagnosis's verifiable candidates.
    pub misses: usize,
}

/// Gold candidate as a positive, the best-ranked other candidates as negatives.
pub fn build_verifier_dataset(
    engine: &Engine,
    docs: &[EmrDocument],
    neg_per_pos: usize,
) -> Result<VerifierDataset, EvalError> {
    let mut out = VerifierDataset::default();
    for doc in docs {
        for (&index, gold) in &doc.gold_codes {
            if index >= doc.diagnoses.len() {
                continue;
            }
            let analysis = engine.analyze_diagnosis(doc, index);
            let ready = |item: &CandidateAnalysis| match item {
                CandidateAnalysis::Ready(p) => Some(p.clone()),
                _ => None,
            };
            let prepared: Vec<_> = analysis.items.iter().filter_map(ready).collect();
            let Some(positive) = prepared.iter().find(|p| p.entry.code.code == *gold) else {
                out.misses += 1;
                continue;
            };
            out.examples.push((positive.features.to_vec(), 1));
            out.positives += 1;
            for negative in prepared.iter().filter(|p| p.entry.code.code != *gold).take(neg_per_pos) {
                out.examples.push((negative.features.to_vec(), 0));
                out.negatives += 1;
            }
        }
    }
    if out.positives == 0 {
        return Err(EvalError::NoPositives { misses: out.misses });
    }
    Ok(out)
}
