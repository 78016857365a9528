//! Evidence retrieval: greedy keyword coverage over prior locations, reliability
//! filtering, and near-duplicate collapsing.

mod dedup;
mod scorer;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dedup::{cluster_within_radius, dedup_and_count};
pub use scorer::{
    baseline_score, BaselineScorer, EvidenceScorer, ExternalScorer, ScoreRequest, ScoreResponse, ScorerError,
};

use crate::corpus::{EmrDocument, Section, Tokenizer};
use crate::embedding::EmbeddingTable;
use crate::knowledge::{
    expand_synonyms, locations_for, AxisKnowledge, IcdCode, LocationRegistry, PriorLocationTable, SynonymLexicon,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("scoring piece {piece} (`{sentence}`) failed: {source}")]
    Scorer {
        piece: usize,
        sentence: String,
        #[source]
        source: ScorerError,
    },
    #[error("code `{0}` has no axis keywords")]
    EmptyAxes(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidencePiece {
    pub sentence_text: String,
    pub location_id: String,
    pub sentence_index: usize,
    pub matched_keywords: Vec<String>,
    pub repetition_count: u32,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub diagnosis_index: usize,
    pub code: IcdCode,
    pub pieces: Vec<EvidencePiece>,
    pub covered_keywords: Vec<String>,
}

impl EvidenceSet {
    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

/// Keywords that occur verbatim in `text`, in keyword order.
pub fn keyword_hits(text: &str, keywords: &[String]) -> Vec<String> {
    keywords.iter().filter(|k| text.contains(k.as_str())).cloned().collect()
}

/// The sentence of `section` containing the most keywords; earliest wins ties.
pub fn best_sentence_at(section: &Section, keywords: &[String]) -> Option<EvidencePiece> {
    let mut best: Option<(usize, Vec<String>)> = None;
    for (i, s) in section.sentences.iter().enumerate() {
        let hits = keyword_hits(&s.text, keywords);
        if !hits.is_empty() && best.as_ref().is_none_or(|(_, b)| hits.len() > b.len()) {
            best = Some((i, hits));
        }
    }
    best.map(|(i, hits)| {
        let s = &section.sentences[i];
        EvidencePiece {
            sentence_text: s.text.clone(),
            location_id: section.location_id.clone(),
            sentence_index: s.index,
            matched_keywords: hits,
            repetition_count: 1,
            score: None,
        }
    })
}

/// Sweeps `locations` in order, taking each location's best sentence when it
/// covers at least one keyword not covered yet. Stops once every keyword is covered.
pub fn greedy_retrieve(doc: &EmrDocument, keywords: &[String], locations: &[String]) -> Vec<EvidencePiece> {
    let mut unique: Vec<String> = Vec::new();
    for k in keywords {
        if !unique.contains(k) {
            unique.push(k.clone());
        }
    }
    let mut covered: HashSet<String> = HashSet::new();
    let mut pieces = Vec::new();
    for loc in locations {
        if covered.len() == unique.len() {
            break;
        }
        let Some(piece) = doc.section(loc).and_then(|s| best_sentence_at(s, &unique)) else {
            continue;
        };
        if piece.matched_keywords.iter().any(|k| !covered.contains(k)) {
            covered.extend(piece.matched_keywords.iter().cloned());
            pieces.push(piece);
        }
    }
    pieces
}

/// Attaches a reliability score to every piece, scored against its own matched keywords.
pub fn score_pieces(pieces: &mut [EvidencePiece], scorer: &dyn EvidenceScorer) -> Result<(), EvidenceError> {
    for (i, p) in pieces.iter_mut().enumerate() {
        let score = scorer
            .score(&p.sentence_text, &p.matched_keywords)
            .and_then(|s| {
                if (0.0..=1.0).contains(&s) {
                    Ok(s)
                } else {
                    Err(ScorerError::OutOfRange(s))
                }
            })
            .map_err(|source| EvidenceError::Scorer {
                piece: i,
                sentence: p.sentence_text.clone(),
                source,
            })?;
        p.score = Some(score);
    }
    Ok(())
}

/// Scores every piece and keeps those scoring at least `threshold`.
pub fn filter_reliable(
    mut pieces: Vec<EvidencePiece>,
    scorer: &dyn EvidenceScorer,
    threshold: f64,
) -> Result<Vec<EvidencePiece>, EvidenceError> {
    score_pieces(&mut pieces, scorer)?;
    pieces.retain(|p| p.score.is_some_and(|s| s >= threshold));
    Ok(pieces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceConfig {
    /// Minimum reliability score, inclusive.
    pub threshold: f64,
    /// Cosine-distance radius for near-duplicate clusters.
    pub tau: f64,
    /// Maximum pieces per evidence set.
    pub max_pieces: usize,
    /// When false, pieces are scored but none are dropped for a low score.
    pub filter: bool,
    /// Restricts retrieval to these locations instead of the prior table.
    pub restrict_locations: Option<Vec<String>>,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            threshold: 0.65,
            tau: 0.15,
            max_pieces: 10,
            filter: true,
            restrict_locations: None,
        }
    }
}

/// Shared read-only inputs for evidence building.
pub struct EvidenceContext<'a> {
    pub synonyms: &'a SynonymLexicon,
    pub prior_table: &'a PriorLocationTable,
    pub registry: &'a LocationRegistry,
    pub scorer: &'a dyn EvidenceScorer,
    pub embeddings: &'a EmbeddingTable,
    pub tokenizer: &'a dyn Tokenizer,
}

/// Retrieve, score, filter, collapse duplicates, order, and cap.
pub fn build_evidence_set(
    doc: &EmrDocument,
    diagnosis_index: usize,
    code: &IcdCode,
    axes: &AxisKnowledge,
    ctx: &EvidenceContext<'_>,
    config: &EvidenceConfig,
) -> Result<EvidenceSet, EvidenceError> {
    if axes.is_empty() {
        return Err(EvidenceError::EmptyAxes(code.code.clone()));
    }
    let keywords = expand_synonyms(&axes.keywords(), ctx.synonyms);
    let locations = match &config.restrict_locations {
        Some(locs) => locs.clone(),
        None => locations_for(code, ctx.prior_table, ctx.registry),
    };

    let mut pieces = greedy_retrieve(doc, &keywords, &locations);
    if config.filter {
        pieces = filter_reliable(pieces, ctx.scorer, config.threshold)?;
    } else {
        score_pieces(&mut pieces, ctx.scorer)?;
    }
    let mut pieces = dedup_and_count(pieces, ctx.embeddings, ctx.tokenizer, config.tau);

    let order: HashMap<&str, usize> = locations.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    pieces.sort_by(|a, b| {
        b.score
            .unwrap_or(0.0)
            .total_cmp(&a.score.unwrap_or(0.0))
            .then_with(|| {
                order
                    .get(a.location_id.as_str())
                    .cmp(&order.get(b.location_id.as_str()))
            })
            .then_with(|| a.sentence_index.cmp(&b.sentence_index))
    });
    pieces.truncate(config.max_pieces);

    let hit: HashSet<&str> = pieces
        .iter()
        .flat_map(|p| p.matched_keywords.iter().map(String::as_str))
        .collect();
    let covered_keywords = keywords.iter().filter(|k| hit.contains(k.as_str())).cloned().collect();

    Ok(EvidenceSet {
        diagnosis_index,
        code: code.clone(),
        pieces,
        covered_keywords,
    })
}
