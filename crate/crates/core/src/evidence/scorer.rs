//! Evidence reliability scorers.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Tokenizer;
use crate::embedding::{cosine01, EmbeddingTable};
use crate::wire::{Endpoint, NdjsonClient, WireError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("cannot score against an empty keyword list")]
    EmptyKeywords,
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("expected {expected} scores, got {got}")]
    BatchSize { expected: usize, got: usize },
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Reliability of a sentence as evidence for a keyword list, in [0, 1].
///
/// Implementations must be deterministic for a fixed model state.
pub trait EvidenceScorer: Send + Sync {
    fn id(&self) -> &str;

    fn score(&self, sentence: &str, keywords: &[String]) -> Result<f64, ScorerError>;

    fn score_batch(&self, items: &[(&str, &[String])]) -> Result<Vec<f64>, ScorerError> {
        items.iter().map(|(s, k)| self.score(s, k)).collect()
    }
}

/// `alpha * coverage + (1 - alpha) * cosine01(sentence, keywords)`.
///
/// Coverage is the share of keywords found verbatim in the sentence; the cosine
/// compares mean-pooled token embeddings of the sentence and of the keywords.
pub fn baseline_score(
    sentence: &str,
    keywords: &[String],
    emb: &EmbeddingTable,
    tokenizer: &dyn Tokenizer,
    alpha: f64,
) -> Result<f64, ScorerError> {
    if keywords.is_empty() {
        return Err(ScorerError::EmptyKeywords);
    }
    let hits = keywords.iter().filter(|k| sentence.contains(k.as_str())).count();
    let coverage = hits as f64 / keywords.len() as f64;
    let sentence_vec = emb.mean_pool(&tokenizer.tokenize(sentence));
    let keyword_tokens: Vec<String> = keywords.iter().flat_map(|k| tokenizer.tokenize(k)).collect();
    let keyword_vec = emb.mean_pool(&keyword_tokens);
    let score = alpha * coverage + (1.0 - alpha) * cosine01(&sentence_vec, &keyword_vec);
    Ok(score.clamp(0.0, 1.0))
}

pub struct BaselineScorer {
    embeddings: Arc<EmbeddingTable>,
    tokenizer: Arc<dyn Tokenizer>,
    alpha: f64,
}

impl BaselineScorer {
    pub const ID: &'static str = "baseline";

    pub fn new(embeddings: Arc<EmbeddingTable>, tokenizer: Arc<dyn Tokenizer>, alpha: f64) -> Self {
        assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1]");
        Self {
            embeddings,
            tokenizer,
            alpha,
        }
    }
}

impl EvidenceScorer for BaselineScorer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn score(&self, sentence: &str, keywords: &[String]) -> Result<f64, ScorerError> {
        baseline_score(
            sentence,
            keywords,
            &self.embeddings,
            self.tokenizer.as_ref(),
            self.alpha,
        )
    }
}

#[derive(Debug, Serialize)]
pub struct ScoreRequest<'a> {
    pub sentence: &'a str,
    pub keywords: &'a [String],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

/// Scorer served by another process over newline-delimited JSON.
///
/// Single request `{"sentence", "keywords"}` → `{"score"}`; the batched form sends
/// an array of requests and expects an array of responses in the same order.
pub struct ExternalScorer {
    id: String,
    client: NdjsonClient,
}

impl ExternalScorer {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Self {
        Self {
            id: format!("external:{endpoint}"),
            client: NdjsonClient::new(endpoint, timeout),
        }
    }
}

fn checked(score: f64) -> Result<f64, ScorerError> {
    if (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(ScorerError::OutOfRange(score))
    }
}

impl EvidenceScorer for ExternalScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, sentence: &str, keywords: &[String]) -> Result<f64, ScorerError> {
        let reply: ScoreResponse = self.client.call(&ScoreRequest { sentence, keywords })?;
        checked(reply.score)
    }

    fn score_batch(&self, items: &[(&str, &[String])]) -> Result<Vec<f64>, ScorerError> {
        let requests: Vec<ScoreRequest> = items
            .iter()
            .map(|(sentence, keywords)| ScoreRequest { sentence, keywords })
            .collect();
        let replies: Vec<ScoreResponse> = self.client.call(&requests)?;
        if replies.len() != items.len() {
            return Err(ScorerError::BatchSize {
                expected: items.len(),
                got: replies.len(),
            });
        }
        replies.into_iter().map(|r| checked(r.score)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lexicon, LongestMatchTokenizer};
    use crate::wire::testing;
    use serde_json::Value;

    fn setup() -> (EmbeddingTable, LongestMatchTokenizer) {
        let mut emb = EmbeddingTable::new(2);
        emb.insert("出血", vec![1.0, 0.0]);
        emb.insert("脉络膜", vec![1.0, 0.0]);
        emb.insert("咳嗽", vec![0.0, 1.0]);
        let tok = LongestMatchTokenizer::new(Lexicon::new(["出血", "脉络膜", "咳嗽", "破裂"]));
        (emb, tok)
    }

    fn kw(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn baseline_examples() {
        let (emb, tok) = setup();
        let full = baseline_score("脉络膜出血", &kw(&["脉络膜", "出血"]), &emb, &tok, 0.5).unwrap();
        assert!((full - 1.0).abs() < 1e-12);
        // no keyword present, embeddings orthogonal: (1 - 0.5) * 0.5
        let ortho = baseline_score("咳嗽", &kw(&["出血"]), &emb, &tok, 0.5).unwrap();
        assert!((ortho - 0.25).abs() < 1e-12);
        let half = baseline_score("出血", &kw(&["出血", "破裂"]), &emb, &tok, 1.0).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        assert_eq!(
            baseline_score("出血", &[], &emb, &tok, 0.5),
            Err(ScorerError::EmptyKeywords)
        );
    }

    #[test]
    fn external_scorer_protocol() {
        let addr = testing::serve(|line| {
            let v: Value = serde_json::from_str(line).unwrap();
            let score = |req: &Value| {
                let n = req["keywords"].as_array().unwrap().len() as f64;
                serde_json::json!({ "score": 1.0 / (1.0 + n) })
            };
            Some(match v.as_array() {
                Some(batch) => Value::Array(batch.iter().map(score).collect()).to_string(),
                None => score(&v).to_string(),
            })
        });
        let scorer = ExternalScorer::new(addr.parse().unwrap(), Duration::from_secs(5));
        assert_eq!(scorer.score("x", &kw(&["a"])).unwrap(), 0.5);
        let a = kw(&["a"]);
        let ab = kw(&["a", "b"]);
        let batch = scorer.score_batch(&[("x", &a), ("y", &ab)]).unwrap();
        assert_eq!(batch, vec![0.5, 1.0 / 3.0]);
        assert!(scorer.id().starts_with("external:tcp://"));
    }

    #[test]
    fn external_scorer_rejects_out_of_range_and_timeouts() {
        let addr = testing::serve(|_| Some(r#"{"score": 1.5}"#.into()));
        let scorer = ExternalScorer::new(addr.parse().unwrap(), Duration::from_secs(5));
        assert_eq!(scorer.score("x", &kw(&["a"])), Err(ScorerError::OutOfRange(1.5)));

        let silent = testing::serve(|_| None);
        let scorer = ExternalScorer::new(silent.parse().unwrap(), Duration::from_millis(50));
        assert!(matches!(
            scorer.score("x", &kw(&["a"])),
            Err(ScorerError::Wire(WireError::Timeout(_)))
        ));
    }
}
