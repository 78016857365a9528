//! Per-diagnosis coding: candidates, evidence, templates and verdicts.

mod assets;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assets::{AssetError, AssetParts, Assets};

use crate::candidates::{CandidateEntry, CandidateSet, Ranker};
use crate::config::{Backend, Config, ConfigError};
use crate::corpus::EmrDocument;
use crate::evidence::{
    build_evidence_set, BaselineScorer, EvidenceContext, EvidenceScorer, EvidenceSet, ExternalScorer,
};
use crate::knowledge::{parse_axes, AxisKnowledge, IcdCode, SynonymLexicon};
use crate::verify::{
    build_template, extract_features, verify, ExternalVerifier, FeatureVerifier, VerificationTemplate, Verifier,
    FEATURE_COUNT,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Assets(#[from] AssetError),
    #[error("no verifier: configure `assets.verifier_model` or an external verifier")]
    NoVerifier,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportLevel {
    Fully,
    Partially,
    Unable,
}

/// Share of the code's nonempty axes touched by the evidence.
///
/// An axis counts as covered when one of its keywords, or a synonym of one, is
/// among the covered keywords.
pub fn support_level(evidence: &EvidenceSet, axes: &AxisKnowledge, synonyms: &SynonymLexicon) -> SupportLevel {
    if evidence.is_empty() {
        return SupportLevel::Unable;
    }
    let covered = |k: &String| {
        evidence.covered_keywords.contains(k)
            || synonyms
                .synonyms(k)
                .iter()
                .any(|s| evidence.covered_keywords.contains(s))
    };
    let (mut total, mut hit) = (0, 0);
    for axis in axes.nonempty_axes() {
        total += 1;
        if axes.axis(axis).iter().any(covered) {
            hit += 1;
        }
    }
    match hit {
        0 => SupportLevel::Unable,
        h if h == total => SupportLevel::Fully,
        _ => SupportLevel::Partially,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub diagnosis_index: usize,
    pub code: IcdCode,
    pub p_yes: f64,
    /// 1-based position among the diagnosis's recommendations.
    pub rank: usize,
    pub candidate_rank: usize,
    pub sim: f64,
    pub support_level: SupportLevel,
    pub axes: AxisKnowledge,
    pub evidence: EvidenceSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisStats {
    pub candidate_count: usize,
    /// Reliable evidence pieces per verifiable candidate, in candidate order.
    pub evidence_counts: Vec<usize>,
    /// Token count of every evidence piece of every verifiable candidate.
    pub evidence_tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    pub diagnosis_index: usize,
    pub diagnosis_text: String,
    /// Candidate codes in rank order.
    pub candidates: Vec<String>,
    pub recommendations: Vec<Recommendation>,
    pub stats: DiagnosisStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateIssue {
    pub diagnosis_index: usize,
    pub code: String,
    pub stage: String,
    pub message: String,
}

/// Milliseconds spent per stage, summed over work items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub candidates_ms: f64,
    pub evidence_ms: f64,
    pub template_ms: f64,
    pub verify_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.candidates_ms += other.candidates_ms;
        self.evidence_ms += other.evidence_ms;
        self.template_ms += other.template_ms;
        self.verify_ms += other.verify_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingResult {
    pub record_id: String,
    pub diagnoses: Vec<DiagnosisResult>,
    pub unverifiable: Vec<CandidateIssue>,
    pub unparseable: Vec<CandidateIssue>,
    pub timings: StageTimings,
}

impl CodingResult {
    /// Serialized form with timings zeroed, for byte-level comparison.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.timings = StageTimings::default();
        serde_json::to_string(&copy).expect("result serializes")
    }

    pub fn top_code(&self, diagnosis_index: usize) -> Option<&str> {
        self.diagnoses
            .iter()
            .find(|d| d.diagnosis_index == diagnosis_index)
            .and_then(|d| d.recommendations.first())
            .map(|r| r.code.code.as_str())
    }
}

/// Everything known about one candidate before the verifier runs.
#[derive(Debug, Clone)]
pub struct PreparedCandidate {
    pub entry: CandidateEntry,
    pub axes: AxisKnowledge,
    pub evidence: EvidenceSet,
    pub template: VerificationTemplate,
    pub features: [f64; FEATURE_COUNT],
}

#[derive(Debug, Clone)]
pub enum CandidateAnalysis {
    Unparseable(CandidateIssue),
    Failed(CandidateIssue),
    Ready(Box<PreparedCandidate>),
}

#[derive(Debug, Clone)]
pub struct DiagnosisAnalysis {
    pub candidates: CandidateSet,
    pub items: Vec<CandidateAnalysis>,
    pub timings: StageTimings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Shared assets, configuration and backends. Cheap to share across threads.
pub struct Engine {
    assets: Arc<Assets>,
    config: Config,
    scorer: Arc<dyn EvidenceScorer>,
    verifier: Option<Arc<dyn Verifier>>,
    pool: rayon::ThreadPool,
}

impl Engine {
    /// Builds scorer and verifier from the config. The built-in verifier needs a
    /// model among the assets; without one the engine can analyze but not code.
    pub fn new(assets: Arc<Assets>, config: Config) -> Result<Self, PipelineError> {
        config.validate()?;
        let scorer: Arc<dyn EvidenceScorer> = match &config.evidence.scorer {
            Backend::Builtin => Arc::new(BaselineScorer::new(
                assets.embeddings.clone(),
                assets.tokenizer.clone(),
                config.evidence.alpha,
            )),
            b @ Backend::External { endpoint, .. } => {
                Arc::new(ExternalScorer::new(endpoint.clone(), b.timeout().unwrap_or_default()))
            }
        };
        let verifier: Option<Arc<dyn Verifier>> = match &config.verify.verifier {
            Backend::Builtin => assets
                .verifier_model
                .clone()
                .map(|m| Arc::new(FeatureVerifier::new(m)) as Arc<dyn Verifier>),
            b @ Backend::External { endpoint, .. } => Some(Arc::new(ExternalVerifier::new(
                endpoint.clone(),
                b.timeout().unwrap_or_default(),
            ))),
        };
        Self::with_backends(assets, config, scorer, verifier)
    }

    pub fn with_backends(
        assets: Arc<Assets>,
        config: Config,
        scorer: Arc<dyn EvidenceScorer>,
        verifier: Option<Arc<dyn Verifier>>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.runtime.workers)
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(Self {
            assets,
            config,
            scorer,
            verifier,
            pool,
        })
    }

    /// Loads assets named by the config and builds the engine.
    pub fn from_config(config: Config) -> Result<Self, PipelineError> {
        config.validate()?;
        let assets = Arc::new(Assets::load(&config.assets)?);
        Self::new(assets, config)
    }

    pub fn assets(&self) -> &Arc<Assets> {
        &self.assets
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn verifier(&self) -> Option<&Arc<dyn Verifier>> {
        self.verifier.as_ref()
    }

    pub fn ranker(&self) -> Ranker<'_> {
        Ranker {
            table: &self.assets.codes,
            index: &self.assets.index,
            tokenizer: self.assets.tokenizer.as_ref(),
            embeddings: &self.assets.embeddings,
            weights: self.config.candidates.weights,
        }
    }

    fn analyze_candidate(
        &self,
        doc: &EmrDocument,
        diagnosis_index: usize,
        entry: &CandidateEntry,
    ) -> (CandidateAnalysis, StageTimings) {
        let a = &self.assets;
        let mut t = StageTimings::default();
        let issue = |stage: &str, message: String| CandidateIssue {
            diagnosis_index,
            code: entry.code.code.clone(),
            stage: stage.into(),
            message,
        };
        let axes = match parse_axes(&entry.code, a.axis_table.as_ref(), a.axis_lexicons.as_ref()) {
            Ok(axes) => axes,
            Err(e) => return (CandidateAnalysis::Unparseable(issue("axes", e.to_string())), t),
        };

        let started = Instant::now();
        let ctx = EvidenceContext {
            synonyms: &a.synonyms,
            prior_table: &a.prior_table,
            registry: &a.registry,
            scorer: self.scorer.as_ref(),
            embeddings: &a.embeddings,
            tokenizer: a.tokenizer.as_ref(),
        };
        let evidence = build_evidence_set(
            doc,
            diagnosis_index,
            &entry.code,
            &axes,
            &ctx,
            &self.config.evidence_config(),
        );
        t.evidence_ms = ms_since(started);
        let evidence = match evidence {
            Ok(e) => e,
            Err(e) => return (CandidateAnalysis::Failed(issue("evidence", e.to_string())), t),
        };

        let started = Instant::now();
        let caps = self.config.template_caps();
        let template = build_template(
            &evidence,
            &entry.code,
            &caps,
            &a.registry,
            a.tokenizer.as_ref(),
            self.config.template_style(),
        );
        let template = match template {
            Ok(t) => t,
            Err(e) => return (CandidateAnalysis::Failed(issue("template", e.to_string())), t),
        };
        let features = extract_features(&template, &evidence, &axes, entry, &caps, &a.synonyms);
        t.template_ms = ms_since(started);
        (
            CandidateAnalysis::Ready(Box::new(PreparedCandidate {
                entry: entry.clone(),
                axes,
                evidence,
                template,
                features,
            })),
            t,
        )
    }

    /// Candidates plus evidence, template and features for each of them.
    pub fn analyze_diagnosis(&self, doc: &EmrDocument, diagnosis_index: usize) -> DiagnosisAnalysis {
        let mut timings = StageTimings::default();
        let started = Instant::now();
        let diagnosis = &doc.diagnoses[diagnosis_index];
        let candidates = self
            .ranker()
            .top_n(diagnosis, self.config.candidates.n, self.config.candidates.mode);
        timings.candidates_ms = ms_since(started);
        let analyzed: Vec<(CandidateAnalysis, StageTimings)> = self.pool.install(|| {
            candidates
                .entries
                .par_iter()
                .map(|e| self.analyze_candidate(doc, diagnosis_index, e))
                .collect()
        });
        let mut items = Vec::with_capacity(analyzed.len());
        for (item, t) in analyzed {
            timings.add(&t);
            items.push(item);
        }
        DiagnosisAnalysis {
            candidates,
            items,
            timings,
        }
    }

    fn code_diagnosis_with(
        &self,
        verifier: &dyn Verifier,
        doc: &EmrDocument,
        diagnosis_index: usize,
    ) -> (DiagnosisResult, Vec<CandidateIssue>, Vec<CandidateIssue>, StageTimings) {
        let analysis = self.analyze_diagnosis(doc, diagnosis_index);
        let mut timings = analysis.timings;
        let mut unverifiable = Vec::new();
        let mut unparseable = Vec::new();
        let mut stats = DiagnosisStats {
            candidate_count: analysis.candidates.entries.len(),
            ..Default::default()
        };
        let mut recommendations = Vec::new();
        let started = Instant::now();
        for item in analysis.items {
            let prepared = match item {
                CandidateAnalysis::Unparseable(i) => {
                    unparseable.push(i);
                    continue;
                }
                CandidateAnalysis::Failed(i) => {
                    unverifiable.push(i);
                    continue;
                }
                CandidateAnalysis::Ready(p) => p,
            };
            stats.evidence_counts.push(prepared.evidence.pieces.len());
            stats.evidence_tokens.extend(
                prepared
                    .evidence
                    .pieces
                    .iter()
                    .map(|p| self.assets.tokenizer.tokenize(&p.sentence_text).len()),
            );
            let verdict = match verify(
                &prepared.template,
                &prepared.features,
                verifier,
                self.config.verify.threshold,
            ) {
                Ok(v) => v,
                Err(e) => {
                    unverifiable.push(CandidateIssue {
                        diagnosis_index,
                        code: prepared.entry.code.code.clone(),
                        stage: "verify".into(),
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            if verdict.label == 1 {
                let PreparedCandidate {
                    entry, axes, evidence, ..
                } = *prepared;
                recommendations.push(Recommendation {
                    diagnosis_index,
                    support_level: support_level(&evidence, &axes, &self.assets.synonyms),
                    code: entry.code,
                    p_yes: verdict.p_yes,
                    rank: 0,
                    candidate_rank: entry.rank,
                    sim: entry.sim,
                    axes,
                    evidence,
                });
            }
        }
        timings.verify_ms += ms_since(started);
        recommendations.sort_by(|a, b| {
            b.p_yes
                .total_cmp(&a.p_yes)
                .then_with(|| b.sim.total_cmp(&a.sim))
                .then_with(|| a.code.code.cmp(&b.code.code))
        });
        for (i, r) in recommendations.iter_mut().enumerate() {
            r.rank = i + 1;
        }
        let result = DiagnosisResult {
            diagnosis_index,
            diagnosis_text: doc.diagnoses[diagnosis_index].text.clone(),
            candidates: analysis
                .candidates
                .entries
                .iter()
                .map(|e| e.code.code.clone())
                .collect(),
            recommendations,
            stats,
        };
        (result, unverifiable, unparseable, timings)
    }

    pub fn code_diagnosis(&self, doc: &EmrDocument, diagnosis_index: usize) -> Result<DiagnosisResult, PipelineError> {
        let verifier = self.verifier.as_deref().ok_or(PipelineError::NoVerifier)?;
        Ok(self.code_diagnosis_with(verifier, doc, diagnosis_index).0)
    }

    /// Codes every diagnosis of `doc`. Output order follows diagnosis order.
    pub fn code_document(&self, doc: &EmrDocument) -> Result<CodingResult, PipelineError> {
        let verifier = self.verifier.as_deref().ok_or(PipelineError::NoVerifier)?;
        let started = Instant::now();
        let per_diagnosis: Vec<_> = self.pool.install(|| {
            (0..doc.diagnoses.len())
                .into_par_iter()
                .map(|i| self.code_diagnosis_with(verifier, doc, i))
                .collect()
        });
        let mut result = CodingResult {
            record_id: doc.record_id.clone(),
            diagnoses: Vec::with_capacity(per_diagnosis.len()),
            unverifiable: Vec::new(),
            unparseable: Vec::new(),
            timings: StageTimings::default(),
        };
        for (d, unverifiable, unparseable, t) in per_diagnosis {
            result.diagnoses.push(d);
            result.unverifiable.extend(unverifiable);
            result.unparseable.extend(unparseable);
            result.timings.add(&t);
        }
        result.timings.total_ms = ms_since(started);
        Ok(result)
    }
}
