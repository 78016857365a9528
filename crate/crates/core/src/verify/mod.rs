//! Verification templates and yes/no verdicts for candidate codes.

mod model;

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{loss_and_gradient, train_verifier, Example, FeatureVerifierModel, TrainConfig};

use crate::candidates::CandidateEntry;
use crate::corpus::Tokenizer;
use crate::evidence::{EvidencePiece, EvidenceSet};
use crate::knowledge::{Axis, AxisKnowledge, IcdCode, LocationRegistry, SynonymLexicon};
use crate::wire::{Endpoint, NdjsonClient, WireError};

pub const FIELD_SEPARATOR: char = '∥';
const SEPARATOR_ESCAPE: &str = "||";
const KEYWORD_SEPARATOR: char = ',';
const KEYWORD_SEPARATOR_ESCAPE: &str = "，";

pub const CLS: &str = "[CLS]";
pub const SOFT: &str = "[soft]";
pub const MASK: &str = "[mask]";
pub const SOFT_SLOTS_PRE: usize = 3;

pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const FEATURE_COUNT: usize = 11;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "etiology_coverage",
    "anatomy_coverage",
    "pathology_coverage",
    "manifestation_coverage",
    "mean_score",
    "max_score",
    "evidence_fraction",
    "log_repetitions",
    "candidate_sim",
    "reciprocal_rank",
    "axes_touched",
];
/// Indices of the evidence-score features.
pub const SCORE_FEATURES: [usize; 2] = [4, 5];

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("code `{0}` has an empty description")]
    EmptyCode(String),
    #[error("evidence set is for `{evidence}` but the code is `{code}`")]
    CodeMismatch { evidence: String, code: String },
    #[error("malformed evidence string: {0}")]
    Parse(String),
    #[error("verifier model is untrained")]
    Untrained,
    #[error("expected {expected} features, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("p_yes {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("verifier model: {0}")]
    Model(String),
    #[error("training data: {0}")]
    Dataset(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

fn escape_field(s: &str) -> String {
    s.replace(FIELD_SEPARATOR, SEPARATOR_ESCAPE)
}

fn escape_keyword(s: &str) -> String {
    escape_field(s).replace(KEYWORD_SEPARATOR, KEYWORD_SEPARATOR_ESCAPE)
}

/// One evidence piece rendered as `text∥keywords∥origin∥repetitions`.
///
/// Fields hold the escaped values, so parsing the canonical string returns them
/// unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedEvidence {
    pub text: String,
    pub keywords: Vec<String>,
    pub origin: String,
    pub repetitions: u32,
    pub canonical_string: String,
}

impl FormattedEvidence {
    pub fn new(text: &str, keywords: &[String], origin: &str, repetitions: u32) -> Self {
        let text = escape_field(text);
        let keywords: Vec<String> = keywords.iter().map(|k| escape_keyword(k)).collect();
        let origin = escape_field(origin);
        let canonical_string = format!(
            "{text}{sep}{}{sep}{origin}{sep}{repetitions}",
            keywords.join(","),
            sep = FIELD_SEPARATOR
        );
        Self {
            text,
            keywords,
            origin,
            repetitions,
            canonical_string,
        }
    }

    pub fn parse(canonical: &str) -> Result<Self, VerifyError> {
        let fields: Vec<&str> = canonical.split(FIELD_SEPARATOR).collect();
        let [text, keywords, origin, repetitions] = fields[..] else {
            return Err(VerifyError::Parse(format!("expected 4 fields, got {}", fields.len())));
        };
        let repetitions: u32 = repetitions
            .parse()
            .map_err(|_| VerifyError::Parse(format!("bad repetition count `{repetitions}`")))?;
        let keywords = if keywords.is_empty() {
            Vec::new()
        } else {
            keywords.split(KEYWORD_SEPARATOR).map(str::to_string).collect()
        };
        Ok(Self {
            text: text.to_string(),
            keywords,
            origin: origin.to_string(),
            repetitions,
            canonical_string: canonical.to_string(),
        })
    }
}

pub fn format_evidence(piece: &EvidencePiece, registry: &LocationRegistry) -> FormattedEvidence {
    FormattedEvidence::new(
        &piece.sentence_text,
        &piece.matched_keywords,
        registry.display_name(&piece.location_id),
        piece.repetition_count,
    )
}

/// Evidence rendering inside the template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateStyle {
    /// Text, keywords, origin and repetitions.
    #[default]
    Full,
    /// Sentence text only.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateCaps {
    /// Maximum evidence pieces.
    pub max_pieces: usize,
    /// Maximum code description tokens.
    pub max_code_tokens: usize,
    /// Maximum evidence tokens across all pieces.
    pub max_evidence_tokens: usize,
}

impl Default for TemplateCaps {
    fn default() -> Self {
        Self {
            max_pieces: 10,
            max_code_tokens: 32,
            max_evidence_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationTemplate {
    pub code: String,
    pub style: TemplateStyle,
    pub evidence: Vec<FormattedEvidence>,
    pub code_text: Vec<String>,
    pub serialized: Vec<String>,
}

impl VerificationTemplate {
    pub fn evidence_token_count(&self) -> usize {
        self.serialized.len() - self.code_text.len() - SOFT_SLOTS_PRE - 3
    }
}

fn is_marker(token: &str) -> bool {
    matches!(token, CLS | SOFT | MASK)
}

/// Tokens that collide with a marker lose their brackets.
fn content_tokens(text: &str, tokenizer: &dyn Tokenizer) -> Vec<String> {
    tokenizer
        .tokenize(text)
        .into_iter()
        .map(|t| {
            if is_marker(&t) {
                t.trim_matches(['[', ']']).to_string()
            } else {
                t
            }
        })
        .collect()
}

/// `[CLS] evidence [soft][soft][soft] code [soft][mask]`.
///
/// Evidence keeps set order and is cut from the tail, whole pieces at a time,
/// until both the piece cap and the token budget hold.
pub fn build_template(
    evidence: &EvidenceSet,
    code: &IcdCode,
    caps: &TemplateCaps,
    registry: &LocationRegistry,
    tokenizer: &dyn Tokenizer,
    style: TemplateStyle,
) -> Result<VerificationTemplate, VerifyError> {
    if evidence.code.code != code.code {
        return Err(VerifyError::CodeMismatch {
            evidence: evidence.code.code.clone(),
            code: code.code.clone(),
        });
    }
    let mut code_text = content_tokens(&code.description, tokenizer);
    if code_text.is_empty() {
        return Err(VerifyError::EmptyCode(code.code.clone()));
    }
    code_text.truncate(caps.max_code_tokens);

    let mut formatted = Vec::new();
    let mut evidence_tokens = Vec::new();
    for piece in evidence.pieces.iter().take(caps.max_pieces) {
        let f = format_evidence(piece, registry);
        let tokens = match style {
            TemplateStyle::Full => content_tokens(&f.canonical_string, tokenizer),
            TemplateStyle::Plain => content_tokens(&f.text, tokenizer),
        };
        if evidence_tokens.len() + tokens.len() > caps.max_evidence_tokens {
            break;
        }
        evidence_tokens.extend(tokens);
        formatted.push(f);
    }

    let mut serialized = Vec::with_capacity(evidence_tokens.len() + code_text.len() + 6);
    serialized.push(CLS.to_string());
    serialized.extend(evidence_tokens);
    serialized.extend(std::iter::repeat_n(SOFT.to_string(), SOFT_SLOTS_PRE));
    serialized.extend(code_text.iter().cloned());
    serialized.push(SOFT.to_string());
    serialized.push(MASK.to_string());
    Ok(VerificationTemplate {
        code: code.code.clone(),
        style,
        evidence: formatted,
        code_text,
        serialized,
    })
}

/// Checks the slot layout of a serialized template.
pub fn matches_layout(serialized: &[String]) -> bool {
    let Some(first) = serialized.first() else {
        return false;
    };
    if first != CLS || serialized.len() < 7 {
        return false;
    }
    let n = serialized.len();
    if serialized[n - 1] != MASK || serialized[n - 2] != SOFT {
        return false;
    }
    let body = &serialized[1..n - 2];
    let Some(soft_at) = body.iter().position(|t| t == SOFT) else {
        return false;
    };
    let evidence = &body[..soft_at];
    let rest = &body[soft_at..];
    if rest.len() <= SOFT_SLOTS_PRE || rest[..SOFT_SLOTS_PRE].iter().any(|t| t != SOFT) {
        return false;
    }
    let code = &rest[SOFT_SLOTS_PRE..];
    evidence.iter().chain(code).all(|t| !is_marker(t))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub yes: String,
    pub no: String,
}

impl Default for Verbalizer {
    fn default() -> Self {
        Self {
            yes: "yes".into(),
            no: "no".into(),
        }
    }
}

impl Verbalizer {
    pub fn word(&self, label: u8) -> Option<&str> {
        match label {
            1 => Some(&self.yes),
            0 => Some(&self.no),
            _ => None,
        }
    }

    pub fn label(&self, word: &str) -> Option<u8> {
        if word == self.yes {
            Some(1)
        } else if word == self.no {
            Some(0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: u8,
    pub p_yes: f64,
    pub verifier_id: String,
}

impl Verdict {
    /// Label 1 when `p_yes >= threshold`.
    pub fn from_probability(p_yes: f64, threshold: f64, verifier_id: &str) -> Result<Self, VerifyError> {
        if !(0.0..=1.0).contains(&p_yes) {
            return Err(VerifyError::OutOfRange(p_yes));
        }
        Ok(Self {
            label: u8::from(p_yes >= threshold),
            p_yes,
            verifier_id: verifier_id.to_string(),
        })
    }
}

fn keyword_covered(keyword: &str, covered: &HashSet<&str>, synonyms: &SynonymLexicon) -> bool {
    covered.contains(keyword) || synonyms.synonyms(keyword).iter().any(|s| covered.contains(s.as_str()))
}

/// Fixed-order feature vector describing how well the shown evidence supports
/// the candidate.
///
/// Only pieces that made it into the template count. An axis keyword is covered
/// when it or one of its synonyms was matched; an axis without keywords counts as
/// fully covered.
pub fn extract_features(
    template: &VerificationTemplate,
    evidence: &EvidenceSet,
    axes: &AxisKnowledge,
    entry: &CandidateEntry,
    caps: &TemplateCaps,
    synonyms: &SynonymLexicon,
) -> [f64; FEATURE_COUNT] {
    let shown = &evidence.pieces[..template.evidence.len().min(evidence.pieces.len())];
    let covered: HashSet<&str> = shown
        .iter()
        .flat_map(|p| p.matched_keywords.iter().map(String::as_str))
        .collect();

    let mut f = [0.0; FEATURE_COUNT];
    let mut nonempty = 0;
    let mut touched = 0;
    for (slot, axis) in Axis::ALL.iter().enumerate() {
        let kws = axes.axis(*axis);
        if kws.is_empty() {
            f[slot] = 1.0;
            continue;
        }
        let hits = kws.iter().filter(|k| keyword_covered(k, &covered, synonyms)).count();
        f[slot] = hits as f64 / kws.len() as f64;
        nonempty += 1;
        touched += usize::from(hits > 0);
    }

    let scores: Vec<f64> = shown.iter().map(|p| p.score.unwrap_or(0.0)).collect();
    if !scores.is_empty() {
        f[4] = scores.iter().sum::<f64>() / scores.len() as f64;
        f[5] = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    f[6] = if caps.max_pieces == 0 {
        0.0
    } else {
        shown.len() as f64 / caps.max_pieces as f64
    };
    if template.style == TemplateStyle::Full {
        let reps: u64 = shown.iter().map(|p| u64::from(p.repetition_count)).sum();
        f[7] = (reps as f64).ln_1p();
    }
    f[8] = entry.sim;
    f[9] = if entry.rank == 0 { 0.0 } else { 1.0 / entry.rank as f64 };
    f[10] = if nonempty == 0 {
        1.0
    } else {
        touched as f64 / nonempty as f64
    };
    f
}

/// Something that turns a template into the probability of the "yes" label word.
pub trait Verifier: Send + Sync {
    fn id(&self) -> &str;

    fn p_yes(&self, template: &VerificationTemplate, features: &[f64]) -> Result<f64, VerifyError>;
}

pub struct FeatureVerifier {
    id: String,
    model: FeatureVerifierModel,
}

impl FeatureVerifier {
    pub fn new(model: FeatureVerifierModel) -> Self {
        Self {
            id: format!("builtin:v{}", model.schema_version),
            model,
        }
    }

    pub fn model(&self) -> &FeatureVerifierModel {
        &self.model
    }
}

impl Verifier for FeatureVerifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn p_yes(&self, _template: &VerificationTemplate, features: &[f64]) -> Result<f64, VerifyError> {
        self.model.predict(features)
    }
}

#[derive(Debug, Serialize)]
pub struct VerifyRequest<'a> {
    pub template: &'a [String],
    pub verbalizer: &'a Verbalizer,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub p_yes: f64,
}

/// Masked-LM verifier served by another process over newline-delimited JSON.
pub struct ExternalVerifier {
    id: String,
    client: NdjsonClient,
    verbalizer: Verbalizer,
}

impl ExternalVerifier {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Self {
        Self {
            id: format!("external:{endpoint}"),
            client: NdjsonClient::new(endpoint, timeout),
            verbalizer: Verbalizer::default(),
        }
    }
}

impl Verifier for ExternalVerifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn p_yes(&self, template: &VerificationTemplate, _features: &[f64]) -> Result<f64, VerifyError> {
        let reply: VerifyResponse = self.client.call(&VerifyRequest {
            template: &template.serialized,
            verbalizer: &self.verbalizer,
        })?;
        Ok(reply.p_yes)
    }
}

/// Features, probability and thresholded label for one candidate.
pub fn verify(
    template: &VerificationTemplate,
    features: &[f64; FEATURE_COUNT],
    verifier: &dyn Verifier,
    threshold: f64,
) -> Result<Verdict, VerifyError> {
    let p = verifier.p_yes(template, features)?;
    Verdict::from_probability(p, threshold, verifier.id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lexicon, LongestMatchTokenizer};
    use crate::wire::testing;
    use proptest::prelude::*;

    fn registry() -> LocationRegistry {
        LocationRegistry::new(vec![
            ("physical-examination".into(), "查体".into()),
            ("present-illness".into(), "现病史".into()),
        ])
        .unwrap()
    }

    fn tok() -> LongestMatchTokenizer {
        LongestMatchTokenizer::new(Lexicon::new(["眼底", "出血", "脉络膜", "查体", "咳嗽"]))
    }

    fn piece(text: &str, kws: &[&str], score: f64, reps: u32) -> EvidencePiece {
        EvidencePiece {
            sentence_text: text.into(),
            location_id: "physical-examination".into(),
            sentence_index: 0,
            matched_keywords: kws.iter().map(|s| s.to_string()).collect(),
            repetition_count: reps,
            score: Some(score),
        }
    }

    fn code() -> IcdCode {
        IcdCode::new("H31.3", "脉络膜出血").unwrap()
    }

    fn set(pieces: Vec<EvidencePiece>) -> EvidenceSet {
        let covered = pieces
            .iter()
            .flat_map(|p| p.matched_keywords.clone())
            .collect::<Vec<_>>();
        EvidenceSet {
            diagnosis_index: 0,
            code: code(),
            pieces,
            covered_keywords: covered,
        }
    }

    fn entry(sim: f64, rank: usize) -> CandidateEntry {
        CandidateEntry {
            code: code(),
            sim,
            ed: sim,
            tf: sim,
            fea: sim,
            rank,
        }
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn format_examples() {
        let f = format_evidence(&piece("眼底出血", &["出血"], 0.9, 2), &registry());
        assert_eq!(f.canonical_string, "眼底出血∥出血∥查体∥2");
        let one = format_evidence(&piece("眼底出血", &["出血"], 0.9, 1), &registry());
        assert!(one.canonical_string.ends_with("∥1"));

        let tricky = format_evidence(&piece("a∥b", &["x,y", "z∥"], 0.9, 3), &registry());
        assert_eq!(tricky.text, "a||b");
        assert_eq!(FormattedEvidence::parse(&tricky.canonical_string).unwrap(), tricky);
        assert!(FormattedEvidence::parse("a∥b∥c").is_err());
        assert!(FormattedEvidence::parse("a∥b∥c∥x").is_err());
    }

    #[test]
    fn template_layout_examples() {
        let r = registry();
        let e = set(vec![
            piece("眼底出血", &["出血"], 0.9, 1),
            piece("咳嗽", &["咳嗽"], 0.8, 1),
        ]);
        let t = build_template(&e, &code(), &TemplateCaps::default(), &r, &tok(), TemplateStyle::Plain).unwrap();
        assert_eq!(
            t.serialized,
            strings(&[
                "[CLS]",
                "眼底",
                "出血",
                "咳嗽",
                "[soft]",
                "[soft]",
                "[soft]",
                "脉络膜",
                "出血",
                "[soft]",
                "[mask]"
            ])
        );
        assert!(matches_layout(&t.serialized));
        assert_eq!(t.evidence_token_count(), 3);

        let empty = set(vec![]);
        let t = build_template(
            &empty,
            &code(),
            &TemplateCaps::default(),
            &r,
            &tok(),
            TemplateStyle::Full,
        )
        .unwrap();
        assert_eq!(
            t.serialized,
            strings(&[
                "[CLS]",
                "[soft]",
                "[soft]",
                "[soft]",
                "脉络膜",
                "出血",
                "[soft]",
                "[mask]"
            ])
        );
        assert!(matches_layout(&t.serialized));

        let caps = TemplateCaps {
            max_pieces: 1,
            ..Default::default()
        };
        let three = set(vec![
            piece("眼底出血", &["出血"], 0.9, 1),
            piece("咳嗽", &["咳嗽"], 0.8, 1),
            piece("出血", &["出血"], 0.7, 1),
        ]);
        let t = build_template(&three, &code(), &caps, &r, &tok(), TemplateStyle::Full).unwrap();
        assert_eq!(t.evidence.len(), 1);
        assert_eq!(t.evidence[0].text, "眼底出血");
    }

    #[test]
    fn template_truncation_and_errors() {
        let r = registry();
        let e = set(vec![
            piece("眼底出血", &["出血"], 0.9, 1),
            piece("咳嗽", &["咳嗽"], 0.8, 1),
        ]);
        // first piece fits exactly, second would overflow
        let caps = TemplateCaps {
            max_evidence_tokens: 2,
            max_code_tokens: 1,
            ..Default::default()
        };
        let t = build_template(&e, &code(), &caps, &r, &tok(), TemplateStyle::Plain).unwrap();
        assert_eq!(t.evidence.len(), 1);
        assert_eq!(t.code_text, ["脉络膜"]);
        assert!(matches_layout(&t.serialized));

        let blank = IcdCode {
            code: "H31.3".into(),
            description: "  ".into(),
            group: "H31".into(),
        };
        assert_eq!(
            build_template(&e, &blank, &TemplateCaps::default(), &r, &tok(), TemplateStyle::Full),
            Err(VerifyError::EmptyCode("H31.3".into()))
        );
        let other = IcdCode::new("A15.0", "肺结核").unwrap();
        assert!(matches!(
            build_template(&e, &other, &TemplateCaps::default(), &r, &tok(), TemplateStyle::Full),
            Err(VerifyError::CodeMismatch { .. })
        ));
    }

    #[test]
    fn marker_collisions_are_defused() {
        let lex = Lexicon::new(["[mask]", "[CLS]"]);
        let t = LongestMatchTokenizer::new(lex);
        assert_eq!(content_tokens("[mask]x[CLS]", &t), ["mask", "x", "CLS"]);
    }

    #[test]
    fn layout_checker_rejects_bad_shapes() {
        let bad = [
            vec!["[CLS]", "[soft]", "[soft]", "[soft]", "[soft]", "[mask]"],
            vec!["[CLS]", "a", "[soft]", "[soft]", "c", "[soft]", "[mask]"],
            vec!["[CLS]", "[CLS]", "[soft]", "[soft]", "[soft]", "c", "[soft]", "[mask]"],
            vec!["a", "[soft]", "[soft]", "[soft]", "c", "[soft]", "[mask]"],
            vec!["[CLS]", "[soft]", "[soft]", "[soft]", "c", "[mask]", "[soft]"],
            vec!["[CLS]", "[soft]", "[soft]", "[soft]", "c", "[mask]", "[soft]", "[mask]"],
        ];
        for b in bad {
            assert!(!matches_layout(&strings(&b)), "{b:?}");
        }
    }

    #[test]
    fn feature_examples() {
        let r = registry();
        let caps = TemplateCaps::default();
        let lex = SynonymLexicon::default();
        let axes = AxisKnowledge {
            etiology: vec![],
            anatomy: vec!["脉络膜".into()],
            pathology: vec!["出血".into()],
            manifestation: vec![],
        };

        let empty = set(vec![]);
        let t = build_template(&empty, &code(), &caps, &r, &tok(), TemplateStyle::Full).unwrap();
        let f = extract_features(&t, &empty, &axes, &entry(0.4, 2), &caps, &lex);
        assert_eq!(f, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.5, 0.0]);

        let full = set(vec![piece("脉络膜出血", &["脉络膜", "出血"], 1.0, 1)]);
        let t = build_template(&full, &code(), &caps, &r, &tok(), TemplateStyle::Full).unwrap();
        let f = extract_features(&t, &full, &axes, &entry(1.0, 1), &caps, &lex);
        let expected = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.1, 2f64.ln(), 1.0, 1.0, 1.0];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }

        let plain = build_template(&full, &code(), &caps, &r, &tok(), TemplateStyle::Plain).unwrap();
        assert_eq!(
            extract_features(&plain, &full, &axes, &entry(1.0, 1), &caps, &lex)[7],
            0.0
        );
    }

    #[test]
    fn synonym_matches_count_as_coverage() {
        let r = registry();
        let caps = TemplateCaps::default();
        let lex = SynonymLexicon::new([("出血".to_string(), vec!["渗血".to_string()])].into_iter().collect());
        let axes = AxisKnowledge {
            pathology: vec!["出血".into()],
            ..Default::default()
        };
        let e = set(vec![piece("渗血", &["渗血"], 0.8, 1)]);
        let t = build_template(&e, &code(), &caps, &r, &tok(), TemplateStyle::Full).unwrap();
        assert_eq!(extract_features(&t, &e, &axes, &entry(0.5, 1), &caps, &lex)[2], 1.0);
    }

    #[test]
    fn verdict_threshold() {
        assert_eq!(Verdict::from_probability(0.91, 0.5, "v").unwrap().label, 1);
        assert_eq!(Verdict::from_probability(0.5, 0.5, "v").unwrap().label, 1);
        assert_eq!(Verdict::from_probability(0.49, 0.5, "v").unwrap().label, 0);
        assert_eq!(
            Verdict::from_probability(1.2, 0.5, "v"),
            Err(VerifyError::OutOfRange(1.2))
        );
        assert!(Verdict::from_probability(f64::NAN, 0.5, "v").is_err());
    }

    #[test]
    fn verbalizer_is_a_bijection() {
        let v = Verbalizer::default();
        for y in [0u8, 1] {
            assert_eq!(v.label(v.word(y).unwrap()), Some(y));
        }
        assert_eq!(v.word(2), None);
        assert_eq!(v.label("maybe"), None);
    }

    #[test]
    fn external_verifier_protocol() {
        let addr = testing::serve(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["verbalizer"]["yes"], "yes");
            let n = v["template"].as_array().unwrap().len();
            Some(serde_json::json!({ "p_yes": if n > 8 { 0.9 } else { 0.1 } }).to_string())
        });
        let verifier = ExternalVerifier::new(addr.parse().unwrap(), Duration::from_secs(5));
        let r = registry();
        let e = set(vec![piece("眼底出血", &["出血"], 0.9, 1)]);
        let t = build_template(&e, &code(), &TemplateCaps::default(), &r, &tok(), TemplateStyle::Full).unwrap();
        let v = verify(&t, &[0.0; FEATURE_COUNT], &verifier, 0.5).unwrap();
        assert_eq!(v.label, 1);
        assert!(v.verifier_id.starts_with("external:"));

        let bad = testing::serve(|_| Some(r#"{"p_yes": -0.1}"#.into()));
        let verifier = ExternalVerifier::new(bad.parse().unwrap(), Duration::from_secs(5));
        assert_eq!(
            verify(&t, &[0.0; FEATURE_COUNT], &verifier, 0.5),
            Err(VerifyError::OutOfRange(-0.1))
        );
    }

    proptest! {
        #[test]
        fn formatted_evidence_round_trips(
            text in "[a-z∥,|出血 ]{0,12}",
            kws in proptest::collection::vec("[a-z∥,出]{1,4}", 0..4),
            origin in "[a-z∥查体]{1,6}",
            reps in 1u32..1000,
        ) {
            let f = FormattedEvidence::new(&text, &kws, &origin, reps);
            prop_assert_eq!(f.canonical_string.matches(FIELD_SEPARATOR).count(), 3);
            prop_assert_eq!(FormattedEvidence::parse(&f.canonical_string).unwrap(), f);
        }

        #[test]
        fn built_templates_keep_layout(
            texts in proptest::collection::vec("[a-z出血眼底 \\[\\]]{1,10}", 0..15),
            q in 0usize..12,
            p in 1usize..6,
            r_cap in 0usize..40,
        ) {
            let pieces = texts.iter().map(|t| piece(t, &["出血"], 0.9, 1)).collect();
            let e = set(pieces);
            let caps = TemplateCaps { max_pieces: q, max_code_tokens: p, max_evidence_tokens: r_cap };
            let t = build_template(&e, &code(), &caps, &registry(), &tok(), TemplateStyle::Full).unwrap();
            prop_assert!(matches_layout(&t.serialized));
            prop_assert!(t.evidence.len() <= q);
            prop_assert!(t.evidence_token_count() <= r_cap);
            prop_assert!(t.code_text.len() <= p);
        }
    }
}
