//! Run configuration: asset paths, stage parameters and ablation switches.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{RankMode, Weights};
use crate::evidence::EvidenceConfig;
use crate::verify::{TemplateCaps, TemplateStyle};
use crate::wire::Endpoint;

/// Location used when retrieval is restricted to the discharge summary.
pub const SUMMARY_LOCATION: &str = "discharge-summary";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// Knowledge files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetPaths {
    /// Code table (`code`, `description` columns).
    pub codes: Option<PathBuf>,
    /// Curated code → axis keywords.
    pub axes: Option<PathBuf>,
    /// Per-axis word lists for codes without a curated entry.
    pub axis_lexicons: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    /// Location registry; the built-in registry when absent.
    pub locations: Option<PathBuf>,
    /// Group-range → locations rows; the published fragment when absent.
    pub prior_table: Option<PathBuf>,
    /// Tokenizer word list, one word per line.
    pub lexicon: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub verifier_model: Option<PathBuf>,
}

impl AssetPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.codes,
            &mut self.axes,
            &mut self.axis_lexicons,
            &mut self.synonyms,
            &mut self.locations,
            &mut self.prior_table,
            &mut self.lexicon,
            &mut self.embeddings,
            &mut self.verifier_model,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Backend {
    #[default]
    Builtin,
    External {
        endpoint: Endpoint,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl Backend {
    pub fn timeout(&self) -> Option<Duration> {
        match self {
            Self::Builtin => None,
            Self::External { timeout_ms, .. } => Some(Duration::from_millis(*timeout_ms)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateSection {
    pub n: usize,
    pub mode: RankMode,
    pub weights: Weights,
}

impl Default for CandidateSection {
    fn default() -> Self {
        Self {
            n: 50,
            mode: RankMode::Weighted,
            weights: Weights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceSection {
    /// Reliability threshold, inclusive.
    pub threshold: f64,
    /// Near-duplicate radius in cosine distance.
    pub tau: f64,
    /// Evidence pieces per set and per template.
    pub max_pieces: usize,
    /// Keyword-coverage share of the built-in scorer.
    pub alpha: f64,
    pub scorer: Backend,
}

impl Default for EvidenceSection {
    fn default() -> Self {
        Self {
            threshold: 0.65,
            tau: 0.15,
            max_pieces: 10,
            alpha: 0.5,
            scorer: Backend::Builtin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub max_code_tokens: usize,
    pub max_evidence_tokens: usize,
    /// Decision threshold on p_yes, inclusive.
    pub threshold: f64,
    pub verifier: Backend,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            max_code_tokens: 32,
            max_evidence_tokens: 512,
            threshold: 0.5,
            verifier: Backend::Builtin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSection {
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub seed: u64,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        Self { workers: 0, seed: 17 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Keep every retrieved piece regardless of its reliability score.
    pub no_evidence_filter: bool,
    /// Retrieve only from the discharge summary.
    pub summary_only: bool,
    /// Render evidence as bare sentence text.
    pub plain_template: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub assets: AssetPaths,
    pub candidates: CandidateSection,
    pub evidence: EvidenceSection,
    pub verify: VerifySection,
    pub runtime: RuntimeSection,
    pub ablation: Ablations,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_err = |message: String| ConfigError::File {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let mut config: Config = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.assets.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |field, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} is outside [0, 1]")))
            }
        };
        if self.candidates.n == 0 {
            return Err(invalid("candidates.n", "must be at least 1"));
        }
        self.candidates
            .weights
            .validate()
            .map_err(|e| invalid("candidates.weights", e.to_string()))?;
        unit("evidence.threshold", self.evidence.threshold)?;
        unit("evidence.tau", self.evidence.tau)?;
        unit("evidence.alpha", self.evidence.alpha)?;
        if self.evidence.max_pieces == 0 {
            return Err(invalid("evidence.max_pieces", "must be at least 1"));
        }
        unit("verify.threshold", self.verify.threshold)?;
        if self.verify.max_code_tokens == 0 {
            return Err(invalid("verify.max_code_tokens", "must be at least 1"));
        }
        Ok(())
    }

    pub fn evidence_config(&self) -> EvidenceConfig {
        EvidenceConfig {
            threshold: self.evidence.threshold,
            tau: self.evidence.tau,
            max_pieces: self.evidence.max_pieces,
            filter: !self.ablation.no_evidence_filter,
            restrict_locations: self.ablation.summary_only.then(|| vec![SUMMARY_LOCATION.to_string()]),
        }
    }

    pub fn template_caps(&self) -> TemplateCaps {
        TemplateCaps {
            max_pieces: self.evidence.max_pieces,
            max_code_tokens: self.verify.max_code_tokens,
            max_evidence_tokens: self.verify.max_evidence_tokens,
        }
    }

    pub fn template_style(&self) -> TemplateStyle {
        if self.ablation.plain_template {
            TemplateStyle::Plain
        } else {
            TemplateStyle::Full
        }
    }
}
