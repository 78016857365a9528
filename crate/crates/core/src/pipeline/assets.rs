use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::candidates::CandidateIndex;
use crate::config::AssetPaths;
use crate::corpus::{Lexicon, LongestMatchTokenizer, Tokenizer};
use crate::embedding::EmbeddingTable;
use crate::knowledge::{
    load_axis_table, load_code_table_file, AxisLexicons, AxisTable, CodeTable, LocationRegistry, PriorLocationTable,
    SynonymLexicon,
};
use crate::verify::FeatureVerifierModel;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("asset `{0}` is required")]
    Missing(&'static str),
    #[error("loading {what} from {path}: {message}")]
    Load {
        what: &'static str,
        path: String,
        message: String,
    },
}

/// Loaded knowledge plus the precomputed candidate index. Immutable and shareable.
pub struct Assets {
    pub codes: CodeTable,
    pub axis_table: Option<AxisTable>,
    pub axis_lexicons: Option<AxisLexicons>,
    pub synonyms: SynonymLexicon,
    pub registry: LocationRegistry,
    pub prior_table: PriorLocationTable,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub embeddings: Arc<EmbeddingTable>,
    pub index: CandidateIndex,
    pub verifier_model: Option<FeatureVerifierModel>,
}

/// In-memory inputs for [`Assets::new`].
pub struct AssetParts {
    pub codes: CodeTable,
    pub axis_table: Option<AxisTable>,
    pub axis_lexicons: Option<AxisLexicons>,
    pub synonyms: SynonymLexicon,
    pub registry: LocationRegistry,
    pub prior_table: PriorLocationTable,
    pub lexicon: Lexicon,
    pub embeddings: EmbeddingTable,
    pub verifier_model: Option<FeatureVerifierModel>,
}

fn load<T, E: std::fmt::Display>(
    what: &'static str,
    path: &Path,
    f: impl FnOnce(&Path) -> Result<T, E>,
) -> Result<T, AssetError> {
    f(path).map_err(|e| AssetError::Load {
        what,
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl Assets {
    pub fn new(parts: AssetParts) -> Self {
        let tokenizer: Arc<dyn Tokenizer> = Arc::new(LongestMatchTokenizer::new(parts.lexicon));
        let index = CandidateIndex::build(&parts.codes, tokenizer.as_ref(), &parts.embeddings);
        Self {
            codes: parts.codes,
            axis_table: parts.axis_table,
            axis_lexicons: parts.axis_lexicons,
            synonyms: parts.synonyms,
            registry: parts.registry,
            prior_table: parts.prior_table,
            tokenizer,
            embeddings: Arc::new(parts.embeddings),
            index,
            verifier_model: parts.verifier_model,
        }
    }

    /// Loads every configured file. Only the code table is mandatory.
    pub fn load(paths: &AssetPaths) -> Result<Self, AssetError> {
        let codes_path = paths.codes.as_deref().ok_or(AssetError::Missing("codes"))?;
        let codes = load("code table", codes_path, load_code_table_file)?;
        let registry = match &paths.locations {
            Some(p) => load("locations", p, LocationRegistry::load)?,
            None => LocationRegistry::default_registry(),
        };
        let prior_table = match &paths.prior_table {
            Some(p) => load("prior table", p, |p| PriorLocationTable::load(p, &registry))?,
            None => load("prior table", Path::new("<built-in>"), |_| {
                PriorLocationTable::illustrative(&registry)
            })?,
        };
        let axis_table = paths
            .axes
            .as_deref()
            .map(|p| load("axis table", p, load_axis_table))
            .transpose()?;
        let axis_lexicons = paths
            .axis_lexicons
            .as_deref()
            .map(|p| load("axis lexicons", p, AxisLexicons::load))
            .transpose()?;
        let synonyms = match &paths.synonyms {
            Some(p) => load("synonyms", p, SynonymLexicon::load)?,
            None => SynonymLexicon::default(),
        };
        let lexicon = match &paths.lexicon {
            Some(p) => load("lexicon", p, Lexicon::from_path)?,
            None => Lexicon::default(),
        };
        let embeddings = match &paths.embeddings {
            Some(p) => load("embeddings", p, EmbeddingTable::load)?,
            None => EmbeddingTable::new(1),
        };
        let verifier_model = paths
            .verifier_model
            .as_deref()
            .map(|p| load("verifier model", p, FeatureVerifierModel::load))
            .transpose()?;
        Ok(Self::new(AssetParts {
            codes,
            axis_table,
            axis_lexicons,
            synonyms,
            registry,
            prior_table,
            lexicon,
            embeddings,
            verifier_model,
        }))
    }
}
