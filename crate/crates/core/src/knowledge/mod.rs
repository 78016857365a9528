//! ICD code table, four-axis knowledge, synonyms, and where evidence lives in a record.

mod locations;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Lexicon, LongestMatchTokenizer, Tokenizer};

/// Reserved location for sections whose id is not in the registry.
pub const OTHER_LOCATION: &str = "other";

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("line {line}: `{code}` is not a valid ICD code")]
    Pattern { line: u64, code: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate code `{0}`")]
    Duplicate(String),
    #[error("unparseable code `{0}`: no axis keywords")]
    Unparseable(String),
    #[error("no axis table or axis lexicons supplied")]
    NoAxisSource,
    #[error("prior table row {row}: unknown location `{location}`")]
    UnknownLocation { row: usize, location: String },
    #[error("prior table row {row}: bad group range {start}-{end}")]
    BadRange { row: usize, start: String, end: String },
    #[error("invalid location registry: {0}")]
    Registry(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

fn file_error(path: &Path, message: impl fmt::Display) -> KnowledgeError {
    KnowledgeError::File {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, KnowledgeError> {
    let bytes = fs::read(path).map_err(|e| file_error(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| file_error(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IcdCode {
    pub code: String,
    pub description: String,
    pub group: String,
}

impl IcdCode {
    pub fn new(code: &str, description: &str) -> Option<Self> {
        let code = code.trim();
        if !is_valid_code(code) {
            return None;
        }
        Some(Self {
            code: code.to_string(),
            description: description.trim().to_string(),
            group: code[..3].to_string(),
        })
    }
}

/// Letter, two digits, then optionally `.` and one to four alphanumerics.
pub fn is_valid_code(code: &str) -> bool {
    let b = code.as_bytes();
    if b.len() < 3 || !b[0].is_ascii_uppercase() || !b[1].is_ascii_digit() || !b[2].is_ascii_digit() {
        return false;
    }
    match &b[3..] {
        [] => true,
        [b'.', rest @ ..] => (1..=4).contains(&rest.len()) && rest.iter().all(u8::is_ascii_alphanumeric),
        _ => false,
    }
}

/// The set of known codes, in file order.
#[derive(Debug, Clone, Default)]
pub struct CodeTable {
    codes: Vec<IcdCode>,
    index: HashMap<String, usize>,
}

impl CodeTable {
    pub fn from_codes(codes: Vec<IcdCode>) -> Result<Self, KnowledgeError> {
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if index.insert(c.code.clone(), i).is_some() {
                return Err(KnowledgeError::Duplicate(c.code.clone()));
            }
        }
        Ok(Self { codes, index })
    }

    pub fn get(&self, code: &str) -> Option<&IcdCode> {
        self.index.get(code).map(|&i| &self.codes[i])
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    pub fn codes(&self) -> &[IcdCode] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Reads a delimited code table with `code` and `description` columns.
///
/// Tab-delimited when the header line contains a tab, comma-delimited otherwise.
pub fn load_code_table(text: &str) -> Result<CodeTable, KnowledgeError> {
    let Some(header) = text.lines().next() else {
        return Ok(CodeTable::default());
    };
    if header.trim().is_empty() {
        return Ok(CodeTable::default());
    }
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| KnowledgeError::Row {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(code_col), Some(desc_col)) = (col("code"), col("description")) else {
        return Err(KnowledgeError::Row {
            line: 1,
            message: "header must name `code` and `description` columns".into(),
        });
    };

    let mut codes = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| KnowledgeError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let code = row.get(code_col).unwrap_or("").trim();
        let description = row.get(desc_col).unwrap_or("");
        let icd = IcdCode::new(code, description).ok_or_else(|| KnowledgeError::Pattern {
            line,
            code: code.to_string(),
        })?;
        if !seen.insert(icd.code.clone()) {
            return Err(KnowledgeError::Duplicate(icd.code));
        }
        codes.push(icd);
    }
    CodeTable::from_codes(codes)
}

pub fn load_code_table_file(path: &Path) -> Result<CodeTable, KnowledgeError> {
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    load_code_table(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Etiology,
    Anatomy,
    Pathology,
    Manifestation,
}

impl Axis {
    /// Field order of [`AxisKnowledge`].
    pub const ALL: [Axis; 4] = [Axis::Etiology, Axis::Anatomy, Axis::Pathology, Axis::Manifestation];
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisKnowledge {
    #[serde(default)]
    pub etiology: Vec<String>,
    #[serde(default)]
    pub anatomy: Vec<String>,
    #[serde(default)]
    pub pathology: Vec<String>,
    #[serde(default)]
    pub manifestation: Vec<String>,
}

impl AxisKnowledge {
    pub fn axis(&self, axis: Axis) -> &[String] {
        match axis {
            Axis::Etiology => &self.etiology,
            Axis::Anatomy => &self.anatomy,
            Axis::Pathology => &self.pathology,
            Axis::Manifestation => &self.manifestation,
        }
    }

    fn axis_mut(&mut self, axis: Axis) -> &mut Vec<String> {
        match axis {
            Axis::Etiology => &mut self.etiology,
            Axis::Anatomy => &mut self.anatomy,
            Axis::Pathology => &mut self.pathology,
            Axis::Manifestation => &mut self.manifestation,
        }
    }

    pub fn is_empty(&self) -> bool {
        Axis::ALL.iter().all(|&a| self.axis(a).is_empty())
    }

    /// All keywords, deduplicated, in axis field order.
    pub fn keywords(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        Axis::ALL
            .iter()
            .flat_map(|&a| self.axis(a))
            .filter(|k| seen.insert(k.as_str()))
            .cloned()
            .collect()
    }

    pub fn nonempty_axes(&self) -> impl Iterator<Item = Axis> + '_ {
        Axis::ALL.into_iter().filter(|&a| !self.axis(a).is_empty())
    }
}

/// Curated code → axis decomposition.
pub type AxisTable = BTreeMap<String, AxisKnowledge>;

pub fn load_axis_table(path: &Path) -> Result<AxisTable, KnowledgeError> {
    read_json(path)
}

/// Per-axis keyword lexicons for decomposing descriptions without a curated entry.
#[derive(Debug, Clone)]
pub struct AxisLexicons {
    lexicons: HashMap<Axis, HashSet<String>>,
    priority: Vec<Axis>,
    tokenizer: LongestMatchTokenizer,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AxisLexiconsFile {
    #[serde(default)]
    pub etiology: Vec<String>,
    #[serde(default)]
    pub anatomy: Vec<String>,
    #[serde(default)]
    pub pathology: Vec<String>,
    #[serde(default)]
    pub manifestation: Vec<String>,
    /// Axis order for words listed under several axes.
    #[serde(default)]
    pub priority: Option<Vec<Axis>>,
}

impl AxisLexicons {
    pub const DEFAULT_PRIORITY: [Axis; 4] = [Axis::Anatomy, Axis::Etiology, Axis::Pathology, Axis::Manifestation];

    pub fn new(file: AxisLexiconsFile) -> Self {
        let mut lexicons = HashMap::new();
        let mut all = Lexicon::default();
        for (axis, words) in [
            (Axis::Etiology, file.etiology),
            (Axis::Anatomy, file.anatomy),
            (Axis::Pathology, file.pathology),
            (Axis::Manifestation, file.manifestation),
        ] {
            for w in &words {
                all.insert(w.clone());
            }
            lexicons.insert(axis, words.into_iter().collect());
        }
        Self {
            lexicons,
            priority: file.priority.unwrap_or_else(|| Self::DEFAULT_PRIORITY.to_vec()),
            tokenizer: LongestMatchTokenizer::new(all),
        }
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        Ok(Self::new(read_json(path)?))
    }

    fn axis_of(&self, token: &str) -> Option<Axis> {
        self.priority
            .iter()
            .copied()
            .find(|a| self.lexicons.get(a).is_some_and(|l| l.contains(token)))
    }
}

/// Decomposes a code into axis keywords: curated entry first, lexicon fallback second.
pub fn parse_axes(
    code: &IcdCode,
    axis_table: Option<&AxisTable>,
    axis_lexicons: Option<&AxisLexicons>,
) -> Result<AxisKnowledge, KnowledgeError> {
    if axis_table.is_none() && axis_lexicons.is_none() {
        return Err(KnowledgeError::NoAxisSource);
    }
    if let Some(entry) = axis_table.and_then(|t| t.get(&code.code)) {
        if entry.is_empty() {
            return Err(KnowledgeError::Unparseable(code.code.clone()));
        }
        return Ok(entry.clone());
    }
    let mut axes = AxisKnowledge::default();
    if let Some(lex) = axis_lexicons {
        for token in lex.tokenizer.tokenize(&code.description) {
            if let Some(axis) = lex.axis_of(&token) {
                let list = axes.axis_mut(axis);
                if !list.contains(&token) {
                    list.push(token);
                }
            }
        }
    }
    if axes.is_empty() {
        return Err(KnowledgeError::Unparseable(code.code.clone()));
    }
    Ok(axes)
}

/// keyword → synonyms. Self-mappings are removed on construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, Vec<String>>", into = "BTreeMap<String, Vec<String>>")]
pub struct SynonymLexicon {
    map: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Self {
        let map = map
            .into_iter()
            .map(|(k, mut syns)| {
                syns.retain(|s| s != &k && !s.is_empty());
                (k, syns)
            })
            .filter(|(_, syns)| !syns.is_empty())
            .collect();
        Self { map }
    }

    pub fn synonyms(&self, keyword: &str) -> &[String] {
        self.map.get(keyword).map_or(&[], Vec::as_slice)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        read_json(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.map.iter()
    }
}

impl From<BTreeMap<String, Vec<String>>> for SynonymLexicon {
    fn from(map: BTreeMap<String, Vec<String>>) -> Self {
        Self::new(map)
    }
}

impl From<SynonymLexicon> for BTreeMap<String, Vec<String>> {
    fn from(lex: SynonymLexicon) -> Self {
        lex.map
    }
}

/// `keywords` followed by their synonyms, without duplicates.
pub fn expand_synonyms(keywords: &[String], lex: &SynonymLexicon) -> Vec<String> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::new();
    for k in keywords.iter().chain(keywords.iter().flat_map(|k| lex.synonyms(k))) {
        if seen.insert(k.as_str()) {
            out.push(k.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationRegistry {
    locations: Vec<Location>,
    index: HashMap<String, usize>,
}

impl LocationRegistry {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self, KnowledgeError> {
        Self::from_locations(entries.into_iter().map(|(id, name)| Location { id, name }).collect())
    }

    pub fn from_locations(locations: Vec<Location>) -> Result<Self, KnowledgeError> {
        if locations.is_empty() {
            return Err(KnowledgeError::Registry("registry is empty".into()));
        }
        let mut index = HashMap::new();
        for (i, l) in locations.iter().enumerate() {
            if l.id == OTHER_LOCATION {
                return Err(KnowledgeError::Registry(format!("`{OTHER_LOCATION}` is reserved")));
            }
            if index.insert(l.id.clone(), i).is_some() {
                return Err(KnowledgeError::Registry(format!("duplicate id `{}`", l.id)));
            }
        }
        Ok(Self { locations, index })
    }

    /// The 88 canonical locations.
    pub fn default_registry() -> Self {
        Self::new(
            locations::DEFAULT_LOCATIONS
                .iter()
                .map(|(id, name)| (id.to_string(), name.to_string()))
                .collect(),
        )
        .expect("default registry is valid")
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        Self::from_locations(read_json(path)?)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Display name, falling back to the id itself (used for `other`).
    pub fn display_name<'a>(&'a self, id: &'a str) -> &'a str {
        self.index.get(id).map_or(id, |&i| &self.locations[i].name)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.locations.iter().map(|l| l.id.as_str())
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Row of the prior table file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorRow {
    pub group_start: String,
    pub group_end: String,
    pub locations: Vec<String>,
}

/// Three-digit group → locations where supporting evidence tends to appear.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriorLocationTable {
    groups: HashMap<String, Vec<String>>,
}

impl PriorLocationTable {
    /// Compiles group ranges to per-group entries. Later rows override earlier ones.
    pub fn compile(rows: &[PriorRow], registry: &LocationRegistry) -> Result<Self, KnowledgeError> {
        let mut groups = HashMap::new();
        for (row_no, row) in rows.iter().enumerate() {
            for loc in &row.locations {
                if !registry.contains(loc) {
                    return Err(KnowledgeError::UnknownLocation {
                        row: row_no,
                        location: loc.clone(),
                    });
                }
            }
            let bad = || KnowledgeError::BadRange {
                row: row_no,
                start: row.group_start.clone(),
                end: row.group_end.clone(),
            };
            let start = group_ordinal(&row.group_start).ok_or_else(bad)?;
            let end = group_ordinal(&row.group_end).ok_or_else(bad)?;
            if start > end || row.locations.is_empty() {
                return Err(bad());
            }
            for ordinal in start..=end {
                groups.insert(group_name(ordinal), row.locations.clone());
            }
        }
        Ok(Self { groups })
    }

    /// The published eight-row fragment. Not a complete table.
    pub fn illustrative(registry: &LocationRegistry) -> Result<Self, KnowledgeError> {
        Self::compile(&illustrative_rows(), registry)
    }

    pub fn load(path: &Path, registry: &LocationRegistry) -> Result<Self, KnowledgeError> {
        let rows: Vec<PriorRow> = read_json(path)?;
        Self::compile(&rows, registry)
    }

    pub fn get(&self, group: &str) -> Option<&[String]> {
        self.groups.get(group).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

pub fn illustrative_rows() -> Vec<PriorRow> {
    locations::ILLUSTRATIVE_PRIOR_ROWS
        .iter()
        .map(|(s, e, locs)| PriorRow {
            group_start: s.to_string(),
            group_end: e.to_string(),
            locations: locs.iter().map(|l| l.to_string()).collect(),
        })
        .collect()
}

fn group_ordinal(group: &str) -> Option<u32> {
    let b = group.as_bytes();
    if b.len() != 3 || !b[0].is_ascii_uppercase() || !b[1].is_ascii_digit() || !b[2].is_ascii_digit() {
        return None;
    }
    Some(u32::from(b[0] - b'A') * 100 + u32::from(b[1] - b'0') * 10 + u32::from(b[2] - b'0'))
}

fn group_name(ordinal: u32) -> String {
    let letter = char::from(b'A' + (ordinal / 100) as u8);
    format!("{letter}{:02}", ordinal % 100)
}

/// Where to look for evidence of `code`: the table row for its group, or the whole registry.
pub fn locations_for(code: &IcdCode, table: &PriorLocationTable, registry: &LocationRegistry) -> Vec<String> {
    match table.get(&code.group) {
        Some(row) => row.to_vec(),
        None => registry.ids().map(str::to_string).collect(),
    }
}
