//! Sectioned EMR documents: ingestion, sentence splitting and tokenization.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{LocationRegistry, OTHER_LOCATION};

/// Characters that end a sentence. The terminator stays with the sentence it closes.
pub const SENTENCE_TERMINATORS: [char; 7] = ['。', '！', '？', '；', '!', '?', ';'];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("duplicate location_id `{0}`")]
    DuplicateLocation(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Record {
        path: String,
        #[source]
        source: Box<CorpusError>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    #[serde(skip)]
    tokens: OnceLock<Vec<String>>,
}

impl Sentence {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        Self {
            index,
            text: text.into(),
            tokens: OnceLock::new(),
        }
    }

    /// Tokens of this sentence, computed on first use with `tokenizer`.
    ///
    /// The cache assumes a single active tokenizer per document, which holds for
    /// every pipeline run.
    pub fn tokens(&self, tokenizer: &dyn Tokenizer) -> &[String] {
        self.tokens.get_or_init(|| tokenizer.tokenize(&self.text))
    }
}

impl Clone for Sentence {
    fn clone(&self) -> Self {
        Sentence::new(self.index, self.text.clone())
    }
}

impl PartialEq for Sentence {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index && self.text == other.text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub location_id: String,
    pub title: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmrDocument {
    pub record_id: String,
    pub sections: Vec<Section>,
    pub diagnoses: Vec<Diagnosis>,
    /// Gold code per diagnosis index, present on evaluation corpora.
    #[serde(default)]
    pub gold_codes: BTreeMap<usize, String>,
}

impl EmrDocument {
    pub fn section(&self, location_id: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.location_id == location_id)
    }

    pub fn gold_code(&self, diagnosis_index: usize) -> Option<&str> {
        self.gold_codes.get(&diagnosis_index).map(String::as_str)
    }
}

/// On-disk record layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub record_id: String,
    pub sections: Vec<RawSection>,
    pub diagnoses: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gold_codes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSection {
    pub location_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub document: EmrDocument,
    /// Sections whose location_id was not in the registry and went to `other`.
    pub unknown_locations: usize,
}

/// Splits text into sentences at [`SENTENCE_TERMINATORS`] and newlines.
///
/// Sentence text is whitespace-trimmed. Fragments holding nothing besides
/// terminators and whitespace are dropped.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, out: &mut Vec<Sentence>| {
        let trimmed = current.trim();
        let has_content = trimmed
            .chars()
            .any(|c| !c.is_whitespace() && !SENTENCE_TERMINATORS.contains(&c));
        if has_content {
            let index = out.len();
            out.push(Sentence::new(index, trimmed));
        }
        current.clear();
    };
    for ch in text.chars() {
        if ch == '\n' {
            flush(&mut current, &mut out);
            continue;
        }
        current.push(ch);
        if SENTENCE_TERMINATORS.contains(&ch) {
            flush(&mut current, &mut out);
        }
    }
    flush(&mut current, &mut out);
    out
}

/// Pluggable word segmentation.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Word list used by [`LongestMatchTokenizer`].
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    words: HashSet<String>,
    max_chars: usize,
}

impl Lexicon {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lex = Lexicon::default();
        for w in words {
            lex.insert(w.into());
        }
        lex
    }

    pub fn insert(&mut self, word: String) {
        let word = word.trim().to_string();
        if word.is_empty() {
            return;
        }
        self.max_chars = self.max_chars.max(word.chars().count());
        self.words.insert(word);
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Reads one word per line.
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Lexicon::new(text.lines()))
    }

    /// Sorted word list, for writing back to disk.
    pub fn sorted_words(&self) -> Vec<&str> {
        let mut words: Vec<&str> = self.words.iter().map(String::as_str).collect();
        words.sort_unstable();
        words
    }
}

/// Greedy left-to-right longest match against a lexicon.
///
/// Characters not covered by a lexicon word become single-character tokens,
/// except runs of ASCII alphanumerics which stay whole. Whitespace is dropped.
#[derive(Debug, Clone, Default)]
pub struct LongestMatchTokenizer {
    lexicon: Lexicon,
}

impl LongestMatchTokenizer {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl Tokenizer for LongestMatchTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut tokens = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let mut best = 0;
            let limit = self.lexicon.max_chars.min(chars.len() - i);
            for len in (1..=limit).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if self.lexicon.contains(&buf) {
                    best = len;
                    break;
                }
            }
            let ascii_run = chars[i..].iter().take_while(|c| c.is_ascii_alphanumeric()).count();
            let take = if ascii_run > best { ascii_run } else { best.max(1) };
            tokens.push(chars[i..i + take].iter().collect());
            i += take;
        }
        tokens
    }
}

/// Tokenizes with the default longest-match algorithm.
pub fn tokenize(text: &str, lexicon: &Lexicon) -> Vec<String> {
    LongestMatchTokenizer::new(lexicon.clone()).tokenize(text)
}

/// Parses and validates one record.
pub fn ingest_document(raw: &[u8], registry: &LocationRegistry) -> Result<Ingested, CorpusError> {
    let record: RawRecord = serde_json::from_slice(raw).map_err(|e| parse_error(raw, &e))?;
    ingest_record(record, registry)
}

pub fn ingest_record(record: RawRecord, registry: &LocationRegistry) -> Result<Ingested, CorpusError> {
    if record.record_id.trim().is_empty() {
        return Err(CorpusError::Invalid("record_id is empty".into()));
    }
    let mut seen = HashSet::new();
    for s in &record.sections {
        if !seen.insert(s.location_id.as_str()) {
            return Err(CorpusError::DuplicateLocation(s.location_id.clone()));
        }
    }

    let mut unknown_locations = 0;
    let mut sections: Vec<Section> = Vec::with_capacity(record.sections.len());
    for raw in record.sections {
        let location_id = if registry.contains(&raw.location_id) || raw.location_id == OTHER_LOCATION {
            raw.location_id
        } else {
            unknown_locations += 1;
            OTHER_LOCATION.to_string()
        };
        let sentences = split_sentences(&raw.text);
        // all unknown sections share the single `other` section
        if let Some(existing) = sections.iter_mut().find(|s| s.location_id == location_id) {
            let base = existing.sentences.len();
            existing
                .sentences
                .extend(sentences.into_iter().map(|s| Sentence::new(base + s.index, s.text)));
        } else {
            sections.push(Section {
                location_id,
                title: raw.title,
                sentences,
            });
        }
    }

    let mut diagnoses = Vec::with_capacity(record.diagnoses.len());
    for (index, text) in record.diagnoses.into_iter().enumerate() {
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(CorpusError::Invalid(format!("diagnosis {index} is empty")));
        }
        diagnoses.push(Diagnosis { index, text });
    }

    let mut gold_codes = BTreeMap::new();
    for (key, code) in record.gold_codes {
        let index: usize = key
            .parse()
            .map_err(|_| CorpusError::Invalid(format!("gold_codes key `{key}` is not an index")))?;
        if index >= diagnoses.len() {
            return Err(CorpusError::Invalid(format!("gold_codes key {index} has no diagnosis")));
        }
        gold_codes.insert(index, code);
    }

    Ok(Ingested {
        document: EmrDocument {
            record_id: record.record_id,
            sections,
            diagnoses,
            gold_codes,
        },
        unknown_locations,
    })
}

fn parse_error(raw: &[u8], err: &serde_json::Error) -> CorpusError {
    // serde_json reports 1-based line and column (in bytes)
    let mut offset = 0;
    let line = err.line();
    if line > 0 {
        let mut current = 1;
        for (i, b) in raw.iter().enumerate() {
            if current == line {
                offset = i;
                break;
            }
            if *b == b'\n' {
                current += 1;
                offset = i + 1;
            }
        }
        offset += err.column().saturating_sub(1);
    }
    CorpusError::Parse {
        offset: offset.min(raw.len()),
        message: err.to_string(),
    }
}

/// One corpus entry: where it came from and whether it ingested.
#[derive(Debug)]
pub struct CorpusEntry {
    /// File path, or `path:line` for newline-delimited corpora.
    pub source: String,
    pub outcome: Result<Ingested, CorpusError>,
}

/// Reads every record of a corpus, keeping per-record failures.
///
/// A corpus is a directory of `.json` records, read in file-name order, or a
/// newline-delimited file. Only an unreadable corpus path is an error.
pub fn read_corpus(path: &Path, registry: &LocationRegistry) -> Result<Vec<CorpusEntry>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for file in files {
            let outcome = fs::read(&file)
                .map_err(|source| CorpusError::Io {
                    path: file.display().to_string(),
                    source,
                })
                .and_then(|bytes| ingest_document(&bytes, registry));
            out.push(CorpusEntry {
                source: file.display().to_string(),
                outcome,
            });
        }
    } else {
        let text = fs::read(path).map_err(io_err)?;
        for (n, line) in text.split(|b| *b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            out.push(CorpusEntry {
                source: format!("{}:{}", path.display(), n + 1),
                outcome: ingest_document(line, registry),
            });
        }
    }
    Ok(out)
}

/// Loads a corpus, failing on the first bad record.
pub fn load_corpus(path: &Path, registry: &LocationRegistry) -> Result<Vec<Ingested>, CorpusError> {
    read_corpus(path, registry)?
        .into_iter()
        .map(|entry| {
            entry.outcome.map_err(|e| CorpusError::Record {
                path: entry.source,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &[Sentence]) -> Vec<&str> {
        s.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn split_examples() {
        assert!(split_sentences("").is_empty());
        assert_eq!(texts(&split_sentences("a。b！")), ["a。", "b！"]);
        assert_eq!(texts(&split_sentences("a;;b")), ["a;", "b"]);
        assert_eq!(texts(&split_sentences("发热3天。咳嗽。")), ["发热3天。", "咳嗽。"]);
    }

    #[test]
    fn split_newlines_and_whitespace() {
        let s = split_sentences("  主诉：发热\n\n咳嗽？ 无痰 ");
        assert_eq!(texts(&s), ["主诉：发热", "咳嗽？", "无痰"]);
        assert_eq!(s.iter().map(|s| s.index).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("abc", &Lexicon::default()), ["abc"]);
        let lex = Lexicon::new(["脉络膜", "出血"]);
        assert_eq!(tokenize("脉络膜出血", &lex), ["脉络膜", "出血"]);
        assert_eq!(
            tokenize("脉络膜出血", &Lexicon::default()),
            ["脉", "络", "膜", "出", "血"]
        );
    }

    #[test]
    fn tokenize_prefers_longest_and_keeps_ascii_runs() {
        let lex = Lexicon::new(["肺", "肺结核", "CT"]);
        assert_eq!(tokenize("肺结核 CT2 复查", &lex), ["肺结核", "CT2", "复", "查"]);
    }

    fn registry() -> LocationRegistry {
        LocationRegistry::new(vec![
            ("present-illness".into(), "现病史".into()),
            ("discharge-summary".into(), "出院小结".into()),
        ])
        .unwrap()
    }

    #[test]
    fn ingest_two_sections() {
        let raw = r#"{"record_id":"r1","sections":[
            {"location_id":"present-illness","title":"现病史","text":"发热3天。咳嗽。"},
            {"location_id":"discharge-summary","title":"出院小结","text":"好转出院"}],
            "diagnoses":["肺炎"],"gold_codes":{"0":"J18.900"}}"#;
        let got = ingest_document(raw.as_bytes(), &registry()).unwrap();
        assert_eq!(got.unknown_locations, 0);
        let doc = got.document;
        assert_eq!(doc.sections.len(), 2);
        assert_eq!(doc.sections[0].sentences.len(), 2);
        assert_eq!(doc.gold_code(0), Some("J18.900"));
    }

    #[test]
    fn ingest_zero_diagnoses() {
        let raw = r#"{"record_id":"r","sections":[],"diagnoses":[]}"#;
        let doc = ingest_document(raw.as_bytes(), &registry()).unwrap().document;
        assert!(doc.diagnoses.is_empty());
    }

    #[test]
    fn ingest_maps_unknown_locations_to_other() {
        let raw = r#"{"record_id":"r","sections":[
            {"location_id":"nursing-notes","title":"a","text":"x。"},
            {"location_id":"mystery","title":"b","text":"y。z"}],"diagnoses":[]}"#;
        let got = ingest_document(raw.as_bytes(), &registry()).unwrap();
        assert_eq!(got.unknown_locations, 2);
        let other = got.document.section(OTHER_LOCATION).unwrap();
        assert_eq!(texts(&other.sentences), ["x。", "y。", "z"]);
        assert_eq!(other.sentences[2].index, 2);
    }

    #[test]
    fn ingest_errors() {
        let dup = r#"{"record_id":"r","sections":[
            {"location_id":"present-illness","title":"a","text":"x"},
            {"location_id":"present-illness","title":"b","text":"y"}],"diagnoses":[]}"#;
        match ingest_document(dup.as_bytes(), &registry()) {
            Err(CorpusError::DuplicateLocation(id)) => assert_eq!(id, "present-illness"),
            other => panic!("unexpected {other:?}"),
        }

        let malformed = b"{\"record_id\": \"r\",\n \"sections\": [,]}";
        match ingest_document(malformed, &registry()) {
            Err(CorpusError::Parse { offset, .. }) => assert_eq!(malformed[offset], b','),
            other => panic!("unexpected {other:?}"),
        }

        let bad_gold = r#"{"record_id":"r","sections":[],"diagnoses":["a"],"gold_codes":{"3":"A00"}}"#;
        assert!(matches!(
            ingest_document(bad_gold.as_bytes(), &registry()),
            Err(CorpusError::Invalid(_))
        ));
        let empty_id = r#"{"record_id":" ","sections":[],"diagnoses":[]}"#;
        assert!(ingest_document(empty_id.as_bytes(), &registry()).is_err());
    }

    #[test]
    fn load_corpus_from_ndjson_and_dir() {
        let dir = tempfile::tempdir().unwrap();
        let nd = dir.path().join("corpus.ndjson");
        fs::write(
            &nd,
            "{\"record_id\":\"a\",\"sections\":[],\"diagnoses\":[]}\n\n{\"record_id\":\"b\",\"sections\":[],\"diagnoses\":[\"x\"]}\n",
        )
        .unwrap();
        let docs = load_corpus(&nd, &registry()).unwrap();
        assert_eq!(docs.len(), 2);

        let sub = dir.path().join("records");
        fs::create_dir(&sub).unwrap();
        fs::write(sub.join("2.json"), r#"{"record_id":"z","sections":[],"diagnoses":[]}"#).unwrap();
        fs::write(sub.join("1.json"), r#"{"record_id":"y","sections":[],"diagnoses":[]}"#).unwrap();
        let ids: Vec<_> = load_corpus(&sub, &registry())
            .unwrap()
            .into_iter()
            .map(|d| d.document.record_id)
            .collect();
        assert_eq!(ids, ["y", "z"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn clinical_text() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                prop_oneof![
                    Just('。'),
                    Just('；'),
                    Just(';'),
                    Just('!'),
                    Just('\n'),
                    Just(' '),
                    Just('发'),
                    Just('热'),
                    Just('a'),
                    Just('7'),
                    Just('肺'),
                ],
                0..40,
            )
            .prop_map(|v| v.into_iter().collect())
        }

        proptest! {
            #[test]
            fn split_is_idempotent(text in clinical_text()) {
                let once = split_sentences(&text);
                let joined = once.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n");
                prop_assert_eq!(split_sentences(&joined), once);
            }

            #[test]
            fn split_keeps_content_characters(text in clinical_text()) {
                let content = |s: &str| {
                    let mut v: Vec<char> = s.chars()
                        .filter(|c| !c.is_whitespace() && !SENTENCE_TERMINATORS.contains(c))
                        .collect();
                    v.sort_unstable();
                    v
                };
                let out: String = split_sentences(&text).iter().map(|s| s.text.as_str()).collect();
                prop_assert_eq!(content(&out), content(&text));
            }

            #[test]
            fn tokens_concatenate_to_input(text in "[a-z0-9脉络膜出血肺 ]{0,24}") {
                let lex = Lexicon::new(["脉络膜", "出血", "肺", "ab"]);
                let toks = tokenize(&text, &lex);
                let expected: String = text.chars().filter(|c| !c.is_whitespace()).collect();
                prop_assert_eq!(toks.concat(), expected);
                prop_assert_eq!(tokenize(&text, &lex), toks);
            }
        }
    }
}
