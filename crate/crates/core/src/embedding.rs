//! Word vectors loaded from a plain-text table.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// token → vector of fixed dimension. Unknown tokens map to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim, "vector length must equal dim");
        self.vectors.insert(token.into(), vector);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Mean of the token vectors (unknown tokens count as zeros).
    pub fn mean_pool<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            if let Some(v) = self.vectors.get(t.as_ref()) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Parses `dim N` followed by `token v1 .. vN` lines.
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(EmbeddingError::Format {
            line: 1,
            message: "missing `dim N` header".into(),
        })?;
        let dim = header
            .trim()
            .strip_prefix("dim")
            .and_then(|rest| rest.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or(EmbeddingError::Format {
                line: 1,
                message: format!("bad header `{header}`"),
            })?;
        let mut table = Self::new(dim);
        for (i, line) in lines {
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let token = parts.next().unwrap_or_default();
            let vector = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if vector.len() != dim {
                return Err(EmbeddingError::Format {
                    line: i + 1,
                    message: format!("`{token}` has {} values, expected {dim}", vector.len()),
                });
            }
            table.vectors.insert(token.to_string(), vector);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Serializes with tokens sorted, so output is stable.
    pub fn to_text(&self) -> String {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut out = format!("dim {}\n", self.dim);
        for t in tokens {
            out.push_str(t);
            for x in &self.vectors[t] {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }
}

/// Cosine similarity, or `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine mapped from [-1, 1] onto [0, 1]; 0 when either vector is zero.
pub fn cosine01(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).map_or(0.0, |c| 0.5 * (c + 1.0))
}
