use std::collections::BTreeMap;
use std::path::Path;

use super::{dot, l2_norm};
use crate::error::{Error, Result};

/// Token → unit vector lookup, replacing a pre-trained word embedding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dims: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

/// Case-folds and trims a tag.
pub fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase()
}

impl EmbeddingTable {
    /// Parses `token v1 v2 ... ve` lines. Blank lines are skipped and a
    /// repeated token keeps its last vector.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = EmbeddingTable::default();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::MalformedLine {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            if values.is_empty() {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: format!("token {token:?} has no vector"),
                });
            }
            if table.entries.is_empty() {
                table.dims = values.len();
            } else if values.len() != table.dims {
                return Err(Error::InconsistentDims {
                    line: line_no,
                    expected: table.dims,
                    actual: values.len(),
                });
            }
            let norm = l2_norm(&values);
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: "vector has zero or non-finite norm".into(),
                });
            }
            let key = normalize_tag(token);
            let unit = values.iter().map(|v| v / norm).collect();
            if table.entries.insert(key.clone(), unit).is_some() {
                log::warn!("embedding line {line_no}: duplicate token {key:?}, keeping the last");
            }
        }
        Ok(table)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(&normalize_tag(token)).map(Vec::as_slice)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    EmbeddingTable::parse(&text)
}

/// A tag's vector. Unknown tags get a one-hot axis of their own outside the
/// embedding space, so they match only themselves.
#[derive(Debug, Clone, PartialEq)]
pub enum TagVector {
    Known(Vec<f64>),
    OutOfVocabulary(String),
}

impl TagVector {
    pub fn similarity(&self, other: &TagVector) -> f64 {
        match (self, other) {
            (TagVector::Known(a), TagVector::Known(b)) => dot(a, b),
            (TagVector::OutOfVocabulary(a), TagVector::OutOfVocabulary(b)) if a == b => 1.0,
            _ => 0.0,
        }
    }
}

pub fn tag_vector(table: &EmbeddingTable, tag: &str) -> TagVector {
    let key = normalize_tag(tag);
    match table.entries.get(&key) {
        Some(v) => TagVector::Known(v.clone()),
        None => TagVector::OutOfVocabulary(key),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes() {
        let t = EmbeddingTable::parse("cat 1 0\ndog 0 1").unwrap();
        assert_eq!((t.len(), t.dims()), (2, 2));
        let t = EmbeddingTable::parse("cat 3 4").unwrap();
        assert_eq!(t.get("cat").unwrap(), &[0.6, 0.8]);
    }

    #[test]
    fn inconsistent_dims() {
        assert!(matches!(
            EmbeddingTable::parse("a 1 0\nb 1 2 3"),
            Err(Error::InconsistentDims { line: 2, expected: 2, actual: 3 })
        ));
        assert!(matches!(EmbeddingTable::parse("a 1 x"), Err(Error::MalformedLine { .. })));
        assert!(matches!(EmbeddingTable::parse("lonely"), Err(Error::MalformedLine { .. })));
    }

    #[test]
    fn duplicates_keep_last_and_tags_fold() {
        let t = EmbeddingTable::parse("Cat 1 0\ncat 0 2").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("  CAT "), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn out_of_vocabulary_contract() {
        let t = EmbeddingTable::parse("cat 1 0").unwrap();
        let known = tag_vector(&t, "Cat");
        assert_eq!(known, TagVector::Known(vec![1.0, 0.0]));
        let a1 = tag_vector(&t, "axolotl");
        let a2 = tag_vector(&t, " Axolotl");
        let b = tag_vector(&t, "bison");
        assert_eq!(a1.similarity(&a2), 1.0);
        assert_eq!(a1.similarity(&b), 0.0);
        assert_eq!(a1.similarity(&known), 0.0);
        assert_eq!(known.similarity(&known), 1.0);
    }
}
