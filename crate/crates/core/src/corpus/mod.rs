//! Multi-labeled document collections.
//!
//! A [`Corpus`] is ingested from JSONL (one document per line) and is
//! immutable afterwards. Every document keeps its raw title and abstract
//! next to the token sequences produced by [`tokenize`], because task
//! records and the length-bias predicate work on raw text.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, split on every non-alphanumeric character, drop empty pieces.
///
/// No stemming and no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub labels: Vec<String>,
    /// Optional precomputed dense representation (see `model::Example`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    pub title_tokens: Vec<String>,
    pub abstract_tokens: Vec<String>,
    pub labels: BTreeSet<String>,
    pub embedding: Option<Vec<f64>>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        abstract_text: impl Into<String>,
        labels: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        let title = title.into();
        let abstract_text = abstract_text.into();
        Document {
            id: id.into(),
            title_tokens: tokenize(&title),
            abstract_tokens: tokenize(&abstract_text),
            title,
            abstract_text,
            labels: labels.into_iter().map(Into::into).collect(),
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn record(&self) -> DocumentRecord {
        DocumentRecord {
            id: self.id.clone(),
            title: self.title.clone(),
            abstract_text: self.abstract_text.clone(),
            labels: self.labels.iter().cloned().collect(),
            embedding: self.embedding.clone(),
        }
    }

    fn from_record(rec: DocumentRecord) -> Self {
        let mut doc = Document::new(rec.id, rec.title, rec.abstract_text, rec.labels);
        doc.embedding = rec.embedding;
        doc
    }

    /// Raw abstract length in characters.
    pub fn abstract_chars(&self) -> usize {
        self.abstract_text.chars().count()
    }
}

/// An immutable, id-addressable document collection with a label index.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    label_index: BTreeMap<String, BTreeSet<usize>>,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut by_id = HashMap::with_capacity(documents.len());
        let mut label_index: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for (pos, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::Integrity(format!("document #{pos} has an empty id")));
            }
            if by_id.insert(doc.id.clone(), pos).is_some() {
                return Err(Error::Integrity(format!("duplicate document id {:?}", doc.id)));
            }
            for label in &doc.labels {
                label_index.entry(label.clone()).or_default().insert(pos);
            }
        }
        Ok(Corpus {
            documents,
            by_id,
            label_index,
        })
    }

    /// Reads a JSONL corpus. Blank lines are skipped.
    pub fn ingest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut documents = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<corpus>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DocumentRecord = serde_json::from_str(&line).map_err(|e| {
                let who = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_owned));
                let message = match who {
                    Some(id) => format!("record {id:?}: {e}"),
                    None => e.to_string(),
                };
                Error::Parse {
                    line: line_no,
                    message,
                }
            })?;
            if record.id.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty id".into(),
                });
            }
            if record.abstract_text.trim().is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("record {:?}: empty abstract", record.id),
                });
            }
            documents.push(Document::from_record(record));
        }
        Self::from_documents(documents)
    }

    /// Writes the canonical JSONL form (labels sorted, fields in schema order).
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        for doc in &self.documents {
            let line = serde_json::to_string(&doc.record()).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn doc(&self, pos: usize) -> &Document {
        &self.documents[pos]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.position(id).map(|p| &self.documents[p])
    }

    pub fn label_index(&self) -> &BTreeMap<String, BTreeSet<usize>> {
        &self.label_index
    }

    /// Positions of documents carrying `label`.
    pub fn with_label(&self, label: &str) -> Option<&BTreeSet<usize>> {
        self.label_index.get(label)
    }

    pub fn stats(&self) -> CorpusStats {
        let mut title: Vec<usize> = self.documents.iter().map(|d| d.title_tokens.len()).collect();
        let mut abs: Vec<usize> = self
            .documents
            .iter()
            .map(|d| d.abstract_tokens.len())
            .collect();
        CorpusStats {
            documents: self.documents.len(),
            labels: self.label_index.len(),
            title_tokens: Percentiles::of(&mut title),
            abstract_tokens: Percentiles::of(&mut abs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub labels: usize,
    pub title_tokens: Percentiles,
    pub abstract_tokens: Percentiles,
}

/// Nearest-rank percentiles of a count distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub min: usize,
    pub p25: usize,
    pub median: usize,
    pub p75: usize,
    pub max: usize,
}

impl Percentiles {
    fn of(values: &mut [usize]) -> Self {
        values.sort_unstable();
        let rank = |q: f64| -> usize {
            if values.is_empty() {
                return 0;
            }
            let r = (q * values.len() as f64).ceil() as usize;
            values[r.clamp(1, values.len()) - 1]
        };
        Percentiles {
            min: values.first().copied().unwrap_or(0),
            p25: rank(0.25),
            median: rank(0.5),
            p75: rank(0.75),
            max: values.last().copied().unwrap_or(0),
        }
    }
}
