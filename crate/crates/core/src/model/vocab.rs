use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token to dense id mapping. Id 0 is padding, id 1 every unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, 0];
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, counts, ids }
    }

    /// Tokens of both fields with count ≥ `min_count`, most frequent first
    /// (ties lexicographic), at most `max_size` of them besides the specials.
    pub fn build<'a>(
        documents: impl IntoIterator<Item = &'a Document>,
        min_count: u64,
        max_size: usize,
    ) -> Self {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in documents {
            for t in doc.title_tokens.iter().chain(&doc.abstract_tokens) {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        entries.truncate(max_size);
        Self::from_entries(entries.into_iter().map(|(t, c)| (t.to_string(), c)).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.get(token).is_some_and(|&i| i > UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// `token<TAB>count` per line, specials included.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (token, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected token<TAB>count".into(),
            })?;
            let count: u64 = count.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad count {count:?}"),
            })?;
            let expected = [PAD_TOKEN, UNK_TOKEN];
            if i < 2 {
                if token != expected[i] {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected special token {}", expected[i]),
                    });
                }
                continue;
            }
            entries.push((token.to_string(), count));
        }
        if entries.len() + 2 != text.lines().count() || text.lines().count() < 2 {
            return Err(Error::Parse {
                line: 1,
                message: "vocabulary must start with <pad> and <unk>".into(),
            });
        }
        let vocab = Self::from_entries(entries);
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(Error::Integrity("duplicate token in vocabulary".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
