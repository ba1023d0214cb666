//! Inverted index, Okapi BM25 scoring and multi-document "More Like This"
//! queries.
//!
//! Scoring per field `f` with boost `w_f`:
//!
//! ```text
//! score(d) = Σ_f w_f Σ_t weight(t) · idf_f(t) · tf·(k1+1) / (tf + k1·(1 − b + b·len_f(d)/avglen_f))
//! idf_f(t) = ln(1 + (N − df_f(t) + 0.5) / (df_f(t) + 0.5))
//! ```
//!
//! A document only scores when it contains at least
//! `ceil(minimum_should_match × |distinct query terms|)` of the query terms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};

pub const SNAPSHOT_FORMAT: &str = "setexpand-index/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Abstract,
}

impl Field {
    pub const ALL: [Field; 2] = [Field::Title, Field::Abstract];

    pub fn tokens(self, doc: &Document) -> &[String] {
        match self {
            Field::Title => &doc.title_tokens,
            Field::Abstract => &doc.abstract_tokens,
        }
    }

    fn slot(self) -> usize {
        match self {
            Field::Title => 0,
            Field::Abstract => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn idf(&self, doc_count: usize, df: usize) -> f64 {
        let n = doc_count as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn tf_norm(&self, tf: f64, len: f64, avg_len: f64) -> f64 {
        let rel = if avg_len > 0.0 { len / avg_len } else { 1.0 };
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * rel))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_length: f64,
}

impl FieldIndex {
    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn doc_length(&self, doc: u32) -> u32 {
        self.doc_lengths[doc as usize]
    }

    pub fn avg_length(&self) -> f64 {
        self.avg_length
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn tf(&self, term: &str, doc: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&doc, |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    format: String,
    params: Bm25Params,
    doc_ids: Vec<String>,
    fields: [FieldIndex; 2],
    #[serde(skip)]
    by_id: HashMap<String, u32>,
}

impl InvertedIndex {
    /// Indexes `title` and `abstract` of every corpus document. Internal
    /// document numbers follow corpus order.
    pub fn build(corpus: &Corpus) -> Result<Self> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let fields = Field::ALL.map(|field| {
            let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
            let mut doc_lengths = Vec::with_capacity(corpus.len());
            for (pos, doc) in corpus.documents().iter().enumerate() {
                let tokens = field.tokens(doc);
                doc_lengths.push(tokens.len() as u32);
                let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
                for t in tokens {
                    *counts.entry(t).or_default() += 1;
                }
                for (t, tf) in counts {
                    postings.entry(t.to_owned()).or_default().push(Posting {
                        doc: pos as u32,
                        tf,
                    });
                }
            }
            let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
            FieldIndex {
                postings,
                avg_length: total as f64 / doc_lengths.len() as f64,
                doc_lengths,
            }
        });
        let doc_ids: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
        let mut index = InvertedIndex {
            format: SNAPSHOT_FORMAT.to_string(),
            params,
            doc_ids,
            fields,
            by_id: HashMap::new(),
        };
        index.rebuild_lookup();
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.by_id = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_number(&self, id: &str) -> Option<u32> {
        self.by_id.get(id).copied()
    }

    pub fn field(&self, field: Field) -> &FieldIndex {
        &self.fields[field.slot()]
    }

    pub fn idf(&self, field: Field, term: &str) -> f64 {
        self.params
            .idf(self.doc_count(), self.field(field).doc_freq(term))
    }

    /// BM25 score of one document, or 0 when it fails minimum-should-match.
    pub fn bm25_score(&self, query: &MltQuery, doc_id: &str) -> Result<f64> {
        let doc = self
            .doc_number(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
        let distinct = query.distinct_terms();
        let mut matched: BTreeSet<&str> = BTreeSet::new();
        let mut score = 0.0;
        for fq in &query.fields {
            let fi = self.field(fq.field);
            let len = fi.doc_length(doc) as f64;
            let mut field_score = 0.0;
            for wt in &fq.terms {
                let tf = fi.tf(&wt.term, doc);
                if tf == 0 {
                    continue;
                }
                matched.insert(&wt.term);
                field_score += wt.weight
                    * self.idf(fq.field, &wt.term)
                    * self.params.tf_norm(tf as f64, len, fi.avg_length);
            }
            score += fq.boost * field_score;
        }
        if matched.len() < query.required_matches(distinct.len()) {
            return Ok(0.0);
        }
        Ok(score)
    }

    /// Ranked documents passing minimum-should-match, descending by score,
    /// ties broken by ascending document id.
    pub fn retrieve(&self, query: &MltQuery, top_k: usize) -> Vec<Hit> {
        let distinct = query.distinct_terms();
        let term_slot: HashMap<&str, usize> = distinct
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let words = distinct.len().div_ceil(64).max(1);
        let required = query.required_matches(distinct.len());

        // Per-document (score, per-field partial, matched-term bitset).
        let mut acc: HashMap<u32, (f64, f64, Vec<u64>)> = HashMap::new();
        for fq in &query.fields {
            let fi = self.field(fq.field);
            for wt in &fq.terms {
                let idf = self.idf(fq.field, &wt.term);
                let slot = term_slot[wt.term.as_str()];
                for p in fi.postings(&wt.term) {
                    let len = fi.doc_length(p.doc) as f64;
                    let e = acc
                        .entry(p.doc)
                        .or_insert_with(|| (0.0, 0.0, vec![0u64; words]));
                    e.1 += wt.weight * idf * self.params.tf_norm(p.tf as f64, len, fi.avg_length);
                    e.2[slot / 64] |= 1 << (slot % 64);
                }
            }
            // Fold the per-field partial sum in field order, as bm25_score does.
            for e in acc.values_mut() {
                e.0 += fq.boost * e.1;
                e.1 = 0.0;
            }
        }

        let mut hits: Vec<Hit> = if required == 0 {
            (0..self.doc_count() as u32)
                .map(|d| Hit {
                    doc_id: self.doc_id(d).to_string(),
                    score: acc.get(&d).map(|e| e.0).unwrap_or(0.0),
                })
                .collect()
        } else {
            acc.into_iter()
                .filter(|(_, e)| {
                    e.2.iter().map(|w| w.count_ones() as usize).sum::<usize>() >= required
                })
                .map(|(d, e)| Hit {
                    doc_id: self.doc_id(d).to_string(),
                    score: e.0,
                })
                .collect()
        };
        sort_hits(&mut hits);
        hits.truncate(top_k);
        hits
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::json(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut index: InvertedIndex =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))?;
        if index.format != SNAPSHOT_FORMAT {
            return Err(Error::SnapshotVersion {
                found: index.format,
                expected: SNAPSHOT_FORMAT.into(),
            });
        }
        index.rebuild_lookup();
        Ok(index)
    }
}

pub(crate) fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Writes `rank<TAB>doc_id<TAB>score` rows (rank is 1-based) under a header.
pub fn write_hits_tsv(hits: &[Hit], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "rank\tdoc_id\tscore")?;
    for (i, h) in hits.iter().enumerate() {
        writeln!(out, "{}\t{}\t{}", i + 1, h.doc_id, h.score)?;
    }
    Ok(())
}

pub fn read_hits_tsv(text: &str) -> Result<Vec<Hit>> {
    let mut hits = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse {
            line: i + 1,
            message: format!("expected rank, doc_id, score: {line:?}"),
        };
        if cols.len() != 3 {
            return Err(bad());
        }
        let score: f64 = cols[2].parse().map_err(|_| bad())?;
        hits.push(Hit {
            doc_id: cols[1].to_string(),
            score,
        });
    }
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldQuery {
    pub field: Field,
    pub boost: f64,
    pub terms: Vec<WeightedTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MltQuery {
    pub fields: Vec<FieldQuery>,
    pub minimum_should_match: f64,
}

impl MltQuery {
    /// A plain query of unit-weight terms against one field.
    pub fn terms(field: Field, terms: &[&str], minimum_should_match: f64) -> Self {
        MltQuery {
            fields: vec![FieldQuery {
                field,
                boost: 1.0,
                terms: terms
                    .iter()
                    .map(|t| WeightedTerm {
                        term: t.to_string(),
                        weight: 1.0,
                    })
                    .collect(),
            }],
            minimum_should_match,
        }
    }

    pub fn distinct_terms(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .fields
            .iter()
            .flat_map(|f| f.terms.iter().map(|t| t.term.as_str()))
            .collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn required_matches(&self, distinct: usize) -> usize {
        // The epsilon keeps 0.2 × 25 from rounding up to 6.
        (self.minimum_should_match * distinct as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize
    }

    pub fn term_count(&self) -> usize {
        self.fields.iter().map(|f| f.terms.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MltParams {
    pub max_query_terms: usize,
    pub min_term_freq: usize,
    pub min_doc_freq: usize,
    pub minimum_should_match: f64,
    pub title_boost: f64,
    pub abstract_boost: f64,
}

impl Default for MltParams {
    fn default() -> Self {
        MltParams {
            max_query_terms: 25,
            min_term_freq: 2,
            min_doc_freq: 5,
            minimum_should_match: 0.20,
            title_boost: 2.0,
            abstract_boost: 1.0,
        }
    }
}

/// Builds a More-Like-This query from example documents: per field, pool
/// the examples' tokens, keep terms passing the frequency thresholds, and
/// select the `max_query_terms` best by pooled tf × idf.
pub fn build_mlt_query(
    index: &InvertedIndex,
    examples: &[&Document],
    params: &MltParams,
) -> Result<MltQuery> {
    if examples.is_empty() {
        return Err(Error::Query("no example documents".into()));
    }
    if !(0.0..=1.0).contains(&params.minimum_should_match) {
        return Err(Error::Query("minimum_should_match must lie in [0, 1]".into()));
    }
    let mut fields = Vec::new();
    for field in Field::ALL {
        let mut pooled: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in examples {
            for t in field.tokens(doc) {
                *pooled.entry(t).or_default() += 1;
            }
        }
        let fi = index.field(field);
        let mut candidates: Vec<(&str, f64)> = pooled
            .into_iter()
            .filter(|&(t, tf)| tf >= params.min_term_freq && fi.doc_freq(t) >= params.min_doc_freq)
            .map(|(t, tf)| (t, tf as f64 * index.idf(field, t)))
            .collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        candidates.truncate(params.max_query_terms);
        if candidates.is_empty() {
            continue;
        }
        fields.push(FieldQuery {
            field,
            boost: match field {
                Field::Title => params.title_boost,
                Field::Abstract => params.abstract_boost,
            },
            terms: candidates
                .into_iter()
                .map(|(t, _)| WeightedTerm {
                    term: t.to_string(),
                    weight: 1.0,
                })
                .collect(),
        });
    }
    if fields.is_empty() {
        return Err(Error::Query(
            "no term passes min_term_freq / min_doc_freq".into(),
        ));
    }
    Ok(MltQuery {
        fields,
        minimum_should_match: params.minimum_should_match,
    })
}
