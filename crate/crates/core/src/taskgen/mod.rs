//! Benchmark task generation from a labeled corpus.
//!
//! A topic is a conjunction of labels. Labeled positives (LP) are sampled
//! from the topic's documents, the unlabeled set (U) comes from a
//! More-Like-This retrieval seeded by LP (or from a uniform sample), and
//! everything is split into train / validation / test parts.

mod store;
pub mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::index::{build_mlt_query, Hit, InvertedIndex, MltParams};

pub use store::{load_task, save_task, LoadedTask, PuLabel, TaskRecord};

/// Default validation share: one third of each pool, so |valid| = |train| / 2.
pub const VALID_FRACTION: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    terms: BTreeSet<String>,
}

impl Topic {
    pub fn new(terms: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let terms: BTreeSet<String> = terms.into_iter().map(Into::into).collect();
        if terms.is_empty() || terms.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::InvalidInput("a topic needs at least one non-empty label".into()));
        }
        Ok(Topic { terms })
    }

    pub fn terms(&self) -> &BTreeSet<String> {
        &self.terms
    }

    pub fn contains(&self, doc: &Document) -> bool {
        self.terms.iter().all(|t| doc.labels.contains(t))
    }

    /// Corpus positions of topic-positive documents, ascending.
    pub fn positives(&self, corpus: &Corpus) -> Vec<usize> {
        let mut iter = self.terms.iter();
        let first = iter.next().expect("non-empty topic");
        let Some(base) = corpus.with_label(first) else {
            return Vec::new();
        };
        base.iter()
            .copied()
            .filter(|&p| {
                self.terms
                    .iter()
                    .all(|t| corpus.with_label(t).is_some_and(|s| s.contains(&p)))
            })
            .collect()
    }
}

impl FromStr for Topic {
    type Err = Error;

    /// Parses `"A+B+C"`.
    fn from_str(s: &str) -> Result<Self> {
        Topic::new(s.split('+').map(str::trim))
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let joined: Vec<&str> = self.terms.iter().map(String::as_str).collect();
        write!(f, "{}", joined.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    CaseControl,
    Censoring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Bm25,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "threshold")]
pub enum Bias {
    None,
    /// Only abstracts strictly shorter than this many characters.
    MaxChars(usize),
}

impl Bias {
    pub fn admits(self, doc: &Document) -> bool {
        match self {
            Bias::None => true,
            Bias::MaxChars(limit) => doc.abstract_chars() < limit,
        }
    }
}

impl FromStr for Bias {
    type Err = Error;

    /// `none` or `max-chars:N`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Bias::None);
        }
        if let Some(n) = s.strip_prefix("max-chars:") {
            return n
                .parse()
                .map(Bias::MaxChars)
                .map_err(|_| Error::Config(format!("bad max-chars threshold {n:?}")));
        }
        Err(Error::Config(format!(
            "unknown bias {s:?} (expected none or max-chars:N)"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskCounts {
    pub lp_train: usize,
    pub lp_valid: usize,
    pub u_train: usize,
    pub u_valid: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub test: usize,
    pub test_positives: usize,
    pub topic_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub topic: Vec<String>,
    pub variant: Variant,
    pub selector: Selector,
    pub seed: u64,
    pub counts: TaskCounts,
    /// Percentage of topic positives in the training U.
    pub u_precision: f64,
    /// Percentage of the corpus' remaining positives that landed in training U.
    pub u_recall: f64,
    pub bias: Option<Bias>,
    /// Whether train/valid records keep their true labels.
    pub truth_retained: bool,
    /// Positive share of the training U; only present when truth is retained.
    pub true_prior: Option<f64>,
    pub warnings: Vec<String>,
}

/// A generated positive-unlabeled benchmark task. Document ids refer to the
/// source corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DseTask {
    pub lp_train: Vec<String>,
    pub lp_valid: Vec<String>,
    pub u_train: Vec<String>,
    pub u_valid: Vec<String>,
    pub n_train: Option<Vec<String>>,
    pub n_valid: Option<Vec<String>>,
    pub test: Vec<(String, bool)>,
    /// Retrieval ranking of the unlabeled pool (empty for random selection).
    pub ranking: Vec<Hit>,
    pub meta: TaskMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseControlParams {
    /// Labeled positives in the training split; validation gets half as many.
    pub n_plus: usize,
    /// Unlabeled documents in the training split; validation gets half as many.
    pub u_size: usize,
    /// Documents held out for the truth-labeled test split.
    pub test_size: usize,
    pub selector: Selector,
    pub mlt: MltParams,
    /// Labeled negatives in the training split (0 disables N).
    pub n_minus: usize,
    pub bias: Bias,
    pub retain_truth: bool,
}

impl CaseControlParams {
    pub fn new(n_plus: usize, u_size: usize, selector: Selector) -> Self {
        CaseControlParams {
            n_plus,
            u_size,
            test_size: u_size,
            selector,
            mlt: MltParams::default(),
            n_minus: 0,
            bias: Bias::None,
            retain_truth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringParams {
    /// Total labeled positives (train and validation together).
    pub n_plus: usize,
    /// Number of retrieved documents that seed N.
    pub retrieve: usize,
    /// Share of the unlabeled pool held out for testing.
    pub test_fraction: f64,
    pub mlt: MltParams,
    pub retain_truth: bool,
}

/// Pool size whose one-third/two-thirds split leaves `train` items in training.
fn pool_for(train: usize) -> usize {
    train + train / 2
}

/// Partitions `items` into (train, valid) after a seeded shuffle; valid
/// receives `floor(len × valid_fraction)` items.
pub fn split<T: Clone>(
    items: &[T],
    valid_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&valid_fraction) {
        return Err(Error::InvalidInput(format!(
            "valid fraction {valid_fraction} outside [0, 1)"
        )));
    }
    let n_valid = (items.len() as f64 * valid_fraction + 1e-9).floor() as usize;
    if n_valid == 0 || n_valid >= items.len() {
        return Err(Error::Generation(format!(
            "pool of {} cannot give both train and valid at least one item",
            items.len()
        )));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let valid = shuffled.split_off(items.len() - n_valid);
    Ok((shuffled, valid))
}

/// Uniformly samples `n_minus` topic negatives satisfying `bias`, skipping
/// positions in `exclude`. Returns corpus positions.
pub fn sample_biased_negatives(
    corpus: &Corpus,
    topic: &Topic,
    n_minus: usize,
    bias: Bias,
    exclude: &HashSet<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let pool: Vec<usize> = (0..corpus.len())
        .filter(|p| !exclude.contains(p))
        .filter(|&p| {
            let d = corpus.doc(p);
            !topic.contains(d) && bias.admits(d)
        })
        .collect();
    if pool.len() < n_minus {
        return Err(Error::Generation(format!(
            "only {} topic negatives satisfy {bias:?}, need {n_minus}",
            pool.len()
        )));
    }
    Ok(index::sample(rng, pool.len(), n_minus)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

fn ids(corpus: &Corpus, positions: &[usize]) -> Vec<String> {
    positions.iter().map(|&p| corpus.doc(p).id.clone()).collect()
}

/// Splits an unlabeled pool into test / train / valid. When the pool is
/// short, every part shrinks by the same ratio.
fn split_unlabeled(
    pool: &[usize],
    train_target: usize,
    test_target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    let requested = pool_for(train_target) + test_target;
    let n_test = if shuffled.len() >= requested {
        test_target
    } else {
        test_target * shuffled.len() / requested.max(1)
    };
    let rest = shuffled.split_off(n_test);
    let (train, valid) = split(&rest[..rest.len().min(pool_for(train_target))], VALID_FRACTION, rng)?;
    Ok((train, valid, shuffled))
}

struct Assembled {
    lp: Vec<usize>,
    lp_train: Vec<usize>,
    lp_valid: Vec<usize>,
    u_train: Vec<usize>,
    u_valid: Vec<usize>,
    test: Vec<usize>,
    n: Option<(Vec<usize>, Vec<usize>)>,
}

fn finish(
    corpus: &Corpus,
    topic: &Topic,
    parts: Assembled,
    ranking: Vec<Hit>,
    meta_base: (Variant, Selector, u64, Option<Bias>, bool),
    warnings: Vec<String>,
) -> DseTask {
    let (variant, selector, seed, bias, retain_truth) = meta_base;
    let topic_positives = topic.positives(corpus).len();
    let u_pos = parts
        .u_train
        .iter()
        .filter(|&&p| topic.contains(corpus.doc(p)))
        .count();
    let (u_precision, u_recall) =
        precision_recall(u_pos, parts.u_train.len(), topic_positives, parts.lp.len());
    let test: Vec<(String, bool)> = parts
        .test
        .iter()
        .map(|&p| (corpus.doc(p).id.clone(), topic.contains(corpus.doc(p))))
        .collect();
    let counts = TaskCounts {
        lp_train: parts.lp_train.len(),
        lp_valid: parts.lp_valid.len(),
        u_train: parts.u_train.len(),
        u_valid: parts.u_valid.len(),
        n_train: parts.n.as_ref().map_or(0, |n| n.0.len()),
        n_valid: parts.n.as_ref().map_or(0, |n| n.1.len()),
        test: test.len(),
        test_positives: test.iter().filter(|t| t.1).count(),
        topic_positives,
    };
    DseTask {
        lp_train: ids(corpus, &parts.lp_train),
        lp_valid: ids(corpus, &parts.lp_valid),
        u_train: ids(corpus, &parts.u_train),
        u_valid: ids(corpus, &parts.u_valid),
        n_train: parts.n.as_ref().map(|n| ids(corpus, &n.0)),
        n_valid: parts.n.as_ref().map(|n| ids(corpus, &n.1)),
        test,
        ranking,
        meta: TaskMeta {
            topic: topic.terms().iter().cloned().collect(),
            variant,
            selector,
            seed,
            counts,
            u_precision,
            u_recall,
            bias,
            truth_retained: retain_truth,
            true_prior: retain_truth.then_some(u_precision / 100.0),
            warnings,
        },
    }
}

fn precision_recall(u_pos: usize, u_len: usize, topic_pos: usize, lp: usize) -> (f64, f64) {
    let precision = if u_len == 0 {
        0.0
    } else {
        100.0 * u_pos as f64 / u_len as f64
    };
    let remaining = topic_pos.saturating_sub(lp);
    let recall = if remaining == 0 {
        0.0
    } else {
        100.0 * u_pos as f64 / remaining as f64
    };
    (precision, recall)
}

/// Case-control generation: LP sampled from the topic, U retrieved by a
/// More-Like-This query built from LP (or sampled uniformly), LP excluded
/// from U.
pub fn generate_case_control(
    corpus: &Corpus,
    topic: &Topic,
    params: &CaseControlParams,
    index: Option<&InvertedIndex>,
    seed: u64,
) -> Result<DseTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives = topic.positives(corpus);
    let lp_pool_size = pool_for(params.n_plus);
    if params.n_plus == 0 || positives.len() < lp_pool_size {
        return Err(Error::Generation(format!(
            "topic {topic} has {} positives; {} labeled positives (train + valid) requested",
            positives.len(),
            lp_pool_size
        )));
    }
    let lp: Vec<usize> = index::sample(&mut rng, positives.len(), lp_pool_size)
        .into_iter()
        .map(|i| positives[i])
        .collect();
    let lp_set: HashSet<usize> = lp.iter().copied().collect();
    let wanted = pool_for(params.u_size) + params.test_size;
    let mut warnings = Vec::new();

    let (u_pool, ranking) = match params.selector {
        Selector::Bm25 => {
            let index = index.ok_or_else(|| {
                Error::Config("selector bm25 requires an index over the corpus".into())
            })?;
            let lp_docs: Vec<&Document> = lp.iter().map(|&p| corpus.doc(p)).collect();
            let query = build_mlt_query(index, &lp_docs, &params.mlt)?;
            let hits: Vec<Hit> = index
                .retrieve(&query, wanted + lp.len())
                .into_iter()
                .filter(|h| {
                    corpus
                        .position(&h.doc_id)
                        .is_some_and(|p| !lp_set.contains(&p))
                })
                .take(wanted)
                .collect();
            let pool = hits
                .iter()
                .map(|h| {
                    corpus
                        .position(&h.doc_id)
                        .ok_or_else(|| Error::UnknownDocument(h.doc_id.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            (pool, hits)
        }
        Selector::Random => {
            let candidates: Vec<usize> = (0..corpus.len()).filter(|p| !lp_set.contains(p)).collect();
            let n = wanted.min(candidates.len());
            let pool = index::sample(&mut rng, candidates.len(), n)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            (pool, Vec::new())
        }
    };
    if u_pool.len() < wanted {
        warnings.push(format!(
            "unlabeled pool has {} documents, {} requested",
            u_pool.len(),
            wanted
        ));
    }
    let (lp_train, lp_valid) = split(&lp, VALID_FRACTION, &mut rng)?;
    let (u_train, u_valid, test) =
        split_unlabeled(&u_pool, params.u_size, params.test_size, &mut rng)?;

    let n = if params.n_minus > 0 {
        let exclude: HashSet<usize> = lp.iter().chain(u_pool.iter()).copied().collect();
        let negatives = sample_biased_negatives(
            corpus,
            topic,
            pool_for(params.n_minus),
            params.bias,
            &exclude,
            &mut rng,
        )?;
        Some(split(&negatives, VALID_FRACTION, &mut rng)?)
    } else {
        None
    };

    Ok(finish(
        corpus,
        topic,
        Assembled {
            lp,
            lp_train,
            lp_valid,
            u_train,
            u_valid,
            test,
            n,
        },
        ranking,
        (
            Variant::CaseControl,
            params.selector,
            seed,
            (params.n_minus > 0).then_some(params.bias),
            params.retain_truth,
        ),
        warnings,
    ))
}

/// Censoring generation: every topic document forms P, the retrieval of P
/// minus P forms N, LP is drawn from P, and U = (P − LP) ∪ N.
pub fn generate_censoring(
    corpus: &Corpus,
    topic: &Topic,
    params: &CensoringParams,
    index: &InvertedIndex,
    seed: u64,
) -> Result<DseTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives = topic.positives(corpus);
    if params.n_plus == 0 || positives.len() < params.n_plus {
        return Err(Error::Generation(format!(
            "topic {topic} has {} positives, {} requested",
            positives.len(),
            params.n_plus
        )));
    }
    let pos_set: HashSet<usize> = positives.iter().copied().collect();
    let p_docs: Vec<&Document> = positives.iter().map(|&p| corpus.doc(p)).collect();
    let query = build_mlt_query(index, &p_docs, &params.mlt)?;
    let hits: Vec<Hit> = index
        .retrieve(&query, params.retrieve + positives.len())
        .into_iter()
        .filter(|h| corpus.position(&h.doc_id).is_some_and(|p| !pos_set.contains(&p)))
        .take(params.retrieve)
        .collect();
    let negatives: Vec<usize> = hits
        .iter()
        .filter_map(|h| corpus.position(&h.doc_id))
        .collect();

    let lp: Vec<usize> = index::sample(&mut rng, positives.len(), params.n_plus)
        .into_iter()
        .map(|i| positives[i])
        .collect();
    let lp_set: HashSet<usize> = lp.iter().copied().collect();
    let mut u_pool: Vec<usize> = positives
        .iter()
        .copied()
        .filter(|p| !lp_set.contains(p))
        .collect();
    u_pool.extend(&negatives);

    let (lp_train, lp_valid) = split(&lp, VALID_FRACTION, &mut rng)?;
    let mut shuffled = u_pool.clone();
    shuffled.shuffle(&mut rng);
    let n_test = (shuffled.len() as f64 * params.test_fraction).floor() as usize;
    let rest = shuffled.split_off(n_test);
    let (u_train, u_valid) = split(&rest, VALID_FRACTION, &mut rng)?;

    // Hidden positives are not retrieved; rank them after retrieved negatives.
    let mut ranking = hits;
    let mut hidden: Vec<Hit> = u_pool
        .iter()
        .filter(|p| pos_set.contains(p))
        .map(|&p| Hit {
            doc_id: corpus.doc(p).id.clone(),
            score: index.bm25_score(&query, &corpus.doc(p).id).unwrap_or(0.0),
        })
        .collect();
    ranking.append(&mut hidden);
    crate::index::sort_hits(&mut ranking);

    Ok(finish(
        corpus,
        topic,
        Assembled {
            lp,
            lp_train,
            lp_valid,
            u_train,
            u_valid,
            test: shuffled,
            n: None,
        },
        ranking,
        (
            Variant::Censoring,
            Selector::Bm25,
            seed,
            None,
            params.retain_truth,
        ),
        Vec::new(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskStats {
    pub u_precision: f64,
    pub u_recall: f64,
    pub u_positives: usize,
    pub counts: TaskCounts,
}

/// Recomputes the unlabeled-set statistics of a task against its corpus.
pub fn task_stats(task: &DseTask, corpus: &Corpus, topic: &Topic) -> TaskStats {
    let u_pos = task
        .u_train
        .iter()
        .filter(|id| corpus.get(id).is_some_and(|d| topic.contains(d)))
        .count();
    let lp = task.lp_train.len() + task.lp_valid.len();
    let (u_precision, u_recall) =
        precision_recall(u_pos, task.u_train.len(), topic.positives(corpus).len(), lp);
    TaskStats {
        u_precision,
        u_recall,
        u_positives: u_pos,
        counts: task.meta.counts,
    }
}
