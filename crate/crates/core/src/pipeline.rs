//! End-to-end wiring: task directory → trained run directory → metrics.
//!
//! Run directory layout: `config.json` (resolved settings), `history.csv`,
//! `model.json`, `vocab.tsv`, `timing.json`, and after evaluation
//! `metrics.json` plus `scores.tsv`. Baseline directories hold
//! `metrics.json` and the baseline's own CSV/TSV artifacts.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{cop_kmeans, embed_tfidf, pu_from_clusters, write_assignment_tsv, ConstraintSet};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::eval::{
    all_positive_baseline, ensemble, evaluate, report_table, score_histogram, topk_ir_baseline,
    MetricReport, ReportEntry, ReportFormat,
};
use crate::model::{Arch, ArchConfig, Example, ModelParams, Vocabulary};
use crate::risk::{RiskConfig, RiskMode};
use crate::sampler::BatchPlan;
use crate::taskgen::{LoadedTask, Selector};
use crate::trainer::{train, AlphaSetting, Optimizer, Split, TrainConfig, TrainHistory};

/// Upper end of the top-k sweep.
pub const TOPK_MAX: usize = 5000;
/// Buckets of the retrieval-score histogram.
pub const HISTOGRAM_BUCKETS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pn,
    Naive,
    Upu,
    Nnpu,
    Pnu,
    /// PN training on the true labels of the training documents.
    Oracle,
}

impl TrainMode {
    pub fn risk_mode(self) -> RiskMode {
        match self {
            TrainMode::Pn | TrainMode::Oracle => RiskMode::Pn,
            TrainMode::Naive => RiskMode::Naive,
            TrainMode::Upu => RiskMode::Upu,
            TrainMode::Nnpu => RiskMode::Nnpu,
            TrainMode::Pnu => RiskMode::Pnu,
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(TrainMode::Oracle),
            other => Ok(match other.parse::<RiskMode>()? {
                RiskMode::Pn => TrainMode::Pn,
                RiskMode::Naive => TrainMode::Naive,
                RiskMode::Upu => TrainMode::Upu,
                RiskMode::Nnpu => TrainMode::Nnpu,
                RiskMode::Pnu => TrainMode::Pnu,
            }),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Oracle => f.write_str("oracle"),
            m => write!(f, "{}", m.risk_mode()),
        }
    }
}

/// Class prior passed to the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PriorSetting {
    /// 0.5, which turns the estimators into balanced-error objectives.
    Ber,
    /// The positive share of the training U recorded in the task metadata.
    True,
    Value(f64),
}

impl FromStr for PriorSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ber" => Ok(PriorSetting::Ber),
            "true" => Ok(PriorSetting::True),
            v => v
                .parse::<f64>()
                .ok()
                .filter(|p| *p > 0.0 && *p < 1.0)
                .map(PriorSetting::Value)
                .ok_or_else(|| Error::Config(format!("prior must be ber, true or a value in (0, 1), got {v:?}"))),
        }
    }
}

impl fmt::Display for PriorSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSetting::Ber => f.write_str("ber"),
            PriorSetting::True => f.write_str("true"),
            PriorSetting::Value(v) => write!(f, "{v}"),
        }
    }
}

impl From<PriorSetting> for String {
    fn from(p: PriorSetting) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for PriorSetting {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AlphaFlag {
    /// α implied by the proportional batch plan.
    Auto,
    Value(f64),
}

impl FromStr for AlphaFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(AlphaFlag::Auto);
        }
        s.parse::<f64>()
            .ok()
            .filter(|a| *a > 0.0 && a.is_finite())
            .map(AlphaFlag::Value)
            .ok_or_else(|| Error::Config(format!("alpha must be auto or a positive number, got {s:?}")))
    }
}

impl fmt::Display for AlphaFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaFlag::Auto => f.write_str("auto"),
            AlphaFlag::Value(v) => write!(f, "{v}"),
        }
    }
}

impl From<AlphaFlag> for String {
    fn from(a: AlphaFlag) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for AlphaFlag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Everything needed to reproduce one training run from a task directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub prior: PriorSetting,
    pub batch_size: usize,
    pub proportional: bool,
    pub alpha: AlphaFlag,
    pub pnu_gamma: f64,
    pub nn_beta: f64,
    pub nn_gamma: f64,
    pub arch: Arch,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub vocab_min_count: u64,
    pub vocab_max_size: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: TrainMode::Nnpu,
            prior: PriorSetting::Ber,
            batch_size: 1000,
            proportional: true,
            alpha: AlphaFlag::Value(1.0),
            pnu_gamma: 0.5,
            nn_beta: 0.0,
            nn_gamma: 1.0,
            arch: Arch::Conv,
            learning_rate: 0.001,
            max_epochs: 100,
            patience: 10,
            vocab_min_count: 2,
            vocab_max_size: 30_000,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn arch_config(&self) -> ArchConfig {
        match self.arch {
            Arch::LinearBow => ArchConfig::linear(),
            Arch::Conv => ArchConfig::conv(),
        }
    }

    pub fn resolve_prior(&self, loaded: &LoadedTask) -> Result<f64> {
        match self.prior {
            PriorSetting::Ber => Ok(0.5),
            PriorSetting::Value(v) => Ok(v),
            PriorSetting::True => loaded.task.meta.true_prior.ok_or_else(|| {
                Error::Config(
                    "--prior true needs a task generated with retained truth (meta.json has no true_prior)".into(),
                )
            }),
        }
    }

    pub fn train_config(&self, prior: f64) -> TrainConfig {
        let mut risk = RiskConfig::new(self.mode.risk_mode(), prior);
        risk.nn_beta = self.nn_beta;
        risk.nn_gamma = self.nn_gamma;
        risk.pnu_gamma = self.pnu_gamma;
        let alpha = match self.alpha {
            AlphaFlag::Auto => AlphaSetting::Auto,
            AlphaFlag::Value(a) => {
                risk.alpha = a;
                AlphaSetting::Fixed
            }
        };
        TrainConfig {
            optimizer: Optimizer::adam(),
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            proportional: self.proportional,
            alpha,
            risk,
            seed: self.seed,
        }
    }
}

/// `"a+b"` from the metadata topic terms.
pub fn topic_name(loaded: &LoadedTask) -> String {
    loaded.task.meta.topic.join("+")
}

fn selector_name(s: Selector) -> &'static str {
    match s {
        Selector::Bm25 => "bm25",
        Selector::Random => "rand",
    }
}

/// Row label used in reports, e.g. `bm25+nnpu`.
pub fn method_name(loaded: &LoadedTask, mode: TrainMode) -> String {
    match mode {
        TrainMode::Oracle => "oracle".into(),
        m => format!("{}+{m}", selector_name(loaded.task.meta.selector)),
    }
}

/// Encoded training, validation and test data of a task.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Split,
    pub valid: Split,
    pub test_ids: Vec<String>,
    pub test: Vec<Example>,
    pub test_truth: Vec<bool>,
}

fn encode_all(loaded: &LoadedTask, ids: &[String], vocab: &Vocabulary, arch: &ArchConfig) -> Result<Vec<Example>> {
    ids.iter()
        .map(|id| Example::encode(loaded.doc(id)?, vocab, arch))
        .collect()
}

/// Builds the vocabulary from the training documents and encodes every
/// split as the mode requires. Oracle mode relabels U by its true labels.
pub fn prepare(loaded: &LoadedTask, cfg: &RunConfig) -> Result<Prepared> {
    let task = &loaded.task;
    let arch = cfg.arch_config();
    let none: Vec<String> = Vec::new();
    let n_train = task.n_train.as_ref().unwrap_or(&none);
    let n_valid = task.n_valid.as_ref().unwrap_or(&none);
    let train_docs: Vec<&Document> = loaded.docs(&task.lp_train)?
        .into_iter()
        .chain(loaded.docs(&task.u_train)?)
        .chain(loaded.docs(n_train)?)
        .collect();
    let vocab = Vocabulary::build(train_docs, cfg.vocab_min_count, cfg.vocab_max_size);

    let split = |lp: &[String], u: &[String], n: &[String]| -> Result<Split> {
        if cfg.mode != TrainMode::Oracle {
            return Ok(Split {
                p: encode_all(loaded, lp, &vocab, &arch)?,
                u: encode_all(loaded, u, &vocab, &arch)?,
                n: encode_all(loaded, n, &vocab, &arch)?,
            });
        }
        if !task.meta.truth_retained {
            return Err(Error::Config(
                "oracle mode needs a task generated with retained truth".into(),
            ));
        }
        let mut p: Vec<String> = lp.to_vec();
        let mut neg: Vec<String> = Vec::new();
        for id in u.iter().chain(n) {
            match loaded.truth.get(id) {
                Some(true) => p.push(id.clone()),
                Some(false) => neg.push(id.clone()),
                None => return Err(Error::Integrity(format!("no true label for {id}"))),
            }
        }
        Ok(Split {
            p: encode_all(loaded, &p, &vocab, &arch)?,
            u: Vec::new(),
            n: encode_all(loaded, &neg, &vocab, &arch)?,
        })
    };
    let train = split(&task.lp_train, &task.u_train, n_train)?;
    let valid = split(&task.lp_valid, &task.u_valid, n_valid)?;
    let test_ids: Vec<String> = task.test.iter().map(|t| t.0.clone()).collect();
    let test = encode_all(loaded, &test_ids, &vocab, &arch)?;
    Ok(Prepared {
        vocab,
        train,
        valid,
        test_ids,
        test_truth: task.test.iter().map(|t| t.1).collect(),
        test,
    })
}

/// Resolved settings written to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub run: RunConfig,
    pub method: String,
    pub topic: String,
    pub prior_value: f64,
    pub alpha_value: f64,
    pub plan: Option<BatchPlan>,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub resolved: ResolvedRun,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub history: TrainHistory,
    pub prepared: Prepared,
}

pub fn train_task(loaded: &LoadedTask, cfg: &RunConfig) -> Result<TrainedRun> {
    let prior = cfg.resolve_prior(loaded)?;
    let tc = cfg.train_config(prior);
    tc.validate()?;
    let prepared = prepare(loaded, cfg)?;
    let init = ModelParams::init(&prepared.vocab, &cfg.arch_config(), cfg.seed)?;
    let (params, history) = train(init, &prepared.train, &prepared.valid, &tc)?;
    Ok(TrainedRun {
        resolved: ResolvedRun {
            run: cfg.clone(),
            method: method_name(loaded, cfg.mode),
            topic: topic_name(loaded),
            prior_value: prior,
            alpha_value: history.alpha,
            plan: history.plan,
            train: tc,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
        },
        vocab: prepared.vocab.clone(),
        params,
        history,
        prepared,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

impl TrainedRun {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("config.json"), &to_pretty(&self.resolved))?;
        write(&dir.join("history.csv"), &self.history.to_csv())?;
        self.params.save(dir.join("model.json"))?;
        self.vocab.save(dir.join("vocab.tsv"))?;
        // Wall-clock lives apart from metrics so those stay reproducible.
        let timing = serde_json::json!({ "train_seconds": self.history.elapsed.as_secs_f64() });
        write(&dir.join("timing.json"), &to_pretty(&timing))
    }
}

/// A trained model read back from its run directory.
#[derive(Debug, Clone)]
pub struct SavedRun {
    pub dir: PathBuf,
    pub resolved: ResolvedRun,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

pub fn load_run(dir: impl AsRef<Path>) -> Result<SavedRun> {
    let dir = dir.as_ref();
    let path = dir.join("config.json");
    let resolved: ResolvedRun = serde_json::from_str(&read(&path)?).map_err(|e| Error::json(&path, e))?;
    let vocab = Vocabulary::load(dir.join("vocab.tsv"))?;
    let params = ModelParams::load(dir.join("model.json"))?;
    if params.vocab_size() != vocab.len() {
        return Err(Error::Integrity(format!(
            "model expects {} vocabulary entries, vocab.tsv has {}",
            params.vocab_size(),
            vocab.len()
        )));
    }
    Ok(SavedRun {
        dir: dir.to_path_buf(),
        resolved,
        vocab,
        params,
    })
}

impl SavedRun {
    /// Scores of the task's test documents, in test order.
    pub fn score_test(&self, loaded: &LoadedTask) -> Result<Vec<f64>> {
        let cfg = self.params.config();
        loaded
            .task
            .test
            .iter()
            .map(|(id, _)| Ok(self.params.forward(&Example::encode(loaded.doc(id)?, &self.vocab, cfg)?)))
            .collect()
    }
}

/// Summary of a top-k sweep as stored in `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkSummary {
    pub mean_f1: f64,
    pub std_f1: f64,
    pub k_min: usize,
    pub k_max: usize,
}

/// Content of `metrics.json`. Free of wall-clock values so repeated runs
/// compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: String,
    pub topic: String,
    pub task_seed: u64,
    /// Headline F1 used by reports (the sweep mean for top-k).
    pub f1: f64,
    pub test_size: usize,
    pub report: Option<MetricReport>,
    pub topk: Option<TopkSummary>,
}

impl RunMetrics {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("metrics.json"), &to_pretty(self))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("metrics.json");
        serde_json::from_str(&read(&path)?).map_err(|e| Error::json(&path, e))
    }
}

fn test_truth(loaded: &LoadedTask) -> Vec<bool> {
    loaded.task.test.iter().map(|t| t.1).collect()
}

fn scores_tsv(loaded: &LoadedTask, scores: &[f64]) -> String {
    let mut out = String::from("id\tscore\tpredicted\ttruth\n");
    for ((id, truth), s) in loaded.task.test.iter().zip(scores) {
        out.push_str(&format!("{id}\t{s}\t{}\t{}\n", u8::from(*s > 0.0), u8::from(*truth)));
    }
    out
}

fn model_metrics(loaded: &LoadedTask, method: String, scores: &[f64]) -> Result<RunMetrics> {
    let preds: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();
    let report = evaluate(&preds, &test_truth(loaded))?;
    Ok(RunMetrics {
        method,
        topic: topic_name(loaded),
        task_seed: loaded.task.meta.seed,
        f1: report.f1,
        test_size: preds.len(),
        report: Some(report),
        topk: None,
    })
}

/// Evaluates a trained run on the task's test split; writes
/// `metrics.json` and `scores.tsv` into the run directory.
pub fn evaluate_run(run: &SavedRun, loaded: &LoadedTask) -> Result<RunMetrics> {
    let scores = run.score_test(loaded)?;
    let m = model_metrics(loaded, run.resolved.method.clone(), &scores)?;
    write(&run.dir.join("scores.tsv"), &scores_tsv(loaded, &scores))?;
    m.save(&run.dir)?;
    Ok(m)
}

/// Test documents in retrieval order. Documents missing from the ranking
/// follow in test order.
fn ranked_test(loaded: &LoadedTask) -> Result<(Vec<bool>, Vec<f64>)> {
    if loaded.task.ranking.is_empty() {
        return Err(Error::Config(
            "the top-k baseline needs a retrieval ranking (task generated with selector bm25)".into(),
        ));
    }
    let rank: HashMap<&str, (usize, f64)> = loaded
        .task
        .ranking
        .iter()
        .enumerate()
        .map(|(i, h)| (h.doc_id.as_str(), (i, h.score)))
        .collect();
    let tail = loaded.task.ranking.len();
    let mut rows: Vec<(usize, f64, bool)> = loaded
        .task
        .test
        .iter()
        .enumerate()
        .map(|(i, (id, t))| {
            let (r, s) = rank.get(id.as_str()).copied().unwrap_or((tail + i, 0.0));
            (r, s, *t)
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    Ok((rows.iter().map(|r| r.2).collect(), rows.iter().map(|r| r.1).collect()))
}

/// BM25 top-k sweep over k ∈ [|LP|, 5000] ∩ [1, |test|]. Writes the curve
/// and the per-class score histogram next to `metrics.json`.
pub fn baseline_topk(loaded: &LoadedTask, out: impl AsRef<Path>) -> Result<RunMetrics> {
    let out = out.as_ref();
    let (truth, scores) = ranked_test(loaded)?;
    let lp = loaded.task.lp_train.len() + loaded.task.lp_valid.len();
    let r = topk_ir_baseline(&truth, lp.max(1), TOPK_MAX)?;
    let hist = score_histogram(&scores, &truth, HISTOGRAM_BUCKETS)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("topk.csv"), &r.to_csv())?;
    write(&out.join("histogram.csv"), &hist.to_csv())?;
    let m = RunMetrics {
        method: "bm25-topk".into(),
        topic: topic_name(loaded),
        task_seed: loaded.task.meta.seed,
        f1: r.mean_f1,
        test_size: truth.len(),
        report: None,
        topk: Some(TopkSummary {
            mean_f1: r.mean_f1,
            std_f1: r.std_f1,
            k_min: r.k_min,
            k_max: r.k_max,
        }),
    };
    m.save(out)?;
    Ok(m)
}

pub fn baseline_all_positive(loaded: &LoadedTask, out: impl AsRef<Path>) -> Result<RunMetrics> {
    let report = all_positive_baseline(&test_truth(loaded));
    let m = RunMetrics {
        method: "all-positive".into(),
        topic: topic_name(loaded),
        task_seed: loaded.task.meta.seed,
        f1: report.f1,
        test_size: loaded.task.test.len(),
        report: Some(report),
        topk: None,
    };
    m.save(out)?;
    Ok(m)
}

/// COP-Kmeans with k = 2 over LP ∪ test on tf-idf vectors, every labeled
/// positive must-linked; the cluster holding LP is predicted positive.
pub fn baseline_copkmeans(loaded: &LoadedTask, out: impl AsRef<Path>, seed: u64) -> Result<RunMetrics> {
    let out = out.as_ref();
    let task = &loaded.task;
    let lp: Vec<String> = task.lp_train.iter().chain(&task.lp_valid).cloned().collect();
    let ids: Vec<String> = lp.iter().cloned().chain(task.test.iter().map(|t| t.0.clone())).collect();
    let docs = loaded.docs(&ids)?;
    let points = embed_tfidf(&docs)?;
    let constraints = ConstraintSet {
        must_link: (1..lp.len()).map(|i| (0, i)).collect(),
        cannot_link: Vec::new(),
    };
    let assignment = cop_kmeans(&points, &constraints, 2, seed, 100)?;
    let lp_idx: Vec<usize> = (0..lp.len()).collect();
    let positive = pu_from_clusters(&assignment, &lp_idx)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut tsv = Vec::new();
    write_assignment_tsv(&ids, &assignment, &positive, &mut tsv).map_err(|e| Error::io(out, e))?;
    let path = out.join("clusters.tsv");
    fs::write(&path, tsv).map_err(|e| Error::io(&path, e))?;
    let preds = &positive[lp.len()..];
    let report = evaluate(preds, &test_truth(loaded))?;
    let m = RunMetrics {
        method: "cop-kmeans".into(),
        topic: topic_name(loaded),
        task_seed: task.meta.seed,
        f1: report.f1,
        test_size: preds.len(),
        report: Some(report),
        topk: None,
    };
    m.save(out)?;
    Ok(m)
}

/// Unweighted mean of the members' test scores, thresholded at 0.
pub fn baseline_ensemble(members: &[SavedRun], loaded: &LoadedTask, out: impl AsRef<Path>) -> Result<RunMetrics> {
    let scores: Vec<Vec<f64>> = members
        .iter()
        .map(|r| r.score_test(loaded))
        .collect::<Result<_>>()?;
    let combined = ensemble(&scores, &vec![1.0; scores.len()])?;
    let names: Vec<&str> = members.iter().map(|r| r.resolved.method.as_str()).collect();
    let m = model_metrics(loaded, format!("ensemble({})", names.join(",")), &combined)?;
    let out = out.as_ref();
    m.save(out)?;
    write(&out.join("scores.tsv"), &scores_tsv(loaded, &combined))?;
    Ok(m)
}

/// Table-1 style grid from the `metrics.json` of each directory.
pub fn report(dirs: &[PathBuf], format: ReportFormat) -> Result<String> {
    let entries = dirs
        .iter()
        .map(|d| {
            RunMetrics::load(d).map(|m| ReportEntry {
                method: m.method,
                topic: m.topic,
                f1: m.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_table(&entries, format))
}
