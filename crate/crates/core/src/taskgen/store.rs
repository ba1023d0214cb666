//! Task directories: `train.jsonl`, `valid.jsonl`, `test.jsonl`,
//! `meta.json` and, for retrieval-selected tasks, `retrieval.tsv`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DseTask, TaskMeta, Topic};
use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::index::{read_hits_tsv, write_hits_tsv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PuLabel {
    P,
    U,
    N,
}

/// One line of a task split file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub pu_label: PuLabel,
    pub true_label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// A task read back from disk together with the documents it references.
#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub task: DseTask,
    pub documents: BTreeMap<String, Document>,
    /// True labels of train/valid documents, present only when retained.
    pub truth: HashMap<String, bool>,
}

impl LoadedTask {
    pub fn doc(&self, id: &str) -> Result<&Document> {
        self.documents
            .get(id)
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))
    }

    pub fn docs(&self, ids: &[String]) -> Result<Vec<&Document>> {
        ids.iter().map(|id| self.doc(id)).collect()
    }

    pub fn true_label(&self, id: &str) -> Option<bool> {
        self.truth
            .get(id)
            .copied()
            .or_else(|| self.task.test.iter().find(|t| t.0 == id).map(|t| t.1))
    }
}

fn write_split(
    path: &Path,
    corpus: &Corpus,
    topic: &Topic,
    groups: &[(&[String], PuLabel)],
    truth: bool,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (ids, label) in groups {
        for id in ids.iter() {
            let doc = corpus
                .get(id)
                .ok_or_else(|| Error::UnknownDocument(id.clone()))?;
            write_record(&mut out, doc, *label, truth.then(|| topic.contains(doc)))
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_record(
    out: &mut impl Write,
    doc: &Document,
    pu_label: PuLabel,
    truth: Option<bool>,
) -> std::io::Result<()> {
    let rec = TaskRecord {
        id: doc.id.clone(),
        title: doc.title.clone(),
        abstract_text: doc.abstract_text.clone(),
        pu_label,
        true_label: truth.map(u8::from),
        embedding: doc.embedding.clone(),
    };
    serde_json::to_writer(&mut *out, &rec)?;
    out.write_all(b"\n")
}

/// Writes `task` under `dir`, resolving document text from `corpus`.
pub fn save_task(task: &DseTask, corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let topic = Topic::new(task.meta.topic.iter().cloned())?;
    let keep = task.meta.truth_retained;
    let empty: Vec<String> = Vec::new();
    write_split(
        &dir.join("train.jsonl"),
        corpus,
        &topic,
        &[
            (&task.lp_train, PuLabel::P),
            (&task.u_train, PuLabel::U),
            (task.n_train.as_ref().unwrap_or(&empty), PuLabel::N),
        ],
        keep,
    )?;
    write_split(
        &dir.join("valid.jsonl"),
        corpus,
        &topic,
        &[
            (&task.lp_valid, PuLabel::P),
            (&task.u_valid, PuLabel::U),
            (task.n_valid.as_ref().unwrap_or(&empty), PuLabel::N),
        ],
        keep,
    )?;
    let test_ids: Vec<String> = task.test.iter().map(|t| t.0.clone()).collect();
    write_split(
        &dir.join("test.jsonl"),
        corpus,
        &topic,
        &[(&test_ids, PuLabel::U)],
        true,
    )?;

    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&task.meta).map_err(|e| Error::json(&meta_path, e))?;
    fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;

    if !task.ranking.is_empty() {
        let path = dir.join("retrieval.tsv");
        let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        write_hits_tsv(&task.ranking, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_split(path: &Path) -> Result<Vec<TaskRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Reads a task directory written by [`save_task`].
pub fn load_task(dir: impl AsRef<Path>) -> Result<LoadedTask> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: TaskMeta = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;

    let mut documents = BTreeMap::new();
    let mut truth = HashMap::new();
    let mut parts: [[Vec<String>; 3]; 2] = Default::default();
    for (slot, name) in ["train.jsonl", "valid.jsonl"].iter().enumerate() {
        for rec in read_split(&dir.join(name))? {
            let k = match rec.pu_label {
                PuLabel::P => 0,
                PuLabel::U => 1,
                PuLabel::N => 2,
            };
            parts[slot][k].push(rec.id.clone());
            if let Some(t) = rec.true_label {
                truth.insert(rec.id.clone(), t == 1);
            }
            insert_doc(&mut documents, rec);
        }
    }
    let mut test = Vec::new();
    for rec in read_split(&dir.join("test.jsonl"))? {
        let label = rec.true_label.ok_or_else(|| {
            Error::Integrity(format!("test record {} has no true_label", rec.id))
        })?;
        test.push((rec.id.clone(), label == 1));
        insert_doc(&mut documents, rec);
    }

    let ranking_path = dir.join("retrieval.tsv");
    let ranking = if ranking_path.exists() {
        let text = fs::read_to_string(&ranking_path).map_err(|e| Error::io(&ranking_path, e))?;
        read_hits_tsv(&text)?
    } else {
        Vec::new()
    };

    let [[lp_train, u_train, n_train], [lp_valid, u_valid, n_valid]] = parts;
    let has_n = !n_train.is_empty() || !n_valid.is_empty();
    Ok(LoadedTask {
        task: DseTask {
            lp_train,
            lp_valid,
            u_train,
            u_valid,
            n_train: has_n.then_some(n_train),
            n_valid: has_n.then_some(n_valid),
            test,
            ranking,
            meta,
        },
        documents,
        truth,
    })
}

fn insert_doc(documents: &mut BTreeMap<String, Document>, rec: TaskRecord) {
    let mut doc = Document::new(
        rec.id.clone(),
        rec.title,
        rec.abstract_text,
        std::iter::empty::<String>(),
    );
    doc.embedding = rec.embedding;
    documents.insert(rec.id, doc);
}
