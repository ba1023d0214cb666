//! Document set expansion as positive-unlabeled learning: corpus handling,
//! benchmark task generation, BM25 retrieval, text scorers, PU risk
//! estimators, proportional batching, training, COP-Kmeans and evaluation.

pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod risk;
pub mod sampler;
pub mod taskgen;
pub mod trainer;

pub use corpus::{Corpus, Document};
pub use error::{Error, ErrorKind, Result};
pub use eval::{ConfusionCounts, MetricReport, ReportFormat};
pub use index::{Hit, InvertedIndex, MltParams};
pub use model::{Arch, ArchConfig, Example, ModelParams, Vocabulary};
pub use pipeline::{PriorSetting, RunConfig, RunMetrics, TrainMode};
pub use risk::{Loss, RiskConfig, RiskMode, RiskOutput};
pub use sampler::BatchPlan;
pub use taskgen::{DseTask, LoadedTask, Topic};
pub use trainer::{Split, TrainConfig, TrainHistory};
