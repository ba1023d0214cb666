//! Shared fixtures for the benchmarks under `benches/`.

use setexpand_core::corpus::synth::{generate, SynthCorpusConfig};
use setexpand_core::index::{build_mlt_query, MltQuery};
use setexpand_core::model::{ArchConfig, Example, ModelParams, Vocabulary};
use setexpand_core::{Corpus, InvertedIndex, MltParams, Topic};

/// Synthetic corpus of `n_docs` documents with a fixed seed.
pub fn corpus(n_docs: usize) -> Corpus {
    generate(&SynthCorpusConfig {
        n_docs,
        seed: 1,
        ..SynthCorpusConfig::default()
    })
    .expect("synthetic corpus")
}

/// The first default topic of the synthetic corpus.
pub fn topic() -> Topic {
    Topic::new(SynthCorpusConfig::default().default_topics()[0].clone()).expect("topic")
}

/// MLT query built from the first `n` documents of the topic.
pub fn topic_query(corpus: &Corpus, index: &InvertedIndex, n: usize) -> MltQuery {
    let docs: Vec<_> = topic()
        .positives(corpus)
        .into_iter()
        .take(n)
        .map(|p| corpus.doc(p))
        .collect();
    build_mlt_query(index, &docs, &MltParams::default()).expect("query")
}

/// Encoded documents and a freshly initialized model for `arch`.
pub fn encoded(corpus: &Corpus, arch: &ArchConfig, n: usize) -> (ModelParams, Vec<Example>) {
    let vocab = Vocabulary::build(corpus.documents(), 2, 30_000);
    let params = ModelParams::init(&vocab, arch, 0).expect("model");
    let examples = corpus.documents()[..n]
        .iter()
        .map(|d| Example::encode(d, &vocab, arch).expect("encode"))
        .collect();
    (params, examples)
}
