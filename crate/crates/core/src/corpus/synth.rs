//! Deterministic synthetic multi-labeled corpus.
//!
//! Documents belong to a latent theme. Each theme owns a handful of core
//! labels that co-occur frequently, so conjunctions of three core labels
//! make fine-grained topics whose positives share most of their vocabulary
//! with many near-miss documents (two of the three labels). Text is a
//! token mixture of Zipfian background words, theme words, and one
//! vocabulary per carried label.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Document};
use crate::error::{Error, Result};

const LABEL_NAMES: &[&str] = &[
    "Animals",
    "Brain",
    "Rats",
    "Neurons",
    "Adult",
    "Middle Aged",
    "HIV Infections",
    "Antiretroviral Therapy",
    "Renal Dialysis",
    "Kidney Failure, Chronic",
    "Aged",
    "Hypertension",
    "Apoptosis",
    "Cell Line, Tumor",
    "Cell Proliferation",
    "Neoplasm Staging",
    "Liver",
    "Mice",
    "Oxidative Stress",
    "Inflammation",
    "Pregnancy",
    "Infant, Newborn",
    "Female",
    "Birth Weight",
];

const SYLLABLES: &[&str] = &[
    "ba", "ce", "di", "fo", "gu", "ha", "ke", "li", "mo", "nu", "pa", "re", "si", "to", "vu",
    "za", "be", "ci", "do", "fu", "ga", "he", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub n_docs: usize,
    pub n_themes: usize,
    pub labels_per_theme: usize,
    /// Probability a document of a theme carries each of the theme's core labels.
    pub core_label_prob: f64,
    /// Probability of carrying any label outside the document's theme.
    pub stray_label_prob: f64,
    pub general_vocab: usize,
    pub theme_vocab: usize,
    pub label_vocab: usize,
    pub abstract_len: (usize, usize),
    pub title_len: (usize, usize),
    /// Per-token probability of a theme word.
    pub theme_rate: f64,
    /// Per-token probability of a word from each carried label.
    pub label_rate: f64,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            n_docs: 20_000,
            n_themes: 6,
            labels_per_theme: 4,
            core_label_prob: 0.55,
            stray_label_prob: 0.02,
            general_vocab: 3000,
            theme_vocab: 80,
            label_vocab: 50,
            abstract_len: (60, 140),
            title_len: (6, 12),
            theme_rate: 0.12,
            label_rate: 0.06,
            seed: 2019,
        }
    }
}

impl SynthCorpusConfig {
    pub fn n_labels(&self) -> usize {
        self.n_themes * self.labels_per_theme
    }

    pub fn label_name(&self, i: usize) -> String {
        LABEL_NAMES
            .get(i)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("Label {i}"))
    }

    /// One three-label topic per theme: the theme's first three core labels.
    pub fn default_topics(&self) -> Vec<Vec<String>> {
        (0..self.n_themes)
            .filter(|_| self.labels_per_theme >= 3)
            .map(|t| {
                (0..3)
                    .map(|j| self.label_name(t * self.labels_per_theme + j))
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.n_docs == 0 || self.n_themes == 0 || self.labels_per_theme == 0 {
            return bad("n_docs, n_themes and labels_per_theme must be positive");
        }
        if self.general_vocab == 0 || self.theme_vocab == 0 || self.label_vocab == 0 {
            return bad("vocabulary sizes must be positive");
        }
        if self.abstract_len.0 == 0 || self.abstract_len.0 > self.abstract_len.1 {
            return bad("abstract_len must be a non-empty range starting at >= 1");
        }
        if self.title_len.0 > self.title_len.1 {
            return bad("title_len must be a non-empty range");
        }
        for p in [
            self.core_label_prob,
            self.stray_label_prob,
            self.theme_rate,
            self.label_rate,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

fn pseudo_word(mut n: usize) -> String {
    let base = SYLLABLES.len();
    let mut parts = Vec::new();
    loop {
        parts.push(SYLLABLES[n % base]);
        n /= base;
        if n == 0 && parts.len() >= 2 {
            break;
        }
    }
    parts.concat()
}

struct Vocabularies {
    general: Vec<String>,
    general_weights: WeightedIndex<f64>,
    themes: Vec<Vec<String>>,
    theme_weights: WeightedIndex<f64>,
    labels: Vec<Vec<String>>,
    label_weights: WeightedIndex<f64>,
}

impl Vocabularies {
    fn new(cfg: &SynthCorpusConfig) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| -> Vec<String> {
            let words = (next..next + n).map(pseudo_word).collect();
            next += n;
            words
        };
        let general = take(cfg.general_vocab);
        let themes = (0..cfg.n_themes).map(|_| take(cfg.theme_vocab)).collect();
        let labels = (0..cfg.n_labels()).map(|_| take(cfg.label_vocab)).collect();
        // Zipf-like rank weights in every vocabulary, so documents sharing
        // a label share its most characteristic words.
        let zipf = |n: usize, shift: f64| {
            WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + shift))).expect("positive weights")
        };
        Vocabularies {
            general,
            general_weights: zipf(cfg.general_vocab, 2.0),
            themes,
            theme_weights: zipf(cfg.theme_vocab, 1.0),
            labels,
            label_weights: zipf(cfg.label_vocab, 1.0),
        }
    }
}

fn draw_tokens(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabularies,
    cfg: &SynthCorpusConfig,
    theme: usize,
    labels: &[usize],
    len: usize,
) -> Vec<String> {
    (0..len)
        .map(|_| {
            let mut r: f64 = rng.random();
            for &l in labels {
                if r < cfg.label_rate {
                    return vocab.labels[l][vocab.label_weights.sample(rng)].clone();
                }
                r -= cfg.label_rate;
            }
            if r < cfg.theme_rate {
                return vocab.themes[theme][vocab.theme_weights.sample(rng)].clone();
            }
            vocab.general[vocab.general_weights.sample(rng)].clone()
        })
        .collect()
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn render_abstract(rng: &mut ChaCha8Rng, tokens: &[String]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < tokens.len() {
        let n = rng.random_range(8..=16).min(tokens.len() - i);
        let sentence = &tokens[i..i + n];
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&capitalize(&sentence[0]));
        for w in &sentence[1..] {
            out.push(' ');
            out.push_str(w);
        }
        out.push('.');
        i += n;
    }
    out
}

/// Generates the corpus. Identical configs produce identical corpora.
pub fn generate(cfg: &SynthCorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let vocab = Vocabularies::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.n_docs.to_string().len().max(6);
    let mut docs = Vec::with_capacity(cfg.n_docs);
    for i in 0..cfg.n_docs {
        let theme = rng.random_range(0..cfg.n_themes);
        let core = theme * cfg.labels_per_theme..(theme + 1) * cfg.labels_per_theme;
        let labels: Vec<usize> = (0..cfg.n_labels())
            .filter(|l| {
                let p = if core.contains(l) {
                    cfg.core_label_prob
                } else {
                    cfg.stray_label_prob
                };
                rng.random_bool(p)
            })
            .collect();
        let title_len = rng.random_range(cfg.title_len.0..=cfg.title_len.1);
        let abs_len = rng.random_range(cfg.abstract_len.0..=cfg.abstract_len.1);
        let title_tokens = draw_tokens(&mut rng, &vocab, cfg, theme, &labels, title_len);
        let abs_tokens = draw_tokens(&mut rng, &vocab, cfg, theme, &labels, abs_len);
        let title = capitalize(&title_tokens.join(" "));
        let abstract_text = render_abstract(&mut rng, &abs_tokens);
        docs.push(Document::new(
            format!("doc{i:0width$}"),
            title,
            abstract_text,
            labels.iter().map(|&l| cfg.label_name(l)),
        ));
    }
    Corpus::from_documents(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthCorpusConfig {
        SynthCorpusConfig {
            n_docs: 600,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.documents(), b.documents());
        let c = generate(&SynthCorpusConfig {
            seed: 7,
            ..small()
        })
        .unwrap();
        assert_ne!(a.documents(), c.documents());
    }

    #[test]
    fn pseudo_words_are_unique_and_tokenize_cleanly() {
        let words: std::collections::HashSet<String> = (0..5000).map(pseudo_word).collect();
        assert_eq!(words.len(), 5000);
        for w in words.iter().take(50) {
            assert_eq!(crate::corpus::tokenize(w), vec![w.clone()]);
        }
    }

    #[test]
    fn rendered_text_tokenizes_back() {
        let c = generate(&small()).unwrap();
        let d = c.doc(0);
        assert!(!d.abstract_tokens.is_empty());
        assert!(d.abstract_tokens.len() >= 60 && d.abstract_tokens.len() <= 140);
    }

    #[test]
    fn topics_have_positives() {
        let cfg = small();
        let c = generate(&cfg).unwrap();
        for topic in cfg.default_topics() {
            let n = c
                .documents()
                .iter()
                .filter(|d| topic.iter().all(|t| d.labels.contains(t)))
                .count();
            assert!(n > 5, "topic {topic:?} has {n} positives");
        }
    }
}
