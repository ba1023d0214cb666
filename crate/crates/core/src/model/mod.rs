//! Differentiable document scorers with hand-written gradients.
//!
//! Two architectures share one flat parameter vector representation:
//!
//! * `linear_bow`: `Σ_t count(t)·w_t + w_dense·z + b`.
//! * `conv`: per field (title, abstract) and window size, a bank of
//!   filters over the token embeddings, `tanh`, max-pool over positions;
//!   the pooled features (and the optional dense vector `z`) feed an
//!   affine output unit.
//!
//! The padding row of the embedding table is a constant zero vector and
//! never receives gradient.

mod vocab;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub use vocab::{Vocabulary, PAD, UNK};

pub const MODEL_FORMAT: &str = "setexpand-model/1";
const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    LinearBow,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    pub title_filters: usize,
    pub abstract_filters: usize,
    pub windows: Vec<usize>,
    pub max_abstract_tokens: usize,
    /// Length of the precomputed per-document vector (0 disables it).
    pub dense_dim: usize,
}

impl ArchConfig {
    pub fn linear() -> Self {
        ArchConfig {
            arch: Arch::LinearBow,
            ..Self::conv()
        }
    }

    pub fn conv() -> Self {
        ArchConfig {
            arch: Arch::Conv,
            embed_dim: 50,
            title_filters: 20,
            abstract_filters: 40,
            windows: vec![3, 5],
            max_abstract_tokens: 600,
            dense_dim: 0,
        }
    }

    pub fn with_dense(mut self, dim: usize) -> Self {
        self.dense_dim = dim;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.arch == Arch::LinearBow {
            return Ok(());
        }
        if self.embed_dim == 0 || self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::Config("conv needs embed_dim ≥ 1 and positive windows".into()));
        }
        let w = self.windows.len();
        for f in [self.title_filters, self.abstract_filters] {
            if f == 0 || f % w != 0 {
                return Err(Error::Config(format!(
                    "{f} filters cannot be split evenly over {w} window sizes"
                )));
            }
        }
        Ok(())
    }
}

/// A document encoded against a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub title: Vec<u32>,
    pub abstract_ids: Vec<u32>,
    /// Token counts over both fields, sorted by id.
    pub bag: Vec<(u32, f64)>,
    pub dense: Option<Vec<f64>>,
}

impl Example {
    pub fn from_ids(title: Vec<u32>, abstract_ids: Vec<u32>, dense: Option<Vec<f64>>) -> Self {
        let mut ids: Vec<u32> = title.iter().chain(&abstract_ids).copied().collect();
        ids.sort_unstable();
        let mut bag: Vec<(u32, f64)> = Vec::new();
        for id in ids {
            match bag.last_mut() {
                Some((last, c)) if *last == id => *c += 1.0,
                _ => bag.push((id, 1.0)),
            }
        }
        Example {
            title,
            abstract_ids,
            bag,
            dense,
        }
    }

    /// An example carrying only a dense vector.
    pub fn dense(z: Vec<f64>) -> Self {
        Example::from_ids(Vec::new(), Vec::new(), Some(z))
    }

    pub fn encode(doc: &Document, vocab: &Vocabulary, cfg: &ArchConfig) -> Result<Self> {
        let mut abs = vocab.encode(&doc.abstract_tokens);
        abs.truncate(cfg.max_abstract_tokens);
        let ex = Example::from_ids(vocab.encode(&doc.title_tokens), abs, doc.embedding.clone());
        ex.check_dense(cfg)?;
        Ok(ex)
    }

    fn check_dense(&self, cfg: &ArchConfig) -> Result<()> {
        let got = self.dense.as_ref().map_or(0, Vec::len);
        if cfg.dense_dim > 0 && got != cfg.dense_dim {
            return Err(Error::InvalidInput(format!(
                "document vector has length {got}, model expects {}",
                cfg.dense_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Bank {
    field: usize,
    window: usize,
    filters: usize,
    offset: usize,
}

impl Bank {
    fn width(&self, d: usize) -> usize {
        self.window * d
    }

    fn bias_offset(&self, d: usize) -> usize {
        self.offset + self.filters * self.width(d)
    }
}

/// Offsets of every parameter block in the flat vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    banks: Vec<Bank>,
    features: usize,
    out: usize,
    dense: usize,
    bias: usize,
    len: usize,
}

impl Layout {
    fn new(cfg: &ArchConfig, vocab_size: usize) -> Self {
        match cfg.arch {
            Arch::LinearBow => Layout {
                banks: Vec::new(),
                features: 0,
                out: 0,
                dense: vocab_size,
                bias: vocab_size + cfg.dense_dim,
                len: vocab_size + cfg.dense_dim + 1,
            },
            Arch::Conv => {
                let d = cfg.embed_dim;
                let mut offset = vocab_size * d;
                let mut banks = Vec::new();
                for (field, total) in [cfg.title_filters, cfg.abstract_filters].into_iter().enumerate() {
                    for &window in &cfg.windows {
                        let filters = total / cfg.windows.len();
                        banks.push(Bank {
                            field,
                            window,
                            filters,
                            offset,
                        });
                        offset += filters * (window * d + 1);
                    }
                }
                let features: usize = banks.iter().map(|b| b.filters).sum();
                let out = offset;
                Layout {
                    banks,
                    features,
                    out,
                    dense: out + features,
                    bias: out + features + cfg.dense_dim,
                    len: out + features + cfg.dense_dim + 1,
                }
            }
        }
    }
}

/// Score and gradient of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGradient {
    pub score: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ArchConfig,
    vocab_size: usize,
    layout: Layout,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    config: ArchConfig,
    vocab_size: usize,
    values: Vec<f64>,
}

/// Pre-activations and pooling choice for one bank.
struct Pooled {
    act: Vec<f64>,
    argmax: Vec<usize>,
}

impl ModelParams {
    /// Weights uniform in `[−0.05, 0.05]`; all biases 0; padding row 0.
    pub fn init(vocab: &Vocabulary, config: &ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..layout.len)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        values[layout.bias] = 0.0;
        if config.arch == Arch::Conv {
            let d = config.embed_dim;
            values[PAD as usize * d..(PAD as usize + 1) * d].fill(0.0);
            for b in &layout.banks {
                let o = b.bias_offset(d);
                values[o..o + b.filters].fill(0.0);
            }
        }
        Ok(ModelParams {
            config: config.clone(),
            vocab_size: vocab.len(),
            layout,
            values,
        })
    }

    pub fn from_values(config: &ArchConfig, vocab_size: usize, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, vocab_size);
        if values.len() != layout.len {
            return Err(Error::InvalidInput(format!(
                "{} parameters given, architecture needs {}",
                values.len(),
                layout.len
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(ModelParams {
            config: config.clone(),
            vocab_size,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn bias(&self) -> f64 {
        self.values[self.layout.bias]
    }

    /// Index of the linear weight for vocabulary id `id` (linear model only).
    pub fn linear_weight_index(&self, id: u32) -> Option<usize> {
        (self.config.arch == Arch::LinearBow && (id as usize) < self.vocab_size).then_some(id as usize)
    }

    fn check(&self, ex: &Example) {
        debug_assert!(ex
            .title
            .iter()
            .chain(&ex.abstract_ids)
            .all(|&i| (i as usize) < self.vocab_size));
        debug_assert_eq!(ex.dense.as_ref().map_or(0, Vec::len), self.config.dense_dim);
    }

    fn dense_part(&self, ex: &Example) -> f64 {
        match &ex.dense {
            Some(z) if self.config.dense_dim > 0 => z
                .iter()
                .zip(&self.values[self.layout.dense..self.layout.dense + z.len()])
                .map(|(a, b)| a * b)
                .sum(),
            _ => 0.0,
        }
    }

    fn field<'a>(&self, ex: &'a Example, field: usize) -> &'a [u32] {
        if field == 0 {
            &ex.title
        } else {
            &ex.abstract_ids
        }
    }

    fn embedding(&self, id: u32) -> Option<&[f64]> {
        if id == PAD {
            return None;
        }
        let d = self.config.embed_dim;
        let o = id as usize * d;
        Some(&self.values[o..o + d])
    }

    fn pool(&self, bank: &Bank, ids: &[u32]) -> Pooled {
        let d = self.config.embed_dim;
        let width = bank.width(d);
        let positions = ids.len().max(bank.window) - bank.window + 1;
        let token = |p: usize| ids.get(p).copied().unwrap_or(PAD);
        let mut act = vec![f64::NEG_INFINITY; bank.filters];
        let mut argmax = vec![0; bank.filters];
        for (k, (a_k, arg_k)) in act.iter_mut().zip(argmax.iter_mut()).enumerate() {
            let w = &self.values[bank.offset + k * width..bank.offset + (k + 1) * width];
            let b = self.values[bank.bias_offset(d) + k];
            for i in 0..positions {
                let mut pre = b;
                for j in 0..bank.window {
                    if let Some(e) = self.embedding(token(i + j)) {
                        pre += w[j * d..(j + 1) * d].iter().zip(e).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                let a = pre.tanh();
                // Strict comparison keeps the first maximal position.
                if a > *a_k {
                    *a_k = a;
                    *arg_k = i;
                }
            }
        }
        Pooled { act, argmax }
    }

    pub fn forward(&self, ex: &Example) -> f64 {
        self.check(ex);
        let bias = self.values[self.layout.bias];
        match self.config.arch {
            Arch::LinearBow => {
                let s: f64 = ex.bag.iter().map(|&(id, c)| c * self.values[id as usize]).sum();
                s + self.dense_part(ex) + bias
            }
            Arch::Conv => {
                let mut s = 0.0;
                let mut f = 0;
                for bank in &self.layout.banks {
                    let pooled = self.pool(bank, self.field(ex, bank.field));
                    for a in pooled.act {
                        s += self.values[self.layout.out + f] * a;
                        f += 1;
                    }
                }
                s + self.dense_part(ex) + bias
            }
        }
    }

    /// Adds `upstream · ∂score/∂θ` into `grad` and returns the score.
    pub fn backward_into(&self, ex: &Example, upstream: f64, grad: &mut [f64]) -> f64 {
        assert_eq!(grad.len(), self.values.len(), "gradient buffer length");
        self.check(ex);
        let l = &self.layout;
        grad[l.bias] += upstream;
        if let (Some(z), true) = (&ex.dense, self.config.dense_dim > 0) {
            for (g, x) in grad[l.dense..l.dense + z.len()].iter_mut().zip(z) {
                *g += upstream * x;
            }
        }
        let bias = self.values[l.bias];
        match self.config.arch {
            Arch::LinearBow => {
                let mut s = 0.0;
                for &(id, c) in &ex.bag {
                    s += c * self.values[id as usize];
                    grad[id as usize] += upstream * c;
                }
                s + self.dense_part(ex) + bias
            }
            Arch::Conv => {
                let d = self.config.embed_dim;
                let mut s = 0.0;
                let mut f = 0;
                for bank in &l.banks {
                    let ids = self.field(ex, bank.field);
                    let token = |p: usize| ids.get(p).copied().unwrap_or(PAD);
                    let pooled = self.pool(bank, ids);
                    let width = bank.width(d);
                    for k in 0..bank.filters {
                        let a = pooled.act[k];
                        let v = self.values[l.out + f];
                        s += v * a;
                        grad[l.out + f] += upstream * a;
                        f += 1;
                        let delta = upstream * v * (1.0 - a * a);
                        if delta == 0.0 {
                            continue;
                        }
                        grad[bank.bias_offset(d) + k] += delta;
                        let w_off = bank.offset + k * width;
                        let pos = pooled.argmax[k];
                        for j in 0..bank.window {
                            let id = token(pos + j);
                            if id == PAD {
                                continue;
                            }
                            let e_off = id as usize * d;
                            for c in 0..d {
                                grad[w_off + j * d + c] += delta * self.values[e_off + c];
                                grad[e_off + c] += delta * self.values[w_off + j * d + c];
                            }
                        }
                    }
                }
                s + self.dense_part(ex) + bias
            }
        }
    }

    pub fn backward(&self, ex: &Example, upstream: f64) -> ScoredGradient {
        let mut gradient = vec![0.0; self.values.len()];
        let score = self.backward_into(ex, upstream, &mut gradient);
        ScoredGradient { score, gradient }
    }

    pub fn predict(&self, ex: &Example, threshold: f64) -> i8 {
        predict_label(self.forward(ex), threshold)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Snapshot {
            format: MODEL_FORMAT.to_string(),
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            values: self.values.clone(),
        })
        .expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if header.format != MODEL_FORMAT {
            return Err(Error::SnapshotVersion {
                found: header.format,
                expected: MODEL_FORMAT.to_string(),
            });
        }
        let snap: Snapshot = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        Self::from_values(&snap.config, snap.vocab_size, snap.values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// `+1` when `score > threshold`, else `−1`.
pub fn predict_label(score: f64, threshold: f64) -> i8 {
    if score > threshold {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        let docs: Vec<Document> = ["alpha beta gamma delta", "beta gamma eps zeta eta theta"]
            .iter()
            .map(|t| Document::new("d", "alpha beta", *t, Vec::<String>::new()))
            .collect();
        Vocabulary::build(&docs, 1, 100)
    }

    fn small_conv() -> ArchConfig {
        ArchConfig {
            embed_dim: 4,
            title_filters: 2,
            abstract_filters: 4,
            ..ArchConfig::conv()
        }
    }

    fn random_example(rng: &mut ChaCha8Rng, v: usize, dense: usize) -> Example {
        let lt = rng.random_range(0..4);
        let la = rng.random_range(1..9);
        let ids = |n: usize, rng: &mut ChaCha8Rng| -> Vec<u32> {
            (0..n).map(|_| rng.random_range(1..v as u32)).collect()
        };
        let title = ids(lt, rng);
        let abs = ids(la, rng);
        let z = (dense > 0).then(|| (0..dense).map(|_| rng.random_range(-1.0..1.0)).collect());
        Example::from_ids(title, abs, z)
    }

    /// Central differences on every parameter, relative error per parameter.
    #[allow(clippy::needless_range_loop)]
    fn gradient_check(cfg: &ArchConfig, seed: u64) {
        let voc = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(&voc, cfg, seed).unwrap();
        // Larger weights than init so tanh is not in its linear regime.
        for v in params.values_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
        let ex = random_example(&mut rng, voc.len(), cfg.dense_dim);
        let upstream = rng.random_range(-2.0..2.0);
        let g = params.backward(&ex, upstream).gradient;
        let h = 1e-5;
        for i in 0..params.len() {
            if cfg.arch == Arch::Conv && i < cfg.embed_dim {
                // Padding row: constant zero.
                assert_eq!(g[i], 0.0);
                continue;
            }
            let orig = params.values[i];
            params.values[i] = orig + h;
            let plus = params.forward(&ex);
            params.values[i] = orig - h;
            let minus = params.forward(&ex);
            params.values[i] = orig;
            let fd = upstream * (plus - minus) / (2.0 * h);
            let err = (g[i] - fd).abs() / (g[i].abs() + fd.abs()).max(1e-7);
            assert!(err < 1e-4, "param {i}: analytic {} vs numeric {fd}", g[i]);
        }
    }

    #[test]
    fn conv_gradient_matches_differences() {
        for seed in 0..10 {
            gradient_check(&small_conv(), seed);
            gradient_check(&small_conv().with_dense(3), 100 + seed);
        }
    }

    #[test]
    fn linear_gradient_matches_differences() {
        for seed in 0..5 {
            gradient_check(&ArchConfig::linear().with_dense(2), seed);
        }
    }

    #[test]
    fn linear_examples() {
        let voc = vocab();
        let mut p = ModelParams::init(&voc, &ArchConfig::linear(), 1).unwrap();
        p.values_mut().fill(0.0);
        let doc = Document::new("x", "beta", "beta gamma", Vec::<String>::new());
        let ex = Example::encode(&doc, &voc, p.config()).unwrap();
        assert_eq!(p.forward(&ex), 0.0);
        let beta = voc.id("beta") as usize;
        p.values_mut()[beta] = 1.0;
        let b = p.layout.bias;
        p.values_mut()[b] = 0.25;
        assert_eq!(p.forward(&ex), 2.25);
        let g = p.backward(&ex, 1.0).gradient;
        assert_eq!(g[beta], 2.0);
        assert_eq!(g[voc.id("gamma") as usize], 1.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let voc = vocab();
        let p = ModelParams::init(&voc, &small_conv(), 3).unwrap();
        let ex = random_example(&mut ChaCha8Rng::seed_from_u64(1), voc.len(), 0);
        assert!(p.backward(&ex, 0.0).gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn short_sequence_is_padded() {
        let voc = vocab();
        let p = ModelParams::init(&voc, &small_conv(), 3).unwrap();
        let ex = Example::from_ids(vec![], vec![voc.id("alpha")], None);
        assert!(p.forward(&ex).is_finite());
    }

    #[test]
    fn init_properties() {
        let voc = vocab();
        let a = ModelParams::init(&voc, &ArchConfig::conv(), 5).unwrap();
        assert_eq!(a, ModelParams::init(&voc, &ArchConfig::conv(), 5).unwrap());
        assert_ne!(a, ModelParams::init(&voc, &ArchConfig::conv(), 6).unwrap());
        assert_eq!(a.bias(), 0.0);
        assert!(a.values().iter().all(|v| v.abs() <= INIT_RANGE));
        let ex = Example::from_ids(vec![2, 3], vec![4, 5, 6], None);
        assert_eq!(a.backward(&ex, 1.0).gradient.len(), a.len());
    }

    #[test]
    fn predict_tie_rule() {
        assert_eq!(predict_label(0.0, 0.0), -1);
        assert_eq!(predict_label(3.2, 0.0), 1);
        assert_eq!(predict_label(-0.1, 0.0), -1);
    }

    #[test]
    fn conv_is_order_sensitive() {
        let voc = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::init(&voc, &small_conv(), 9).unwrap();
        for v in p.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let a = Example::from_ids(vec![], vec![2, 3, 4, 5, 6], None);
        let b = Example::from_ids(vec![], vec![6, 5, 4, 3, 2], None);
        assert_ne!(p.forward(&a), p.forward(&b));
    }

    #[test]
    fn snapshot_round_trip() {
        let voc = vocab();
        let p = ModelParams::init(&voc, &small_conv(), 4).unwrap();
        let q = ModelParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        let bad = p.to_json().replace(MODEL_FORMAT, "setexpand-model/0");
        assert!(matches!(
            ModelParams::from_json(&bad),
            Err(Error::SnapshotVersion { .. })
        ));
    }

    #[test]
    fn dense_length_is_checked() {
        let voc = vocab();
        let cfg = ArchConfig::linear().with_dense(3);
        let doc = Document::new("x", "", "beta", Vec::<String>::new()).with_embedding(vec![1.0]);
        assert!(Example::encode(&doc, &voc, &cfg).is_err());
    }

    #[test]
    fn odd_filter_split_is_rejected() {
        let cfg = ArchConfig {
            title_filters: 3,
            ..small_conv()
        };
        assert!(ModelParams::init(&vocab(), &cfg, 1).is_err());
    }

    proptest! {
        #[test]
        fn linear_score_ignores_order(mut ids in prop::collection::vec(1u32..8, 1..30), seed in 0u64..100) {
            let voc = vocab();
            let p = ModelParams::init(&voc, &ArchConfig::linear(), seed).unwrap();
            let a = Example::from_ids(vec![], ids.clone(), None);
            ids.reverse();
            let b = Example::from_ids(ids, vec![], None);
            prop_assert_eq!(p.forward(&a), p.forward(&b));
        }

        #[test]
        fn forward_is_pure(seed in 0u64..50) {
            let voc = vocab();
            let p = ModelParams::init(&voc, &small_conv(), seed).unwrap();
            let ex = random_example(&mut ChaCha8Rng::seed_from_u64(seed), voc.len(), 0);
            prop_assert_eq!(p.forward(&ex), p.forward(&ex));
        }
    }
}
