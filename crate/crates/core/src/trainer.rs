//! Minibatch risk minimization with early stopping on validation risk.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, ModelParams};
use crate::risk::{Loss, RiskConfig, RiskOutput};
use crate::sampler::{plan, uniform_batches, Batch, BatchPlan, ProportionalSampler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// How the per-estimator α is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSetting {
    /// Use `risk.alpha` as given.
    Fixed,
    /// Use the α implied by the batch plan.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub proportional: bool,
    pub alpha: AlphaSetting,
    pub risk: RiskConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::adam(),
            learning_rate: 0.001,
            max_epochs: 100,
            patience: 10,
            batch_size: 1000,
            proportional: true,
            alpha: AlphaSetting::Fixed,
            risk: RiskConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.risk.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return Err(Error::Config("need 1 ≤ max_epochs and patience ≤ max_epochs".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.risk.loss != Loss::Sigmoid {
            return Err(Error::Config("training needs a differentiable loss".into()));
        }
        Ok(())
    }
}

/// Encoded examples of one split, by class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub p: Vec<Example>,
    pub u: Vec<Example>,
    pub n: Vec<Example>,
}

impl Split {
    fn check(&self, risk: &RiskConfig, name: &str) -> Result<()> {
        let missing = |what: &str| {
            Err(Error::Config(format!(
                "{} risk needs {what} examples in the {name} split",
                risk.mode
            )))
        };
        if self.p.is_empty() {
            return missing("positive");
        }
        if risk.needs_unlabeled() && self.u.is_empty() {
            return missing("unlabeled");
        }
        if risk.needs_negatives() && self.n.is_empty() {
            return missing("negative");
        }
        Ok(())
    }

    /// Class sizes the batcher should draw from for this estimator.
    fn pools(&self, risk: &RiskConfig) -> (usize, usize, usize) {
        let u = if risk.needs_unlabeled() { self.u.len() } else { 0 };
        let n = if risk.needs_negatives() { self.n.len() } else { 0 };
        (self.p.len(), u, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_risk: f64,
    pub valid_risk: f64,
    /// F1 on validation treating P as positive and everything else as negative.
    pub valid_proxy_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub alpha: f64,
    pub plan: Option<BatchPlan>,
    pub elapsed: Duration,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    /// `epoch,train_risk,valid_risk,valid_proxy_f1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_risk,valid_risk,valid_proxy_f1\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.train_risk, e.valid_risk, e.valid_proxy_f1
            );
        }
        out
    }
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(len: usize) -> Self {
        OptState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, params: &mut [f64], grad: &[f64]) {
        match opt {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn scores(params: &ModelParams, pool: &[Example], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| params.forward(&pool[i])).collect()
}

fn batch_risk(params: &ModelParams, split: &Split, batch: &Batch, risk: &RiskConfig) -> Result<(RiskOutput, [Vec<f64>; 3])> {
    let s = [
        scores(params, &split.p, &batch.p),
        scores(params, &split.u, &batch.u),
        scores(params, &split.n, &batch.n),
    ];
    let out = risk.evaluate(&s[0], &s[1], &s[2])?;
    Ok((out, s))
}

/// Batches for one pass, in the configured batching shape.
enum Batcher {
    Proportional(ProportionalSampler),
    Uniform {
        pools: (usize, usize, usize),
        batch_size: usize,
        rng: ChaCha8Rng,
    },
}

impl Batcher {
    fn new(cfg: &TrainConfig, pools: (usize, usize, usize), rng: ChaCha8Rng) -> Result<(Self, Option<BatchPlan>)> {
        if cfg.proportional {
            // A batch larger than the split degenerates to full-batch training.
            let size = cfg.batch_size.min(pools.0 + pools.1 + pools.2);
            let p = plan(pools.0, pools.1, pools.2, size)?;
            Ok((
                Batcher::Proportional(ProportionalSampler::new(p, pools.0, pools.1, pools.2, rng)),
                Some(p),
            ))
        } else {
            Ok((
                Batcher::Uniform {
                    pools,
                    batch_size: cfg.batch_size,
                    rng,
                },
                None,
            ))
        }
    }

    fn epoch(&mut self) -> Vec<Batch> {
        match self {
            Batcher::Proportional(s) => s.epoch(),
            Batcher::Uniform {
                pools,
                batch_size,
                rng,
            } => uniform_batches(pools.0, pools.1, pools.2, *batch_size, rng),
        }
    }
}

const VALID_STREAM: u64 = 0x05ee_d0f7_a11d;

/// The estimator actually evaluated, after α and empty-class handling.
fn effective_risk(cfg: &TrainConfig, plan: Option<&BatchPlan>) -> RiskConfig {
    let mut risk = cfg.risk;
    if let (AlphaSetting::Auto, Some(p)) = (cfg.alpha, plan) {
        risk.alpha = p.alpha;
    }
    // Without proportional batching a class can be absent from a batch; it
    // then contributes nothing to that batch's risk.
    risk.allow_empty = !cfg.proportional;
    risk
}

/// Mean batch risk over one deterministic pass of the validation split.
pub fn validate(params: &ModelParams, valid: &Split, cfg: &TrainConfig) -> Result<f64> {
    valid.check(&cfg.risk, "validation")?;
    let pools = valid.pools(&cfg.risk);
    let (mut batcher, plan) = Batcher::new(cfg, pools, ChaCha8Rng::seed_from_u64(cfg.seed ^ VALID_STREAM))?;
    let risk = effective_risk(cfg, plan.as_ref());
    let batches = batcher.epoch();
    let mut total = 0.0;
    for b in &batches {
        total += batch_risk(params, valid, b, &risk)?.0.risk;
    }
    Ok(total / batches.len() as f64)
}

fn proxy_f1(params: &ModelParams, split: &Split) -> f64 {
    let tp = split.p.iter().filter(|e| params.forward(e) > 0.0).count() as f64;
    let fp = split
        .u
        .iter()
        .chain(&split.n)
        .filter(|e| params.forward(e) > 0.0)
        .count() as f64;
    let fn_ = split.p.len() as f64 - tp;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Trains from `init`, returning the parameters of the epoch with the
/// lowest validation risk (earliest on ties).
pub fn train(init: ModelParams, train: &Split, valid: &Split, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    train.check(&cfg.risk, "training")?;
    valid.check(&cfg.risk, "validation")?;
    let start = Instant::now();
    let (mut batcher, plan) = Batcher::new(cfg, train.pools(&cfg.risk), ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let risk = effective_risk(cfg, plan.as_ref());

    let mut params = init;
    let mut opt = OptState::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut best = params.clone();
    let mut best_risk = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let batches = batcher.epoch();
        let mut train_total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let (out, _) = batch_risk(&params, train, batch, &risk)?;
            if !out.risk.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training risk at epoch {epoch}, batch {bi}"
                )));
            }
            train_total += out.risk;
            grad.fill(0.0);
            for (pool, idx, coef) in [
                (&train.p, &batch.p, &out.grad_p),
                (&train.u, &batch.u, &out.grad_u),
                (&train.n, &batch.n, &out.grad_n),
            ] {
                for (&i, &c) in idx.iter().zip(coef.iter()) {
                    if c != 0.0 {
                        params.backward_into(&pool[i], c, &mut grad);
                    }
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at epoch {epoch}, batch {bi}"
                )));
            }
            opt.step(cfg.optimizer, cfg.learning_rate, params.values_mut(), &grad);
        }
        let valid_risk = validate(&params, valid, cfg)?;
        if !valid_risk.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation risk at epoch {epoch}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train_risk: train_total / batches.len().max(1) as f64,
            valid_risk,
            valid_proxy_f1: proxy_f1(&params, valid),
        });
        if valid_risk < best_risk {
            best_risk = valid_risk;
            best_epoch = epoch;
            best = params.clone();
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch,
            alpha: risk.alpha,
            plan,
            elapsed: start.elapsed(),
        },
    ))
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best_index: usize,
    pub valid_risks: Vec<f64>,
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// Trains every grid cell and keeps the one with the lowest best
/// validation risk; the first cell wins ties.
pub fn tune(
    grid: &[TrainConfig],
    init: impl Fn(&TrainConfig) -> Result<ModelParams>,
    train_split: &Split,
    valid: &Split,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty tuning grid".into()));
    }
    let mut best: Option<(usize, ModelParams, TrainHistory)> = None;
    let mut risks = Vec::with_capacity(grid.len());
    for (i, cfg) in grid.iter().enumerate() {
        let (params, history) = train(init(cfg)?, train_split, valid, cfg)?;
        let r = history.best().valid_risk;
        risks.push(r);
        let better = match &best {
            None => true,
            Some((_, _, h)) => r < h.best().valid_risk,
        };
        if better {
            best = Some((i, params, history));
        }
    }
    let (best_index, params, history) = best.expect("non-empty grid");
    Ok(TuneResult {
        best_index,
        valid_risks: risks,
        params,
        history,
    })
}
