//! Minibatch construction.
//!
//! Proportional batching puts a rounded-up share of every present class in
//! each batch, so no batch lacks positives. An epoch is one pass over the
//! positives; unlabeled and negative examples come from persistent shuffled
//! cycles that carry over between epochs.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub p: usize,
    pub u: usize,
    pub n: usize,
    /// Positive sampling frequency relative to uniform batching.
    pub alpha: f64,
}

/// Per-batch class counts for pools of the given sizes.
///
/// P (and N, when present) get `ceil(batch_size · share)`; U takes the
/// remainder. Without unlabeled data N takes the remainder instead.
pub fn plan(n_lp: usize, n_u: usize, n_n: usize, batch_size: usize) -> Result<BatchPlan> {
    let classes = 1 + usize::from(n_u > 0) + usize::from(n_n > 0);
    if n_lp == 0 || classes < 2 {
        return Err(Error::Config(
            "batching needs positives and at least one other class".into(),
        ));
    }
    if batch_size < classes {
        return Err(Error::Config(format!(
            "batch size {batch_size} cannot hold one example of each of {classes} classes"
        )));
    }
    let total = n_lp + n_u + n_n;
    let share = |k: usize| (batch_size * k).div_ceil(total).max(1);
    let p = share(n_lp);
    let (u, n) = if n_u > 0 {
        let n = if n_n > 0 { share(n_n) } else { 0 };
        (batch_size.saturating_sub(p + n), n)
    } else {
        (0, batch_size.saturating_sub(p))
    };
    if p + u + n != batch_size || (n_u > 0 && u == 0) || (n_n > 0 && n == 0) {
        return Err(Error::Config(format!(
            "batch size {batch_size} too small for class shares of {n_lp}/{n_u}/{n_n}"
        )));
    }
    if p > n_lp || u > n_u || n > n_n {
        return Err(Error::Config(format!(
            "pools {n_lp}/{n_u}/{n_n} smaller than per-batch counts {p}/{u}/{n}"
        )));
    }
    let alpha = (p as f64 / batch_size as f64) / (n_lp as f64 / total as f64);
    Ok(BatchPlan {
        batch_size,
        p,
        u,
        n,
        alpha,
    })
}

/// Indices into the caller's P, U and N pools.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub p: Vec<usize>,
    pub u: Vec<usize>,
    pub n: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.p.len() + self.u.len() + self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An endless shuffled pass over `0..len`, reshuffled on exhaustion.
#[derive(Debug, Clone)]
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(len: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Cycle { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k && !self.order.is_empty() {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let step = (k - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + step]);
            self.pos += step;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ProportionalSampler {
    plan: BatchPlan,
    n_lp: usize,
    u: Cycle,
    n: Cycle,
    rng: ChaCha8Rng,
}

impl ProportionalSampler {
    pub fn new(plan: BatchPlan, n_lp: usize, n_u: usize, n_n: usize, mut rng: ChaCha8Rng) -> Self {
        ProportionalSampler {
            plan,
            n_lp,
            u: Cycle::new(n_u, &mut rng),
            n: Cycle::new(n_n, &mut rng),
            rng,
        }
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    /// Position of the unlabeled cycle (items consumed since the last reshuffle).
    pub fn u_position(&self) -> usize {
        self.u.pos
    }

    /// One pass over the positives. A short final batch scales the U and N
    /// counts by the same ratio, rounded up.
    pub fn epoch(&mut self) -> Vec<Batch> {
        let mut lp: Vec<usize> = (0..self.n_lp).collect();
        lp.shuffle(&mut self.rng);
        let full = self.plan.p;
        lp.chunks(full)
            .map(|chunk| {
                let r = chunk.len();
                let u_k = (self.plan.u * r).div_ceil(full);
                let n_k = (self.plan.n * r).div_ceil(full);
                Batch {
                    p: chunk.to_vec(),
                    u: self.u.take(u_k, &mut self.rng),
                    n: self.n.take(n_k, &mut self.rng),
                }
            })
            .collect()
    }
}

/// Convenience wrapper: the batches of one epoch for a fresh sampler.
pub fn epoch_batches(
    n_lp: usize,
    n_u: usize,
    n_n: usize,
    plan: BatchPlan,
    rng: ChaCha8Rng,
) -> Vec<Batch> {
    ProportionalSampler::new(plan, n_lp, n_u, n_n, rng).epoch()
}

/// Pools all classes, shuffles jointly and cuts consecutive batches. Batches
/// may contain no positives at all.
pub fn uniform_batches(
    n_lp: usize,
    n_u: usize,
    n_n: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Batch> {
    let mut pool: Vec<(u8, usize)> = (0..n_lp)
        .map(|i| (0, i))
        .chain((0..n_u).map(|i| (1, i)))
        .chain((0..n_n).map(|i| (2, i)))
        .collect();
    pool.shuffle(rng);
    pool.chunks(batch_size.max(1))
        .map(|chunk| {
            let mut b = Batch::default();
            for &(class, i) in chunk {
                match class {
                    0 => b.p.push(i),
                    1 => b.u.push(i),
                    _ => b.n.push(i),
                }
            }
            b
        })
        .collect()
}
