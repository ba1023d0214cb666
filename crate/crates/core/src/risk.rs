//! Surrogate losses and the supervised / positive-unlabeled risk estimators.
//!
//! Every estimator returns the reported risk together with the derivative
//! of the risk with respect to each example's score. The trainer multiplies
//! these by the model's score gradients. For the non-negative estimator the
//! per-score values are a descent *directive*, not the gradient of the
//! reported value: in the correction branch they ascend the negative part.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Sigmoid,
    /// Evaluation only; carries no derivative.
    ZeroOne,
}

/// `ℓ(t, y) = 1 / (1 + exp(t·y))` and its derivative in `t`.
pub fn sigmoid_loss(t: f64, y: f64) -> (f64, f64) {
    let z = t * y;
    // Evaluate through exp(-|z|) so neither branch overflows.
    let loss = if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    (loss, -y * loss * (1.0 - loss))
}

/// 1 when the sign rule (`t > 0` means positive) disagrees with `y`.
pub fn zero_one_loss(t: f64, y: f64) -> f64 {
    let predicted = if t > 0.0 { 1.0 } else { -1.0 };
    if predicted == y {
        0.0
    } else {
        1.0
    }
}

impl Loss {
    pub fn eval(self, t: f64, y: f64) -> (f64, f64) {
        match self {
            Loss::Sigmoid => sigmoid_loss(t, y),
            Loss::ZeroOne => (zero_one_loss(t, y), 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskMode {
    Pn,
    Naive,
    Upu,
    Nnpu,
    Pnu,
}

impl FromStr for RiskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pn" => RiskMode::Pn,
            "naive" => RiskMode::Naive,
            "upu" => RiskMode::Upu,
            "nnpu" => RiskMode::Nnpu,
            "pnu" => RiskMode::Pnu,
            _ => return Err(Error::Config(format!("unknown risk mode {s:?}"))),
        })
    }
}

impl fmt::Display for RiskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RiskMode::Pn => "pn",
            RiskMode::Naive => "naive",
            RiskMode::Upu => "upu",
            RiskMode::Nnpu => "nnpu",
            RiskMode::Pnu => "pnu",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub mode: RiskMode,
    /// Assumed positive prior; 0.5 gives the balanced-error surrogate.
    pub prior: f64,
    /// Multiplier on the positive expectation.
    pub alpha: f64,
    pub nn_beta: f64,
    pub nn_gamma: f64,
    pub pnu_gamma: f64,
    /// Use the non-negative correction inside the PU half of `pnu`.
    pub pnu_nonneg: bool,
    pub loss: Loss,
    /// Treat a class absent from a batch as contributing zero instead of
    /// failing. Only uniform (non-proportional) batching needs this.
    pub allow_empty: bool,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            mode: RiskMode::Nnpu,
            prior: 0.5,
            alpha: 1.0,
            nn_beta: 0.0,
            nn_gamma: 1.0,
            pnu_gamma: 0.5,
            pnu_nonneg: true,
            loss: Loss::Sigmoid,
            allow_empty: false,
        }
    }
}

impl RiskConfig {
    pub fn new(mode: RiskMode, prior: f64) -> Self {
        RiskConfig {
            mode,
            prior,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(what.to_string()))
            }
        };
        check(self.prior > 0.0 && self.prior < 1.0, "prior must lie in (0, 1)")?;
        check(self.alpha > 0.0 && self.alpha.is_finite(), "alpha must be positive")?;
        check(self.nn_beta >= 0.0, "nn_beta must be non-negative")?;
        check(
            self.nn_gamma > 0.0 && self.nn_gamma <= 1.0,
            "nn_gamma must lie in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.pnu_gamma),
            "pnu_gamma must lie in [0, 1]",
        )
    }

    /// Whether this estimator needs labeled negatives.
    pub fn needs_negatives(&self) -> bool {
        match self.mode {
            RiskMode::Pn => true,
            RiskMode::Pnu => self.pnu_gamma > 0.0,
            _ => false,
        }
    }

    pub fn needs_unlabeled(&self) -> bool {
        match self.mode {
            RiskMode::Pn => false,
            RiskMode::Pnu => self.pnu_gamma < 1.0,
            _ => true,
        }
    }

    /// Evaluates the configured estimator on scores of P, U and N examples.
    pub fn evaluate(&self, p: &[f64], u: &[f64], n: &[f64]) -> Result<RiskOutput> {
        let e = self.allow_empty;
        match self.mode {
            RiskMode::Pn => pn(p, n, self.prior, self.loss, e),
            RiskMode::Naive => {
                let mut out = pn(p, u, 0.5, self.loss, e)?;
                out.grad_u = std::mem::take(&mut out.grad_n);
                Ok(out)
            }
            RiskMode::Upu => upu(p, u, self.prior, self.alpha, self.loss, e),
            RiskMode::Nnpu => nnpu(
                p,
                u,
                self.prior,
                self.alpha,
                self.nn_beta,
                self.nn_gamma,
                self.loss,
                e,
            ),
            RiskMode::Pnu => {
                let nonneg = self.pnu_nonneg.then_some((self.nn_beta, self.nn_gamma));
                pnu(p, n, u, self.prior, self.pnu_gamma, self.alpha, nonneg, self.loss, e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Descent,
    /// The non-negative correction fired: the directive ascends the
    /// negative part.
    Ascent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskOutput {
    pub risk: f64,
    pub positive_part: f64,
    pub negative_part: f64,
    /// d risk / d score for each P example (or the training directive).
    pub grad_p: Vec<f64>,
    pub grad_u: Vec<f64>,
    pub grad_n: Vec<f64>,
    pub branch: Branch,
}

/// Mean of ℓ(g, y) over `scores` and the per-score derivative of that mean.
fn class_mean(scores: &[f64], y: f64, loss: Loss, allow_empty: bool, what: &str) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        if allow_empty {
            return Ok((0.0, Vec::new()));
        }
        return Err(Error::InvalidInput(format!("empty {what} set")));
    }
    let inv = 1.0 / scores.len() as f64;
    let mut sum = 0.0;
    let grad = scores
        .iter()
        .map(|&t| {
            let (l, d) = loss.eval(t, y);
            sum += l;
            d * inv
        })
        .collect();
    Ok((sum * inv, grad))
}

fn scale(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| x * c).collect()
}

/// `π·mean_P ℓ(g,+1) + (1−π)·mean_N ℓ(g,−1)`.
pub fn pn(p: &[f64], n: &[f64], prior: f64, loss: Loss, allow_empty: bool) -> Result<RiskOutput> {
    let (lp, dp) = class_mean(p, 1.0, loss, allow_empty, "positive")?;
    let (ln, dn) = class_mean(n, -1.0, loss, allow_empty, "negative")?;
    let pos = prior * lp;
    let neg = (1.0 - prior) * ln;
    Ok(RiskOutput {
        risk: pos + neg,
        positive_part: pos,
        negative_part: neg,
        grad_p: scale(&dp, prior),
        grad_u: Vec::new(),
        grad_n: scale(&dn, 1.0 - prior),
        branch: Branch::Descent,
    })
}

pub fn pn_risk(p: &[f64], n: &[f64], prior: f64, loss: Loss) -> Result<RiskOutput> {
    pn(p, n, prior, loss, false)
}

/// PN risk with U standing in for N and the balanced prior 0.5.
pub fn naive_risk(lp: &[f64], u: &[f64], loss: Loss) -> Result<RiskOutput> {
    RiskConfig {
        mode: RiskMode::Naive,
        loss,
        ..Default::default()
    }
    .evaluate(lp, u, &[])
}

struct PuParts {
    pos: f64,
    neg: f64,
    d_pos_p: Vec<f64>,
    d_neg_p: Vec<f64>,
    d_neg_u: Vec<f64>,
}

fn pu_parts(p: &[f64], u: &[f64], prior: f64, alpha: f64, loss: Loss, allow_empty: bool) -> Result<PuParts> {
    let (lpp, dpp) = class_mean(p, 1.0, loss, allow_empty, "positive")?;
    let (lpn, dpn) = class_mean(p, -1.0, loss, allow_empty, "positive")?;
    let (lun, dun) = class_mean(u, -1.0, loss, allow_empty, "unlabeled")?;
    let w = alpha * prior;
    Ok(PuParts {
        pos: w * lpp,
        neg: lun - w * lpn,
        d_pos_p: scale(&dpp, w),
        d_neg_p: scale(&dpn, -w),
        d_neg_u: dun,
    })
}

pub(crate) fn upu(p: &[f64], u: &[f64], prior: f64, alpha: f64, loss: Loss, allow_empty: bool) -> Result<RiskOutput> {
    let parts = pu_parts(p, u, prior, alpha, loss, allow_empty)?;
    Ok(RiskOutput {
        risk: parts.pos + parts.neg,
        positive_part: parts.pos,
        negative_part: parts.neg,
        grad_p: parts.d_pos_p.iter().zip(&parts.d_neg_p).map(|(a, b)| a + b).collect(),
        grad_u: parts.d_neg_u,
        grad_n: Vec::new(),
        branch: Branch::Descent,
    })
}

/// `α·π·mean_P[ℓ(g,+1) − ℓ(g,−1)] + mean_U ℓ(g,−1)`.
pub fn upu_risk(p: &[f64], u: &[f64], prior: f64, alpha: f64, loss: Loss) -> Result<RiskOutput> {
    upu(p, u, prior, alpha, loss, false)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn nnpu(
    p: &[f64],
    u: &[f64],
    prior: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    loss: Loss,
    allow_empty: bool,
) -> Result<RiskOutput> {
    let parts = pu_parts(p, u, prior, alpha, loss, allow_empty)?;
    if parts.neg >= -beta {
        return Ok(RiskOutput {
            risk: parts.pos + parts.neg,
            positive_part: parts.pos,
            negative_part: parts.neg,
            grad_p: parts.d_pos_p.iter().zip(&parts.d_neg_p).map(|(a, b)| a + b).collect(),
            grad_u: parts.d_neg_u,
            grad_n: Vec::new(),
            branch: Branch::Descent,
        });
    }
    Ok(RiskOutput {
        risk: parts.pos - beta,
        positive_part: parts.pos,
        negative_part: parts.neg,
        grad_p: scale(&parts.d_neg_p, -gamma),
        grad_u: scale(&parts.d_neg_u, -gamma),
        grad_n: Vec::new(),
        branch: Branch::Ascent,
    })
}

/// uPU with the non-negative correction: when the negative part drops
/// below `−β` the reported risk is `pos − β` and the directive is `−γ∇neg`.
pub fn nnpu_risk(
    p: &[f64],
    u: &[f64],
    prior: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    loss: Loss,
) -> Result<RiskOutput> {
    nnpu(p, u, prior, alpha, beta, gamma, loss, false)
}

/// `γ·PN + (1−γ)·PU`. `nonneg` selects the corrected PU estimator with
/// the given `(β, γ_nn)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pnu(
    p: &[f64],
    n: &[f64],
    u: &[f64],
    prior: f64,
    gamma: f64,
    alpha: f64,
    nonneg: Option<(f64, f64)>,
    loss: Loss,
    allow_empty: bool,
) -> Result<RiskOutput> {
    if gamma >= 1.0 {
        return pn(p, n, prior, loss, allow_empty);
    }
    let pu = match nonneg {
        Some((beta, g)) => nnpu(p, u, prior, alpha, beta, g, loss, allow_empty)?,
        None => upu(p, u, prior, alpha, loss, allow_empty)?,
    };
    if gamma <= 0.0 {
        return Ok(pu);
    }
    let sup = pn(p, n, prior, loss, allow_empty)?;
    let mix = |a: f64, b: f64| gamma * a + (1.0 - gamma) * b;
    Ok(RiskOutput {
        risk: mix(sup.risk, pu.risk),
        positive_part: mix(sup.positive_part, pu.positive_part),
        negative_part: mix(sup.negative_part, pu.negative_part),
        grad_p: sup.grad_p.iter().zip(&pu.grad_p).map(|(&a, &b)| mix(a, b)).collect(),
        grad_u: scale(&pu.grad_u, 1.0 - gamma),
        grad_n: scale(&sup.grad_n, gamma),
        branch: pu.branch,
    })
}

pub fn pnu_risk(
    p: &[f64],
    n: &[f64],
    u: &[f64],
    prior: f64,
    pnu_gamma: f64,
    alpha: f64,
    loss: Loss,
) -> Result<RiskOutput> {
    pnu(p, n, u, prior, pnu_gamma, alpha, None, loss, false)
}
