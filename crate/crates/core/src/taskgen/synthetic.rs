//! Gaussian class-conditional PU data with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPuSpec {
    /// Positive class prior of the unlabeled marginal.
    pub prior: f64,
    pub mean_pos: Vec<f64>,
    pub mean_neg: Vec<f64>,
    pub cov_pos: Vec<Vec<f64>>,
    pub cov_neg: Vec<Vec<f64>>,
    pub n_p: usize,
    pub n_u: usize,
    pub n_n: usize,
    pub seed: u64,
}

impl SyntheticPuSpec {
    /// Identity covariances, means at ±separation/2 along the diagonal
    /// direction, so the distance between the means is `separation`.
    pub fn isotropic(dim: usize, prior: f64, separation: f64, n_p: usize, n_u: usize, seed: u64) -> Self {
        let offset = separation / (2.0 * (dim as f64).sqrt());
        let eye: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        SyntheticPuSpec {
            prior,
            mean_pos: vec![offset; dim],
            mean_neg: vec![-offset; dim],
            cov_pos: eye.clone(),
            cov_neg: eye,
            n_p,
            n_u,
            n_n: 0,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_pos.len()
    }

    fn validate(&self) -> Result<()> {
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::InvalidInput(format!("prior {} outside (0, 1)", self.prior)));
        }
        if self.n_p == 0 || self.n_u == 0 {
            return Err(Error::InvalidInput("n_p and n_u must be at least 1".into()));
        }
        let d = self.dim();
        if d == 0 || self.mean_neg.len() != d {
            return Err(Error::InvalidInput("class means must share a non-zero dimension".into()));
        }
        for cov in [&self.cov_pos, &self.cov_neg] {
            if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidInput(format!("covariance must be {d}x{d}")));
            }
        }
        Ok(())
    }
}

/// A multivariate normal sampler.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    chol: Vec<Vec<f64>>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: &[Vec<f64>]) -> Result<Self> {
        Ok(Gaussian {
            chol: cholesky(cov)?,
            mean,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + (0..=i).map(|j| self.chol[i][j] * z[j]).sum::<f64>())
            .collect()
    }
}

/// Lower-triangular L with L·Lᵀ = a.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d.is_nan() || d <= 0.0 || d.is_infinite() {
                    return Err(Error::InvalidInput(
                        "covariance is not positive definite".into(),
                    ));
                }
                l[i][j] = d.sqrt();
            } else {
                if (a[i][j] - a[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidInput("covariance is not symmetric".into()));
                }
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPuData {
    pub p: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// True class of each U point.
    pub u_truth: Vec<bool>,
    pub n: Vec<Vec<f64>>,
}

impl SyntheticPuData {
    pub fn u_positive_fraction(&self) -> f64 {
        self.u_truth.iter().filter(|&&t| t).count() as f64 / self.u_truth.len() as f64
    }
}

/// Class-conditional samplers plus the prior; draws fully labeled samples too.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub prior: f64,
    pub pos: Gaussian,
    pub neg: Gaussian,
}

impl SyntheticSource {
    pub fn new(spec: &SyntheticPuSpec) -> Result<Self> {
        spec.validate()?;
        Ok(SyntheticSource {
            prior: spec.prior,
            pos: Gaussian::new(spec.mean_pos.clone(), &spec.cov_pos)?,
            neg: Gaussian::new(spec.mean_neg.clone(), &spec.cov_neg)?,
        })
    }

    /// Draws from the marginal π⁺p⁺ + π⁻p⁻, returning (points, labels).
    pub fn marginal(&self, n: usize, rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<bool>) {
        (0..n)
            .map(|_| {
                let y = rng.random_bool(self.prior);
                let x = if y { self.pos.sample(rng) } else { self.neg.sample(rng) };
                (x, y)
            })
            .unzip()
    }

    pub fn draw(&self, n_p: usize, n_u: usize, n_n: usize, rng: &mut impl Rng) -> SyntheticPuData {
        let p = (0..n_p).map(|_| self.pos.sample(rng)).collect();
        let (u, u_truth) = self.marginal(n_u, rng);
        let n = (0..n_n).map(|_| self.neg.sample(rng)).collect();
        SyntheticPuData { p, u, u_truth, n }
    }
}

pub fn generate_synthetic(spec: &SyntheticPuSpec) -> Result<SyntheticPuData> {
    let source = SyntheticSource::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(source.draw(spec.n_p, spec.n_u, spec.n_n, &mut rng))
}
