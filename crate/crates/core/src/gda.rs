//! Gaussian discriminant analysis over feature vectors with one shared
//! covariance (LDA).
//!
//! With squared Mahalanobis distances `d_c = (x - mu_c)^T S^-1 (x - mu_c)`:
//!
//! - posterior: `p_c ∝ exp(-d_c + ln pi_c)` (no 1/2 factor on `d_c`)
//! - `E_U(x) = sum_c (d_c + ln pi_c) p_c`
//! - Mahalanobis score: `-min_c d_c`
//!
//! All solves go through the stored Cholesky factor of `S`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GdaModel {
    means: Vec<DVector<f64>>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    priors: Vec<f64>,
    ridge: f64,
}

impl GdaModel {
    /// Builds a model from explicit parameters. `cov` is row-major `dim x dim`.
    pub fn new(means: Vec<Vec<f64>>, cov: Vec<f64>, priors: Vec<f64>, ridge: f64) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::invalid("GDA needs at least one class"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if let Some(m) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.len(),
            });
        }
        if cov.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: cov.len(),
            });
        }
        if priors.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: priors.len(),
            });
        }
        if priors.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("class priors must all be positive"));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("class priors must sum to 1"));
        }
        if means.iter().flatten().chain(&cov).any(|v| !v.is_finite()) {
            return Err(Error::invalid("GDA parameters must be finite"));
        }
        let cov = DMatrix::from_row_slice(dim, dim, &cov);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::invalid(format!(
                "covariance is not symmetric (max deviation {asym:e})"
            )));
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::Numerical("shared covariance is not positive definite".to_string())
        })?;
        Ok(Self {
            means: means.into_iter().map(DVector::from_vec).collect(),
            cov,
            chol,
            priors,
            ridge,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.means.iter().map(|m| m.as_slice().to_vec()).collect()
    }

    /// Row-major covariance.
    pub fn covariance(&self) -> Vec<f64> {
        self.cov.transpose().as_slice().to_vec()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Squared Mahalanobis distance to every class mean.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let x = DVector::from_column_slice(x);
        let l = self.chol.l_dirty();
        Ok(self
            .means
            .iter()
            .map(|mu| {
                let diff = &x - mu;
                // S = L L^T, so d = |L^-1 diff|^2.
                let z = l
                    .solve_lower_triangular(&diff)
                    .expect("cholesky factor has positive diagonal");
                z.norm_squared()
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GdaFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: GdaFile = serde_json::from_str(s)?;
        f.into_model()
    }
}

/// On-disk form of [`GdaModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GdaFile {
    pub dim: usize,
    pub k: usize,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim x dim`.
    pub covariance: Vec<f64>,
    pub priors: Vec<f64>,
    pub ridge: f64,
}

impl From<&GdaModel> for GdaFile {
    fn from(m: &GdaModel) -> Self {
        Self {
            dim: m.dim(),
            k: m.num_classes(),
            means: m.means(),
            covariance: m.covariance(),
            priors: m.priors.clone(),
            ridge: m.ridge,
        }
    }
}

impl GdaFile {
    pub fn into_model(self) -> Result<GdaModel> {
        if self.means.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: self.means.len(),
            });
        }
        if self.means.first().map(Vec::len) != Some(self.dim) {
            return Err(Error::invalid("GDA file dim does not match means"));
        }
        GdaModel::new(self.means, self.covariance, self.priors, self.ridge)
    }
}

/// Moment estimates: class means, pooled within-class covariance divided
/// by N plus `ridge * I`, and class frequencies as priors. Labels must cover
/// `0..K` with every class present.
pub fn fit(features: &[Vec<f64>], labels: &[usize], ridge: f64) -> Result<GdaModel> {
    if features.is_empty() {
        return Err(Error::invalid("cannot fit GDA on no samples"));
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::invalid("feature dimension must be at least 1"));
    }
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: f.len(),
        });
    }
    let k = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; k];
    let mut sums = vec![DVector::<f64>::zeros(dim); k];
    for (f, &y) in features.iter().zip(labels) {
        counts[y] += 1;
        sums[y] += DVector::from_column_slice(f);
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {empty} has no samples")));
    }
    let means: Vec<DVector<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();

    let n = features.len() as f64;
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for (f, &y) in features.iter().zip(labels) {
        let d = DVector::from_column_slice(f) - &means[y];
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= n;
    // Symmetrize exactly before adding the ridge.
    let cov = (&cov + cov.transpose()) * 0.5 + DMatrix::identity(dim, dim) * ridge;

    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let means: Vec<Vec<f64>> = means.iter().map(|m| m.as_slice().to_vec()).collect();
    GdaModel::new(means, cov.transpose().as_slice().to_vec(), priors, ridge)
}

fn posterior_from(model: &GdaModel, d: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = d
        .iter()
        .zip(&model.priors)
        .map(|(dc, pc)| -dc + pc.ln())
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn gda_posterior(model: &GdaModel, x: &[f64]) -> Result<Vec<f64>> {
    let d = model.distances(x)?;
    Ok(posterior_from(model, &d))
}

pub fn energy_u(model: &GdaModel, x: &[f64]) -> Result<f64> {
    let d = model.distances(x)?;
    let p = posterior_from(model, &d);
    Ok(d.iter()
        .zip(&model.priors)
        .zip(&p)
        .map(|((dc, pc), pc_post)| (dc + pc.ln()) * pc_post)
        .sum())
}

/// `-min_c d_c`; zero exactly at a class mean, negative elsewhere.
pub fn mahalanobis_score(model: &GdaModel, x: &[f64]) -> Result<f64> {
    let d = model.distances(x)?;
    // `0 - d` rather than `-d` so a class mean scores +0, not -0.
    Ok(0.0 - d.into_iter().fold(f64::INFINITY, f64::min))
}
