//! Robust mean and covariance estimation under ε-contamination.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RobustMethod {
    SpectralFilter,
    TrimmedCoordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustMeanConfig {
    pub epsilon: f64,
    pub method: RobustMethod,
    pub max_rounds: usize,
    /// Variance proxy σ²; estimated from the data when absent.
    pub sigma_sq: Option<f64>,
    /// The filter stops once the top covariance eigenvalue is at most `threshold · σ²`.
    pub threshold: f64,
}

impl RobustMeanConfig {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, method: RobustMethod::SpectralFilter, max_rounds: 100, sigma_sq: None, threshold: 9.0 }
    }

    pub fn with_sigma_sq(mut self, sigma_sq: f64) -> Self {
        self.sigma_sq = Some(sigma_sq);
        self
    }

    pub fn with_method(mut self, method: RobustMethod) -> Self {
        self.method = method;
        self
    }
}

fn to_matrix(points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    };
    let d = first.len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidArgument("points have mixed dimensions".into()));
    }
    Ok(DMatrix::from_fn(points.len(), d, |i, j| points[i][j]))
}

fn mean_of_rows(x: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(x.ncols());
    for &i in rows {
        m += x.row(i).transpose();
    }
    m / rows.len() as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Largest per-coordinate `(1.4826 · MAD)²`.
pub fn mad_variance(x: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for col in x.column_iter() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        let med = median(&mut v);
        let mut dev: Vec<f64> = col.iter().map(|c| (c - med).abs()).collect();
        let s = 1.4826 * median(&mut dev);
        worst = worst.max(s * s);
    }
    worst
}

/// MAD-based variance proxy, falling back to the largest coordinate
/// variance when more than half of every coordinate is tied.
fn scale_estimate(x: &DMatrix<f64>) -> f64 {
    let mad = mad_variance(x);
    if mad > 0.0 {
        return mad;
    }
    x.column_iter().map(|c| c.variance()).fold(0.0, f64::max)
}

pub fn robust_mean(points: &[DVector<f64>], config: &RobustMeanConfig) -> Result<DVector<f64>> {
    robust_mean_rows(&to_matrix(points)?, config)
}

/// Same as [`robust_mean`] with one point per row.
pub fn robust_mean_rows(x: &DMatrix<f64>, config: &RobustMeanConfig) -> Result<DVector<f64>> {
    if !(0.0..0.5).contains(&config.epsilon) {
        return Err(Error::CorruptionTooLarge { epsilon: config.epsilon });
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    match config.method {
        RobustMethod::TrimmedCoordinate => Ok(trimmed_coordinate(x, config.epsilon)),
        RobustMethod::SpectralFilter => spectral_filter(x, config),
    }
}

fn trimmed_coordinate(x: &DMatrix<f64>, epsilon: f64) -> DVector<f64> {
    let n = x.nrows();
    let cut = ((epsilon * n as f64 + 1e-9).floor() as usize).min((n - 1) / 2);
    DVector::from_iterator(
        x.ncols(),
        x.column_iter().map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            let kept = &v[cut..n - cut];
            kept.iter().sum::<f64>() / kept.len() as f64
        }),
    )
}

fn spectral_filter(x: &DMatrix<f64>, config: &RobustMeanConfig) -> Result<DVector<f64>> {
    let (n, d) = (x.nrows(), x.ncols());
    let all: Vec<usize> = (0..n).collect();
    if config.epsilon == 0.0 {
        return Ok(mean_of_rows(x, &all));
    }
    let needed = d.max(2);
    if n < needed {
        return Err(Error::InsufficientSamples { needed, got: n });
    }
    let sigma_sq = config.sigma_sq.unwrap_or_else(|| scale_estimate(x));
    let limit = config.threshold * sigma_sq;
    let mut active = all;
    for _ in 0..config.max_rounds {
        if active.is_empty() {
            return Err(Error::FilterDegenerate);
        }
        let mean = mean_of_rows(x, &active);
        let mut cov = DMatrix::zeros(d, d);
        for &i in &active {
            let c = x.row(i).transpose() - &mean;
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= active.len() as f64;
        let eig = SymmetricEigen::new(cov);
        let (top, &lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty spectrum");
        if lambda <= limit {
            return Ok(mean);
        }
        let v = eig.eigenvectors.column(top);
        let mut scored: Vec<(f64, usize)> = active
            .iter()
            .map(|&i| {
                let p = (x.row(i).transpose() - &mean).dot(&v);
                (p * p, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let remove = ((config.epsilon * active.len() as f64).ceil() as usize).max(1);
        if remove >= scored.len() {
            return Err(Error::FilterDegenerate);
        }
        active = scored[remove..].iter().map(|s| s.1).collect();
        active.sort_unstable();
    }
    warn!("spectral filter hit its round limit; returning the current mean");
    if active.is_empty() {
        return Err(Error::FilterDegenerate);
    }
    Ok(mean_of_rows(x, &active))
}

/// Robust second moment: robust mean of the flattened `x xᵀ`, symmetrised.
pub fn robust_covariance(points: &[DVector<f64>], config: &RobustMeanConfig) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    };
    let d = first.len();
    let flat = DMatrix::from_fn(points.len(), d * d, |i, k| points[i][k / d] * points[i][k % d]);
    let m = robust_mean_rows(&flat, config)?;
    let m = DMatrix::from_row_slice(d, d, m.as_slice());
    Ok((&m + m.transpose()) * 0.5)
}
