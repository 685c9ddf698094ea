//! Nuisance estimation: degree-2 polynomial ridge regression and
//! deterministic K-fold splitting.
//!
//! Both conditional means are fit by ridge on the same expanded feature set.
//! Features are standardized to mean 0 / SD 1 on the fitting split only, the
//! intercept is unpenalized, and the system is solved by normal equations.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{cholesky_solve_in_place, compensated_mean, Matrix};
use crate::rng::substream;
use crate::sample::{NuisancePair, ObservedSample};

/// Default ridge penalty on standardized features.
pub const DEFAULT_RIDGE_LAMBDA: f64 = 25.0;

/// Default number of cross-fitting folds.
pub const DEFAULT_FOLDS: usize = 5;

/// Number of expanded features for `d` covariates at degree 2:
/// linear terms, squares, and pairwise cross-products.
pub fn expanded_len(d: usize) -> usize {
    2 * d + d * (d - 1) / 2
}

/// Degree-2 polynomial expansion of one covariate row:
/// `[x_1..x_d, x_1^2..x_d^2, x_i * x_j for i < j]`. The intercept is handled
/// by the model, not the expansion. Only degree 2 is supported.
pub fn poly_features(x_row: &[f64], degree: usize) -> Result<Vec<f64>> {
    if degree != 2 {
        return Err(Error::Validation(format!(
            "unsupported polynomial degree {degree}; only 2 is available"
        )));
    }
    let d = x_row.len();
    let mut f = Vec::with_capacity(expanded_len(d));
    f.extend_from_slice(x_row);
    f.extend(x_row.iter().map(|v| v * v));
    for i in 0..d {
        for j in (i + 1)..d {
            f.push(x_row[i] * x_row[j]);
        }
    }
    Ok(f)
}

/// Expands every row of a sample's covariates.
pub fn poly_matrix(sample: &ObservedSample) -> Matrix {
    let n = sample.len();
    let mut m = Matrix::with_capacity(n, expanded_len(sample.dim()));
    let mut buf;
    for i in 0..n {
        buf = poly_features(sample.x_row(i), 2).expect("degree 2 is always supported");
        m.push_row(&buf);
    }
    m
}

/// A fitted ridge regression on standardized features with an unpenalized
/// intercept. Refitting identical inputs reproduces identical weights.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    weights: Vec<f64>,
    intercept: f64,
    feature_means: Vec<f64>,
    feature_scales: Vec<f64>,
    lambda: f64,
}

impl RidgeModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        let mut acc = self.intercept;
        for (j, f) in features.iter().enumerate() {
            acc += self.weights[j] * (f - self.feature_means[j]) / self.feature_scales[j];
        }
        acc
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Weight on the original (unstandardized) feature `j`.
    pub fn raw_coefficient(&self, j: usize) -> f64 {
        self.weights[j] / self.feature_scales[j]
    }
}

/// Minimizes `sum (target - pred)^2 + lambda * ||weights||^2` over
/// standardized features, intercept unpenalized, by normal equations.
/// A singular system at `lambda = 0` is reported as [`Error::SingularSystem`].
pub fn ridge_fit(features: &Matrix, targets: &[f64], lambda: f64) -> Result<RidgeModel> {
    let n = features.rows();
    let k = features.cols();
    if n < 2 {
        return Err(Error::Validation("ridge_fit requires at least two rows".into()));
    }
    if targets.len() != n {
        return Err(Error::Validation(format!(
            "ridge_fit: {n} feature rows but {} targets",
            targets.len()
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Validation(format!("lambda must be nonnegative, got {lambda}")));
    }

    // Standardization statistics on the fitting split only.
    let means: Vec<f64> = (0..k)
        .map(|j| compensated_mean(&(0..n).map(|i| features.row(i)[j]).collect::<Vec<_>>()))
        .collect();
    let scales: Vec<f64> = (0..k)
        .map(|j| {
            let ss: f64 = (0..n).map(|i| (features.row(i)[j] - means[j]).powi(2)).sum();
            let sd = (ss / n as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let intercept = compensated_mean(targets);

    // Normal equations on the standardized design.
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut zrow = vec![0.0; k];
    for (i, &target) in targets.iter().enumerate() {
        let row = features.row(i);
        for j in 0..k {
            zrow[j] = (row[j] - means[j]) / scales[j];
        }
        let yc = target - intercept;
        for a in 0..k {
            rhs[a] += zrow[a] * yc;
            for b in a..k {
                gram[a * k + b] += zrow[a] * zrow[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[a * k + b] = gram[b * k + a];
        }
        gram[a * k + a] += lambda;
    }
    cholesky_solve_in_place(&mut gram, k, &mut rhs)?;

    Ok(RidgeModel {
        weights: rhs,
        intercept,
        feature_means: means,
        feature_scales: scales,
        lambda,
    })
}

/// Fits both nuisance regressions on the full sample: `m` on the outcome and
/// `r` on the score. Score predictions are clamped to `[0, 1]` by the
/// returned [`NuisancePair`].
pub fn fit_nuisances(sample: &ObservedSample, lambda: f64) -> Result<NuisancePair> {
    let k = expanded_len(sample.dim());
    if sample.len() < k + 1 {
        return Err(Error::Validation(format!(
            "need at least {} rows to fit {} features, got {}",
            k + 1,
            k,
            sample.len()
        )));
    }
    let features = poly_matrix(sample);
    let m_model = ridge_fit(&features, sample.y(), lambda)?;
    let r_model = ridge_fit(&features, sample.p(), lambda)?;
    Ok(nuisances_from_models(m_model, r_model))
}

/// Wraps two fitted ridge models as a nuisance pair over raw covariates.
pub fn nuisances_from_models(m_model: RidgeModel, r_model: RidgeModel) -> NuisancePair {
    NuisancePair::new(
        move |x: &[f64]| m_model.predict(&poly_features(x, 2).expect("degree 2")),
        move |x: &[f64]| r_model.predict(&poly_features(x, 2).expect("degree 2")),
    )
}

/// A partition of `{0..n-1}` into `K` folds of near-equal size.
#[derive(Debug, Clone, Serialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Row indices inside fold `k`.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == k).collect()
    }
}

/// Uniform random partition into `K` folds, deterministic given
/// `(n, K, seed)`; fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Validation(format!("K must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Validation(format!("K = {k} exceeds the sample size {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, 0));
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}
