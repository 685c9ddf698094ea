//! Observed data and the derived quantities every estimator is built from.
//!
//! A sample holds rows of `(y, x, p)`: an outcome, a covariate vector, and a
//! probability score in `[0, 1]`. The derived quantities are the signed score
//! `z = 2p - 1`, the outcome residual `R = y - m(x)`, and the score residual
//! `a = p - r(x)`, where `m` and `r` are conditional-mean functions supplied
//! as a [`NuisancePair`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Rows of `(y, x, p)`; the only data available outside simulations.
#[derive(Debug, Clone)]
pub struct ObservedSample {
    y: Vec<f64>,
    x: Vec<f64>, // row-major, n x d
    p: Vec<f64>,
    d: usize,
}

impl ObservedSample {
    /// Builds a sample from an outcome vector, a row-major covariate matrix
    /// with `d` columns, and a score vector.
    pub fn new(y: Vec<f64>, x: Vec<f64>, d: usize, p: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Validation("sample must contain at least one row".into()));
        }
        if p.len() != n {
            return Err(Error::Validation(format!(
                "y has {n} rows but p has {}",
                p.len()
            )));
        }
        if d == 0 || x.len() != n * d {
            return Err(Error::Validation(format!(
                "covariate matrix has {} entries, expected {n} x {d}",
                x.len()
            )));
        }
        for (i, &yi) in y.iter().enumerate() {
            if !yi.is_finite() {
                return Err(Error::Validation(format!("y is not finite at row {i}")));
            }
        }
        for (i, &pi) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&pi) {
                return Err(Error::Validation(format!(
                    "p must lie in [0, 1]; found {pi} at row {i}"
                )));
            }
        }
        for (idx, &xi) in x.iter().enumerate() {
            if !xi.is_finite() {
                return Err(Error::Validation(format!(
                    "covariate is not finite at row {}, column {}",
                    idx / d,
                    idx % d
                )));
            }
        }
        Ok(ObservedSample { y, x, p, d })
    }

    /// Convenience constructor from per-row covariate vectors.
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>], p: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Validation(format!(
                    "covariate row {i} has {} entries, expected {d}",
                    r.len()
                )));
            }
            x.extend_from_slice(r);
        }
        ObservedSample::new(y, x, d, p)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }
}

type NuisanceClosure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Conditional-mean functions `m: x -> E[Y | X = x]` and
/// `r: x -> E[p | X = x]`. Outputs of `r` are clamped to `[0, 1]` at
/// evaluation time; the clamp is part of this type's contract, not the
/// caller's job.
#[derive(Clone)]
pub struct NuisancePair {
    m: NuisanceClosure,
    r: NuisanceClosure,
}

impl std::fmt::Debug for NuisancePair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("NuisancePair {{ m, r }}")
    }
}

impl NuisancePair {
    pub fn new<M, R>(m: M, r: R) -> Self
    where
        M: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        R: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        NuisancePair { m: Arc::new(m), r: Arc::new(r) }
    }

    /// Outcome conditional mean at `x`.
    pub fn m_at(&self, x: &[f64]) -> f64 {
        (self.m)(x)
    }

    /// Score conditional mean at `x`, clamped to `[0, 1]`. NaN passes
    /// through so that evaluation errors stay detectable.
    pub fn r_at(&self, x: &[f64]) -> f64 {
        (self.r)(x).clamp(0.0, 1.0)
    }
}

/// The derived quantities `z`, `R`, and `a`, aligned with sample rows.
#[derive(Debug, Clone)]
pub struct DerivedQuantities {
    /// Signed score `2p - 1`, in `[-1, 1]`.
    pub z: Vec<f64>,
    /// Outcome residual `y - m(x)`.
    pub r_resid: Vec<f64>,
    /// Score residual `p - r(x)`.
    pub a: Vec<f64>,
}

/// Evaluates the nuisance pair on every row and forms `z`, `R`, and `a`.
/// Deterministic and order-preserving.
pub fn derive(sample: &ObservedSample, nuis: &NuisancePair) -> Result<DerivedQuantities> {
    let n = sample.len();
    let mut z = Vec::with_capacity(n);
    let mut r_resid = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for i in 0..n {
        let x = sample.x_row(i);
        let m = nuis.m_at(x);
        if !m.is_finite() {
            return Err(Error::NuisanceEvaluation { name: "m", row: i });
        }
        let r = nuis.r_at(x);
        if !r.is_finite() {
            return Err(Error::NuisanceEvaluation { name: "r", row: i });
        }
        z.push(2.0 * sample.p[i] - 1.0);
        r_resid.push(sample.y[i] - m);
        a.push(sample.p[i] - r);
    }
    Ok(DerivedQuantities { z, r_resid, a })
}

/// Sample residual score variance `n^-1 * sum a_i^2`. Nonnegative; zero
/// exactly when every residual is zero.
pub fn residual_variance(a: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Validation("residual_variance requires a non-empty input".into()));
    }
    let ss = compensated_sum(a.iter().map(|v| v * v));
    Ok((ss / a.len() as f64).max(0.0))
}
