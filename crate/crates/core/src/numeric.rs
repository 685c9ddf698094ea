//! Compensated reductions and small dense linear algebra.
//!
//! All reductions used by the estimators go through Neumaier summation so
//! that results are stable to ~1e-12 regardless of evaluation order.

use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};

fn standard_normal() -> statrs::distribution::Normal {
    statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal is valid")
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Standard normal quantile function.
pub fn standard_normal_quantile(q: f64) -> f64 {
    standard_normal().inverse_cdf(q)
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated arithmetic mean. Returns 0 for an empty slice.
pub fn compensated_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Compensated mean of `f` over the slice.
pub fn compensated_mean_by<T>(values: &[T], f: impl FnMut(&T) -> f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    compensated_sum(values.iter().map(f)) / values.len() as f64
}

/// Sample standard deviation (ddof = 1). Returns 0 when fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = compensated_mean(values);
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (ss / (n as f64 - 1.0)).max(0.0).sqrt()
}

/// Row-major dense matrix.
#[derive(Debug, Clone)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn with_capacity(rows: usize, cols: usize) -> Self {
        Matrix { data: Vec::with_capacity(rows * cols), rows: 0, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::with_capacity(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Validation(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            m.push_row(r);
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Solves `A x = b` in place for symmetric positive-definite `A` (row-major,
/// k x k) via Cholesky. `A` and `b` are overwritten; the solution is left in
/// `b`. Fails with `SingularSystem` when a pivot is not strictly positive.
pub fn cholesky_solve_in_place(a: &mut [f64], k: usize, b: &mut [f64]) -> Result<()> {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(b.len(), k);
    // Lower-triangular factorization A = L L^T.
    for j in 0..k {
        let mut d = a[j * k + j];
        for t in 0..j {
            d -= a[j * k + t] * a[j * k + t];
        }
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::SingularSystem);
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for t in 0..j {
                s -= a[i * k + t] * a[j * k + t];
            }
            a[i * k + j] = s / d;
        }
    }
    // Forward substitution L y = b.
    for i in 0..k {
        let mut s = b[i];
        for t in 0..i {
            s -= a[i * k + t] * b[t];
        }
        b[i] = s / a[i * k + i];
    }
    // Back substitution L^T x = y.
    for i in (0..k).rev() {
        let mut s = b[i];
        for t in (i + 1)..k {
            s -= a[t * k + i] * b[t];
        }
        b[i] = s / a[i * k + i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_cancellation() {
        // Naive summation loses the 1.0 entirely.
        let v = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(v.iter().copied()), 1.0);
    }

    #[test]
    fn compensated_sum_order_stable() {
        let mut xs: Vec<f64> = (0..2000).map(|i| ((i * 2654435761u64 as usize) as f64).sin() * 1e6).collect();
        let s1 = compensated_sum(xs.iter().copied());
        xs.reverse();
        let s2 = compensated_sum(xs.iter().copied());
        assert_relative_eq!(s1, s2, max_relative = 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        // A = [[4,2],[2,3]], b = [2,1] -> x = [0.5, 0]
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        let mut b = vec![2.0, 1.0];
        cholesky_solve_in_place(&mut a, 2, &mut b).unwrap();
        assert_relative_eq!(b[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(b[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let mut a = vec![1.0, 1.0, 1.0, 1.0];
        let mut b = vec![1.0, 1.0];
        assert!(matches!(
            cholesky_solve_in_place(&mut a, 2, &mut b),
            Err(Error::SingularSystem)
        ));
    }

    #[test]
    fn sample_sd_basics() {
        assert_eq!(sample_sd(&[1.0]), 0.0);
        assert_relative_eq!(sample_sd(&[1.0, 3.0]), std::f64::consts::SQRT_2, epsilon = 1e-12);
    }
}
