//! The four group-effect estimators, their sandwich variances, Wald
//! intervals, and finite-difference orthogonality checks.
//!
//! The moment-ratio estimators solve `E[score] = 0` for tau:
//!
//! * `psi = (2p - 1) R - 2 tau a^2` backs the oracle and plug-in estimators
//!   (tau = mean(z R) / (2 mean(a^2))).
//! * `psi_tilde = 2 a (R - tau a)` backs the orthogonal estimator
//!   (tau = mean(a R) / mean(a^2)), whose expectation is first-order
//!   insensitive to errors in both nuisance functions.
//!
//! Both share the sandwich variance `E[score^2] / (2 V*)^2`.

use serde::{Deserialize, Serialize};

use crate::dgp::FiniteDistribution;
use crate::error::{Error, Result, IDENTIFICATION_TOLERANCE};
use crate::nuisance::{expanded_len, fit_nuisances, kfold_split, poly_matrix, ridge_fit};
use crate::numeric::{compensated_mean, compensated_mean_by, standard_normal_quantile, Matrix};
use crate::sample::{derive, residual_variance, NuisancePair, ObservedSample};

/// Which estimator produced a [`TauEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oracle,
    Plugin,
    Orthogonal,
    HardThreshold,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Oracle => "oracle",
            Method::Plugin => "plugin",
            Method::Orthogonal => "orthogonal",
            Method::HardThreshold => "hard_threshold",
        })
    }
}

/// Point estimate with inference diagnostics.
///
/// `se` is the estimated asymptotic standard deviation, so the Wald interval
/// half-width is `z_{1-alpha/2} * se / sqrt(n)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauEstimate {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Estimated residual score variance used in the denominator.
    pub v_star_hat: f64,
    pub n: usize,
    pub method: Method,
}

impl TauEstimate {
    fn wald(tau_hat: f64, se: f64, v_star_hat: f64, n: usize, alpha: f64, method: Method) -> Self {
        let half = standard_normal_quantile(1.0 - alpha / 2.0) * se / (n as f64).sqrt();
        TauEstimate {
            tau_hat,
            se,
            ci_low: tau_hat - half,
            ci_high: tau_hat + half,
            v_star_hat,
            n,
            method,
        }
    }

    pub fn covers(&self, target: f64) -> bool {
        self.ci_low <= target && target <= self.ci_high
    }
}

/// The two score functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `psi_i = z_i R_i - 2 tau a_i^2`.
    Psi,
    /// `psi_tilde_i = 2 a_i (R_i - tau a_i)`.
    PsiTilde,
}

/// Which nuisance function a perturbation applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceFn {
    /// The outcome conditional mean `m`.
    M,
    /// The score conditional mean `r`.
    R,
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Shared implementation of the `psi`-based moment-ratio estimator.
fn moment_tau(
    sample: &ObservedSample,
    nuis: &NuisancePair,
    alpha: f64,
    method: Method,
) -> Result<TauEstimate> {
    validate_alpha(alpha)?;
    let d = derive(sample, nuis)?;
    let v = residual_variance(&d.a)?;
    if v <= IDENTIFICATION_TOLERANCE {
        return Err(Error::NotIdentified { v_star_hat: v });
    }
    let n = sample.len();
    let num = compensated_mean_by(&(0..n).collect::<Vec<_>>(), |&i| d.z[i] * d.r_resid[i]);
    let tau_hat = num / (2.0 * v);
    let psi_sq = compensated_mean_by(&(0..n).collect::<Vec<_>>(), |&i| {
        let psi = d.z[i] * d.r_resid[i] - 2.0 * tau_hat * d.a[i] * d.a[i];
        psi * psi
    });
    let se = psi_sq.max(0.0).sqrt() / (2.0 * v);
    Ok(TauEstimate::wald(tau_hat, se, v, n, alpha, method))
}

/// Moment-ratio estimator at the true nuisance functions:
/// `tau = mean(z R) / (2 mean(a^2))`, sandwich standard error, Wald interval.
/// Fails with [`Error::NotIdentified`] when the residual score variance is
/// numerically zero.
pub fn oracle_tau(
    sample: &ObservedSample,
    nuis: &NuisancePair,
    alpha: f64,
) -> Result<TauEstimate> {
    moment_tau(sample, nuis, alpha, Method::Oracle)
}

/// Sandwich asymptotic standard deviation at a supplied `tau_hat`:
/// `sqrt(mean(psi_hat^2)) / (2 mean(a^2))`.
pub fn sandwich_se(sample: &ObservedSample, nuis: &NuisancePair, tau_hat: f64) -> Result<f64> {
    let d = derive(sample, nuis)?;
    let v = residual_variance(&d.a)?;
    if v <= IDENTIFICATION_TOLERANCE {
        return Err(Error::NotIdentified { v_star_hat: v });
    }
    let n = sample.len();
    let psi_sq = compensated_mean_by(&(0..n).collect::<Vec<_>>(), |&i| {
        let psi = d.z[i] * d.r_resid[i] - 2.0 * tau_hat * d.a[i] * d.a[i];
        psi * psi
    });
    Ok(psi_sq.max(0.0).sqrt() / (2.0 * v))
}

/// Plug-in estimator: ridge nuisances fit on the full sample, predictions
/// in-sample, then the same moment ratio and sandwich formula. The absence
/// of sample splitting is deliberate; it reproduces the overfit bias the
/// cross-fitted estimator removes.
pub fn plugin_tau(sample: &ObservedSample, lambda: f64, alpha: f64) -> Result<TauEstimate> {
    let nuis = fit_nuisances(sample, lambda)?;
    moment_tau(sample, &nuis, alpha, Method::Plugin)
}

fn orthogonal_from_residuals(
    a: &[f64],
    r_resid: &[f64],
    alpha: f64,
) -> Result<TauEstimate> {
    validate_alpha(alpha)?;
    let v = residual_variance(a)?;
    if v <= IDENTIFICATION_TOLERANCE {
        return Err(Error::NotIdentified { v_star_hat: v });
    }
    let n = a.len();
    let idx: Vec<usize> = (0..n).collect();
    let num = compensated_mean_by(&idx, |&i| a[i] * r_resid[i]);
    let tau_hat = num / v;
    let psi_sq = compensated_mean_by(&idx, |&i| {
        let psi = 2.0 * a[i] * (r_resid[i] - tau_hat * a[i]);
        psi * psi
    });
    let se = psi_sq.max(0.0).sqrt() / (2.0 * v);
    Ok(TauEstimate::wald(tau_hat, se, v, n, alpha, Method::Orthogonal))
}

/// Cross-fitted orthogonal estimator: nuisances are fit out-of-fold, then
/// `tau = sum(a_hat R_hat) / sum(a_hat^2)` with the `psi_tilde` sandwich.
pub fn orthogonal_tau(
    sample: &ObservedSample,
    folds: usize,
    lambda: f64,
    seed: u64,
    alpha: f64,
) -> Result<TauEstimate> {
    let n = sample.len();
    let assignment = kfold_split(n, folds, seed)?;
    let k_features = expanded_len(sample.dim());
    if n - n / folds < k_features + 1 {
        return Err(Error::Validation(format!(
            "training folds need at least {} rows to fit {} features",
            k_features + 1,
            k_features
        )));
    }
    let features = poly_matrix(sample);
    let mut a = vec![0.0; n];
    let mut r_resid = vec![0.0; n];
    for k in 0..folds {
        let mut train = Matrix::with_capacity(n, features.cols());
        let mut train_y = Vec::new();
        let mut train_p = Vec::new();
        for i in 0..n {
            if assignment.fold_of(i) != k {
                train.push_row(features.row(i));
                train_y.push(sample.y()[i]);
                train_p.push(sample.p()[i]);
            }
        }
        let m_model = ridge_fit(&train, &train_y, lambda)?;
        let r_model = ridge_fit(&train, &train_p, lambda)?;
        for i in 0..n {
            if assignment.fold_of(i) == k {
                let row = features.row(i);
                r_resid[i] = sample.y()[i] - m_model.predict(row);
                a[i] = sample.p()[i] - r_model.predict(row).clamp(0.0, 1.0);
            }
        }
    }
    orthogonal_from_residuals(&a, &r_resid, alpha)
}

/// Orthogonal estimator evaluated at supplied nuisances, without
/// cross-fitting: `tau = sum(a R) / sum(a^2)`.
pub fn orthogonal_tau_at(
    sample: &ObservedSample,
    nuis: &NuisancePair,
    alpha: f64,
) -> Result<TauEstimate> {
    let d = derive(sample, nuis)?;
    orthogonal_from_residuals(&d.a, &d.r_resid, alpha)
}

/// Difference of mean outcome residuals across the hard-threshold cells
/// `{p > 1/2}` and `{p <= 1/2}` (ties go to the lower cell). Standard error
/// from the two-sample variance formula. Consistent for `kappa * tau`, not
/// `tau`, whenever the score is interior.
pub fn hard_threshold_gap(sample: &ObservedSample, nuis: &NuisancePair) -> Result<TauEstimate> {
    let d = derive(sample, nuis)?;
    let n = sample.len();
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for i in 0..n {
        if sample.p()[i] > 0.5 {
            hi.push(d.r_resid[i]);
        } else {
            lo.push(d.r_resid[i]);
        }
    }
    if hi.is_empty() {
        return Err(Error::EmptyCell("p > 1/2"));
    }
    if lo.is_empty() {
        return Err(Error::EmptyCell("p <= 1/2"));
    }
    let gap = compensated_mean(&hi) - compensated_mean(&lo);
    let var_of = |xs: &[f64]| {
        if xs.len() < 2 {
            return 0.0;
        }
        let m = compensated_mean(xs);
        compensated_mean_by(xs, |v| (v - m) * (v - m)) * xs.len() as f64
            / (xs.len() as f64 - 1.0)
    };
    let se_est = (var_of(&hi) / hi.len() as f64 + var_of(&lo) / lo.len() as f64).sqrt();
    let v = residual_variance(&d.a)?;
    // Store the sqrt(n)-scaled value so the Wald construction is uniform.
    Ok(TauEstimate::wald(gap, (n as f64).sqrt() * se_est, v, n, 0.05, Method::HardThreshold))
}

/// Per-row score values at a supplied `tau`.
pub fn score_values(
    sample: &ObservedSample,
    nuis: &NuisancePair,
    tau: f64,
    kind: ScoreKind,
) -> Result<Vec<f64>> {
    let d = derive(sample, nuis)?;
    let n = sample.len();
    Ok((0..n)
        .map(|i| match kind {
            ScoreKind::Psi => d.z[i] * d.r_resid[i] - 2.0 * tau * d.a[i] * d.a[i],
            ScoreKind::PsiTilde => 2.0 * d.a[i] * (d.r_resid[i] - tau * d.a[i]),
        })
        .collect())
}

/// Central finite-difference Gateaux derivative of `E[score]` on a
/// finite-support reference distribution, in the direction `delta_fn`
/// applied to one nuisance function:
/// `(E[score at nuis + h delta] - E[score at nuis - h delta]) / (2h)`.
pub fn gateaux_derivative(
    dist: &FiniteDistribution,
    kind: ScoreKind,
    direction: NuisanceFn,
    delta_fn: impl Fn(&[f64]) -> f64,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h <= 0.1) {
        return Err(Error::Validation(format!("step h must lie in (0, 0.1], got {h}")));
    }
    dist.validate()?;
    let table = dist.conditional_table();
    let lookup = |x: &[f64]| {
        table
            .iter()
            .find(|(xs, ..)| xs.as_slice() == x)
            .map(|(_, r, m, _)| (*r, *m))
            .expect("atom covariates are in the conditional table")
    };
    let tau = dist.tau;
    let expected = |sign: f64| -> f64 {
        crate::numeric::compensated_sum(dist.atoms.iter().map(|atom| {
            let (r0, m0) = lookup(&atom.x);
            let bump = sign * h * delta_fn(&atom.x);
            let (m, r) = match direction {
                NuisanceFn::M => (m0 + bump, r0),
                NuisanceFn::R => (m0, (r0 + bump).clamp(0.0, 1.0)),
            };
            let z = 2.0 * atom.p - 1.0;
            let rr = atom.y - m;
            let a = atom.p - r;
            let score = match kind {
                ScoreKind::Psi => z * rr - 2.0 * tau * a * a,
                ScoreKind::PsiTilde => 2.0 * a * (rr - tau * a),
            };
            atom.prob * score
        }))
    };
    Ok((expected(1.0) - expected(-1.0)) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{baseline_sample, true_nuisances, DgpConfig};
    use crate::rng::substream;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn constant_pair(m: f64, r: f64) -> NuisancePair {
        NuisancePair::new(move |_| m, move |_| r)
    }

    #[test]
    fn zero_outcome_residual_gives_zero_tau() {
        let s = ObservedSample::new(
            vec![2.0, 2.0, 2.0, 2.0],
            vec![0.0, 1.0, 2.0, 3.0],
            1,
            vec![0.1, 0.4, 0.6, 0.9],
        )
        .unwrap();
        let est = oracle_tau(&s, &constant_pair(2.0, 0.5), 0.05).unwrap();
        assert_eq!(est.tau_hat, 0.0);
        assert_eq!(est.se, 0.0);
        assert!(est.covers(0.0));
    }

    #[test]
    fn degenerate_score_gives_zero_se() {
        // With p and y constant the per-row score at tau_hat vanishes.
        let s = ObservedSample::new(
            vec![1.7, 1.7, 1.7],
            vec![0.0, 1.0, 2.0],
            1,
            vec![0.4, 0.4, 0.4],
        )
        .unwrap();
        let est = oracle_tau(&s, &constant_pair(0.0, 0.0), 0.05).unwrap();
        assert_relative_eq!(est.v_star_hat, 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(est.se, 0.0, epsilon = 1e-12);
        let se = sandwich_se(&s, &constant_pair(0.0, 0.0), est.tau_hat).unwrap();
        assert_abs_diff_eq!(se, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_score_with_consistent_nuisance_is_not_identified() {
        let s = ObservedSample::new(
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.0, 2.0],
            1,
            vec![0.4, 0.4, 0.4],
        )
        .unwrap();
        match oracle_tau(&s, &constant_pair(0.0, 0.4), 0.05) {
            Err(Error::NotIdentified { v_star_hat }) => assert_eq!(v_star_hat, 0.0),
            other => panic!("expected non-identification, got {other:?}"),
        }
    }

    #[test]
    fn interpolating_outcome_model_attenuates_to_zero() {
        // If m interpolates y exactly, the numerator dies: tau_hat = 0.
        let s = ObservedSample::new(
            vec![1.0, -2.0, 0.5],
            vec![0.0, 1.0, 2.0],
            1,
            vec![0.2, 0.6, 0.9],
        )
        .unwrap();
        let ys = [1.0, -2.0, 0.5];
        let nuis = NuisancePair::new(move |x: &[f64]| ys[x[0] as usize], |_| 0.5);
        let est = oracle_tau(&s, &nuis, 0.05).unwrap();
        assert_eq!(est.tau_hat, 0.0);
    }

    #[test]
    fn orthogonal_at_known_nuisances_is_the_residual_slope() {
        let s = ObservedSample::new(
            vec![1.0, 2.0, 0.0, 3.0],
            vec![0.0, 0.0, 0.0, 0.0],
            1,
            vec![0.2, 0.8, 0.4, 0.9],
        )
        .unwrap();
        let nuis = constant_pair(1.0, 0.5);
        let est = orthogonal_tau_at(&s, &nuis, 0.05).unwrap();
        let a = [-0.3, 0.3, -0.1, 0.4];
        let r = [0.0, 1.0, -1.0, 2.0];
        let expect: f64 = a.iter().zip(&r).map(|(a, r)| a * r).sum::<f64>()
            / a.iter().map(|a| a * a).sum::<f64>();
        assert_relative_eq!(est.tau_hat, expect, epsilon = 1e-12);
        assert_eq!(est.method, Method::Orthogonal);
    }

    #[test]
    fn plugin_with_true_nuisances_reduces_to_oracle() {
        let cfg = DgpConfig { n: 600, ..DgpConfig::default() };
        let s = baseline_sample(&cfg, &mut substream(5, 0)).unwrap();
        let nuis = true_nuisances(&cfg);
        let via_oracle = oracle_tau(&s.observed, &nuis, 0.05).unwrap();
        let via_moment = moment_tau(&s.observed, &nuis, 0.05, Method::Plugin).unwrap();
        assert_eq!(via_oracle.tau_hat, via_moment.tau_hat);
        assert_eq!(via_oracle.se, via_moment.se);
        assert_eq!(via_moment.method, Method::Plugin);
    }

    #[test]
    fn hard_threshold_with_perfect_classification_recovers_tau() {
        // p in {0, 1}, r = 1/2, no noise: the gap equals tau exactly.
        let p = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let y: Vec<f64> = p.to_vec(); // y = g = p, tau = 1
        let x = vec![0.0; 6];
        let s = ObservedSample::new(y, x, 1, p).unwrap();
        let est = hard_threshold_gap(&s, &constant_pair(0.5, 0.5)).unwrap();
        assert_relative_eq!(est.tau_hat, 1.0, epsilon = 1e-12);
        assert_eq!(est.method, Method::HardThreshold);
        assert_abs_diff_eq!(est.se, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn threshold_ties_go_to_the_lower_cell() {
        let s = ObservedSample::new(
            vec![0.0, 0.0, 7.0],
            vec![0.0, 0.0, 0.0],
            1,
            vec![0.5, 0.5, 0.8],
        )
        .unwrap();
        let est = hard_threshold_gap(&s, &constant_pair(0.0, 0.5)).unwrap();
        // Upper cell = {7.0}, lower = {0.0, 0.0}.
        assert_relative_eq!(est.tau_hat, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn threshold_reports_empty_cell() {
        let s = ObservedSample::new(vec![1.0, 2.0], vec![0.0, 0.0], 1, vec![0.1, 0.3]).unwrap();
        match hard_threshold_gap(&s, &constant_pair(0.0, 0.5)) {
            Err(Error::EmptyCell("p > 1/2")) => {}
            other => panic!("expected empty upper cell, got {other:?}"),
        }
    }

    #[test]
    fn zero_score_residual_kills_psi_tilde() {
        let s = ObservedSample::new(
            vec![1.0, -1.0, 2.0],
            vec![0.0, 1.0, 2.0],
            1,
            vec![0.3, 0.3, 0.3],
        )
        .unwrap();
        let vals = score_values(&s, &constant_pair(0.0, 0.3), 1.4, ScoreKind::PsiTilde).unwrap();
        assert!(vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gateaux_derivatives_on_the_canonical_distribution() {
        let dist = FiniteDistribution::canonical();
        // r-derivative of psi vanishes automatically.
        let dr = gateaux_derivative(&dist, ScoreKind::Psi, NuisanceFn::R, |x| 1.0 + x[0], 0.05)
            .unwrap();
        assert_abs_diff_eq!(dr, 0.0, epsilon = 1e-12);
        // m-derivative of psi along delta(x) = x equals -E[(2r-1)x] = -0.2.
        let dm =
            gateaux_derivative(&dist, ScoreKind::Psi, NuisanceFn::M, |x| x[0], 0.05).unwrap();
        assert_abs_diff_eq!(dm, -0.2, epsilon = 1e-9);
        // psi_tilde is orthogonal in both directions.
        for dir in [NuisanceFn::M, NuisanceFn::R] {
            let d = gateaux_derivative(&dist, ScoreKind::PsiTilde, dir, |x| 1.0 + x[0], 0.05)
                .unwrap();
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gateaux_rejects_bad_step() {
        let dist = FiniteDistribution::canonical();
        assert!(gateaux_derivative(&dist, ScoreKind::Psi, NuisanceFn::M, |_| 1.0, 0.0).is_err());
        assert!(gateaux_derivative(&dist, ScoreKind::Psi, NuisanceFn::M, |_| 1.0, 0.2).is_err());
    }

    #[test]
    fn orthogonal_cross_fitting_runs_and_is_seed_deterministic() {
        let cfg = DgpConfig { n: 400, ..DgpConfig::default() };
        let s = baseline_sample(&cfg, &mut substream(8, 0)).unwrap();
        let a = orthogonal_tau(&s.observed, 5, 25.0, 99, 0.05).unwrap();
        let b = orthogonal_tau(&s.observed, 5, 25.0, 99, 0.05).unwrap();
        assert_eq!(a.tau_hat, b.tau_hat);
        let c = orthogonal_tau(&s.observed, 5, 25.0, 100, 0.05).unwrap();
        assert_ne!(a.tau_hat, c.tau_hat); // different fold draw
        assert!(orthogonal_tau(&s.observed, 1, 25.0, 99, 0.05).is_err());
    }
}
