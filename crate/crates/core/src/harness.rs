//! Monte Carlo engine.
//!
//! A cell is one `(design, estimator, n)` combination run for `reps`
//! replications. Each replication draws its own substream from
//! `(master_seed, replication_index)`, so reports are bit-identical whether
//! replications run on one thread or many; aggregation always reduces in
//! replication order. The data-parallel path is enabled by the `parallel`
//! feature (on by default); [`run_cell_sequential`] is always available.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate, true_nuisances, DgpConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    hard_threshold_gap, oracle_tau, orthogonal_tau, plugin_tau, Method, TauEstimate,
};
use crate::numeric::{
    compensated_mean, compensated_mean_by, sample_sd, standard_normal_cdf,
    standard_normal_quantile,
};
use crate::rng::{derive_seed, substream};

/// One Monte Carlo cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSpec {
    pub dgp: DgpConfig,
    pub estimator: Method,
    /// Sample size per replication (overrides `dgp.n`).
    pub n: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub alpha: f64,
    /// The estimand the cell is judged against (tau, kappa * tau, or the
    /// variance-weighted average).
    pub target: f64,
    /// Ridge penalty for the fitted-nuisance estimators.
    pub ridge_lambda: f64,
    /// Cross-fitting folds for the orthogonal estimator.
    pub folds: usize,
}

impl CellSpec {
    pub fn new(dgp: DgpConfig, estimator: Method, n: usize, reps: usize, master_seed: u64, target: f64) -> Self {
        CellSpec {
            dgp,
            estimator,
            n,
            reps,
            master_seed,
            alpha: 0.05,
            target,
            ridge_lambda: crate::nuisance::DEFAULT_RIDGE_LAMBDA,
            folds: crate::nuisance::DEFAULT_FOLDS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Validation("reps must be at least 1".into()));
        }
        if !self.target.is_finite() {
            return Err(Error::Validation("target must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Aggregated metrics for one cell, judged against `spec.target`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub bias: f64,
    /// Sample standard deviation (ddof = 1) of the finite estimates.
    pub sd: f64,
    /// Root mean squared error about the target.
    pub rmse: f64,
    /// Fraction of finite-estimate replications whose interval covers the
    /// target.
    pub coverage: f64,
    /// Replications that produced a finite, identified estimate.
    pub n_finite: usize,
    /// Replications excluded (non-identified or non-finite).
    pub n_failed: usize,
    /// Set when fewer than two finite estimates back the dispersion numbers.
    pub degenerate: bool,
    /// Point estimates in replication order (finite ones only).
    pub estimates: Vec<f64>,
    /// Matching standard errors.
    pub ses: Vec<f64>,
    pub spec: CellSpec,
}

fn estimate_one(spec: &CellSpec, rep: usize) -> Result<TauEstimate> {
    let mut rng = substream(spec.master_seed, rep as u64);
    let cfg = DgpConfig { n: spec.n, ..spec.dgp.clone() };
    let sample = generate(&cfg, &mut rng)?;
    match spec.estimator {
        Method::Oracle => oracle_tau(&sample.observed, &true_nuisances(&cfg), spec.alpha),
        Method::Plugin => plugin_tau(&sample.observed, spec.ridge_lambda, spec.alpha),
        Method::Orthogonal => orthogonal_tau(
            &sample.observed,
            spec.folds,
            spec.ridge_lambda,
            derive_seed(spec.master_seed, rep as u64),
            spec.alpha,
        ),
        Method::HardThreshold => hard_threshold_gap(&sample.observed, &true_nuisances(&cfg)),
    }
}

/// Outcome of one replication: `Ok(Some)` contributed an estimate,
/// `Ok(None)` was excluded (non-identified or non-finite estimate),
/// `Err` aborts the cell (configuration-level failure).
fn replicate(spec: &CellSpec, rep: usize) -> Result<Option<(f64, f64, bool)>> {
    match estimate_one(spec, rep) {
        Ok(est) => {
            if est.tau_hat.is_finite() && est.se.is_finite() {
                Ok(Some((est.tau_hat, est.se, est.covers(spec.target))))
            } else {
                Ok(None)
            }
        }
        Err(Error::NotIdentified { .. }) | Err(Error::EmptyCell(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn aggregate(spec: &CellSpec, outcomes: Vec<Option<(f64, f64, bool)>>) -> Result<CellReport> {
    let mut estimates = Vec::with_capacity(outcomes.len());
    let mut ses = Vec::with_capacity(outcomes.len());
    let mut covered = 0usize;
    let mut failed = 0usize;
    for o in outcomes {
        match o {
            Some((tau, se, covers)) => {
                estimates.push(tau);
                ses.push(se);
                covered += usize::from(covers);
            }
            None => failed += 1,
        }
    }
    let n_finite = estimates.len();
    if n_finite == 0 {
        return Err(Error::Computation(format!(
            "all {} replications were excluded (non-identified or non-finite)",
            spec.reps
        )));
    }
    let bias = compensated_mean(&estimates) - spec.target;
    let sd = sample_sd(&estimates);
    let rmse = compensated_mean_by(&estimates, |&t| (t - spec.target) * (t - spec.target))
        .max(0.0)
        .sqrt();
    Ok(CellReport {
        bias,
        sd,
        rmse,
        coverage: covered as f64 / n_finite as f64,
        n_finite,
        n_failed: failed,
        degenerate: n_finite < 2,
        estimates,
        ses,
        spec: spec.clone(),
    })
}

/// Runs every replication on the current thread, in index order.
pub fn run_cell_sequential(spec: &CellSpec) -> Result<CellReport> {
    spec.validate()?;
    let mut outcomes = Vec::with_capacity(spec.reps);
    for rep in 0..spec.reps {
        outcomes.push(replicate(spec, rep)?);
    }
    aggregate(spec, outcomes)
}

/// Runs the cell, distributing replications across the rayon pool when the
/// `parallel` feature is enabled. The report is bit-identical to
/// [`run_cell_sequential`] regardless of worker count.
#[cfg(feature = "parallel")]
pub fn run_cell(spec: &CellSpec) -> Result<CellReport> {
    spec.validate()?;
    let outcomes: Result<Vec<_>> =
        (0..spec.reps).into_par_iter().map(|rep| replicate(spec, rep)).collect();
    aggregate(spec, outcomes?)
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn run_cell(spec: &CellSpec) -> Result<CellReport> {
    run_cell_sequential(spec)
}

/// Runs `f` under a thread cap. `Some(1)` forces effectively sequential
/// execution; `None` uses the default pool. Results never depend on the cap.
#[cfg(feature = "parallel")]
pub fn with_thread_cap<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("thread pool construction")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_thread_cap<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    f()
}

/// Quantile pairs for a normal QQ check of standardized estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QqData {
    /// Standard-normal quantiles at plotting positions `(i - 0.5) / R`.
    pub theoretical: Vec<f64>,
    /// Sorted values of `sqrt(n) (tau_hat - target) / se`.
    pub standardized: Vec<f64>,
    /// Set when the standardized column carries no dispersion or contains
    /// non-finite entries.
    pub degenerate: bool,
}

impl QqData {
    /// Kolmogorov-Smirnov distance of the standardized values against the
    /// standard normal.
    pub fn ks_distance(&self) -> f64 {
        let n = self.standardized.len() as f64;
        let mut d = 0.0f64;
        for (i, &t) in self.standardized.iter().enumerate() {
            let cdf = standard_normal_cdf(t);
            d = d.max((((i + 1) as f64) / n - cdf).abs());
            d = d.max((cdf - (i as f64) / n).abs());
        }
        d
    }
}

/// Pairs sorted standardized estimates with standard-normal quantiles.
/// Requires at least 100 estimates.
pub fn qq_data(estimates: &[f64], target: f64, ses: &[f64], n: usize) -> Result<QqData> {
    if estimates.len() < 100 {
        return Err(Error::Validation(format!(
            "qq_data requires at least 100 estimates, got {}",
            estimates.len()
        )));
    }
    if estimates.len() != ses.len() {
        return Err(Error::Validation("estimates and ses must have equal length".into()));
    }
    let root_n = (n as f64).sqrt();
    let mut standardized: Vec<f64> = estimates
        .iter()
        .zip(ses)
        .map(|(&t, &se)| root_n * (t - target) / se)
        .collect();
    standardized.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let r = standardized.len();
    let theoretical: Vec<f64> = (0..r)
        .map(|i| standard_normal_quantile((i as f64 + 0.5) / r as f64))
        .collect();
    let finite = standardized.iter().all(|v| v.is_finite());
    let degenerate = !finite || sample_sd(&standardized) == 0.0;
    Ok(QqData { theoretical, standardized, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn oracle_cell(n: usize, reps: usize) -> CellSpec {
        CellSpec::new(DgpConfig::default(), Method::Oracle, n, reps, 714, 1.0)
    }

    #[test]
    fn single_replication_is_degenerate() {
        let report = run_cell_sequential(&oracle_cell(300, 1)).unwrap();
        assert_eq!(report.sd, 0.0);
        assert!(report.degenerate);
        assert_eq!(report.n_finite, 1);
    }

    #[test]
    fn identical_specs_give_identical_reports() {
        let a = run_cell_sequential(&oracle_cell(200, 40)).unwrap();
        let b = run_cell_sequential(&oracle_cell(200, 40)).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.bias, b.bias);
        assert_eq!(a.coverage, b.coverage);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_report_matches_sequential_bitwise() {
        let spec = oracle_cell(200, 60);
        let seq = run_cell_sequential(&spec).unwrap();
        let par = run_cell(&spec).unwrap();
        assert_eq!(seq.estimates, par.estimates);
        assert_eq!(seq.ses, par.ses);
        assert_eq!(seq.bias.to_bits(), par.bias.to_bits());
        assert_eq!(seq.rmse.to_bits(), par.rmse.to_bits());
        // And under an explicit 1-thread pool.
        let one = with_thread_cap(Some(1), || run_cell(&spec)).unwrap();
        assert_eq!(one.estimates, par.estimates);
    }

    #[test]
    fn rmse_decomposition_holds() {
        let r = run_cell_sequential(&oracle_cell(400, 80)).unwrap();
        let nf = r.n_finite as f64;
        let expect = r.bias * r.bias + r.sd * r.sd * (nf - 1.0) / nf;
        assert_relative_eq!(r.rmse * r.rmse, expect, max_relative = 1e-10);
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        let all_fail = vec![None, None];
        let spec = oracle_cell(100, 2);
        assert!(matches!(aggregate(&spec, all_fail), Err(Error::Computation(_))));
        let mixed = vec![Some((1.0, 0.5, true)), None, Some((1.2, 0.5, false))];
        let spec3 = oracle_cell(100, 3);
        let rep = aggregate(&spec3, mixed).unwrap();
        assert_eq!(rep.n_finite, 2);
        assert_eq!(rep.n_failed, 1);
        assert_relative_eq!(rep.coverage, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn qq_data_on_exact_normal_draws() {
        let mut rng = crate::rng::substream(9, 0);
        let n = 2000usize;
        let target = 1.0;
        let ses: Vec<f64> = vec![2.0; n];
        // tau_i = target + se * z / sqrt(m): standardized values are z.
        let m = 500usize;
        let estimates: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                target + 2.0 * z / (m as f64).sqrt()
            })
            .collect();
        let qq = qq_data(&estimates, target, &ses, m).unwrap();
        assert!(!qq.degenerate);
        assert!(qq.ks_distance() < 0.04, "ks = {}", qq.ks_distance());
        // Quantile pairs track each other in the bulk.
        for i in (100..1900).step_by(300) {
            assert_abs_diff_eq!(qq.theoretical[i], qq.standardized[i], epsilon = 0.25);
        }
    }

    #[test]
    fn qq_data_flags_degenerate_and_small_inputs() {
        let est = vec![1.0; 200];
        let ses = vec![1.0; 200];
        let qq = qq_data(&est, 1.0, &ses, 100).unwrap();
        assert!(qq.degenerate);
        assert!(qq_data(&est[..50], 1.0, &ses[..50], 100).is_err());
    }

    #[test]
    fn orthogonal_and_threshold_cells_run() {
        let mut spec = CellSpec::new(DgpConfig::default(), Method::Orthogonal, 300, 6, 5, 1.0);
        spec.ridge_lambda = 25.0;
        let r = run_cell_sequential(&spec).unwrap();
        assert_eq!(r.n_finite, 6);

        let dgp = DgpConfig {
            variant: crate::dgp::Variant::SymmetricThreshold,
            ..DgpConfig::default()
        };
        let spec = CellSpec::new(dgp, Method::HardThreshold, 300, 6, 5, 0.25);
        let r = run_cell_sequential(&spec).unwrap();
        assert_eq!(r.n_finite, 6);
    }

    #[test]
    fn estimator_cells_share_samples_under_one_seed() {
        // Two cells with the same master seed and design draw identical
        // samples; only the estimator differs. Check via a replication's
        // stream reproduction.
        let mut rng_a = crate::rng::substream(714, 3);
        let mut rng_b = crate::rng::substream(714, 3);
        let draws_a: Vec<f64> = (0..8).map(|_| rng_a.random()).collect();
        let draws_b: Vec<f64> = (0..8).map(|_| rng_b.random()).collect();
        assert_eq!(draws_a, draws_b);
    }
}
