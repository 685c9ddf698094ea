//! Cross-module invariants that are not release gates but should hold on
//! every build.

use latentgap::dgp::{baseline_sample, true_nuisances, DgpConfig};
use latentgap::estimators::{oracle_tau, orthogonal_tau, orthogonal_tau_at};
use latentgap::rng::substream;

/// With true nuisances, the oracle and orthogonal point estimates agree up
/// to a cross-term of order n^{-1/2}: the scaled gap sqrt(n) |diff| stays
/// bounded while the raw gap shrinks by roughly 10x from n = 500 to
/// n = 50000.
#[test]
fn oracle_and_orthogonal_agree_at_root_n_rate() {
    let seeds = 0..10u64;
    let mut mean_abs = Vec::new();
    let mut mean_scaled = Vec::new();
    for &n in &[500usize, 5000, 50_000] {
        let mut abs_sum = 0.0;
        let mut scaled_sum = 0.0;
        for s in seeds.clone() {
            let cfg = DgpConfig { n, ..DgpConfig::default() };
            let sample = baseline_sample(&cfg, &mut substream(1000 + s, 0)).unwrap();
            let nuis = true_nuisances(&cfg);
            let or = oracle_tau(&sample.observed, &nuis, 0.05).unwrap();
            let ort = orthogonal_tau_at(&sample.observed, &nuis, 0.05).unwrap();
            let diff = (or.tau_hat - ort.tau_hat).abs();
            abs_sum += diff;
            scaled_sum += diff * (n as f64).sqrt();
        }
        mean_abs.push(abs_sum / 10.0);
        mean_scaled.push(scaled_sum / 10.0);
    }
    println!("mean |oracle - orthogonal|: {mean_abs:?}, scaled by sqrt(n): {mean_scaled:?}");
    assert!(mean_abs[2] < mean_abs[0] / 5.0, "gap did not shrink: {mean_abs:?}");
    // Rate consistency: the sqrt(n)-scaled gaps stay within a constant band.
    let hi = mean_scaled.iter().cloned().fold(f64::MIN, f64::max);
    let lo = mean_scaled.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        hi / lo < 4.0,
        "scaled gaps vary too much for a root-n rate: {mean_scaled:?}"
    );
}

/// Round-trip self-consistency: on freshly generated data the cross-fitted
/// estimator's interval covers the generating coefficient at roughly the
/// nominal rate.
#[test]
fn cross_fitted_interval_covers_generating_tau() {
    let reps = 60;
    let mut covered = 0;
    for s in 0..reps {
        let cfg = DgpConfig { n: 2000, ..DgpConfig::default() };
        let sample = baseline_sample(&cfg, &mut substream(9000, s)).unwrap();
        let est = orthogonal_tau(&sample.observed, 5, 25.0, 9000 + s, 0.05).unwrap();
        covered += usize::from(est.covers(1.0));
    }
    let rate = covered as f64 / reps as f64;
    println!("round-trip coverage over {reps} draws: {rate:.3}");
    assert!(rate >= 0.85, "coverage {rate} fell below the plausibility floor");
}
