//! Synthetic data generators.
//!
//! All generators share one row recipe: covariates are iid standard normal,
//! the score is Beta-distributed around its conditional mean `r(x)` with a
//! conditional variance profile chosen by the variant, the latent indicator
//! is Bernoulli in the (possibly distorted) score, and the outcome follows
//! the structural mean model. Generators consume an explicit seeded stream
//! and are bit-deterministic given `(config, seed)`.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::sample::{NuisancePair, ObservedSample};

/// Coefficient used for each entry of the default score index. Calibrated so
/// that E[r(X)(1 - r(X))] = 0.2252 under X ~ N(0, I_3), which pins the
/// residual score variance at sigma_u^2 * 0.2252.
pub const SCORE_INDEX_COEF: f64 = 0.402_600_019_820_894_5;

/// Default outcome index coefficients. Moment-ratio results are invariant to
/// this choice; it only moves the covariate-explained part of the outcome.
pub const OUTCOME_COEF: [f64; 3] = [1.0, -0.5, 0.25];

/// `r(x)` is clamped away from {0, 1} before Beta parameterization so shape
/// parameters stay strictly positive.
pub const R_CLAMP: f64 = 1e-6;

/// Shape of the calibration error applied to the latent indicator's
/// conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaShape {
    None,
    /// `delta * sgn(2p - 1)`: attains the sensitivity bound.
    WorstCase,
    /// `delta * (2p - 1)`.
    Linear,
    /// `delta * sin(pi p)`: orthogonal to the signed score.
    Symmetric,
}

impl EtaShape {
    pub fn eta(self, delta: f64, p: f64) -> f64 {
        match self {
            EtaShape::None => 0.0,
            EtaShape::WorstCase => delta * (2.0 * p - 1.0).signum() * if p == 0.5 { 0.0 } else { 1.0 },
            EtaShape::Linear => delta * (2.0 * p - 1.0),
            EtaShape::Symmetric => delta * (std::f64::consts::PI * p).sin(),
        }
    }
}

/// Which simulation design generates the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    /// `r(X) = 1/2` a.s. with a score symmetric around 1/2.
    SymmetricThreshold,
    /// Covariate-varying effect, constant-profile score variance.
    HeteroA,
    /// Covariate-varying effect and score variance rising in the first
    /// covariate, capped at 0.9 * r(1 - r).
    HeteroB,
}

/// Full description of a synthetic design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    /// Constant part of the group effect.
    pub tau0: f64,
    /// Slope of the effect in the first covariate (heterogeneous variants).
    pub tau1: f64,
    /// Score dispersion scale, in (0, 1).
    pub sigma_u: f64,
    /// Logistic index coefficients for `r(x)`.
    pub beta_r: Vec<f64>,
    /// Linear index coefficients for `m(x)`.
    pub beta_m: Vec<f64>,
    /// Covariate dimension.
    pub d: usize,
    /// Outcome noise standard deviation.
    pub noise_sd: f64,
    pub eta_shape: EtaShape,
    /// Calibration-error magnitude; 0 when `eta_shape` is `None`.
    pub delta: f64,
    pub variant: Variant,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 1000,
            tau0: 1.0,
            tau1: 0.0,
            sigma_u: 0.30,
            beta_r: vec![SCORE_INDEX_COEF; 3],
            beta_m: OUTCOME_COEF.to_vec(),
            d: 3,
            noise_sd: 1.0,
            eta_shape: EtaShape::None,
            delta: 0.0,
            variant: Variant::Baseline,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("n must be positive".into()));
        }
        if !(self.sigma_u > 0.0 && self.sigma_u < 1.0) {
            return Err(Error::Validation(format!(
                "sigma_u must lie in (0, 1), got {}",
                self.sigma_u
            )));
        }
        if self.d == 0 || self.beta_r.len() != self.d || self.beta_m.len() != self.d {
            return Err(Error::Validation(format!(
                "coefficient vectors must have length d = {}",
                self.d
            )));
        }
        if !self.noise_sd.is_finite() || self.noise_sd <= 0.0 {
            return Err(Error::Validation("noise_sd must be positive".into()));
        }
        if self.eta_shape == EtaShape::None && self.delta != 0.0 {
            return Err(Error::Validation(
                "delta must be 0 when no calibration-error shape is set".into(),
            ));
        }
        if self.delta < 0.0 {
            return Err(Error::Validation("delta must be nonnegative".into()));
        }
        if self.tau1 != 0.0 && !matches!(self.variant, Variant::HeteroA | Variant::HeteroB) {
            return Err(Error::Validation(
                "tau1 is only meaningful for the heterogeneous variants".into(),
            ));
        }
        Ok(())
    }

    /// Group effect at covariate value `x`.
    pub fn tau_at(&self, x: &[f64]) -> f64 {
        match self.variant {
            Variant::HeteroA | Variant::HeteroB => self.tau0 + self.tau1 * x[0],
            _ => self.tau0,
        }
    }
}

/// Conditional law of the score and outcome at one covariate value.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalMoments {
    /// `r(x) = E[p | X = x]`, clamped to `[R_CLAMP, 1 - R_CLAMP]`.
    pub r: f64,
    /// `m(x) = E[Y | X = x]`.
    pub m: f64,
    /// `Var(p | X = x)` actually realized by the generator (post-cap).
    pub var_p: f64,
    /// `tau(x)`.
    pub tau_x: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// The single source of truth for every variant's conditional law; used by
/// the sampler, the true-nuisance pair, and the reference-value integrators.
pub fn conditional_moments(cfg: &DgpConfig, x: &[f64]) -> ConditionalMoments {
    let r = match cfg.variant {
        Variant::SymmetricThreshold => 0.5,
        _ => logistic(dot(&cfg.beta_r, x)).clamp(R_CLAMP, 1.0 - R_CLAMP),
    };
    let base_var = cfg.sigma_u * cfg.sigma_u * r * (1.0 - r);
    let var_p = match cfg.variant {
        Variant::HeteroB => {
            let target = cfg.sigma_u * cfg.sigma_u * (0.8 * x[0]).exp();
            target.min(0.9 * r * (1.0 - r))
        }
        _ => base_var,
    };
    ConditionalMoments { r, m: dot(&cfg.beta_m, x), var_p, tau_x: cfg.tau_at(x) }
}

/// True nuisance functions implied by a configuration.
pub fn true_nuisances(cfg: &DgpConfig) -> NuisancePair {
    let cfg_m = cfg.clone();
    let cfg_r = cfg.clone();
    NuisancePair::new(
        move |x: &[f64]| conditional_moments(&cfg_m, x).m,
        move |x: &[f64]| conditional_moments(&cfg_r, x).r,
    )
}

/// A generated sample together with the latent quantities that only a
/// simulation can observe.
#[derive(Debug, Clone)]
pub struct LatentSample {
    pub observed: ObservedSample,
    /// Latent group indicator.
    pub g: Vec<u8>,
    /// `m(x_i)` as generated.
    pub true_m: Vec<f64>,
    /// `r(x_i)` as generated.
    pub true_r: Vec<f64>,
    /// `mu(x_i) = m(x_i) - tau(x_i) r(x_i)`.
    pub true_mu: Vec<f64>,
    /// `tau(x_i)`; constant unless the variant is heterogeneous.
    pub tau_of_x: Vec<f64>,
    /// Realized conditional score variance per row.
    pub var_p: Vec<f64>,
}

fn sample_rows<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<LatentSample> {
    let n = cfg.n;
    let d = cfg.d;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut true_m = Vec::with_capacity(n);
    let mut true_r = Vec::with_capacity(n);
    let mut true_mu = Vec::with_capacity(n);
    let mut tau_of_x = Vec::with_capacity(n);
    let mut var_p = Vec::with_capacity(n);
    let mut row = vec![0.0; d];

    for _ in 0..n {
        for v in row.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let cm = conditional_moments(cfg, &row);
        let concentration = cm.r * (1.0 - cm.r) / cm.var_p - 1.0;
        let beta = Beta::new(cm.r * concentration, (1.0 - cm.r) * concentration)
            .map_err(|e| Error::Computation(format!("invalid Beta parameters: {e}")))?;
        let pi: f64 = beta.sample(rng);
        let pi = pi.clamp(0.0, 1.0);
        let g_prob = (pi + cfg.eta_shape.eta(cfg.delta, pi)).clamp(0.0, 1.0);
        let gi = u8::from(rng.random::<f64>() < g_prob);
        let noise: f64 = StandardNormal.sample(rng);
        let eps = cfg.noise_sd * noise;
        let mu = cm.m - cm.tau_x * cm.r;
        y.push(mu + cm.tau_x * f64::from(gi) + eps);
        x.extend_from_slice(&row);
        p.push(pi);
        g.push(gi);
        true_m.push(cm.m);
        true_r.push(cm.r);
        true_mu.push(mu);
        tau_of_x.push(cm.tau_x);
        var_p.push(cm.var_p);
    }

    Ok(LatentSample {
        observed: ObservedSample::new(y, x, d, p)?,
        g,
        true_m,
        true_r,
        true_mu,
        tau_of_x,
        var_p,
    })
}

/// Generates from whichever design the configuration selects.
pub fn generate<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<LatentSample> {
    cfg.validate()?;
    sample_rows(cfg, rng)
}

/// Correctly calibrated baseline design.
pub fn baseline_sample<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<LatentSample> {
    if cfg.variant != Variant::Baseline || cfg.eta_shape != EtaShape::None {
        return Err(Error::Validation("baseline_sample requires the plain baseline variant".into()));
    }
    generate(cfg, rng)
}

/// Baseline covariates and score, but the indicator draws from
/// `clip(p + eta(p), 0, 1)`.
pub fn miscalibrated_sample<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<LatentSample> {
    if cfg.eta_shape == EtaShape::None {
        return Err(Error::Validation(
            "miscalibrated_sample requires a calibration-error shape".into(),
        ));
    }
    generate(cfg, rng)
}

/// Design with `r(X) = 1/2` a.s. and a score symmetric around 1/2.
pub fn symmetric_threshold_sample<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<LatentSample> {
    if cfg.variant != Variant::SymmetricThreshold {
        return Err(Error::Validation(
            "symmetric_threshold_sample requires the symmetric-threshold variant".into(),
        ));
    }
    generate(cfg, rng)
}

/// Covariate-varying effect designs A and B.
pub fn heterogeneous_sample<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<LatentSample> {
    if !matches!(cfg.variant, Variant::HeteroA | Variant::HeteroB) {
        return Err(Error::Validation(
            "heterogeneous_sample requires a heterogeneous variant".into(),
        ));
    }
    generate(cfg, rng)
}

/// The observational-equivalence construction: keeps `(Y, X, p)` untouched,
/// redraws the indicator as `G' = 1{U <= p}` with independent uniform `U`,
/// and re-labels the structural pieces for an arbitrary coefficient
/// `tau_prime` via `mu'(x) = m(x) - tau_prime * r(x)`.
pub fn equivalence_construction<R: Rng>(
    sample: &LatentSample,
    tau_prime: f64,
    rng: &mut R,
) -> LatentSample {
    let n = sample.observed.len();
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        g.push(u8::from(rng.random::<f64>() <= sample.observed.p()[i]));
    }
    let true_mu: Vec<f64> = sample
        .true_m
        .iter()
        .zip(&sample.true_r)
        .map(|(m, r)| m - tau_prime * r)
        .collect();
    LatentSample {
        observed: sample.observed.clone(),
        g,
        true_m: sample.true_m.clone(),
        true_r: sample.true_r.clone(),
        true_mu,
        tau_of_x: vec![tau_prime; n],
        var_p: sample.var_p.clone(),
    }
}

/// One atom of a finite-support distribution over `(X, p, G, Y)`.
#[derive(Debug, Clone)]
pub struct FiniteAtom {
    pub prob: f64,
    pub x: Vec<f64>,
    pub p: f64,
    pub g: u8,
    pub y: f64,
    /// Structural intercept `mu(x)` at this atom.
    pub mu: f64,
}

/// An exact distribution on finitely many atoms; the fixture that backs
/// enumeration-based expectations.
#[derive(Debug, Clone)]
pub struct FiniteDistribution {
    pub atoms: Vec<FiniteAtom>,
    /// Generating group effect.
    pub tau: f64,
    pub d: usize,
}

impl FiniteDistribution {
    /// The canonical 16-atom test distribution: X uniform on {0, 1};
    /// p uniform on {0.2, 0.4} when X = 0 and on {0.6, 0.8} when X = 1;
    /// G | p ~ Bernoulli(p); mu(0) = 0, mu(1) = 1; tau = 2; noise +-1.
    /// Implied: r(0) = 0.3, r(1) = 0.7, V* = 0.01, E|2p-1| = 0.4,
    /// m(0) = 0.6, m(1) = 2.4.
    pub fn canonical() -> Self {
        let tau = 2.0;
        let mut atoms = Vec::with_capacity(16);
        for (x, mu, ps) in [(0.0, 0.0, [0.2, 0.4]), (1.0, 1.0, [0.6, 0.8])] {
            for p in ps {
                for g in [1u8, 0u8] {
                    let g_prob = if g == 1 { p } else { 1.0 - p };
                    for eps in [1.0, -1.0] {
                        atoms.push(FiniteAtom {
                            prob: 0.5 * 0.5 * g_prob * 0.5,
                            x: vec![x],
                            p,
                            g,
                            y: mu + tau * f64::from(g) + eps,
                            mu,
                        });
                    }
                }
            }
        }
        FiniteDistribution { atoms, tau, d: 1 }
    }

    /// Probabilities must be nonnegative and sum to 1 within 1e-12.
    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Validation("distribution has no atoms".into()));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if !a.prob.is_finite() || a.prob < 0.0 {
                return Err(Error::Validation(format!("atom {i} has invalid probability")));
            }
            if a.x.len() != self.d {
                return Err(Error::Validation(format!("atom {i} has wrong covariate length")));
            }
            if !(0.0..=1.0).contains(&a.p) {
                return Err(Error::Validation(format!("atom {i} has p outside [0, 1]")));
            }
        }
        let total = compensated_sum(self.atoms.iter().map(|a| a.prob));
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "atom probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Exact conditional means per distinct covariate value:
    /// `(x, r(x), m(x), P(X = x))`.
    pub fn conditional_table(&self) -> Vec<(Vec<f64>, f64, f64, f64)> {
        let mut groups: Vec<(Vec<f64>, f64, f64, f64)> = Vec::new();
        for a in &self.atoms {
            match groups.iter_mut().find(|(x, ..)| x == &a.x) {
                Some((_, sp, sy, w)) => {
                    *sp += a.prob * a.p;
                    *sy += a.prob * a.y;
                    *w += a.prob;
                }
                None => groups.push((a.x.clone(), a.prob * a.p, a.prob * a.y, a.prob)),
            }
        }
        groups
            .into_iter()
            .map(|(x, sp, sy, w)| (x, sp / w, sy / w, w))
            .collect()
    }

    /// The exact nuisance pair `(m, r)` of this distribution, as lookup
    /// functions over the finitely many covariate values. Evaluating at a
    /// covariate value outside the support yields NaN.
    pub fn nuisances(&self) -> NuisancePair {
        let table = self.conditional_table();
        let table_m = table.clone();
        NuisancePair::new(
            move |x: &[f64]| {
                table_m
                    .iter()
                    .find(|(xs, ..)| xs.as_slice() == x)
                    .map_or(f64::NAN, |(_, _, m, _)| *m)
            },
            move |x: &[f64]| {
                table
                    .iter()
                    .find(|(xs, ..)| xs.as_slice() == x)
                    .map_or(f64::NAN, |(_, r, _, _)| *r)
            },
        )
    }

    /// Draws `n` iid rows; the latent fields carry the exact conditional
    /// means so estimators can be run against this distribution too.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<LatentSample> {
        self.validate()?;
        let table = self.conditional_table();
        let lookup = |x: &[f64]| {
            table
                .iter()
                .find(|(xs, ..)| xs.as_slice() == x)
                .map(|(_, r, m, _)| (*r, *m))
                .expect("atom covariates are in the table")
        };
        let mut cum = Vec::with_capacity(self.atoms.len());
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.prob;
            cum.push(acc);
        }
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * self.d);
        let mut p = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        let mut true_m = Vec::with_capacity(n);
        let mut true_r = Vec::with_capacity(n);
        let mut true_mu = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let idx = cum.partition_point(|&c| c < u).min(self.atoms.len() - 1);
            let a = &self.atoms[idx];
            let (r, m) = lookup(&a.x);
            y.push(a.y);
            x.extend_from_slice(&a.x);
            p.push(a.p);
            g.push(a.g);
            true_m.push(m);
            true_r.push(r);
            true_mu.push(a.mu);
        }
        let var_p = vec![f64::NAN; n];
        Ok(LatentSample {
            observed: ObservedSample::new(y, x, self.d, p)?,
            g,
            true_m,
            true_r,
            true_mu,
            tau_of_x: vec![self.tau; n],
            var_p,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::compensated_mean;
    use crate::rng::substream;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn mc_tol(sd: f64, n: usize) -> f64 {
        3.0 * sd / (n as f64).sqrt()
    }

    #[test]
    fn baseline_is_deterministic_and_well_formed() {
        let cfg = DgpConfig { n: 4000, ..DgpConfig::default() };
        let s1 = baseline_sample(&cfg, &mut substream(11, 0)).unwrap();
        let s2 = baseline_sample(&cfg, &mut substream(11, 0)).unwrap();
        assert_eq!(s1.observed.y(), s2.observed.y());
        assert_eq!(s1.observed.p(), s2.observed.p());
        assert_eq!(s1.g, s2.g);

        for i in 0..cfg.n {
            let pi = s1.observed.p()[i];
            assert!((0.0..=1.0).contains(&pi));
            assert!(s1.g[i] <= 1);
            // Structural decomposition holds exactly as stored.
            assert_relative_eq!(
                s1.true_m[i],
                s1.true_mu[i] + s1.tau_of_x[i] * s1.true_r[i],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn score_is_conditionally_calibrated() {
        let cfg = DgpConfig { n: 40_000, ..DgpConfig::default() };
        let s = baseline_sample(&cfg, &mut substream(13, 0)).unwrap();
        let diffs: Vec<f64> =
            (0..cfg.n).map(|i| s.observed.p()[i] - s.true_r[i]).collect();
        assert_abs_diff_eq!(compensated_mean(&diffs), 0.0, epsilon = mc_tol(0.2, cfg.n));
        let gp: Vec<f64> =
            (0..cfg.n).map(|i| f64::from(s.g[i]) - s.observed.p()[i]).collect();
        assert_abs_diff_eq!(compensated_mean(&gp), 0.0, epsilon = mc_tol(0.5, cfg.n));
    }

    #[test]
    fn realized_score_variance_matches_the_stored_profile() {
        // Even at tiny dispersion the sampled (p - r)^2 averages to the
        // stored conditional variance.
        let cfg = DgpConfig { n: 40_000, sigma_u: 0.01, ..DgpConfig::default() };
        let s = baseline_sample(&cfg, &mut substream(67, 0)).unwrap();
        let realized = compensated_mean(
            &(0..cfg.n)
                .map(|i| (s.observed.p()[i] - s.true_r[i]).powi(2))
                .collect::<Vec<_>>(),
        );
        let stored = compensated_mean(&s.var_p);
        assert_relative_eq!(realized, stored, max_relative = 0.05);
        assert_relative_eq!(stored, 2.25e-5, max_relative = 0.02);
    }

    #[test]
    fn binned_indicator_and_score_means_agree() {
        // E[G | X] = E[p | X]: compare within covariate-index bins.
        let cfg = DgpConfig { n: 60_000, ..DgpConfig::default() };
        let s = baseline_sample(&cfg, &mut substream(17, 0)).unwrap();
        let mut bins: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![], vec![]); 6];
        for i in 0..cfg.n {
            let idx: f64 = s.observed.x_row(i).iter().sum();
            let b = (((idx + 3.0) / 1.0).floor() as isize).clamp(0, 5) as usize;
            bins[b].0.push(f64::from(s.g[i]));
            bins[b].1.push(s.observed.p()[i]);
        }
        for (gs, ps) in bins.iter().filter(|(g, _)| g.len() > 500) {
            let diff = compensated_mean(gs) - compensated_mean(ps);
            assert_abs_diff_eq!(diff, 0.0, epsilon = mc_tol(0.55, gs.len()));
        }
    }

    #[test]
    fn residual_regression_recovers_tau() {
        // Slope of R on (G - r) equals tau up to sampling noise.
        let cfg = DgpConfig { n: 50_000, tau0: 1.5, ..DgpConfig::default() };
        let s = baseline_sample(&cfg, &mut substream(19, 0)).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..cfg.n {
            let resid = s.observed.y()[i] - s.true_m[i];
            let dev = f64::from(s.g[i]) - s.true_r[i];
            num += dev * resid;
            den += dev * dev;
        }
        assert_abs_diff_eq!(num / den, 1.5, epsilon = 0.05);
    }

    #[test]
    fn miscalibration_at_zero_delta_matches_baseline_bitwise() {
        let base = DgpConfig { n: 500, ..DgpConfig::default() };
        let mis = DgpConfig { eta_shape: EtaShape::WorstCase, delta: 0.0, ..base.clone() };
        let a = baseline_sample(&base, &mut substream(3, 0)).unwrap();
        let b = miscalibrated_sample(&mis, &mut substream(3, 0)).unwrap();
        assert_eq!(a.observed.y(), b.observed.y());
        assert_eq!(a.g, b.g);
    }

    #[test]
    fn symmetric_threshold_centers_score() {
        let cfg = DgpConfig {
            n: 40_000,
            variant: Variant::SymmetricThreshold,
            ..DgpConfig::default()
        };
        let s = symmetric_threshold_sample(&cfg, &mut substream(23, 0)).unwrap();
        let mean_p = compensated_mean(s.observed.p());
        assert_abs_diff_eq!(mean_p, 0.5, epsilon = mc_tol(0.16, cfg.n));
        let frac_hi =
            s.observed.p().iter().filter(|&&p| p > 0.5).count() as f64 / cfg.n as f64;
        assert_abs_diff_eq!(frac_hi, 0.5, epsilon = mc_tol(0.5, cfg.n));
        assert!(s.true_r.iter().all(|&r| r == 0.5));
    }

    #[test]
    fn hetero_with_zero_slope_reduces_to_baseline() {
        let base = DgpConfig { n: 400, ..DgpConfig::default() };
        let het = DgpConfig { variant: Variant::HeteroA, tau1: 0.0, ..base.clone() };
        let a = baseline_sample(&base, &mut substream(29, 0)).unwrap();
        let b = heterogeneous_sample(&het, &mut substream(29, 0)).unwrap();
        assert_eq!(a.observed.y(), b.observed.y());
        assert_eq!(a.observed.p(), b.observed.p());
    }

    #[test]
    fn hetero_b_cap_keeps_concentration_positive() {
        let cfg = DgpConfig {
            n: 20_000,
            variant: Variant::HeteroB,
            tau1: 0.5,
            ..DgpConfig::default()
        };
        let s = heterogeneous_sample(&cfg, &mut substream(31, 0)).unwrap();
        for i in 0..cfg.n {
            let r = s.true_r[i];
            assert!(s.var_p[i] <= 0.9 * r * (1.0 - r) + 1e-15);
            assert!(s.var_p[i] > 0.0);
        }
    }

    #[test]
    fn equivalence_construction_preserves_observables() {
        let cfg = DgpConfig { n: 20_000, ..DgpConfig::default() };
        let s = baseline_sample(&cfg, &mut substream(37, 0)).unwrap();
        for (k, tau_prime) in [-1.0, 0.0, 3.0].into_iter().enumerate() {
            let eq = equivalence_construction(&s, tau_prime, &mut substream(40, k as u64));
            assert_eq!(eq.observed.y(), s.observed.y());
            assert_eq!(eq.observed.p(), s.observed.p());
            // mu' + tau' r = m holds exactly.
            for i in 0..cfg.n {
                assert_relative_eq!(
                    eq.true_mu[i] + tau_prime * eq.true_r[i],
                    s.true_m[i],
                    epsilon = 1e-12
                );
            }
            // The new indicator is calibrated to the same score.
            let gp: Vec<f64> =
                (0..cfg.n).map(|i| f64::from(eq.g[i]) - eq.observed.p()[i]).collect();
            assert_abs_diff_eq!(compensated_mean(&gp), 0.0, epsilon = mc_tol(0.5, cfg.n));
        }
    }

    #[test]
    fn canonical_distribution_is_valid() {
        let dist = FiniteDistribution::canonical();
        dist.validate().unwrap();
        assert_eq!(dist.atoms.len(), 16);
        let table = dist.conditional_table();
        let r0 = table.iter().find(|(x, ..)| x[0] == 0.0).unwrap();
        let r1 = table.iter().find(|(x, ..)| x[0] == 1.0).unwrap();
        assert_relative_eq!(r0.1, 0.3, epsilon = 1e-12);
        assert_relative_eq!(r1.1, 0.7, epsilon = 1e-12);
        assert_relative_eq!(r0.2, 0.6, epsilon = 1e-12);
        assert_relative_eq!(r1.2, 2.4, epsilon = 1e-12);
    }

    #[test]
    fn invalid_probabilities_are_rejected() {
        let mut dist = FiniteDistribution::canonical();
        dist.atoms[0].prob += 0.01;
        assert!(dist.validate().is_err());
    }

    #[test]
    fn config_validation() {
        let bad_sigma = DgpConfig { sigma_u: 1.0, ..DgpConfig::default() };
        assert!(bad_sigma.validate().is_err());
        let delta_without_shape = DgpConfig { delta: 0.1, ..DgpConfig::default() };
        assert!(delta_without_shape.validate().is_err());
        let shaped =
            DgpConfig { delta: 0.1, eta_shape: EtaShape::Linear, ..DgpConfig::default() };
        assert!(shaped.validate().is_ok());
        let slope_without_hetero = DgpConfig { tau1: 0.5, ..shaped };
        assert!(slope_without_hetero.validate().is_err());
    }
}
