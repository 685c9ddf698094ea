//! Analytic reference quantities: exact enumeration over finite-support
//! distributions, and seeded Monte Carlo integration of the residual score
//! variance, calibration-failure bias, sensitivity bound, attenuation
//! factor, and variance-weighted estimand for the synthetic designs.

use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dgp::{conditional_moments, DgpConfig, EtaShape, FiniteDistribution, LatentSample, Variant};
use crate::error::{Error, Result, IDENTIFICATION_TOLERANCE};
use crate::numeric::compensated_sum;
use crate::rng::substream;

/// Default number of integration points.
pub const DEFAULT_MC_POINTS: usize = 1_000_000;

/// Dedicated seed for reference-value integration, reported alongside every
/// reference so tables reproduce bit-for-bit.
pub const DEFAULT_THEORY_SEED: u64 = 271_828;

const MIN_MC_POINTS: usize = 100_000;

fn check_mc_points(mc_points: usize) -> Result<()> {
    if mc_points < MIN_MC_POINTS {
        return Err(Error::Validation(format!(
            "mc_points must be at least {MIN_MC_POINTS}, got {mc_points}"
        )));
    }
    Ok(())
}

/// How a set of reference values was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMethod {
    McIntegration,
    Enumeration,
}

/// Per-covariate-value moments of a finite-support distribution.
#[derive(Debug, Clone)]
pub struct XGroupMoments {
    pub x: Vec<f64>,
    pub cov_g_p: f64,
    pub var_p: f64,
    pub weight: f64,
}

/// Exact population moments of a finite-support distribution, computed by
/// summation over atoms. Independent of every estimator code path.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    /// `E[(2p - 1)(Y - m(X))]`.
    pub e_z_r: f64,
    /// `E[(p - r(X))^2]`.
    pub v_star: f64,
    /// `E[|2p - 1|]`.
    pub e_abs_z: f64,
    /// The moment-ratio coefficient; `None` when not identified.
    pub tau: Option<f64>,
    /// `E[psi^2]` at the population coefficient.
    pub e_psi_sq: Option<f64>,
    /// Asymptotic variance `E[psi^2] / (2 V*)^2`.
    pub sigma_or_sq: Option<f64>,
    /// `E[Y | G = 1] - E[Y | G = 0]`; `None` when a group is empty.
    pub delta_marg: Option<f64>,
    /// `E[mu(X) | G = 1] - E[mu(X) | G = 0]`.
    pub c_term: Option<f64>,
    pub per_x: Vec<XGroupMoments>,
}

impl PopulationMoments {
    /// The identified coefficient, or the non-identification error carrying
    /// the residual score variance.
    pub fn identified_tau(&self) -> Result<f64> {
        self.tau.ok_or(Error::NotIdentified { v_star_hat: self.v_star })
    }

    /// Worst-case asymptotic bias over calibration errors bounded by `delta`.
    pub fn sharp_bound(&self, delta: f64) -> Result<f64> {
        let tau = self.identified_tau()?;
        Ok(tau.abs() * delta * self.e_abs_z / (2.0 * self.v_star))
    }
}

/// Exact moments of a finite-support distribution by brute-force summation.
pub fn enumeration_oracle(dist: &FiniteDistribution) -> Result<PopulationMoments> {
    dist.validate()?;
    let table = dist.conditional_table();
    let lookup = |x: &[f64]| {
        table
            .iter()
            .find(|(xs, ..)| xs.as_slice() == x)
            .map(|(_, r, m, _)| (*r, *m))
            .expect("atom covariates are in the conditional table")
    };

    let e_z_r = compensated_sum(dist.atoms.iter().map(|a| {
        let (_, m) = lookup(&a.x);
        a.prob * (2.0 * a.p - 1.0) * (a.y - m)
    }));
    let v_star = compensated_sum(dist.atoms.iter().map(|a| {
        let (r, _) = lookup(&a.x);
        a.prob * (a.p - r) * (a.p - r)
    }));
    let e_abs_z =
        compensated_sum(dist.atoms.iter().map(|a| a.prob * (2.0 * a.p - 1.0).abs()));

    let tau = (v_star > IDENTIFICATION_TOLERANCE).then(|| e_z_r / (2.0 * v_star));
    let e_psi_sq = tau.map(|t| {
        compensated_sum(dist.atoms.iter().map(|a| {
            let (r, m) = lookup(&a.x);
            let psi =
                (2.0 * a.p - 1.0) * (a.y - m) - 2.0 * t * (a.p - r) * (a.p - r);
            a.prob * psi * psi
        }))
    });
    let sigma_or_sq = e_psi_sq.map(|ps| ps / (2.0 * v_star).powi(2));

    // Marginal gap and its compositional term.
    let p_g1 = compensated_sum(dist.atoms.iter().filter(|a| a.g == 1).map(|a| a.prob));
    let p_g0 = compensated_sum(dist.atoms.iter().filter(|a| a.g == 0).map(|a| a.prob));
    let (delta_marg, c_term) = if p_g1 > 0.0 && p_g0 > 0.0 {
        let mean_in = |g: u8, f: &dyn Fn(&crate::dgp::FiniteAtom) -> f64| {
            compensated_sum(dist.atoms.iter().filter(|a| a.g == g).map(|a| a.prob * f(a)))
                / if g == 1 { p_g1 } else { p_g0 }
        };
        let dm = mean_in(1, &|a| a.y) - mean_in(0, &|a| a.y);
        let ct = mean_in(1, &|a| a.mu) - mean_in(0, &|a| a.mu);
        (Some(dm), Some(ct))
    } else {
        (None, None)
    };

    // Per-covariate-value conditional moments.
    let mut per_x = Vec::new();
    for (x, r, _, w) in &table {
        let mut e_gp = 0.0;
        let mut e_g = 0.0;
        let mut e_p2 = 0.0;
        for a in dist.atoms.iter().filter(|a| &a.x == x) {
            e_gp += a.prob * f64::from(a.g) * a.p;
            e_g += a.prob * f64::from(a.g);
            e_p2 += a.prob * a.p * a.p;
        }
        per_x.push(XGroupMoments {
            x: x.clone(),
            cov_g_p: e_gp / w - (e_g / w) * r,
            var_p: e_p2 / w - r * r,
            weight: *w,
        });
    }

    Ok(PopulationMoments {
        e_z_r,
        v_star,
        e_abs_z,
        tau,
        e_psi_sq,
        sigma_or_sq,
        delta_marg,
        c_term,
        per_x,
    })
}

/// Closed-form derivative of `E[psi]` in the outcome-mean direction on a
/// finite-support distribution: `-E[(2 r(X) - 1) delta(X)]`.
pub fn gateaux_m_closed_form(
    dist: &FiniteDistribution,
    delta_fn: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    dist.validate()?;
    let table = dist.conditional_table();
    Ok(-compensated_sum(table.iter().map(|(x, r, _, w)| w * (2.0 * r - 1.0) * delta_fn(x))))
}

/// Marginal outcome gap across latent groups and the compositional term,
/// computed on a simulated sample where the latent indicator is available:
/// `(mean(Y | G=1) - mean(Y | G=0), mean(mu | G=1) - mean(mu | G=0))`.
pub fn marginal_gap(sample: &LatentSample) -> Result<(f64, f64)> {
    let n = sample.observed.len();
    let (mut y1, mut y0, mut mu1, mut mu0) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        if sample.g[i] == 1 {
            y1.push(sample.observed.y()[i]);
            mu1.push(sample.true_mu[i]);
        } else {
            y0.push(sample.observed.y()[i]);
            mu0.push(sample.true_mu[i]);
        }
    }
    if y1.is_empty() {
        return Err(Error::EmptyCell("G = 1"));
    }
    if y0.is_empty() {
        return Err(Error::EmptyCell("G = 0"));
    }
    let delta_marg = crate::numeric::compensated_mean(&y1) - crate::numeric::compensated_mean(&y0);
    let c_term = crate::numeric::compensated_mean(&mu1) - crate::numeric::compensated_mean(&mu0);
    Ok((delta_marg, c_term))
}

/// Residual score variance `E[Var(p | X)]` of a design, by seeded MC
/// integration over the covariate law with the analytic conditional
/// variance. For the baseline this is `sigma_u^2 E[r(X)(1 - r(X))]`,
/// which the generator realizes exactly.
pub fn true_vstar(cfg: &DgpConfig, mc_points: usize, seed: u64) -> Result<f64> {
    check_mc_points(mc_points)?;
    let mut rng = substream(seed, 0);
    let mut row = vec![0.0; cfg.d];
    let mut acc = 0.0;
    let mut comp = 0.0;
    for _ in 0..mc_points {
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let v = conditional_moments(cfg, &row).var_p;
        let t = acc + v;
        comp += if acc.abs() >= v.abs() { (acc - t) + v } else { (v - t) + acc };
        acc = t;
    }
    Ok((acc + comp) / mc_points as f64)
}

struct ScoreLawAccumulator {
    var_p: f64,
    abs_z: f64,
    z_eta: f64,
    abs_dev: f64,
    tau_w: f64,
    count: usize,
}

/// One pass over the joint `(X, p)` law, accumulating everything the
/// reference values need. This is the idealized, unclipped score law.
fn integrate_score_law(cfg: &DgpConfig, mc_points: usize, seed: u64) -> Result<ScoreLawAccumulator> {
    check_mc_points(mc_points)?;
    let mut rng = substream(seed, 0);
    let mut row = vec![0.0; cfg.d];
    let mut acc = ScoreLawAccumulator {
        var_p: 0.0,
        abs_z: 0.0,
        z_eta: 0.0,
        abs_dev: 0.0,
        tau_w: 0.0,
        count: mc_points,
    };
    for _ in 0..mc_points {
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let cm = conditional_moments(cfg, &row);
        let concentration = cm.r * (1.0 - cm.r) / cm.var_p - 1.0;
        let beta = Beta::new(cm.r * concentration, (1.0 - cm.r) * concentration)
            .map_err(|e| Error::Computation(format!("invalid Beta parameters: {e}")))?;
        let p: f64 = beta.sample(&mut rng);
        let z = 2.0 * p - 1.0;
        acc.var_p += cm.var_p;
        acc.abs_z += z.abs();
        acc.z_eta += z * cfg.eta_shape.eta(cfg.delta, p);
        acc.abs_dev += (p - 0.5).abs();
        acc.tau_w += cm.tau_x * cm.var_p;
    }
    Ok(acc)
}

/// Asymptotic bias of the moment estimator under the configured calibration
/// error: `tau * E[(2p - 1) eta(p)] / (2 V*)`, over the unclipped score law.
pub fn theoretical_bias(cfg: &DgpConfig, mc_points: usize, seed: u64) -> Result<f64> {
    let acc = integrate_score_law(cfg, mc_points, seed)?;
    let v_star = acc.var_p / acc.count as f64;
    if v_star <= IDENTIFICATION_TOLERANCE {
        return Err(Error::NotIdentified { v_star_hat: v_star });
    }
    Ok(cfg.tau0 * (acc.z_eta / acc.count as f64) / (2.0 * v_star))
}

/// Worst-case asymptotic bias over all calibration errors bounded by
/// `delta`: `|tau| delta E[|2p - 1|] / (2 V*)`, attained at
/// `eta = delta sgn(2p - 1)`.
pub fn sharp_bound(cfg: &DgpConfig, delta: f64, mc_points: usize, seed: u64) -> Result<f64> {
    if delta < 0.0 {
        return Err(Error::Validation("delta must be nonnegative".into()));
    }
    let acc = integrate_score_law(cfg, mc_points, seed)?;
    let v_star = acc.var_p / acc.count as f64;
    if v_star <= IDENTIFICATION_TOLERANCE {
        return Err(Error::NotIdentified { v_star_hat: v_star });
    }
    Ok(cfg.tau0.abs() * delta * (acc.abs_z / acc.count as f64) / (2.0 * v_star))
}

/// Attenuation factor of the hard-threshold estimator on the
/// symmetric-threshold design: `kappa = 2 E[|p - 1/2|]`.
pub fn attenuation_kappa(cfg: &DgpConfig, mc_points: usize, seed: u64) -> Result<f64> {
    if cfg.variant != Variant::SymmetricThreshold {
        return Err(Error::Validation(
            "attenuation_kappa requires the symmetric-threshold variant".into(),
        ));
    }
    check_mc_points(mc_points)?;
    let mut rng = substream(seed, 0);
    let c = (1.0 - cfg.sigma_u * cfg.sigma_u) / (cfg.sigma_u * cfg.sigma_u);
    let beta = Beta::new(c / 2.0, c / 2.0)
        .map_err(|e| Error::Computation(format!("invalid Beta parameters: {e}")))?;
    let mut acc = 0.0;
    for _ in 0..mc_points {
        let p: f64 = beta.sample(&mut rng);
        acc += (p - 0.5).abs();
    }
    Ok(2.0 * acc / mc_points as f64)
}

/// The estimand under covariate-varying effects: the score-variance-weighted
/// average `E[tau(X) Var(p | X)] / E[Var(p | X)]`, using the realized
/// (post-cap) conditional variances.
pub fn variance_weighted_tau(cfg: &DgpConfig, mc_points: usize, seed: u64) -> Result<f64> {
    if !matches!(cfg.variant, Variant::HeteroA | Variant::HeteroB) {
        return Err(Error::Validation(
            "variance_weighted_tau requires a heterogeneous variant".into(),
        ));
    }
    check_mc_points(mc_points)?;
    let mut rng = substream(seed, 0);
    let mut row = vec![0.0; cfg.d];
    let mut num = 0.0;
    let mut den = 0.0;
    for _ in 0..mc_points {
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let cm = conditional_moments(cfg, &row);
        num += cm.tau_x * cm.var_p;
        den += cm.var_p;
    }
    Ok(num / den)
}

/// Reference values for one design, with the integration settings that
/// produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    /// `E[Var(p | X)]`.
    pub v_star: f64,
    /// Asymptotic bias under the configured calibration error.
    pub b_cal: f64,
    /// Worst-case bias bound at the configured `delta`.
    pub sharp_bound: f64,
    /// `2 E[|p - 1/2|]`.
    pub kappa: f64,
    /// Variance-weighted average effect (equals `tau0` under a constant
    /// effect).
    pub tau_bar: f64,
    /// `E[|2p - 1|]`.
    pub e_abs_z: f64,
    pub method: RefMethod,
    pub mc_points: usize,
    pub seed: u64,
}

impl TheoryReport {
    /// Computes every reference value for a design in one seeded pass over
    /// the idealized `(X, p)` law.
    pub fn compute(cfg: &DgpConfig, mc_points: usize, seed: u64) -> Result<TheoryReport> {
        let acc = integrate_score_law(cfg, mc_points, seed)?;
        let npts = acc.count as f64;
        let v_star = acc.var_p / npts;
        if v_star <= IDENTIFICATION_TOLERANCE {
            return Err(Error::NotIdentified { v_star_hat: v_star });
        }
        let e_abs_z = acc.abs_z / npts;
        Ok(TheoryReport {
            v_star,
            b_cal: cfg.tau0 * (acc.z_eta / npts) / (2.0 * v_star),
            sharp_bound: cfg.tau0.abs() * cfg.delta * e_abs_z / (2.0 * v_star),
            kappa: 2.0 * acc.abs_dev / npts,
            tau_bar: acc.tau_w / acc.var_p,
            e_abs_z,
            method: RefMethod::McIntegration,
            mc_points,
            seed,
        })
    }

    /// Exact reference values for a finite-support distribution under a
    /// hypothetical calibration error of the given shape and magnitude.
    pub fn from_enumeration(
        dist: &FiniteDistribution,
        eta_shape: EtaShape,
        delta: f64,
    ) -> Result<TheoryReport> {
        let moments = enumeration_oracle(dist)?;
        let tau = moments.identified_tau()?;
        let e_z_eta = compensated_sum(dist.atoms.iter().map(|a| {
            a.prob * (2.0 * a.p - 1.0) * eta_shape.eta(delta, a.p)
        }));
        let kappa =
            2.0 * compensated_sum(dist.atoms.iter().map(|a| a.prob * (a.p - 0.5).abs()));
        Ok(TheoryReport {
            v_star: moments.v_star,
            b_cal: tau * e_z_eta / (2.0 * moments.v_star),
            sharp_bound: tau.abs() * delta * moments.e_abs_z / (2.0 * moments.v_star),
            kappa,
            tau_bar: tau,
            e_abs_z: moments.e_abs_z,
            method: RefMethod::Enumeration,
            mc_points: 0,
            seed: 0,
        })
    }
}
