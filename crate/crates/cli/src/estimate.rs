//! The applied-use path: estimation on a user CSV dataset.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use latentgap::estimators::{orthogonal_tau, plugin_tau};
use latentgap::numeric::compensated_mean;
use latentgap::{ObservedSample, TauEstimate};
use serde::Serialize;

use crate::input_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Plugin,
    Orthogonal,
}

pub struct EstimateOpts {
    pub input: PathBuf,
    pub method: EstimatorArg,
    pub folds: usize,
    pub lambda: f64,
    pub deltas: Vec<f64>,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Serialize)]
struct SensitivityBand {
    delta: f64,
    /// Worst-case asymptotic bias over calibration errors bounded by
    /// `delta`: `|tau_hat| * delta * mean|2p - 1| / (2 v_star_hat)`.
    bias_bound: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    input: String,
    method: String,
    n: usize,
    d: usize,
    tau_hat: f64,
    /// Asymptotic standard deviation; the interval half-width is
    /// `z * se / sqrt(n)`.
    se: f64,
    ci_low: f64,
    ci_high: f64,
    v_star_hat: f64,
    alpha: f64,
    lambda: f64,
    folds: Option<usize>,
    seed: Option<u64>,
    e_abs_z: f64,
    sensitivity: Vec<SensitivityBand>,
}

pub fn run(opts: &EstimateOpts) -> anyhow::Result<()> {
    let sample = read_sample(&opts.input)?;
    let est: TauEstimate = match opts.method {
        EstimatorArg::Plugin => plugin_tau(&sample, opts.lambda, opts.alpha)?,
        EstimatorArg::Orthogonal => {
            orthogonal_tau(&sample, opts.folds, opts.lambda, opts.seed, opts.alpha)?
        }
    };

    let abs_z: Vec<f64> = sample.p().iter().map(|p| (2.0 * p - 1.0).abs()).collect();
    let e_abs_z = compensated_mean(&abs_z);
    let sensitivity = opts
        .deltas
        .iter()
        .map(|&delta| SensitivityBand {
            delta,
            bias_bound: est.tau_hat.abs() * delta * e_abs_z / (2.0 * est.v_star_hat),
        })
        .collect();

    let report = EstimateReport {
        input: opts.input.display().to_string(),
        method: est.method.to_string(),
        n: est.n,
        d: sample.dim(),
        tau_hat: est.tau_hat,
        se: est.se,
        ci_low: est.ci_low,
        ci_high: est.ci_high,
        v_star_hat: est.v_star_hat,
        alpha: opts.alpha,
        lambda: opts.lambda,
        folds: matches!(opts.method, EstimatorArg::Orthogonal).then_some(opts.folds),
        seed: matches!(opts.method, EstimatorArg::Orthogonal).then_some(opts.seed),
        e_abs_z,
        sensitivity,
    };
    serde_json::to_writer_pretty(std::io::stdout().lock(), &report)?;
    println!();
    Ok(())
}

/// Reads a CSV with header `y,p,x1,...,xd` (extra columns are ignored, so
/// files carrying latent fields work unchanged).
fn read_sample(path: &Path) -> anyhow::Result<ObservedSample> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let y_col = find("y").ok_or_else(|| input_error("missing column 'y'".into()))?;
    let p_col = find("p").ok_or_else(|| input_error("missing column 'p'".into()))?;
    let mut x_cols = Vec::new();
    while let Some(idx) = find(&format!("x{}", x_cols.len() + 1)) {
        x_cols.push(idx);
    }
    if x_cols.is_empty() {
        return Err(input_error("no covariate columns found (expected x1, x2, ...)".into()));
    }

    let mut y = Vec::new();
    let mut p = Vec::new();
    let mut x = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.with_context(|| format!("cannot read row {}", i + 1))?;
        let cell = |col: usize, name: &str| -> anyhow::Result<f64> {
            let raw = record.get(col).ok_or_else(|| {
                input_error(format!("row {}: missing column '{name}'", i + 1))
            })?;
            raw.trim().parse::<f64>().map_err(|_| {
                input_error(format!(
                    "row {}, column '{name}': cannot parse '{raw}' as a number",
                    i + 1
                ))
            })
        };
        y.push(cell(y_col, "y")?);
        let pi = cell(p_col, "p")?;
        if !(0.0..=1.0).contains(&pi) {
            return Err(input_error(format!(
                "row {}, column 'p': score {pi} lies outside [0, 1]",
                i + 1
            )));
        }
        p.push(pi);
        for (k, &col) in x_cols.iter().enumerate() {
            x.push(cell(col, &format!("x{}", k + 1))?);
        }
    }
    Ok(ObservedSample::new(y, x, x_cols.len(), p)?)
}
