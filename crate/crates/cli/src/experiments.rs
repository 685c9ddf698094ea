//! Named simulation studies: each experiment runs its Monte Carlo cells,
//! attaches the matching reference values, and writes CSV (plus a meta
//! sidecar) or a single JSON report. Reruns with the same seed produce
//! byte-identical files regardless of worker count.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use latentgap::dgp::{DgpConfig, EtaShape, Variant};
use latentgap::harness::{qq_data, run_cell, CellSpec};
use latentgap::nuisance::{DEFAULT_FOLDS, DEFAULT_RIDGE_LAMBDA};
use latentgap::theory::{
    attenuation_kappa, true_vstar, variance_weighted_tau, TheoryReport, DEFAULT_THEORY_SEED,
};
use latentgap::{CellReport, Method};
use serde::Serialize;

use crate::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ExperimentId {
    /// Estimator comparison on the baseline design.
    Table1,
    /// Oracle behavior as the residual score variance shrinks to zero.
    Table2,
    /// Calibration failure: empirical bias against the sharp bound.
    Table3,
    /// Hard-threshold attenuation on the symmetric design.
    Table4,
    /// Heterogeneous effects and the variance-weighted estimand.
    Table5,
    /// Quantile pairs for normality of standardized oracle estimates.
    FigureQq,
    /// RMSE and coverage along the identification boundary.
    FigureBoundary,
    /// Bias-versus-delta curves for the three error shapes.
    FigureBias,
    /// Raw sampling distributions of the threshold comparison.
    FigureAttenuation,
    /// RMSE versus sample size for the weighted estimand.
    FigureWeighted,
}

impl ExperimentId {
    fn name(self) -> &'static str {
        match self {
            ExperimentId::Table1 => "table1",
            ExperimentId::Table2 => "table2",
            ExperimentId::Table3 => "table3",
            ExperimentId::Table4 => "table4",
            ExperimentId::Table5 => "table5",
            ExperimentId::FigureQq => "figure_qq",
            ExperimentId::FigureBoundary => "figure_boundary",
            ExperimentId::FigureBias => "figure_bias",
            ExperimentId::FigureAttenuation => "figure_attenuation",
            ExperimentId::FigureWeighted => "figure_weighted",
        }
    }
}

pub struct ExperimentOpts {
    pub id: ExperimentId,
    pub reps: usize,
    pub master_seed: u64,
    pub out: PathBuf,
    pub format: Format,
    pub mc_points: usize,
}

#[derive(Serialize)]
struct Meta {
    experiment: &'static str,
    master_seed: u64,
    reps: usize,
    alpha: f64,
    ridge_lambda: f64,
    folds: usize,
    mc_points: usize,
    theory_seed: u64,
    files: Vec<String>,
}

pub fn run_experiment(opts: &ExperimentOpts) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&opts.out)
        .with_context(|| format!("cannot create {}", opts.out.display()))?;
    match opts.id {
        ExperimentId::Table1 => write_report(opts, table1(opts)?),
        ExperimentId::Table2 => write_report(opts, table2(opts)?),
        ExperimentId::Table3 => write_report(opts, table3(opts)?),
        ExperimentId::Table4 => write_report(opts, table4(opts)?),
        ExperimentId::Table5 => write_report(opts, table5(opts)?),
        ExperimentId::FigureQq => figure_qq(opts),
        ExperimentId::FigureBoundary => write_report(opts, figure_boundary(opts)?),
        ExperimentId::FigureBias => write_report(opts, figure_bias(opts)?),
        ExperimentId::FigureAttenuation => write_report(opts, figure_attenuation(opts)?),
        ExperimentId::FigureWeighted => write_report(opts, figure_weighted(opts)?),
    }
}

fn baseline() -> DgpConfig {
    DgpConfig::default()
}

fn spec(dgp: DgpConfig, estimator: Method, n: usize, opts: &ExperimentOpts, target: f64) -> CellSpec {
    CellSpec::new(dgp, estimator, n, opts.reps, opts.master_seed, target)
}

fn meta(opts: &ExperimentOpts, files: &[PathBuf]) -> Meta {
    Meta {
        experiment: opts.id.name(),
        master_seed: opts.master_seed,
        reps: opts.reps,
        alpha: 0.05,
        ridge_lambda: DEFAULT_RIDGE_LAMBDA,
        folds: DEFAULT_FOLDS,
        mc_points: opts.mc_points,
        theory_seed: DEFAULT_THEORY_SEED,
        files: files.iter().map(|f| f.display().to_string()).collect(),
    }
}

/// Serializable rows plus everything needed to write them out.
fn write_report<T: Serialize>(opts: &ExperimentOpts, rows: Vec<T>) -> anyhow::Result<Vec<PathBuf>> {
    let base = opts.out.join(opts.id.name());
    match opts.format {
        Format::Csv => {
            let csv_path = base.with_extension("csv");
            write_rows_csv(&csv_path, &rows)?;
            let meta_path = opts.out.join(format!("{}.meta.json", opts.id.name()));
            let m = meta(opts, std::slice::from_ref(&csv_path));
            std::fs::write(&meta_path, serde_json::to_string_pretty(&m)?)?;
            Ok(vec![csv_path, meta_path])
        }
        Format::Json => {
            let json_path = base.with_extension("json");
            #[derive(Serialize)]
            struct JsonReport<'a, T> {
                meta: &'a Meta,
                rows: &'a [T],
            }
            let m = meta(opts, std::slice::from_ref(&json_path));
            std::fs::write(
                &json_path,
                serde_json::to_string_pretty(&JsonReport { meta: &m, rows: &rows })?,
            )?;
            Ok(vec![json_path])
        }
    }
}

fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut wtr =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Estimator comparison on the baseline design.

#[derive(Serialize)]
struct Table1Row {
    estimator: String,
    n: usize,
    bias: f64,
    sd: f64,
    rmse: f64,
    coverage: f64,
    n_finite: usize,
    n_failed: usize,
    reps: usize,
    tau: f64,
    sigma_u: f64,
    target: f64,
    master_seed: u64,
}

fn table1(opts: &ExperimentOpts) -> anyhow::Result<Vec<Table1Row>> {
    let mut rows = Vec::new();
    for estimator in [Method::Oracle, Method::Plugin, Method::Orthogonal] {
        for n in [500usize, 1000, 5000] {
            let r = run_cell(&spec(baseline(), estimator, n, opts, 1.0))?;
            rows.push(Table1Row {
                estimator: estimator.to_string(),
                n,
                bias: r.bias,
                sd: r.sd,
                rmse: r.rmse,
                coverage: r.coverage,
                n_finite: r.n_finite,
                n_failed: r.n_failed,
                reps: opts.reps,
                tau: 1.0,
                sigma_u: 0.30,
                target: 1.0,
                master_seed: opts.master_seed,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Identification boundary.

const BOUNDARY_SIGMAS: [f64; 7] = [0.5, 0.25, 0.1, 0.05, 0.01, 0.005, 0.001];

#[derive(Serialize)]
struct Table2Row {
    sigma_u: f64,
    true_vstar: f64,
    bias: f64,
    sd: f64,
    rmse: f64,
    coverage: f64,
    n_finite: usize,
    n_failed: usize,
    n: usize,
    reps: usize,
    target: f64,
    master_seed: u64,
    theory_seed: u64,
}

fn boundary_cells(opts: &ExperimentOpts) -> anyhow::Result<Vec<(f64, f64, CellReport)>> {
    BOUNDARY_SIGMAS
        .iter()
        .map(|&sigma_u| {
            let dgp = DgpConfig { sigma_u, ..baseline() };
            let v = true_vstar(&dgp, opts.mc_points, DEFAULT_THEORY_SEED)?;
            let r = run_cell(&spec(dgp, Method::Oracle, 1000, opts, 1.0))?;
            Ok((sigma_u, v, r))
        })
        .collect()
}

fn table2(opts: &ExperimentOpts) -> anyhow::Result<Vec<Table2Row>> {
    Ok(boundary_cells(opts)?
        .into_iter()
        .map(|(sigma_u, v, r)| Table2Row {
            sigma_u,
            true_vstar: v,
            bias: r.bias,
            sd: r.sd,
            rmse: r.rmse,
            coverage: r.coverage,
            n_finite: r.n_finite,
            n_failed: r.n_failed,
            n: 1000,
            reps: opts.reps,
            target: 1.0,
            master_seed: opts.master_seed,
            theory_seed: DEFAULT_THEORY_SEED,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Calibration failure.

const SHAPES: [(EtaShape, &str); 3] = [
    (EtaShape::WorstCase, "worst_case"),
    (EtaShape::Linear, "linear"),
    (EtaShape::Symmetric, "symmetric"),
];
const DELTAS: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

#[derive(Serialize)]
struct Table3Row {
    shape: &'static str,
    delta: f64,
    emp_bias: f64,
    theo_bias: f64,
    sharp_bound: f64,
    tightness: f64,
    sd: f64,
    n: usize,
    reps: usize,
    sigma_u: f64,
    tau: f64,
    master_seed: u64,
    theory_seed: u64,
}

fn sensitivity_cells(
    opts: &ExperimentOpts,
) -> anyhow::Result<Vec<(&'static str, f64, TheoryReport, CellReport)>> {
    let mut out = Vec::new();
    for (shape, label) in SHAPES {
        for delta in DELTAS {
            let dgp = DgpConfig { eta_shape: shape, delta, ..baseline() };
            let theory = TheoryReport::compute(&dgp, opts.mc_points, DEFAULT_THEORY_SEED)?;
            let r = run_cell(&spec(dgp, Method::Oracle, 2000, opts, 1.0))?;
            out.push((label, delta, theory, r));
        }
    }
    Ok(out)
}

fn table3(opts: &ExperimentOpts) -> anyhow::Result<Vec<Table3Row>> {
    Ok(sensitivity_cells(opts)?
        .into_iter()
        .map(|(label, delta, theory, r)| Table3Row {
            shape: label,
            delta,
            emp_bias: r.bias,
            theo_bias: theory.b_cal,
            sharp_bound: theory.sharp_bound,
            tightness: r.bias.abs() / theory.sharp_bound,
            sd: r.sd,
            n: 2000,
            reps: opts.reps,
            sigma_u: 0.30,
            tau: 1.0,
            master_seed: opts.master_seed,
            theory_seed: DEFAULT_THEORY_SEED,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Hard-threshold attenuation.

const THRESHOLD_SIGMAS: [f64; 3] = [0.10, 0.20, 0.30];

#[derive(Serialize)]
struct Table4Row {
    sigma_u: f64,
    kappa: f64,
    estimator: String,
    mean_tau: f64,
    bias: f64,
    sd: f64,
    rmse: f64,
    n: usize,
    reps: usize,
    target: f64,
    master_seed: u64,
    theory_seed: u64,
}

fn threshold_cells(
    opts: &ExperimentOpts,
) -> anyhow::Result<Vec<(f64, f64, Method, CellReport)>> {
    let mut out = Vec::new();
    for sigma_u in THRESHOLD_SIGMAS {
        let dgp =
            DgpConfig { sigma_u, variant: Variant::SymmetricThreshold, ..baseline() };
        let kappa = attenuation_kappa(&dgp, opts.mc_points, DEFAULT_THEORY_SEED)?;
        for estimator in [Method::Oracle, Method::Plugin, Method::HardThreshold] {
            let r = run_cell(&spec(dgp.clone(), estimator, 1000, opts, 1.0))?;
            out.push((sigma_u, kappa, estimator, r));
        }
    }
    Ok(out)
}

fn table4(opts: &ExperimentOpts) -> anyhow::Result<Vec<Table4Row>> {
    Ok(threshold_cells(opts)?
        .into_iter()
        .map(|(sigma_u, kappa, estimator, r)| Table4Row {
            sigma_u,
            kappa,
            estimator: estimator.to_string(),
            mean_tau: r.bias + 1.0,
            bias: r.bias,
            sd: r.sd,
            rmse: r.rmse,
            n: 1000,
            reps: opts.reps,
            target: 1.0,
            master_seed: opts.master_seed,
            theory_seed: DEFAULT_THEORY_SEED,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Heterogeneous effects.

#[derive(Serialize)]
struct Table5Row {
    design: &'static str,
    n: usize,
    tau_bar: f64,
    bias: f64,
    sd: f64,
    rmse: f64,
    coverage: f64,
    n_finite: usize,
    reps: usize,
    master_seed: u64,
    theory_seed: u64,
}

fn weighted_cells(opts: &ExperimentOpts) -> anyhow::Result<Vec<(&'static str, usize, f64, CellReport)>> {
    let mut out = Vec::new();
    for (variant, label) in [(Variant::HeteroA, "A"), (Variant::HeteroB, "B")] {
        let dgp = DgpConfig { variant, tau1: 0.5, ..baseline() };
        let tau_bar = variance_weighted_tau(&dgp, opts.mc_points, DEFAULT_THEORY_SEED)?;
        for n in [500usize, 1000, 5000] {
            let r = run_cell(&spec(dgp.clone(), Method::Oracle, n, opts, tau_bar))?;
            out.push((label, n, tau_bar, r));
        }
    }
    Ok(out)
}

fn table5(opts: &ExperimentOpts) -> anyhow::Result<Vec<Table5Row>> {
    Ok(weighted_cells(opts)?
        .into_iter()
        .map(|(design, n, tau_bar, r)| Table5Row {
            design,
            n,
            tau_bar,
            bias: r.bias,
            sd: r.sd,
            rmse: r.rmse,
            coverage: r.coverage,
            n_finite: r.n_finite,
            reps: opts.reps,
            master_seed: opts.master_seed,
            theory_seed: DEFAULT_THEORY_SEED,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Figures (plot data only; rendering is external).

#[derive(Serialize)]
struct QqRow {
    theoretical: f64,
    standardized: f64,
}

fn figure_qq(opts: &ExperimentOpts) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut all_rows: Vec<(usize, Vec<QqRow>)> = Vec::new();
    for n in [500usize, 1000, 5000] {
        let r = run_cell(&spec(baseline(), Method::Oracle, n, opts, 1.0))?;
        let qq = qq_data(&r.estimates, 1.0, &r.ses, n)?;
        let rows: Vec<QqRow> = qq
            .theoretical
            .iter()
            .zip(&qq.standardized)
            .map(|(&t, &s)| QqRow { theoretical: t, standardized: s })
            .collect();
        all_rows.push((n, rows));
    }
    match opts.format {
        Format::Csv => {
            for (n, rows) in &all_rows {
                let path = opts.out.join(format!("figure_qq_n{n}.csv"));
                write_rows_csv(&path, rows)?;
                files.push(path);
            }
            let meta_path = opts.out.join("figure_qq.meta.json");
            let m = meta(opts, &files);
            std::fs::write(&meta_path, serde_json::to_string_pretty(&m)?)?;
            files.push(meta_path);
        }
        Format::Json => {
            #[derive(Serialize)]
            struct QqReport<'a> {
                meta: &'a Meta,
                panels: Vec<Panel<'a>>,
            }
            #[derive(Serialize)]
            struct Panel<'a> {
                n: usize,
                rows: &'a [QqRow],
            }
            let path = opts.out.join("figure_qq.json");
            let m = meta(opts, std::slice::from_ref(&path));
            let report = QqReport {
                meta: &m,
                panels: all_rows.iter().map(|(n, rows)| Panel { n: *n, rows }).collect(),
            };
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            files.push(path);
        }
    }
    Ok(files)
}

#[derive(Serialize)]
struct BoundaryRow {
    sigma_u: f64,
    true_vstar: f64,
    rmse: f64,
    coverage: f64,
    /// `1/V*` reference curve anchored at the first row's RMSE.
    reference_rmse: f64,
}

fn figure_boundary(opts: &ExperimentOpts) -> anyhow::Result<Vec<BoundaryRow>> {
    let cells = boundary_cells(opts)?;
    let (anchor_v, anchor_rmse) = (cells[0].1, cells[0].2.rmse);
    Ok(cells
        .into_iter()
        .map(|(sigma_u, v, r)| BoundaryRow {
            sigma_u,
            true_vstar: v,
            rmse: r.rmse,
            coverage: r.coverage,
            reference_rmse: anchor_rmse * anchor_v / v,
        })
        .collect())
}

#[derive(Serialize)]
struct BiasCurveRow {
    shape: &'static str,
    delta: f64,
    emp_bias: f64,
    theo_bias: f64,
    sharp_bound: f64,
}

fn figure_bias(opts: &ExperimentOpts) -> anyhow::Result<Vec<BiasCurveRow>> {
    Ok(sensitivity_cells(opts)?
        .into_iter()
        .map(|(shape, delta, theory, r)| BiasCurveRow {
            shape,
            delta,
            emp_bias: r.bias,
            theo_bias: theory.b_cal,
            sharp_bound: theory.sharp_bound,
        })
        .collect())
}

#[derive(Serialize)]
struct AttenuationRow {
    sigma_u: f64,
    kappa: f64,
    estimator: String,
    estimate: f64,
}

fn figure_attenuation(opts: &ExperimentOpts) -> anyhow::Result<Vec<AttenuationRow>> {
    let mut rows = Vec::new();
    for (sigma_u, kappa, estimator, r) in threshold_cells(opts)? {
        for &estimate in &r.estimates {
            rows.push(AttenuationRow {
                sigma_u,
                kappa,
                estimator: estimator.to_string(),
                estimate,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct WeightedRow {
    design: &'static str,
    n: usize,
    tau_bar: f64,
    rmse: f64,
}

fn figure_weighted(opts: &ExperimentOpts) -> anyhow::Result<Vec<WeightedRow>> {
    Ok(weighted_cells(opts)?
        .into_iter()
        .map(|(design, n, tau_bar, r)| WeightedRow { design, n, tau_bar, rmse: r.rmse })
        .collect())
}
