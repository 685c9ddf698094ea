//! `dgp sample`: synthetic dataset generation with a config sidecar.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use latentgap::dgp::{generate, DgpConfig, EtaShape, Variant, OUTCOME_COEF, SCORE_INDEX_COEF};
use latentgap::rng::substream;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum EtaArg {
    None,
    WorstCase,
    Linear,
    Symmetric,
}

impl From<EtaArg> for EtaShape {
    fn from(v: EtaArg) -> Self {
        match v {
            EtaArg::None => EtaShape::None,
            EtaArg::WorstCase => EtaShape::WorstCase,
            EtaArg::Linear => EtaShape::Linear,
            EtaArg::Symmetric => EtaShape::Symmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Baseline,
    SymmetricThreshold,
    HeteroA,
    HeteroB,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::SymmetricThreshold => Variant::SymmetricThreshold,
            VariantArg::HeteroA => Variant::HeteroA,
            VariantArg::HeteroB => Variant::HeteroB,
        }
    }
}

#[derive(Args)]
pub struct SampleArgs {
    /// Rows to generate.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Constant part of the group effect.
    #[arg(long, default_value_t = 1.0)]
    pub tau0: f64,
    /// Effect slope in the first covariate (heterogeneous variants only).
    #[arg(long, default_value_t = 0.0)]
    pub tau1: f64,
    /// Score dispersion scale in (0, 1).
    #[arg(long, default_value_t = 0.30)]
    pub sigma_u: f64,
    /// Outcome noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    /// Covariate dimension.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Calibration-error shape applied to the indicator draw.
    #[arg(long, value_enum, default_value_t = EtaArg::None)]
    pub eta_shape: EtaArg,
    /// Calibration-error magnitude.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Design variant.
    #[arg(long, value_enum, default_value_t = VariantArg::Baseline)]
    pub variant: VariantArg,
    /// Seed; falls back to LATENTGAP_SEED, then a fixed default.
    #[arg(long, env = "LATENTGAP_SEED")]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, default_value = "dgp_sample.csv")]
    pub out: PathBuf,
    /// Also write the latent columns g, true_m, true_r.
    #[arg(long)]
    pub with_latent: bool,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a DgpConfig,
    seed: u64,
    with_latent: bool,
}

pub fn run(args: &SampleArgs) -> anyhow::Result<()> {
    let cfg = DgpConfig {
        n: args.n,
        tau0: args.tau0,
        tau1: args.tau1,
        sigma_u: args.sigma_u,
        beta_r: vec![SCORE_INDEX_COEF; args.d],
        beta_m: (0..args.d).map(|i| OUTCOME_COEF[i % OUTCOME_COEF.len()]).collect(),
        d: args.d,
        noise_sd: args.noise_sd,
        eta_shape: args.eta_shape.into(),
        delta: args.delta,
        variant: args.variant.into(),
    };
    let seed = args.seed.unwrap_or(crate::DEFAULT_SEED);
    let sample = generate(&cfg, &mut substream(seed, 0))?;

    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut wtr = csv::Writer::from_path(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    let mut header: Vec<String> = vec!["y".into(), "p".into()];
    header.extend((1..=cfg.d).map(|j| format!("x{j}")));
    if args.with_latent {
        header.extend(["g".into(), "true_m".into(), "true_r".into()]);
    }
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..cfg.n {
        record.clear();
        record.push(sample.observed.y()[i].to_string());
        record.push(sample.observed.p()[i].to_string());
        record.extend(sample.observed.x_row(i).iter().map(f64::to_string));
        if args.with_latent {
            record.push(sample.g[i].to_string());
            record.push(sample.true_m[i].to_string());
            record.push(sample.true_r[i].to_string());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;

    let sidecar_path = sidecar_path(&args.out);
    let sidecar = Sidecar { config: &cfg, seed, with_latent: args.with_latent };
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;

    eprintln!(
        "wrote {} rows to {} (config: {})",
        cfg.n,
        args.out.display(),
        sidecar_path.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.config.json"))
}
