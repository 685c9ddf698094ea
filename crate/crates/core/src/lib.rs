//! Estimation of a latent-group effect from observables `(Y, X, p)`, where
//! the binary group indicator is never observed but a calibrated probability
//! score `p` is.
//!
//! Under a constant-effect structural mean model and conditional calibration
//! (`E[G | p, X] = p`), the group coefficient is the ratio of the covariance
//! between the signed score and the covariate-partialled outcome to twice
//! the residual score variance `V* = E[(p - r(X))^2]`. Identification holds
//! exactly when `V* > 0`, i.e. the score is not a deterministic function of
//! the covariates.
//!
//! The crate provides:
//!
//! * [`estimators`] — oracle, plug-in, cross-fitted orthogonal, and
//!   hard-threshold estimators with sandwich standard errors and Wald
//!   intervals, plus finite-difference orthogonality checks;
//! * [`nuisance`] — degree-2 polynomial ridge regression and deterministic
//!   K-fold splitting;
//! * [`dgp`] — seeded synthetic designs (baseline, miscalibrated,
//!   symmetric-threshold, heterogeneous) and a finite-support fixture for
//!   exact expectations;
//! * [`theory`] — enumeration and Monte Carlo integration of reference
//!   values (residual score variance, bias under calibration failure, the
//!   sharp sensitivity bound, the attenuation factor, the variance-weighted
//!   estimand);
//! * [`harness`] — a replication engine whose reports are bit-identical
//!   across worker counts.
//!
//! The `parallel` feature (default) runs replications on rayon; disabling it
//! leaves a sequential engine with the same outputs.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod nuisance;
pub mod numeric;
pub mod rng;
pub mod sample;
pub mod theory;

pub use dgp::{DgpConfig, EtaShape, FiniteDistribution, LatentSample, Variant};
pub use error::{Error, Result, IDENTIFICATION_TOLERANCE};
pub use estimators::{Method, ScoreKind, TauEstimate};
pub use harness::{CellReport, CellSpec};
pub use sample::{DerivedQuantities, NuisancePair, ObservedSample};
pub use theory::TheoryReport;
