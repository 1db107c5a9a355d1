//! Exploratory and confirmatory factor analysis.
//!
//! The EFA path is parallel analysis → principal-axis factoring → promax.
//! The CFA path fits a simple-structure model by maximum likelihood and
//! derives the usual global fit indices.

mod cfa;
mod correlation;
mod fit;
mod paf;
mod parallel;
mod rotation;

pub use cfa::{fit_cfa, CfaModel, CfaOptions, CfaResult, CfaSpec, UNIQUENESS_LOWER_BOUND};
pub use correlation::{covariance, pearson_correlation, CorrelationMatrix};
pub use fit::{fit_indices, FitIndices};
pub use paf::{principal_axis_factoring, PafResult};
pub use parallel::{parallel_analysis, ParallelAnalysis};
pub use rotation::{align_factors, promax_rotate, varimax, Rotation};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::to_rows;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("need at least {min} observations, got {got}")]
    TooFewObservations { min: usize, got: usize },
    #[error("column {column} has zero variance")]
    ZeroVarianceColumn { column: usize },
    #[error("factor count {k} is invalid for {p} variables")]
    InvalidFactorCount { k: usize, p: usize },
    #[error("parallel analysis retained no factors")]
    NoFactorsRetained,
    #[error("promax target transform is singular")]
    DegenerateTarget,
    #[error("input matrix is not positive definite")]
    NonPositiveDefiniteInput,
    #[error("invalid degrees of freedom (model {model}, baseline {baseline})")]
    InvalidDegreesOfFreedom { model: i64, baseline: i64 },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Which summary of the random-data eigenvalues an observed eigenvalue must beat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PaCriterion {
    #[default]
    Mean,
    P95,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfaConfig {
    pub pa_replicates: usize,
    pub pa_criterion: PaCriterion,
    pub paf_max_iter: usize,
    pub paf_tol: f64,
    pub promax_kappa: u32,
    pub rng_seed: u64,
    /// Extract this many factors instead of the parallel-analysis count.
    pub n_factors: Option<usize>,
}

impl Default for EfaConfig {
    fn default() -> Self {
        Self {
            pa_replicates: 100,
            pa_criterion: PaCriterion::Mean,
            paf_max_iter: 100,
            paf_tol: 1e-4,
            promax_kappa: 4,
            rng_seed: 42,
            n_factors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfaResult {
    pub n: usize,
    pub observed_eigenvalues: Vec<f64>,
    pub reference_eigenvalues: Vec<f64>,
    pub reference_p95: Vec<f64>,
    pub criterion: PaCriterion,
    pub retained_k: usize,
    /// Number of factors actually extracted (differs from `retained_k` only
    /// when overridden).
    pub extracted_k: usize,
    pub pattern: Vec<Vec<f64>>,
    pub structure: Vec<Vec<f64>>,
    pub factor_corr: Vec<Vec<f64>>,
    pub communalities: Vec<f64>,
    pub paf_iterations: usize,
    pub paf_converged: bool,
    pub smc_fallback: bool,
    pub kappa: u32,
}

/// Full EFA: parallel analysis, principal-axis extraction at the retained
/// count, then promax rotation.
pub fn run_efa(data: &DMatrix<f64>, cfg: &EfaConfig) -> Result<EfaResult, FactorError> {
    let pa = parallel_analysis(data, cfg)?;
    let k = cfg.n_factors.unwrap_or(pa.retained_k);
    if k == 0 {
        return Err(FactorError::NoFactorsRetained);
    }
    let corr = pearson_correlation(data)?;
    let paf = principal_axis_factoring(&corr, k, cfg)?;
    let rot = promax_rotate(&paf.loadings, cfg.promax_kappa)?;
    Ok(EfaResult {
        n: data.nrows(),
        observed_eigenvalues: pa.observed,
        reference_eigenvalues: pa.reference_mean,
        reference_p95: pa.reference_p95,
        criterion: cfg.pa_criterion,
        retained_k: pa.retained_k,
        extracted_k: k,
        pattern: to_rows(&rot.pattern),
        structure: to_rows(&rot.structure),
        factor_corr: to_rows(&rot.factor_corr),
        communalities: paf.communalities,
        paf_iterations: paf.iterations,
        paf_converged: paf.converged,
        smc_fallback: paf.smc_fallback,
        kappa: cfg.promax_kappa,
    })
}
