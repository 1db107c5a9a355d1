//! Planted-factor-model respondents: the ground truth for recovery tests and
//! an offline stand-in for the language model.

mod backend;
mod quadrature;
mod sample;

pub use backend::SyntheticBackend;
pub use sample::{sample_respondents, sample_with_labels, PersonaProfileSpec, ProfileMix};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scale::{Subscale, N_ITEMS};
use crate::special::normal_cdf;

pub const DEFAULT_THRESHOLDS: [f64; 6] = [-1.5, -0.9, -0.3, 0.3, 0.9, 1.5];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid profile mix: {0}")]
    InvalidMix(String),
}

/// Standardized common-factor model with ordinal thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    /// p × k.
    pub loadings: Vec<Vec<f64>>,
    /// k × k, unit diagonal.
    pub factor_corr: Vec<Vec<f64>>,
    pub uniquenesses: Vec<f64>,
    pub thresholds: [f64; 6],
    pub factor_names: Vec<String>,
}

impl PlantedModel {
    /// Build a standardized model; uniquenesses are set to 1 − communality.
    pub fn new(
        loadings: Vec<Vec<f64>>,
        factor_corr: Vec<Vec<f64>>,
        thresholds: [f64; 6],
        factor_names: Vec<String>,
    ) -> Result<Self, SynthError> {
        let lambda = crate::linalg::from_rows(&loadings);
        let phi = crate::linalg::from_rows(&factor_corr);
        let common = &lambda * &phi * lambda.transpose();
        let uniquenesses = (0..lambda.nrows()).map(|i| 1.0 - common[(i, i)]).collect();
        let model = Self {
            loadings,
            factor_corr,
            uniquenesses,
            thresholds,
            factor_names,
        };
        model.validate()?;
        Ok(model)
    }

    /// Seven correlated factors, four items each, laid out like the AMS.
    pub fn ams(own_loading: f64, factor_corr: f64) -> Result<Self, SynthError> {
        let loadings = (1..=N_ITEMS)
            .map(|item| {
                let f = Subscale::of_item(item).expect("item in range").index();
                (0..7).map(|j| if j == f { own_loading } else { 0.0 }).collect()
            })
            .collect();
        let phi = (0..7)
            .map(|i| (0..7).map(|j| if i == j { 1.0 } else { factor_corr }).collect())
            .collect();
        let names = Subscale::ALL.iter().map(|s| s.code().to_string()).collect();
        Self::new(loadings, phi, DEFAULT_THRESHOLDS, names)
    }

    /// Own-loading 0.8, factor correlations 0.3.
    pub fn ams_default() -> Self {
        Self::ams(0.8, 0.3).expect("default model is valid")
    }

    pub fn single_factor(p: usize, loading: f64) -> Result<Self, SynthError> {
        Self::new(
            vec![vec![loading]; p],
            vec![vec![1.0]],
            DEFAULT_THRESHOLDS,
            vec!["F1".to_string()],
        )
    }

    pub fn p(&self) -> usize {
        self.loadings.len()
    }

    pub fn k(&self) -> usize {
        self.factor_corr.len()
    }

    pub fn lambda(&self) -> DMatrix<f64> {
        crate::linalg::from_rows(&self.loadings)
    }

    pub fn phi(&self) -> DMatrix<f64> {
        crate::linalg::from_rows(&self.factor_corr)
    }

    /// Index of the largest |loading| per item.
    pub fn primary_factors(&self) -> Vec<usize> {
        self.loadings
            .iter()
            .map(|row| {
                (0..row.len())
                    .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a)))
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (p, k) = (self.p(), self.k());
        if p == 0 || k == 0 {
            return Err(SynthError::InvalidModel("empty model".into()));
        }
        if self.loadings.iter().any(|r| r.len() != k) || self.factor_corr.iter().any(|r| r.len() != k) {
            return Err(SynthError::InvalidModel("loading and factor dimensions disagree".into()));
        }
        if self.uniquenesses.len() != p || self.factor_names.len() != k {
            return Err(SynthError::InvalidModel("uniqueness or name count disagrees".into()));
        }
        let phi = self.phi();
        for i in 0..k {
            if (phi[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(SynthError::InvalidModel("factor correlations need a unit diagonal".into()));
            }
            for j in 0..i {
                if (phi[(i, j)] - phi[(j, i)]).abs() > 1e-12 {
                    return Err(SynthError::InvalidModel("factor correlations must be symmetric".into()));
                }
            }
        }
        if phi.cholesky().is_none() {
            return Err(SynthError::InvalidModel("factor correlations not positive definite".into()));
        }
        if self.uniquenesses.iter().any(|&u| u.is_nan() || u <= 0.0) {
            return Err(SynthError::InvalidModel("communalities must be below 1".into()));
        }
        let sigma = self.population_covariance();
        if (0..p).any(|i| (sigma[(i, i)] - 1.0).abs() > 1e-10) {
            return Err(SynthError::InvalidModel("model is not standardized".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(SynthError::InvalidModel("thresholds must be strictly ascending".into()));
        }
        Ok(())
    }

    /// Σ = ΛΦΛᵀ + diag(Ψ).
    pub fn population_covariance(&self) -> DMatrix<f64> {
        let lambda = self.lambda();
        let mut sigma = &lambda * self.phi() * lambda.transpose();
        for (i, u) in self.uniquenesses.iter().enumerate() {
            sigma[(i, i)] += u;
        }
        sigma
    }

    /// Correlation of the 1..7 categories when the latent responses follow
    /// the model with zero factor means.
    pub fn discretized_population_correlation(&self) -> DMatrix<f64> {
        let sigma = self.population_covariance();
        let p = self.p();
        let mut out = DMatrix::identity(p, p);
        let variance = discretized_covariance(1.0, &self.thresholds);
        let mut cache: Vec<(f64, f64)> = Vec::new();
        for i in 0..p {
            for j in 0..i {
                let rho = sigma[(i, j)];
                let cov = match cache.iter().find(|(r, _)| *r == rho) {
                    Some(&(_, c)) => c,
                    None => {
                        let c = discretized_covariance(rho, &self.thresholds);
                        cache.push((rho, c));
                        c
                    }
                };
                out[(i, j)] = cov / variance;
                out[(j, i)] = cov / variance;
            }
        }
        out
    }
}

/// Cov(c(X), c(Y)) for standard bivariate normal (X, Y) with correlation
/// `rho`, where c counts the thresholds exceeded.
///
/// Conditioning on X leaves a one-dimensional integral; the integrand is
/// split at the thresholds and at the points where the conditional mean of
/// Y crosses a threshold, and each piece is integrated by Gauss-Legendre.
pub fn discretized_covariance(rho: f64, thresholds: &[f64]) -> f64 {
    let category = |x: f64| thresholds.iter().filter(|&&t| x > t).count() as f64;
    let mean: f64 = thresholds.iter().map(|&t| 1.0 - normal_cdf(t)).sum();
    let cond_mean = |x: f64| -> f64 {
        if rho.abs() >= 1.0 {
            return category(rho.signum() * x);
        }
        let s = (1.0 - rho * rho).sqrt();
        thresholds.iter().map(|&t| normal_cdf((rho * x - t) / s)).sum()
    };
    const LIMIT: f64 = 9.0;
    let mut cuts: Vec<f64> = vec![-LIMIT, LIMIT];
    cuts.extend(thresholds.iter().copied());
    if rho.abs() > 1e-12 && rho.abs() < 1.0 {
        cuts.extend(thresholds.iter().map(|&t| t / rho).filter(|c| c.abs() < LIMIT));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let rule = quadrature::gauss_legendre(40);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (half, mid) = ((b - a) / 2.0, (a + b) / 2.0);
        for &(node, weight) in &rule {
            let x = mid + half * node;
            total += weight * half * category(x) * cond_mean(x) * crate::special::normal_pdf(x);
        }
    }
    total - mean * mean
}

/// Targets a 7-factor CFA should recover from the discretized population of
/// an equal-loading model: λ* per item and φ* per factor pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuatedTargets {
    pub loadings: Vec<f64>,
    pub factor_corr: Vec<Vec<f64>>,
}

impl PlantedModel {
    /// Standardized loadings and factor correlations implied by the
    /// discretized population correlation, for models where each item loads
    /// on one factor. Within-factor correlation r_w = λ*², cross-factor
    /// r_c = λ*ᵢλ*ⱼφ*.
    pub fn attenuated_targets(&self) -> AttenuatedTargets {
        let r = self.discretized_population_correlation();
        let primary = self.primary_factors();
        let (p, k) = (self.p(), self.k());
        let mut loadings = vec![0.0; p];
        for i in 0..p {
            let partners: Vec<usize> = (0..p).filter(|&j| j != i && primary[j] == primary[i]).collect();
            // With equal within-factor structure any two partners identify λ*ᵢ.
            loadings[i] = match partners.as_slice() {
                [a, b, ..] => (r[(i, *a)] * r[(i, *b)] / r[(*a, *b)]).sqrt(),
                [a] => r[(i, *a)].sqrt(),
                [] => f64::NAN,
            };
        }
        let mut factor_corr = vec![vec![1.0; k]; k];
        for f in 0..k {
            for g in 0..k {
                if f == g {
                    continue;
                }
                let pairs: Vec<f64> = (0..p)
                    .flat_map(|i| (0..p).map(move |j| (i, j)))
                    .filter(|&(i, j)| primary[i] == f && primary[j] == g)
                    .map(|(i, j)| r[(i, j)] / (loadings[i] * loadings[j]))
                    .collect();
                factor_corr[f][g] = crate::special::mean(&pairs);
            }
        }
        AttenuatedTargets { loadings, factor_corr }
    }
}
