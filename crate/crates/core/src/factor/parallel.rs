use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pearson_correlation, EfaConfig, FactorError, PaCriterion};
use crate::linalg::sym_eigenvalues_desc;
use crate::rng;
use crate::special::quantile_sorted;

/// Observed and reference eigenvalue curves plus the retained factor count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysis {
    pub retained_k: usize,
    pub observed: Vec<f64>,
    pub reference_mean: Vec<f64>,
    pub reference_p95: Vec<f64>,
}

impl ParallelAnalysis {
    pub fn criterion_curve(&self, criterion: PaCriterion) -> &[f64] {
        match criterion {
            PaCriterion::Mean => &self.reference_mean,
            PaCriterion::P95 => &self.reference_p95,
        }
    }
}

/// Horn's parallel analysis on the correlation matrix of `data`.
///
/// Replicate `r` draws an n×p standard-normal matrix from stream `r` of
/// `cfg.rng_seed`; replicates run concurrently.
pub fn parallel_analysis(
    data: &DMatrix<f64>,
    cfg: &EfaConfig,
) -> Result<ParallelAnalysis, FactorError> {
    let corr = pearson_correlation(data)?;
    let observed = sym_eigenvalues_desc(&corr.matrix);
    let (n, p) = data.shape();
    let replicates = cfg.pa_replicates.max(1);

    let reference: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::derived(cfg.rng_seed, r as u64);
            let sim = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
            let c = pearson_correlation(&sim).expect("normal draws have positive variance");
            sym_eigenvalues_desc(&c.matrix)
        })
        .collect();

    let mut reference_mean = vec![0.0; p];
    let mut reference_p95 = vec![0.0; p];
    for rank in 0..p {
        let mut column: Vec<f64> = reference.iter().map(|ev| ev[rank]).collect();
        reference_mean[rank] = column.iter().sum::<f64>() / replicates as f64;
        column.sort_by(f64::total_cmp);
        reference_p95[rank] = quantile_sorted(&column, 0.95);
    }

    let threshold = match cfg.pa_criterion {
        PaCriterion::Mean => &reference_mean,
        PaCriterion::P95 => &reference_p95,
    };
    let retained_k = observed
        .iter()
        .zip(threshold)
        .take_while(|(obs, refv)| obs > refv)
        .count();

    Ok(ParallelAnalysis {
        retained_k,
        observed,
        reference_mean,
        reference_p95,
    })
}
