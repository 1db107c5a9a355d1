use nalgebra::DMatrix;

use super::{CorrelationMatrix, EfaConfig, FactorError};
use crate::linalg::sym_eigen_desc;

#[derive(Debug, Clone, PartialEq)]
pub struct PafResult {
    /// Unrotated p×k loadings.
    pub loadings: DMatrix<f64>,
    pub communalities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// True when R was singular and the start used max |r| instead of SMC.
    pub smc_fallback: bool,
}

/// Iterated principal-axis factoring.
///
/// Starts from squared multiple correlations, then alternates between
/// placing communalities on the diagonal and re-extracting the top `k`
/// eigenpairs until the largest communality change is below `cfg.paf_tol`.
/// Communalities are kept within [0, 1].
pub fn principal_axis_factoring(
    corr: &CorrelationMatrix,
    k: usize,
    cfg: &EfaConfig,
) -> Result<PafResult, FactorError> {
    let r = &corr.matrix;
    let p = r.nrows();
    if k == 0 || k >= p {
        return Err(FactorError::InvalidFactorCount { k, p });
    }

    let (mut h2, smc_fallback) = initial_communalities(r);
    let mut loadings = DMatrix::zeros(p, k);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.paf_max_iter {
        iterations += 1;
        let mut reduced = r.clone();
        for i in 0..p {
            reduced[(i, i)] = h2[i];
        }
        let (values, vectors) = sym_eigen_desc(&reduced);
        for f in 0..k {
            let scale = values[f].max(0.0).sqrt();
            for i in 0..p {
                loadings[(i, f)] = vectors[(i, f)] * scale;
            }
        }
        let next: Vec<f64> = (0..p)
            .map(|i| loadings.row(i).norm_squared().clamp(0.0, 1.0))
            .collect();
        let change = next
            .iter()
            .zip(&h2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        h2 = next;
        if change < cfg.paf_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("principal axis factoring did not converge in {iterations} iterations");
    }

    Ok(PafResult {
        loadings,
        communalities: h2,
        iterations,
        converged,
        smc_fallback,
    })
}

fn initial_communalities(r: &DMatrix<f64>) -> (Vec<f64>, bool) {
    let p = r.nrows();
    let inverse = r
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .filter(|inv| inv.iter().all(|v| v.is_finite()));
    match inverse {
        Some(inv) => ((0..p).map(|i| (1.0 - 1.0 / inv[(i, i)]).clamp(0.0, 1.0)).collect(), false),
        None => {
            let start = (0..p)
                .map(|i| {
                    (0..p)
                        .filter(|&j| j != i)
                        .map(|j| r[(i, j)].abs())
                        .fold(0.0, f64::max)
                })
                .collect();
            (start, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(m: DMatrix<f64>) -> CorrelationMatrix {
        CorrelationMatrix { matrix: m, n: 100 }
    }

    #[test]
    fn one_factor_equicorrelation_recovers_point_eight() {
        // Lambda = 0.8 reproduces off-diagonals 0.64 exactly with psi = 0.36.
        let r = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.64 });
        let cfg = EfaConfig {
            paf_tol: 1e-12,
            paf_max_iter: 10_000,
            ..EfaConfig::default()
        };
        let res = principal_axis_factoring(&corr(r.clone()), 1, &cfg).unwrap();
        assert!(res.converged);
        for i in 0..3 {
            assert!((res.loadings[(i, 0)] - 0.8).abs() < 1e-6);
            assert!((res.communalities[i] - 0.64).abs() < 1e-6);
        }
        let recon = &res.loadings * res.loadings.transpose();
        assert!((recon[(0, 1)] - r[(0, 1)]).abs() < 1e-6);
    }

    #[test]
    fn identity_has_no_common_variance() {
        let r = DMatrix::identity(5, 5);
        let res = principal_axis_factoring(&corr(r), 1, &EfaConfig::default()).unwrap();
        assert!(res.loadings.amax() < 1e-12);
        assert!(res.communalities.iter().all(|h| h.abs() < 1e-12));
    }

    #[test]
    fn singular_matrix_uses_fallback_start() {
        // Two identical variables make R singular.
        let r = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 1.0, 0.5, 1.0, 1.0, 0.5, 0.5, 0.5, 1.0],
        );
        let res = principal_axis_factoring(&corr(r), 1, &EfaConfig::default()).unwrap();
        assert!(res.smc_fallback);
        assert!(res.communalities.iter().all(|h| (0.0..=1.0).contains(h)));
    }

    #[test]
    fn factor_count_bounds() {
        let r = DMatrix::identity(4, 4);
        for k in [0, 4, 5] {
            assert_eq!(
                principal_axis_factoring(&corr(r.clone()), k, &EfaConfig::default()).unwrap_err(),
                FactorError::InvalidFactorCount { k, p: 4 }
            );
        }
    }
}
