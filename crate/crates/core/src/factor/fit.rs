use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::FactorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    pub cfi: f64,
    pub tli: f64,
    pub rmsea: f64,
    pub srmr: f64,
}

/// Global fit indices from model and baseline chi-squares and the residuals
/// between the sample matrix `s` and the model-implied `sigma`.
///
/// CFI is bounded to [0, 1] by construction; TLI is reported uncapped.
/// RMSEA uses `n` in its denominator.
pub fn fit_indices(
    chi2_model: f64,
    df_model: i64,
    chi2_baseline: f64,
    df_baseline: i64,
    n: usize,
    s: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<FitIndices, FactorError> {
    if df_model < 1 || df_baseline < 1 {
        return Err(FactorError::InvalidDegreesOfFreedom {
            model: df_model,
            baseline: df_baseline,
        });
    }
    if n < 2 {
        return Err(FactorError::TooFewObservations { min: 2, got: n });
    }
    if s.shape() != sigma.shape() || !s.is_square() {
        return Err(FactorError::DimensionMismatch(format!(
            "sample {:?} vs implied {:?}",
            s.shape(),
            sigma.shape()
        )));
    }
    let (dm, db) = (df_model as f64, df_baseline as f64);
    let excess_model = (chi2_model - dm).max(0.0);
    let excess_baseline = (chi2_baseline - db).max(excess_model);
    let cfi = if excess_baseline > 0.0 {
        1.0 - excess_model / excess_baseline
    } else {
        1.0
    };
    let tli = (chi2_baseline / db - chi2_model / dm) / (chi2_baseline / db - 1.0);
    let rmsea = (excess_model / (dm * n as f64)).sqrt();

    let p = s.nrows();
    let mut sum = 0.0;
    for i in 0..p {
        for j in 0..=i {
            let r = (s[(i, j)] - sigma[(i, j)]) / (s[(i, i)] * s[(j, j)]).sqrt();
            sum += r * r;
        }
    }
    let srmr = (sum / (p * (p + 1) / 2) as f64).sqrt();

    Ok(FitIndices {
        cfi,
        tli,
        rmsea,
        srmr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(p: usize) -> DMatrix<f64> {
        DMatrix::identity(p, p)
    }

    #[test]
    fn perfect_fit() {
        let fit = fit_indices(0.0, 10, 500.0, 45, 300, &eye(3), &eye(3)).unwrap();
        assert_eq!(fit.cfi, 1.0);
        assert_eq!(fit.rmsea, 0.0);
        assert_eq!(fit.srmr, 0.0);
    }

    #[test]
    fn hand_arithmetic_reference() {
        // CFI = 1 - 10/622; TLI = (1000/378 - 1.25)/(1000/378 - 1); RMSEA = sqrt(10/(40*2000)).
        let fit = fit_indices(50.0, 40, 1000.0, 378, 2000, &eye(2), &eye(2)).unwrap();
        let cfi = 1.0 - 10.0 / 622.0;
        let tli = (1000.0 / 378.0 - 50.0 / 40.0) / (1000.0 / 378.0 - 1.0);
        assert!((fit.cfi - cfi).abs() < 1e-14);
        assert!((fit.tli - tli).abs() < 1e-14);
        assert!((fit.rmsea - 0.000_125_f64.sqrt()).abs() < 1e-15);
        assert!((fit.cfi - 0.98392).abs() < 1e-5);
        assert!((fit.tli - 0.84807).abs() < 1e-5);
        assert!((fit.rmsea - 0.011180).abs() < 1e-6);
    }

    #[test]
    fn chi2_below_df_is_perfect() {
        let fit = fit_indices(30.0, 40, 1000.0, 378, 2000, &eye(2), &eye(2)).unwrap();
        assert_eq!(fit.cfi, 1.0);
        assert_eq!(fit.rmsea, 0.0);
        assert!(fit.tli > 1.0, "TLI is uncapped");
    }

    #[test]
    fn srmr_uses_standardized_residuals() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let fit = fit_indices(5.0, 1, 10.0, 1, 100, &s, &sigma).unwrap();
        // one residual of 1/sqrt(4*1) = 0.5 among 3 elements
        assert!((fit.srmr - (0.25_f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn invalid_df() {
        assert!(matches!(
            fit_indices(1.0, 0, 10.0, 3, 10, &eye(2), &eye(2)),
            Err(FactorError::InvalidDegreesOfFreedom { .. })
        ));
    }
}
