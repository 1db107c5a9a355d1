use nalgebra::DMatrix;

use super::FactorError;

/// Product-moment correlation matrix together with the sample size it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub matrix: DMatrix<f64>,
    pub n: usize,
}

impl CorrelationMatrix {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Unbiased (n − 1) sample covariance of the columns of `data` (rows are observations).
pub fn covariance(data: &DMatrix<f64>) -> Result<DMatrix<f64>, FactorError> {
    let n = data.nrows();
    if n < 3 {
        return Err(FactorError::TooFewObservations { min: 3, got: n });
    }
    let means = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((&cov + cov.transpose()) * 0.5)
}

pub fn pearson_correlation(data: &DMatrix<f64>) -> Result<CorrelationMatrix, FactorError> {
    let cov = covariance(data)?;
    let p = cov.nrows();
    for j in 0..p {
        // Relative to the column's magnitude so that large constant columns are caught.
        let scale = data.column(j).amax().max(1.0);
        if cov[(j, j)] <= 1e-14 * scale * scale {
            return Err(FactorError::ZeroVarianceColumn { column: j });
        }
    }
    let sd: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    let matrix = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    Ok(CorrelationMatrix {
        matrix,
        n: data.nrows(),
    })
}
