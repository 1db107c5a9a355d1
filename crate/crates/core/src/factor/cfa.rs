//! Maximum-likelihood confirmatory factor analysis for simple-structure models.
//!
//! Parameter vector layout, for p items and k factors:
//!
//! * `p` loadings, one per item on its assigned factor;
//! * `k(k-1)/2` factor-correlation parameters `u[i][j]` (j < i). Row i of the
//!   lower-triangular root `L` of Φ is `v_i / |v_i|` with
//!   `v_i = (u[i][0], …, u[i][i-1], 1, 0, …)`, so Φ = LLᵀ is positive definite
//!   with a unit diagonal for every parameter value;
//! * `p` log-uniquenesses, `θ_i = lb + exp(η_i)`.
//!
//! Factor variances are fixed to one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fit_indices, FactorError};
use crate::linalg::{spd_log_det, to_rows};
use crate::optim::{self, BfgsOptions};
use crate::scale::Subscale;

/// Uniquenesses are kept strictly above this bound.
pub const UNIQUENESS_LOWER_BOUND: f64 = 1e-4;
/// A uniqueness below this is reported as a Heywood case.
const HEYWOOD_REPORT: f64 = 1e-3;

/// Item → factor assignment for a simple-structure CFA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaSpec {
    pub item_factor: Vec<usize>,
    pub factor_names: Vec<String>,
    pub item_names: Vec<String>,
}

impl CfaSpec {
    pub fn new(
        item_factor: Vec<usize>,
        factor_names: Vec<String>,
        item_names: Vec<String>,
    ) -> Result<Self, FactorError> {
        let k = factor_names.len();
        if item_names.len() != item_factor.len() {
            return Err(FactorError::InvalidSpec(format!(
                "{} item names for {} items",
                item_names.len(),
                item_factor.len()
            )));
        }
        if k == 0 {
            return Err(FactorError::InvalidSpec("no factors".into()));
        }
        for f in 0..k {
            let count = item_factor.iter().filter(|&&g| g == f).count();
            if count < 2 {
                return Err(FactorError::InvalidSpec(format!(
                    "factor {} has {count} indicator(s), need at least 2",
                    factor_names[f]
                )));
            }
        }
        if let Some(bad) = item_factor.iter().find(|&&f| f >= k) {
            return Err(FactorError::InvalidSpec(format!("factor index {bad} out of range")));
        }
        Ok(Self {
            item_factor,
            factor_names,
            item_names,
        })
    }

    /// The seven-factor AMS model: 28 items, four per subscale.
    pub fn ams() -> Self {
        let item_factor = (1..=28)
            .map(|item| Subscale::of_item(item).expect("AMS item").index())
            .collect();
        let factor_names = Subscale::ALL.iter().map(|s| s.code().to_string()).collect();
        let item_names = (1..=28).map(|i| format!("AMS_Q{i}")).collect();
        Self::new(item_factor, factor_names, item_names).expect("AMS specification is valid")
    }

    pub fn p(&self) -> usize {
        self.item_factor.len()
    }

    pub fn k(&self) -> usize {
        self.factor_names.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfaOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for CfaOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// Unpacked model parameters.
#[derive(Debug, Clone)]
pub struct CfaParams {
    pub lambda: Vec<f64>,
    pub phi_root: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub theta: Vec<f64>,
    row_norms: Vec<f64>,
}

/// The F_ML objective for a fixed specification and sample matrix.
#[derive(Debug, Clone)]
pub struct CfaModel {
    spec: CfaSpec,
    s: DMatrix<f64>,
    log_det_s: f64,
}

impl CfaModel {
    pub fn new(spec: CfaSpec, s: DMatrix<f64>) -> Result<Self, FactorError> {
        if !s.is_square() || s.nrows() != spec.p() {
            return Err(FactorError::DimensionMismatch(format!(
                "sample matrix {:?} for {} items",
                s.shape(),
                spec.p()
            )));
        }
        let log_det_s = spd_log_det(&s).ok_or(FactorError::NonPositiveDefiniteInput)?;
        Ok(Self { spec, s, log_det_s })
    }

    pub fn spec(&self) -> &CfaSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        let k = self.spec.k();
        2 * self.spec.p() + k * (k - 1) / 2
    }

    fn n_corr(&self) -> usize {
        let k = self.spec.k();
        k * (k - 1) / 2
    }

    pub fn unpack(&self, x: &DVector<f64>) -> CfaParams {
        let (p, k) = (self.spec.p(), self.spec.k());
        let lambda = x.rows(0, p).iter().copied().collect();
        let mut phi_root = DMatrix::zeros(k, k);
        let mut row_norms = vec![1.0; k];
        let mut idx = p;
        for i in 0..k {
            let mut norm2 = 1.0;
            for j in 0..i {
                phi_root[(i, j)] = x[idx];
                norm2 += x[idx] * x[idx];
                idx += 1;
            }
            phi_root[(i, i)] = 1.0;
            let norm = norm2.sqrt();
            row_norms[i] = norm;
            for j in 0..=i {
                phi_root[(i, j)] /= norm;
            }
        }
        let phi = &phi_root * phi_root.transpose();
        let theta = x
            .rows(p + self.n_corr(), p)
            .iter()
            .map(|eta| UNIQUENESS_LOWER_BOUND + eta.exp())
            .collect();
        CfaParams {
            lambda,
            phi_root,
            phi,
            theta,
            row_norms,
        }
    }

    /// Pack natural parameters. `phi` must be positive definite with a unit
    /// diagonal and every `theta` above the lower bound.
    pub fn pack(&self, lambda: &[f64], phi: &DMatrix<f64>, theta: &[f64]) -> Option<DVector<f64>> {
        let (p, k) = (self.spec.p(), self.spec.k());
        let root = phi.clone().cholesky()?.l();
        let mut x = DVector::zeros(self.n_params());
        for i in 0..p {
            x[i] = lambda[i];
        }
        let mut idx = p;
        for i in 0..k {
            for j in 0..i {
                x[idx] = root[(i, j)] / root[(i, i)];
                idx += 1;
            }
        }
        for i in 0..p {
            let excess = theta[i] - UNIQUENESS_LOWER_BOUND;
            if excess <= 0.0 {
                return None;
            }
            x[idx + i] = excess.ln();
        }
        Some(x)
    }

    fn loading_matrix(&self, lambda: &[f64]) -> DMatrix<f64> {
        let (p, k) = (self.spec.p(), self.spec.k());
        let mut m = DMatrix::zeros(p, k);
        for (i, &f) in self.spec.item_factor.iter().enumerate() {
            m[(i, f)] = lambda[i];
        }
        m
    }

    /// Model-implied covariance ΛΦΛᵀ + Θ.
    pub fn implied(&self, params: &CfaParams) -> DMatrix<f64> {
        let lam = self.loading_matrix(&params.lambda);
        let mut sigma = &lam * &params.phi * lam.transpose();
        for (i, t) in params.theta.iter().enumerate() {
            sigma[(i, i)] += t;
        }
        sigma
    }

    /// F_ML = ln|Σ| + tr(SΣ⁻¹) − ln|S| − p. Returns +∞ if Σ is not positive definite.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.evaluate(x, false).0
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.evaluate(x, true).1
    }

    pub fn objective_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.evaluate(x, true)
    }

    fn evaluate(&self, x: &DVector<f64>, with_grad: bool) -> (f64, DVector<f64>) {
        let (p, k) = (self.spec.p(), self.spec.k());
        let params = self.unpack(x);
        let sigma = self.implied(&params);
        let Some(chol) = sigma.cholesky() else {
            return (f64::INFINITY, DVector::zeros(x.len()));
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let sigma_inv = chol.inverse();
        let trace = self.s.component_mul(&sigma_inv).sum();
        let f = log_det + trace - self.log_det_s - p as f64;
        if !with_grad {
            return (f, DVector::zeros(0));
        }

        // dF = tr(W dΣ) with W = Σ⁻¹ − Σ⁻¹ S Σ⁻¹.
        let w = &sigma_inv - &sigma_inv * &self.s * &sigma_inv;
        let lam = self.loading_matrix(&params.lambda);
        let mut grad = DVector::zeros(x.len());

        let wlp = &w * &lam * &params.phi;
        for (i, &f_i) in self.spec.item_factor.iter().enumerate() {
            grad[i] = 2.0 * wlp[(i, f_i)];
        }

        let g_phi = lam.transpose() * &w * &lam;
        let g_root = 2.0 * &g_phi * &params.phi_root;
        let mut idx = p;
        for i in 0..k {
            let row_dot: f64 = (0..=i).map(|c| g_root[(i, c)] * params.phi_root[(i, c)]).sum();
            for j in 0..i {
                grad[idx] = (g_root[(i, j)] - row_dot * params.phi_root[(i, j)]) / params.row_norms[i];
                idx += 1;
            }
        }

        for i in 0..p {
            grad[idx + i] = w[(i, i)] * (params.theta[i] - UNIQUENESS_LOWER_BOUND);
        }
        (f, grad)
    }

    /// Start values: loadings from the average same-factor correlation,
    /// uniquenesses from the remainder, orthogonal factors.
    pub fn start(&self) -> DVector<f64> {
        let p = self.spec.p();
        let k = self.spec.k();
        let sd: Vec<f64> = (0..p).map(|i| self.s[(i, i)].sqrt()).collect();
        let mut lambda = vec![0.0; p];
        let mut theta = vec![0.0; p];
        for i in 0..p {
            let f = self.spec.item_factor[i];
            let peers: Vec<f64> = (0..p)
                .filter(|&j| j != i && self.spec.item_factor[j] == f)
                .map(|j| self.s[(i, j)] / (sd[i] * sd[j]))
                .collect();
            let mean_r = peers.iter().sum::<f64>() / peers.len() as f64;
            let share = mean_r.clamp(0.05, 0.95);
            lambda[i] = sd[i] * share.sqrt();
            theta[i] = self.s[(i, i)] * (1.0 - share);
        }
        self.pack(&lambda, &DMatrix::identity(k, k), &theta)
            .expect("start values are feasible")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaResult {
    pub factor_names: Vec<String>,
    pub item_names: Vec<String>,
    pub item_factor: Vec<usize>,
    /// Standardized loading of each item on its assigned factor.
    pub loadings: Vec<f64>,
    pub loadings_unstandardized: Vec<f64>,
    /// Standardized uniquenesses (1 − λ²).
    pub uniquenesses: Vec<f64>,
    pub uniquenesses_unstandardized: Vec<f64>,
    pub factor_corr: Vec<Vec<f64>>,
    pub f_ml: f64,
    pub chi2: f64,
    pub df: i64,
    pub chi2_baseline: f64,
    pub df_baseline: i64,
    pub cfi: f64,
    pub tli: f64,
    pub rmsea: f64,
    pub srmr: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub n: usize,
    pub heywood_items: Vec<usize>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

/// Fit `spec` to the sample covariance (or correlation) matrix `s` from `n`
/// observations by minimizing F_ML with BFGS.
pub fn fit_cfa(
    s: &DMatrix<f64>,
    n: usize,
    spec: &CfaSpec,
    opts: &CfaOptions,
) -> Result<CfaResult, FactorError> {
    let p = spec.p();
    let k = spec.k();
    if n <= p {
        return Err(FactorError::TooFewObservations { min: p + 1, got: n });
    }
    let model = CfaModel::new(spec.clone(), s.clone())?;
    let outcome = optim::minimize(
        |x| model.objective_and_gradient(x),
        model.start(),
        BfgsOptions {
            grad_tol: opts.grad_tol,
            max_iter: opts.max_iter,
            max_step: 1.0,
        },
    );

    let params = model.unpack(&outcome.x);
    let sigma = model.implied(&params);
    let f_ml = outcome.value.max(0.0);
    let chi2 = (n as f64 - 1.0) * f_ml;
    let df = (p * (p + 1) / 2) as i64 - model.n_params() as i64;

    let diag = DMatrix::from_diagonal(&s.diagonal());
    let f_base = spd_log_det(&diag).expect("positive diagonal") - model.log_det_s;
    let chi2_baseline = (n as f64 - 1.0) * f_base.max(0.0);
    let df_baseline = (p * (p - 1) / 2) as i64;
    let fit = fit_indices(chi2, df, chi2_baseline, df_baseline, n, s, &sigma)?;

    // Orient every factor so that its loadings sum to a positive value.
    let mut signs = vec![1.0; k];
    for (f, sign) in signs.iter_mut().enumerate() {
        let sum: f64 = (0..p)
            .filter(|&i| spec.item_factor[i] == f)
            .map(|i| params.lambda[i])
            .sum();
        if sum < 0.0 {
            *sign = -1.0;
        }
    }
    let loadings_unstandardized: Vec<f64> = (0..p)
        .map(|i| params.lambda[i] * signs[spec.item_factor[i]])
        .collect();
    let loadings = (0..p)
        .map(|i| loadings_unstandardized[i] / sigma[(i, i)].sqrt())
        .collect();
    let uniquenesses = (0..p).map(|i| params.theta[i] / sigma[(i, i)]).collect();
    let factor_corr = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else {
            params.phi[(a, b)] * signs[a] * signs[b]
        }
    });

    let mut warnings = Vec::new();
    if !outcome.converged {
        warnings.push(format!(
            "NonConvergence: gradient norm {:.3e} after {} iterations",
            outcome.grad_norm, outcome.iterations
        ));
    }
    let heywood_items: Vec<usize> = (0..p)
        .filter(|&i| params.theta[i] < HEYWOOD_REPORT)
        .collect();
    for &i in &heywood_items {
        warnings.push(format!(
            "HeywoodCase: uniqueness of {} at lower bound ({:.2e})",
            spec.item_names[i], params.theta[i]
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(CfaResult {
        factor_names: spec.factor_names.clone(),
        item_names: spec.item_names.clone(),
        item_factor: spec.item_factor.clone(),
        loadings,
        loadings_unstandardized,
        uniquenesses,
        uniquenesses_unstandardized: params.theta.clone(),
        factor_corr: to_rows(&factor_corr),
        f_ml,
        chi2,
        df,
        chi2_baseline,
        df_baseline,
        cfi: fit.cfi,
        tli: fit.tli,
        rmsea: fit.rmsea,
        srmr: fit.srmr,
        converged: outcome.converged,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
        n,
        heywood_items,
        warnings,
        objective_trace: outcome.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_factor_spec() -> CfaSpec {
        CfaSpec::new(
            vec![0, 0, 0, 1, 1, 1],
            vec!["A".into(), "B".into()],
            (1..=6).map(|i| format!("x{i}")).collect(),
        )
        .unwrap()
    }

    fn population(spec: &CfaSpec, lambda: &[f64], phi: f64) -> DMatrix<f64> {
        let p = spec.p();
        DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else {
                let r = if spec.item_factor[i] == spec.item_factor[j] { 1.0 } else { phi };
                lambda[i] * lambda[j] * r
            }
        })
    }

    #[test]
    fn spec_validation() {
        assert!(CfaSpec::new(vec![0, 0, 1], vec!["A".into(), "B".into()], vec!["a".into(); 3]).is_err());
        assert!(CfaSpec::new(vec![0, 0, 2, 2], vec!["A".into(), "B".into()], vec!["a".into(); 4]).is_err());
        let ams = CfaSpec::ams();
        assert_eq!(ams.p(), 28);
        assert_eq!(ams.k(), 7);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let spec = two_factor_spec();
        let model = CfaModel::new(spec, DMatrix::identity(6, 6)).unwrap();
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let lambda = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        let theta = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let x = model.pack(&lambda, &phi, &theta).unwrap();
        let back = model.unpack(&x);
        assert!((back.phi - phi).amax() < 1e-12);
        for i in 0..6 {
            assert!((back.lambda[i] - lambda[i]).abs() < 1e-12);
            assert!((back.theta[i] - theta[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_population_exactly() {
        let spec = two_factor_spec();
        let lambda = [0.8, 0.7, 0.6, 0.75, 0.65, 0.55];
        let s = population(&spec, &lambda, 0.4);
        let res = fit_cfa(&s, 500, &spec, &CfaOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.f_ml < 1e-10);
        for i in 0..6 {
            assert!((res.loadings[i] - lambda[i]).abs() < 1e-5);
        }
        assert!((res.factor_corr[0][1] - 0.4).abs() < 1e-5);
        assert_eq!(res.df, 21 - 13);
        assert_eq!(res.df_baseline, 15);
        assert_eq!(res.cfi, 1.0);
        assert_eq!(res.rmsea, 0.0);
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn objective_nonnegative_and_zero_at_truth() {
        let spec = two_factor_spec();
        let lambda = [0.8, 0.7, 0.6, 0.75, 0.65, 0.55];
        let s = population(&spec, &lambda, 0.4);
        let model = CfaModel::new(spec, s).unwrap();
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let theta: Vec<f64> = lambda.iter().map(|l| 1.0 - l * l).collect();
        let truth = model.pack(&lambda, &phi, &theta).unwrap();
        assert!(model.objective(&truth).abs() < 1e-12);
        assert!(model.objective(&model.start()) > 0.0);
    }

    #[test]
    fn rejects_indefinite_input() {
        let spec = two_factor_spec();
        let mut s = DMatrix::identity(6, 6);
        s[(0, 1)] = 2.0;
        s[(1, 0)] = 2.0;
        assert_eq!(
            fit_cfa(&s, 100, &spec, &CfaOptions::default()).unwrap_err(),
            FactorError::NonPositiveDefiniteInput
        );
    }

    #[test]
    fn heywood_case_is_flagged_not_fatal() {
        // Item x1 correlates with its peers beyond what any uniqueness > 0 allows.
        let spec = two_factor_spec();
        let mut s = population(&spec, &[0.99, 0.9, 0.9, 0.7, 0.7, 0.7], 0.3);
        s[(0, 1)] = 0.97;
        s[(1, 0)] = 0.97;
        s[(0, 2)] = 0.97;
        s[(2, 0)] = 0.97;
        if crate::linalg::is_positive_definite(&s) {
            let res = fit_cfa(&s, 300, &spec, &CfaOptions::default()).unwrap();
            assert!(res.uniquenesses_unstandardized.iter().all(|&t| t > UNIQUENESS_LOWER_BOUND));
            assert!(res.heywood_items.contains(&0) || res.uniquenesses_unstandardized[0] >= 1e-3);
        }
    }
}
