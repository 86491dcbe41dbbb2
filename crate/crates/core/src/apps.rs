//! Comparison estimators (OLS, adaptive Lasso, reduced-rank regression) and
//! the reductions of biclustering, sparse PCA, sparse factor analysis and
//! sparse VAR to a SOFAR fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SofarError};
use crate::lasso_init::{lambda0_cv_curve, lasso_matrix_weighted, InitState};
use crate::linalg::{min_norm_least_squares, thin_svd, Mat};
use crate::metrics::SUPPORT_THRESHOLD;
use crate::penalty::{adaptive_weights, DEFAULT_ADAPTIVE_FLOOR};
use crate::solver::{fit_problem, Problem, SofarConfig, SofarFit};

/// Minimum-norm least squares `X⁺Y`.
pub fn ols_fit(x: &Mat, y: &Mat) -> Result<Mat> {
    min_norm_least_squares(x, y)
}

/// Classical reduced-rank regression `C_ols V_m V_mᵀ`, where `V_m` holds the
/// top-`m` right singular vectors of the OLS fitted values `X C_ols`.
pub fn rrr_fit(x: &Mat, y: &Mat, m: usize) -> Result<Mat> {
    let c_ols = ols_fit(x, y)?;
    rrr_from_ols(x, &c_ols, m)
}

/// Reduced-rank projection of a precomputed OLS solution.
pub fn rrr_from_ols(x: &Mat, c_ols: &Mat, m: usize) -> Result<Mat> {
    let (p, q) = c_ols.shape();
    if m > p.min(q) {
        return invalid(format!("rank {m} exceeds min(p, q) = {}", p.min(q)));
    }
    if m == 0 {
        return Ok(Mat::zeros(p, q));
    }
    let fitted = x.matmul(c_ols);
    if fitted.max_abs() == 0.0 {
        return Ok(Mat::zeros(p, q));
    }
    let vm = thin_svd(&fitted)?.truncate(m).v;
    Ok(c_ols.matmul(&vm).matmul_t(&vm))
}

/// Outcome of the adaptive Lasso baseline.
#[derive(Debug, Clone)]
pub struct AdaptiveLasso {
    pub coefficients: Mat,
    /// Cross-validated λ of the unweighted first stage.
    pub lambda_initial: f64,
    /// Cross-validated λ of the weighted second stage.
    pub lambda_adaptive: f64,
}

/// Separate adaptive Lasso regressions: a cross-validated Lasso, then a
/// cross-validated Lasso with weights `1/max(|C̃_ij|, floor)`.
pub fn adaptive_lasso(x: &Mat, y: &Mat, k_folds: usize, grid_size: usize, seed: u64) -> Result<AdaptiveLasso> {
    let first = lambda0_cv_curve(x, y, k_folds, grid_size, seed, None)?;
    let c0 = lasso_matrix_weighted(x, y, first.lambda(), None)?;
    adaptive_lasso_from(x, y, &c0, first.lambda(), k_folds, grid_size, seed)
}

/// Second stage of [`adaptive_lasso`] from a given first-stage estimate.
pub fn adaptive_lasso_from(
    x: &Mat,
    y: &Mat,
    c0: &Mat,
    lambda_initial: f64,
    k_folds: usize,
    grid_size: usize,
    seed: u64,
) -> Result<AdaptiveLasso> {
    // weights live on the standardized scale, where the penalty acts
    let design = crate::lasso_init::ScaledDesign::new(x);
    let scaled = Mat::from_fn(c0.rows(), c0.cols(), |i, k| c0[(i, k)] * design.scale(i));
    let w = adaptive_weights(&scaled, DEFAULT_ADAPTIVE_FLOOR)?;
    let second = lambda0_cv_curve(x, y, k_folds, grid_size, seed, Some(&w))?;
    Ok(AdaptiveLasso {
        coefficients: lasso_matrix_weighted(x, y, second.lambda(), Some(&w))?,
        lambda_initial,
        lambda_adaptive: second.lambda(),
    })
}

/// A SOFAR fit plus application-specific outputs keyed by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppResult {
    pub fit: SofarFit,
    pub derived: BTreeMap<String, Mat>,
}

fn truncated_start(c: Mat, m: usize) -> Result<InitState> {
    InitState::from_coefficients(c, m, 0.0, false)
}

fn check_rank(m: usize, rows: usize, cols: usize) -> Result<()> {
    if m == 0 || m > rows.min(cols) {
        return invalid(format!("rank {m} outside 1..={}", rows.min(cols)));
    }
    Ok(())
}

/// Fits the identity-design model `Data = C + E`, started from the rank-`m`
/// truncated SVD of the data.
fn identity_fit(data: &Mat, m: usize, config: &SofarConfig) -> Result<SofarFit> {
    check_rank(m, data.rows(), data.cols())?;
    let problem = Problem::identity_design(data)?;
    let init = truncated_start(thin_svd(data)?.truncate(m).reconstruct(), m)?;
    fit_problem(&problem, m, config, &init)
}

fn support_indicator(m: &Mat) -> Mat {
    m.map(|v| if v.abs() > SUPPORT_THRESHOLD { 1.0 } else { 0.0 })
}

/// Biclustering: identity-design fit whose left and right supports are the
/// row and column cluster indicators.
pub fn bicluster(x_data: &Mat, m: usize, config: &SofarConfig) -> Result<AppResult> {
    let fit = identity_fit(x_data, m, config)?;
    let mut derived = BTreeMap::new();
    derived.insert("row_clusters".to_string(), support_indicator(&fit.u));
    derived.insert("column_clusters".to_string(), support_indicator(&fit.v));
    Ok(AppResult { fit, derived })
}

/// Sparse PCA as self-regression `X ≈ X U D Vᵀ` with orthonormal loadings
/// `Û`; `λ_b` is forced to zero.
pub fn sparse_pca_regression(x_data: &Mat, m: usize, config: &SofarConfig) -> Result<AppResult> {
    check_rank(m, x_data.cols(), x_data.cols())?;
    let mut config = config.clone();
    config.lambda_b = 0.0;
    let problem = Problem::new(x_data, x_data)?;
    let init = truncated_start(rrr_fit(x_data, x_data, m)?, m)?;
    let fit = fit_problem(&problem, m, &config, &init)?;
    let mut derived = BTreeMap::new();
    derived.insert("loadings".to_string(), fit.u.clone());
    derived.insert("scores".to_string(), x_data.matmul(&fit.u));
    Ok(AppResult { fit, derived })
}

/// Sparse PCA as low-rank approximation `X ≈ U D Vᵀ` with orthonormal
/// loadings `V̂`; `λ_a` is forced to zero.
pub fn sparse_pca_approx(x_data: &Mat, m: usize, config: &SofarConfig) -> Result<AppResult> {
    let mut config = config.clone();
    config.lambda_a = 0.0;
    let fit = identity_fit(x_data, m, &config)?;
    let mut derived = BTreeMap::new();
    derived.insert("loadings".to_string(), fit.v.clone());
    derived.insert("scores".to_string(), fit.a.clone());
    Ok(AppResult { fit, derived })
}

/// Sparse factor model `X = FΛᵀ + E` with `FᵀF/T = I`: `F̂ = √T Û`,
/// `Λ̂ = V̂D̂/√T`.
pub fn sparse_factor_analysis(x_series: &Mat, m: usize, config: &SofarConfig) -> Result<AppResult> {
    let fit = identity_fit(x_series, m, config)?;
    let root_t = (x_series.rows() as f64).sqrt();
    let mut derived = BTreeMap::new();
    derived.insert("factors".to_string(), fit.u.scale(root_t));
    derived.insert("loadings".to_string(), fit.b.scale(1.0 / root_t));
    Ok(AppResult { fit, derived })
}

/// Two-step sparse VAR with observed augmenting series.
///
/// Step one fits the lag-1 regression of `x_t` on `x_{t−1}`; the VAR
/// coefficient is `Ĉᵀ` and the factors are `f̂_t = Ûᵀx_t`. Step two regresses
/// `y_t` on `(y_{t−1}, f̂_{t−1})` by least squares, giving the blocks `Â`
/// (rows for `y_{t−1}`) and `B̂` (rows for `f̂_{t−1}`).
pub fn sparse_var(x_series: &Mat, y_series: &Mat, m: usize, config: &SofarConfig) -> Result<AppResult> {
    let t_len = x_series.rows();
    if t_len < 3 {
        return invalid(format!("series of length {t_len} is too short; need at least 3"));
    }
    if y_series.rows() != t_len {
        return Err(SofarError::DimensionMismatch {
            context: "augmenting series length",
            expected: format!("{t_len}"),
            found: format!("{}", y_series.rows()),
        });
    }
    let p = x_series.cols();
    check_rank(m, p, p)?;
    let lagged: Vec<usize> = (0..t_len - 1).collect();
    let current: Vec<usize> = (1..t_len).collect();
    let x_lag = x_series.select_rows(&lagged);
    let x_now = x_series.select_rows(&current);
    let problem = Problem::new(&x_lag, &x_now)?;
    let init = truncated_start(rrr_fit(&x_lag, &x_now, m)?, m)?;
    let fit = fit_problem(&problem, m, config, &init)?;

    let factors = x_series.matmul(&fit.u);
    let q_low = y_series.cols();
    let regressors = y_series.select_rows(&lagged).hstack(&factors.select_rows(&lagged));
    let coef = ols_fit(&regressors, &y_series.select_rows(&current))?;
    let a_rows: Vec<usize> = (0..q_low).collect();
    let b_rows: Vec<usize> = (q_low..q_low + fit.rank()).collect();

    let mut derived = BTreeMap::new();
    derived.insert("var_coefficient".to_string(), fit.c.transpose());
    derived.insert("factors".to_string(), factors);
    derived.insert("response_factors".to_string(), x_series.matmul(&fit.v));
    derived.insert("a_block".to_string(), coef.select_rows(&a_rows));
    derived.insert("b_block".to_string(), coef.select_rows(&b_rows));
    Ok(AppResult { fit, derived })
}
