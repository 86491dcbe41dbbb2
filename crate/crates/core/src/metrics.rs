//! Estimation, prediction, support-recovery and orthogonality metrics against
//! a known ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SofarError};
use crate::linalg::{thin_svd, Mat};
use crate::simgen::GroundTruth;
use crate::solver::SofarFit;

/// Magnitude above which an estimated entry counts as nonzero.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `‖Ĉ − C*‖_F²/(pq)`
    pub mse_est: f64,
    /// `‖X(Ĉ − C*)‖_F²/(nq)`
    pub mse_pred: f64,
    pub fpr_pct: f64,
    pub fnr_pct: f64,
    pub rank_hat: usize,
    pub rank_correct: bool,
    /// `100(‖ÛᵀÛ‖₁ + ‖V̂ᵀV̂‖₁ − 2r̂)`
    pub orth: f64,
}

/// Estimated and true factors padded to a common width, with estimated
/// columns sign-aligned to the truth.
#[derive(Debug, Clone)]
pub struct AlignedLayers {
    pub u_hat: Mat,
    pub d_hat: Vec<f64>,
    pub v_hat: Mat,
    pub u_star: Mat,
    pub d_star: Vec<f64>,
    pub v_star: Mat,
}

/// Sorts estimated layers by decreasing singular value, pads both
/// decompositions with zero layers to `max(m̂, r)` and flips each estimated
/// layer whose `v̂_kᵀv*_k` is negative.
pub fn align_layers(fit: &SofarFit, truth: &GroundTruth) -> Result<AlignedLayers> {
    let (p, q) = truth.c_star.shape();
    if fit.u.rows() != p || fit.v.rows() != q {
        return Err(SofarError::DimensionMismatch {
            context: "fit against truth",
            expected: format!("{p} and {q} rows"),
            found: format!("{} and {} rows", fit.u.rows(), fit.v.rows()),
        });
    }
    let m = fit.d.len();
    let width = m.max(truth.r);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| fit.d[j].total_cmp(&fit.d[i]));
    let mut u_hat = fit.u.select_columns(&order).resize_columns(width);
    let mut v_hat = fit.v.select_columns(&order).resize_columns(width);
    let mut d_hat: Vec<f64> = order.iter().map(|&k| fit.d[k]).collect();
    d_hat.resize(width, 0.0);
    let u_star = truth.u_star.resize_columns(width);
    let v_star = truth.v_star.resize_columns(width);
    let mut d_star = truth.d_star.clone();
    d_star.resize(width, 0.0);
    for k in 0..m.min(truth.r) {
        let agreement: f64 = (0..q).map(|j| v_hat[(j, k)] * v_star[(j, k)]).sum();
        if agreement < 0.0 {
            for i in 0..p {
                u_hat[(i, k)] = -u_hat[(i, k)];
            }
            for j in 0..q {
                v_hat[(j, k)] = -v_hat[(j, k)];
            }
        }
    }
    Ok(AlignedLayers {
        u_hat,
        d_hat,
        v_hat,
        u_star,
        d_star,
        v_star,
    })
}

/// Metrics of a SOFAR-type fit. `x` is the design used for the prediction
/// error.
pub fn evaluate(fit: &SofarFit, truth: &GroundTruth, x: &Mat) -> Result<MetricsRecord> {
    let aligned = align_layers(fit, truth)?;
    let (p, q) = truth.c_star.shape();
    if x.cols() != p {
        return Err(SofarError::DimensionMismatch {
            context: "design for prediction error",
            expected: format!("{p} columns"),
            found: format!("{}", x.cols()),
        });
    }
    let delta = fit.c.sub(&truth.c_star);
    let mse_est = delta.fro_norm_sq() / (p * q) as f64;
    let mse_pred = x.matmul(&delta).fro_norm_sq() / (x.rows() * q) as f64;

    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (est, tru) in [(&aligned.u_hat, &aligned.u_star), (&aligned.v_hat, &aligned.v_star)] {
        for (&e, &t) in est.as_slice().iter().zip(tru.as_slice()) {
            match (e.abs() > SUPPORT_THRESHOLD, t != 0.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fneg += 1,
            }
        }
    }
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let rank_hat = fit.d.iter().filter(|&&d| d > 0.0).count();
    let orth = 100.0 * (fit.u.gram().l1_norm() + fit.v.gram().l1_norm() - 2.0 * rank_hat as f64);
    Ok(MetricsRecord {
        mse_est,
        mse_pred,
        fpr_pct: pct(fp, tn + fp),
        fnr_pct: pct(fneg, tp + fneg),
        rank_hat,
        rank_correct: rank_hat == truth.r,
        orth,
    })
}

/// Metrics of a plain coefficient estimate, reading its factors off the
/// thin SVD (layers with singular value at most `1e-10·σ₁` are dropped).
pub fn evaluate_coefficients(c: &Mat, truth: &GroundTruth, x: &Mat) -> Result<MetricsRecord> {
    evaluate(&fit_from_coefficients(c)?, truth, x)
}

/// Wraps a coefficient matrix as a fit through its thin SVD.
pub fn fit_from_coefficients(c: &Mat) -> Result<SofarFit> {
    let (p, q) = c.shape();
    if c.max_abs() == 0.0 {
        return Ok(SofarFit::zero(p, q));
    }
    let svd = thin_svd(c)?;
    let cut = 1e-10 * svd.s[0];
    let k = svd.s.iter().filter(|&&s| s > cut).count();
    let svd = svd.truncate(k);
    let mut fit = SofarFit::zero(p, q);
    fit.u = svd.u;
    fit.v = svd.v;
    fit.d = svd.s;
    fit.normalize();
    fit.c = c.clone();
    Ok(fit)
}
