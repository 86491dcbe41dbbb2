//! Tuning along the ray `t·(λ_d*, λ_a*, λ_b*)`, where the upper bounds come
//! from the marginal null model, with selection by validation error, K-fold
//! cross-validation or GIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SofarError};
use crate::lasso_init::{fold_assignment, initialize_at, InitState};
use crate::linalg::{thin_svd, Mat};
use crate::penalty::Penalty;
use crate::solver::{fit_problem, FitTelemetry, Problem, SofarConfig, SofarFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `‖Y_val − X_val Ĉ‖_F² / (n_val q)`
    Validation,
    /// Mean held-out error over K folds.
    KFoldCv,
    /// `log(RSS/(nq)) + log(log n)·log(pq)·df/(nq)`
    Gic,
}

/// Extra data some criteria need.
#[derive(Debug, Clone, Copy)]
pub enum CriterionData<'a> {
    None,
    Validation { x: &'a Mat, y: &'a Mat },
    Folds { k: usize },
}

/// Upper bounds `(λ_d*, λ_a*, λ_b*)` of the tuning ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullBounds {
    pub lambda_d: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    /// `XᵀY = 0`: every bound is zero and only the null model is available.
    pub null_data: bool,
}

/// Marginal null-model bounds for unweighted penalties: `λ_d* = σ₁(XᵀY)`,
/// `λ_a* = null_threshold(ρ_a, XᵀY)`, `λ_b* = null_threshold(ρ_b, YᵀX)`.
pub fn marginal_null_bounds(x: &Mat, y: &Mat, penalty_a: &Penalty, penalty_b: &Penalty) -> Result<NullBounds> {
    let problem = Problem::new(x, y)?;
    let config = SofarConfig::default().with_penalties(penalty_a.clone(), penalty_b.clone());
    ray_bounds(&problem, &config, None)
}

/// Bounds for the penalties of `config`. Weighted penalties act on the
/// `p×m` and `q×m` blocks, so their null gradients are the marginal
/// gradients projected on the initial factors: `XᵀYṼ` and `YᵀXŨ`.
/// Weighted singular values divide `σ₁(XᵀY)` by the smallest weight.
pub fn ray_bounds(problem: &Problem, config: &SofarConfig, init: Option<&InitState>) -> Result<NullBounds> {
    let cross = &problem.cross;
    if cross.max_abs() == 0.0 {
        return Ok(NullBounds {
            lambda_d: 0.0,
            lambda_a: 0.0,
            lambda_b: 0.0,
            null_data: true,
        });
    }
    let needs_init = config.penalty_a.is_weighted() || config.penalty_b.is_weighted();
    let init = match (needs_init, init) {
        (true, None) => return invalid("weighted penalties need the initial factors to set their bounds"),
        (_, i) => i,
    };
    let min_w = config
        .weights_d
        .as_ref()
        .map_or(1.0, |w| w.iter().copied().fold(f64::INFINITY, f64::min));
    let lambda_d = thin_svd(cross)?.s[0] / min_w;
    let grad_a = match (&config.penalty_a.weights, init) {
        (Some(_), Some(i)) => cross.matmul(&i.v0),
        _ => cross.clone(),
    };
    let grad_b = match (&config.penalty_b.weights, init) {
        (Some(_), Some(i)) => cross.t_matmul(&i.u0),
        _ => cross.transpose(),
    };
    Ok(NullBounds {
        lambda_d,
        lambda_a: config.penalty_a.null_threshold(&grad_a)?.lambda,
        lambda_b: config.penalty_b.null_threshold(&grad_b)?.lambda,
        null_data: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub grid_size: usize,
    pub epsilon: f64,
    pub criterion: Criterion,
    /// Multipliers applied to `(λ_d*, λ_a*, λ_b*)`.
    pub ratios: [f64; 3],
    /// Seed for fold assignment.
    pub seed: u64,
    /// Stop once this many consecutive grid points fail to improve on a
    /// nonzero best fit; `None` walks the whole grid.
    pub patience: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_size: 30,
            epsilon: 1e-3,
            criterion: Criterion::Gic,
            ratios: [1.0; 3],
            seed: 0,
            patience: None,
        }
    }
}

/// Summary of one grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub t: f64,
    pub lambdas: [f64; 3],
    pub score: f64,
    pub rank: usize,
    pub converged: bool,
    /// Telemetry summed over every fit run for this point (all folds for
    /// cross-validation).
    pub telemetry: FitTelemetry,
    /// Largest final `‖ÛᵀÛ − I‖_∞`, `‖V̂ᵀV̂ − I‖_∞` among those fits.
    pub final_orthogonality_defect: f64,
    /// Error message when a fit failed; the score is then `+∞`.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningResult {
    pub bounds: NullBounds,
    pub points: Vec<GridPoint>,
    pub best_index: usize,
    pub best_fit: SofarFit,
    pub criterion: Criterion,
}

impl TuningResult {
    pub fn grid(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.lambdas).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.score).collect()
    }

    pub fn best(&self) -> &GridPoint {
        &self.points[self.best_index]
    }
}

/// Log-spaced `t` values from 1 down to `epsilon`.
pub fn ray_grid(grid_size: usize, epsilon: f64) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return invalid(format!("grid size must be at least 2, got {grid_size}"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    Ok((0..grid_size)
        .map(|i| epsilon.powf(i as f64 / (grid_size - 1) as f64))
        .collect())
}

/// Nonzeros of `(D̂, Â, B̂)`.
pub fn degrees_of_freedom(fit: &SofarFit) -> usize {
    fit.d.iter().filter(|&&d| d != 0.0).count() + fit.a.count_nonzero(0.0) + fit.b.count_nonzero(0.0)
}

/// Generalized information criterion of a fit.
pub fn gic(problem: &Problem, n: usize, fit: &SofarFit) -> f64 {
    let (p, q) = (problem.p() as f64, problem.q() as f64);
    let nq = n as f64 * q;
    let rss = problem.rss(&fit.c);
    let cn = (n as f64).ln().ln() * (p * q).ln();
    (rss / nq).ln() + cn * degrees_of_freedom(fit) as f64 / nq
}

/// Mean squared prediction error `‖Y − XĈ‖_F²/(nq)`.
pub fn prediction_error(x: &Mat, y: &Mat, c: &Mat) -> f64 {
    y.sub(&x.matmul(c)).fro_norm_sq() / (y.rows() * y.cols()) as f64
}

fn point_config(base: &SofarConfig, bounds: &NullBounds, ratios: [f64; 3], t: f64) -> ([f64; 3], SofarConfig) {
    let lambdas = [
        t * ratios[0] * bounds.lambda_d,
        t * ratios[1] * bounds.lambda_a,
        t * ratios[2] * bounds.lambda_b,
    ];
    let config = base.clone().with_lambdas(lambdas[0], lambdas[1], lambdas[2]);
    (lambdas, config)
}

struct FoldData {
    problem: Problem,
    init: InitState,
    x_val: Mat,
    y_val: Mat,
}

/// One-dimensional ray search. Every grid point is fitted from `init`;
/// ties in the criterion go to the larger `t`.
pub fn search(
    x: &Mat,
    y: &Mat,
    m: usize,
    base_config: &SofarConfig,
    init: &InitState,
    opts: &SearchOptions,
    data: CriterionData<'_>,
) -> Result<TuningResult> {
    let problem = Problem::new(x, y)?;
    let ts = ray_grid(opts.grid_size, opts.epsilon)?;
    if opts.ratios.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return invalid("ratio multipliers must be nonnegative and finite");
    }
    let bounds = ray_bounds(&problem, base_config, Some(init))?;

    let folds = match (opts.criterion, data) {
        (Criterion::Validation, CriterionData::Validation { x: xv, y: yv }) => {
            if xv.cols() != x.cols() || yv.cols() != y.cols() || xv.rows() != yv.rows() {
                return Err(SofarError::DimensionMismatch {
                    context: "validation data",
                    expected: format!("{} predictors and {} responses", x.cols(), y.cols()),
                    found: format!("{:?} and {:?}", xv.shape(), yv.shape()),
                });
            }
            Vec::new()
        }
        (Criterion::Validation, _) => return invalid("validation criterion needs validation data"),
        (Criterion::KFoldCv, d) => {
            let k = match d {
                CriterionData::Folds { k } => k,
                _ => crate::lasso_init::DEFAULT_CV_FOLDS,
            };
            build_folds(x, y, m, init, k, opts.seed)?
        }
        (Criterion::Gic, _) => Vec::new(),
    };

    let mut points: Vec<GridPoint> = Vec::with_capacity(ts.len());
    let mut best: Option<(usize, SofarFit)> = None;
    let mut best_score = f64::INFINITY;
    for &t in &ts {
        let (lambdas, config) = point_config(base_config, &bounds, opts.ratios, t);
        let mut point = GridPoint {
            t,
            lambdas,
            score: f64::INFINITY,
            rank: 0,
            converged: true,
            telemetry: FitTelemetry::default(),
            final_orthogonality_defect: 0.0,
            failure: None,
        };
        let full = fit_problem(&problem, m, &config, init);
        let outcome = full.and_then(|fit| {
            record_fit(&mut point, &fit);
            let score = match (opts.criterion, data) {
                (Criterion::Validation, CriterionData::Validation { x: xv, y: yv }) => prediction_error(xv, yv, &fit.c),
                (Criterion::Gic, _) => gic(&problem, x.rows(), &fit),
                _ => cv_score(&folds, m, &config, &mut point)?,
            };
            Ok((score, fit))
        });
        match outcome {
            Ok((score, fit)) => {
                point.score = score;
                if score < best_score || best.is_none() {
                    best_score = score;
                    best = Some((points.len(), fit));
                }
            }
            Err(e) => point.failure = Some(e.to_string()),
        }
        points.push(point);
        // null fits at the top of the ray do not start the patience count
        if let (Some(patience), Some((bi, fit))) = (opts.patience, &best) {
            if !fit.is_zero() && points.len() - 1 - bi >= patience {
                break;
            }
        }
    }
    let (best_index, best_fit) = match best {
        Some(b) => b,
        None => {
            return invalid(format!(
                "every grid fit failed; first failure: {}",
                points[0].failure.clone().unwrap_or_default()
            ))
        }
    };
    Ok(TuningResult {
        bounds,
        points,
        best_index,
        best_fit,
        criterion: opts.criterion,
    })
}

fn record_fit(point: &mut GridPoint, fit: &SofarFit) {
    point.rank = fit.rank();
    point.converged &= fit.converged;
    point.telemetry.absorb(&fit.telemetry);
    point.final_orthogonality_defect = point
        .final_orthogonality_defect
        .max(fit.u.orthonormality_defect())
        .max(fit.v.orthonormality_defect());
}

fn build_folds(x: &Mat, y: &Mat, m: usize, init: &InitState, k: usize, seed: u64) -> Result<Vec<FoldData>> {
    let n = x.rows();
    fold_assignment(n, k, seed)?
        .into_par_iter()
        .map(|held| {
            let mut mask = vec![true; n];
            for &i in &held {
                mask[i] = false;
            }
            let train: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            let (xt, yt) = (x.select_rows(&train), y.select_rows(&train));
            // the fold initializer reuses the full-data λ₀
            let fold_init = initialize_at(&xt, &yt, m, init.lambda0, init.is_screened())?;
            Ok(FoldData {
                problem: Problem::new(&xt, &yt)?,
                init: fold_init,
                x_val: x.select_rows(&held),
                y_val: y.select_rows(&held),
            })
        })
        .collect()
}

fn cv_score(folds: &[FoldData], m: usize, config: &SofarConfig, point: &mut GridPoint) -> Result<f64> {
    let fits: Vec<SofarFit> = folds
        .par_iter()
        .map(|f| fit_problem(&f.problem, m, config, &f.init))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for (f, fit) in folds.iter().zip(&fits) {
        record_fit(point, fit);
        total += prediction_error(&f.x_val, &f.y_val, &fit.c);
    }
    Ok(total / folds.len() as f64)
}
