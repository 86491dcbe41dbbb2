//! Entrywise-L1 initial estimator and the SVD initialization it provides.
//!
//! Each response column is an independent Lasso problem
//! `(2n)⁻¹‖y − Xβ‖² + λ₀‖β‖₁` on the column-standardized design
//! (`‖x_j‖² = n`), solved by covariance-mode coordinate descent. Returned
//! coefficients are on the original scale.

use rayon::prelude::*;

use crate::error::{invalid, Result, SofarError};
use crate::linalg::{cholesky, dot, thin_svd, Mat};
use crate::penalty::soft_threshold;
use crate::simgen::rng_stream;

pub const DEFAULT_CV_FOLDS: usize = 5;
pub const DEFAULT_CV_GRID: usize = 30;
/// Smallest grid value relative to the null threshold when `n > p`.
pub const CV_GRID_DEPTH: f64 = 1e-3;
/// Same, when `n ≤ p`: deeper grids only approach interpolation.
pub const CV_GRID_DEPTH_WIDE: f64 = 1e-2;

/// Depth of the cross-validation grid for an `n × p` design.
pub fn cv_grid_depth(n: usize, p: usize) -> f64 {
    if n > p {
        CV_GRID_DEPTH
    } else {
        CV_GRID_DEPTH_WIDE
    }
}

const CD_TOL: f64 = 1e-10;
const CD_MAX_SWEEPS: usize = 10_000;
const FOLD_STREAM: u64 = 0xf01d;

/// Design standardized to `‖x̃_j‖² = n`, with its scaled Gram matrix.
#[derive(Debug, Clone)]
pub struct ScaledDesign {
    n: usize,
    /// `‖x_j‖ / √n`; zero for all-zero columns.
    scale: Vec<f64>,
    /// `X̃ᵀX̃ / n`
    gram: Mat,
}

impl ScaledDesign {
    pub fn new(x: &Mat) -> Self {
        let n = x.rows();
        let raw = x.gram();
        let p = x.cols();
        let scale: Vec<f64> = (0..p).map(|j| (raw[(j, j)] / n as f64).sqrt()).collect();
        let inv: Vec<f64> = scale.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
        let gram = Mat::from_fn(p, p, |i, j| raw[(i, j)] * inv[i] * inv[j] / n as f64);
        Self { n, scale, gram }
    }

    pub fn p(&self) -> usize {
        self.scale.len()
    }

    /// `‖x_j‖ / √n` of column `j`.
    pub fn scale(&self, j: usize) -> f64 {
        self.scale[j]
    }

    /// `X̃ᵀX̃ / n`
    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    /// `X̃ᵀY / n`, one column per response.
    pub fn correlations(&self, x: &Mat, y: &Mat) -> Mat {
        let xty = x.t_matmul(y);
        let n = self.n as f64;
        Mat::from_fn(xty.rows(), xty.cols(), |i, k| {
            if self.scale[i] > 0.0 {
                xty[(i, k)] / (self.scale[i] * n)
            } else {
                0.0
            }
        })
    }

    fn unscale(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter()
            .zip(&self.scale)
            .map(|(&b, &s)| if s > 0.0 { b / s } else { 0.0 })
            .collect()
    }
}

/// Outcome of one coordinate-descent solve.
#[derive(Debug, Clone)]
pub struct CdReport {
    /// Coefficients on the standardized scale.
    pub beta: Vec<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
    /// Sweeps whose objective exceeded the previous one beyond rounding.
    pub objective_increases: usize,
}

/// Covariance-mode coordinate descent for
/// `½βᵀGβ − cᵀβ + λ Σ w_j|β_j|`, warm-started from `beta`.
///
/// After a full sweep it iterates on the active set only, and declares
/// convergence after a full sweep moves no coordinate by more than `1e-10`.
pub fn coordinate_descent(
    gram: &Mat,
    c: &[f64],
    lambda: f64,
    penalty_factors: Option<&[f64]>,
    beta: Vec<f64>,
) -> CdReport {
    let p = c.len();
    let mut beta = beta;
    debug_assert_eq!(beta.len(), p);
    let w = |j: usize| penalty_factors.map_or(1.0, |f| f[j]);
    // gb = G β
    let mut gb = gram.mat_vec(&beta);
    let objective = |beta: &[f64], gb: &[f64]| -> f64 {
        let pen: f64 = beta.iter().enumerate().map(|(j, b)| w(j) * b.abs()).sum();
        0.5 * dot(beta, gb) - dot(c, beta) + lambda * pen
    };

    let mut trace = vec![objective(&beta, &gb)];
    let mut increases = 0;
    let mut sweeps = 0;
    let update = |j: usize, beta: &mut [f64], gb: &mut [f64]| -> f64 {
        let gjj = gram[(j, j)];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = beta[j];
        let z = c[j] - gb[j] + gjj * old;
        let new = soft_threshold(z, lambda * w(j)) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            for (g, &gk) in gb.iter_mut().zip(gram.row(j)) {
                *g += gk * delta;
            }
        }
        delta.abs()
    };

    let mut record = |beta: &[f64], gb: &[f64], trace: &mut Vec<f64>| {
        let val = objective(beta, gb);
        let prev = *trace.last().unwrap();
        if val > prev + 1e-12 * (1.0 + prev.abs()) {
            increases += 1;
        }
        trace.push(val);
    };

    while sweeps < CD_MAX_SWEEPS {
        // full sweep
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(update(j, &mut beta, &mut gb));
        }
        sweeps += 1;
        record(&beta, &gb, &mut trace);
        if max_change <= CD_TOL {
            break;
        }
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        if let Some(polished) = active_set_solution(gram, c, lambda, penalty_factors, &beta, &active) {
            beta = polished;
            gb = gram.mat_vec(&beta);
            record(&beta, &gb, &mut trace);
            continue;
        }
        // active-set passes when the active system is singular
        while sweeps < CD_MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for &j in &active {
                change = change.max(update(j, &mut beta, &mut gb));
            }
            sweeps += 1;
            record(&beta, &gb, &mut trace);
            if change <= CD_TOL {
                break;
            }
        }
    }

    let kkt_residual = kkt_residual(gram, c, lambda, penalty_factors, &beta);
    CdReport {
        beta,
        sweeps,
        kkt_residual,
        objective_trace: trace,
        objective_increases: increases,
    }
}

/// Feature-sign descent on the active set: solve
/// `G_AA z = c_A − λ w_A sign(β_A)`; if a coordinate would change sign, step
/// to the first zero crossing, drop that coordinate and repeat. Every step
/// lowers the objective. Returns `None` when a subsystem is not positive
/// definite.
fn active_set_solution(
    gram: &Mat,
    c: &[f64],
    lambda: f64,
    penalty_factors: Option<&[f64]>,
    beta: &[f64],
    active: &[usize],
) -> Option<Vec<f64>> {
    let mut out = beta.to_vec();
    let mut active: Vec<usize> = active.iter().copied().filter(|&j| beta[j] != 0.0).collect();
    while !active.is_empty() {
        let sub = Mat::from_fn(active.len(), active.len(), |a, b| gram[(active[a], active[b])]);
        let l = cholesky(&sub).ok()?;
        let rhs: Vec<f64> = active
            .iter()
            .map(|&j| c[j] - lambda * penalty_factors.map_or(1.0, |f| f[j]) * out[j].signum())
            .collect();
        let z = cholesky_solve(&l, rhs);
        if z.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for (a, &j) in active.iter().enumerate() {
            if z[a].signum() != out[j].signum() || z[a] == 0.0 {
                let t = out[j] / (out[j] - z[a]);
                if t < step {
                    step = t;
                    blocking = Some(a);
                }
            }
        }
        for (a, &j) in active.iter().enumerate() {
            out[j] += step * (z[a] - out[j]);
        }
        match blocking {
            None => return Some(out),
            Some(a) => {
                out[active[a]] = 0.0;
                active.remove(a);
                // coordinates that landed on zero together leave as well
                active.retain(|&j| out[j] != 0.0);
            }
        }
    }
    Some(out)
}

/// Solves `L Lᵀ x = b` for lower-triangular `L`.
fn cholesky_solve(l: &Mat, mut z: Vec<f64>) -> Vec<f64> {
    let k = z.len();
    for i in 0..k {
        let mut v = z[i];
        for t in 0..i {
            v -= l[(i, t)] * z[t];
        }
        z[i] = v / l[(i, i)];
    }
    for i in (0..k).rev() {
        let mut v = z[i];
        for t in (i + 1)..k {
            v -= l[(t, i)] * z[t];
        }
        z[i] = v / l[(i, i)];
    }
    z
}

/// Largest violation of the Lasso stationarity conditions.
pub fn kkt_residual(gram: &Mat, c: &[f64], lambda: f64, penalty_factors: Option<&[f64]>, beta: &[f64]) -> f64 {
    let gb = gram.mat_vec(beta);
    let mut worst: f64 = 0.0;
    for j in 0..c.len() {
        if gram[(j, j)] <= 0.0 {
            continue;
        }
        let w = penalty_factors.map_or(1.0, |f| f[j]);
        let grad = c[j] - gb[j];
        let viol = if beta[j] != 0.0 {
            (grad - lambda * w * beta[j].signum()).abs()
        } else {
            (grad.abs() - lambda * w).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

fn check_lambda(lambda0: f64) -> Result<()> {
    if !(lambda0 >= 0.0 && lambda0.is_finite()) {
        return invalid(format!("lambda0 must be nonnegative and finite, got {lambda0}"));
    }
    Ok(())
}

/// Single-response Lasso on the original coefficient scale.
pub fn lasso_column(x: &Mat, y: &[f64], lambda0: f64) -> Result<Vec<f64>> {
    check_lambda(lambda0)?;
    if y.len() != x.rows() {
        return Err(SofarError::DimensionMismatch {
            context: "lasso_column",
            expected: format!("{} responses", x.rows()),
            found: format!("{}", y.len()),
        });
    }
    let design = ScaledDesign::new(x);
    let c = design.correlations(x, &Mat::column_vector(y)).column(0);
    let report = coordinate_descent(&design.gram, &c, lambda0, None, vec![0.0; design.p()]);
    Ok(design.unscale(&report.beta))
}

/// Column-separable Lasso; columns are solved in parallel and the result does
/// not depend on the schedule.
pub fn lasso_matrix(x: &Mat, y: &Mat, lambda0: f64) -> Result<Mat> {
    lasso_matrix_weighted(x, y, lambda0, None)
}

/// Column-separable weighted Lasso; `weights` holds one positive penalty
/// factor per coefficient (`p × q`).
pub fn lasso_matrix_weighted(x: &Mat, y: &Mat, lambda0: f64, weights: Option<&Mat>) -> Result<Mat> {
    check_lambda(lambda0)?;
    check_xy(x, y)?;
    if let Some(w) = weights {
        if w.shape() != (x.cols(), y.cols()) {
            return Err(SofarError::DimensionMismatch {
                context: "lasso weights",
                expected: format!("{:?}", (x.cols(), y.cols())),
                found: format!("{:?}", w.shape()),
            });
        }
    }
    let design = ScaledDesign::new(x);
    let corr = design.correlations(x, y);
    let cols: Vec<Vec<f64>> = (0..y.cols())
        .into_par_iter()
        .map(|k| {
            let c = corr.column(k);
            let factors = weights.map(|w| w.column(k));
            let report = coordinate_descent(&design.gram, &c, lambda0, factors.as_deref(), vec![0.0; design.p()]);
            design.unscale(&report.beta)
        })
        .collect();
    Ok(Mat::from_columns(x.cols(), &cols))
}

/// Lasso fits along a decreasing `lambdas` path with warm starts; element `i`
/// holds the `p × q` coefficient matrix for `lambdas[i]`.
pub fn lasso_path(x: &Mat, y: &Mat, lambdas: &[f64], weights: Option<&Mat>) -> Result<Vec<Mat>> {
    check_xy(x, y)?;
    for &l in lambdas {
        check_lambda(l)?;
    }
    let design = ScaledDesign::new(x);
    let corr = design.correlations(x, y);
    let p = x.cols();
    let per_column: Vec<Vec<Vec<f64>>> = (0..y.cols())
        .into_par_iter()
        .map(|k| {
            let c = corr.column(k);
            let factors = weights.map(|w| w.column(k));
            let mut beta = vec![0.0; p];
            lambdas
                .iter()
                .map(|&lam| {
                    let report = coordinate_descent(&design.gram, &c, lam, factors.as_deref(), beta.clone());
                    beta = report.beta;
                    design.unscale(&beta)
                })
                .collect()
        })
        .collect();
    Ok((0..lambdas.len())
        .map(|i| {
            let cols: Vec<Vec<f64>> = per_column.iter().map(|c| c[i].clone()).collect();
            Mat::from_columns(p, &cols)
        })
        .collect())
}

fn check_xy(x: &Mat, y: &Mat) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(SofarError::DimensionMismatch {
            context: "design and response rows",
            expected: format!("{}", x.rows()),
            found: format!("{}", y.rows()),
        });
    }
    if x.rows() == 0 || x.cols() == 0 || y.cols() == 0 {
        return invalid("empty design or response");
    }
    Ok(())
}

/// Null threshold `max |x̃_jᵀy_k| / n` of the standardized problem, optionally
/// divided by per-coefficient weights.
pub fn lambda_max(x: &Mat, y: &Mat, weights: Option<&Mat>) -> f64 {
    let design = ScaledDesign::new(x);
    let corr = design.correlations(x, y);
    let mut best: f64 = 0.0;
    for i in 0..corr.rows() {
        for k in 0..corr.cols() {
            let w = weights.map_or(1.0, |w| w[(i, k)]);
            best = best.max(corr[(i, k)].abs() / w);
        }
    }
    best
}

/// Log-spaced grid from `top` down to `depth · top`.
pub fn log_grid(top: f64, depth: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![top];
    }
    (0..size)
        .map(|i| top * depth.powf(i as f64 / (size - 1) as f64))
        .collect()
}

/// Seeded shuffle of `0..n` cut into `k` contiguous blocks.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return invalid(format!("need at least two folds, got {k}"));
    }
    if n < k {
        return invalid(format!("{n} rows cannot fill {k} folds"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng_stream(seed, FOLD_STREAM).shuffle(&mut idx);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Cross-validation curve over the λ₀ grid.
#[derive(Debug, Clone)]
pub struct LambdaCv {
    /// Decreasing grid.
    pub lambdas: Vec<f64>,
    /// Mean held-out `‖Y − XC̃‖_F²` per grid point.
    pub cv_error: Vec<f64>,
    pub best_index: usize,
}

impl LambdaCv {
    pub fn lambda(&self) -> f64 {
        self.lambdas[self.best_index]
    }
}

/// K-fold cross-validation of λ₀ over a log-spaced grid from
/// `λ_max = ‖X̃ᵀY‖_∞/n` down to `1e-3·λ_max`. Ties go to the larger λ.
pub fn lambda0_cv_curve(
    x: &Mat,
    y: &Mat,
    k_folds: usize,
    grid_size: usize,
    seed: u64,
    weights: Option<&Mat>,
) -> Result<LambdaCv> {
    check_xy(x, y)?;
    if grid_size == 0 {
        return invalid("grid size must be positive");
    }
    let n = x.rows();
    let folds = fold_assignment(n, k_folds, seed)?;
    let top = lambda_max(x, y, weights);
    let lambdas = if top > 0.0 {
        log_grid(top, cv_grid_depth(n, x.cols()), grid_size)
    } else {
        vec![0.0]
    };
    let fold_errors: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|fold| -> Result<Vec<f64>> {
            let train = complement(n, fold);
            let (xt, yt) = (x.select_rows(&train), y.select_rows(&train));
            let (xv, yv) = (x.select_rows(fold), y.select_rows(fold));
            let path = lasso_path(&xt, &yt, &lambdas, weights)?;
            Ok(path.iter().map(|c| yv.sub(&xv.matmul(c)).fro_norm_sq()).collect())
        })
        .collect::<Result<_>>()?;
    let cv_error: Vec<f64> = (0..lambdas.len())
        .map(|i| fold_errors.iter().map(|f| f[i]).sum::<f64>() / k_folds as f64)
        .collect();
    let mut best_index = 0;
    for (i, &e) in cv_error.iter().enumerate() {
        if e < cv_error[best_index] {
            best_index = i;
        }
    }
    Ok(LambdaCv {
        lambdas,
        cv_error,
        best_index,
    })
}

/// Cross-validated λ₀ (see [`lambda0_cv_curve`]).
pub fn cross_validate_lambda0(x: &Mat, y: &Mat, k_folds: usize, grid_size: usize, seed: u64) -> Result<f64> {
    Ok(lambda0_cv_curve(x, y, k_folds, grid_size, seed, None)?.lambda())
}

/// Starting point of the SOFAR iterations.
#[derive(Debug, Clone)]
pub struct InitState {
    pub c_tilde: Mat,
    pub u0: Mat,
    pub v0: Mat,
    pub d0: Vec<f64>,
    pub lambda0: f64,
    /// Predictors kept for the SOFAR stage (all of them unless screening is on).
    pub kept_rows: Vec<usize>,
    /// Responses kept for the SOFAR stage.
    pub kept_cols: Vec<usize>,
    /// `C̃ = 0`: the caller should return the zero fit.
    pub zero_fit: bool,
}

impl InitState {
    /// `Ã = ŨD̃`
    pub fn a0(&self) -> Mat {
        self.u0.scale_columns(&self.d0)
    }

    /// `B̃ = ṼD̃`
    pub fn b0(&self) -> Mat {
        self.v0.scale_columns(&self.d0)
    }

    pub fn rank(&self) -> usize {
        self.d0.len()
    }

    pub fn is_screened(&self) -> bool {
        self.kept_rows.len() < self.c_tilde.rows() || self.kept_cols.len() < self.c_tilde.cols()
    }

    /// Initialization from an arbitrary coefficient matrix, truncated to rank `m`.
    pub fn from_coefficients(c: Mat, m: usize, lambda0: f64, screening: bool) -> Result<Self> {
        let (p, q) = c.shape();
        if m == 0 || m > p.min(q) {
            return invalid(format!("rank {m} outside 1..={}", p.min(q)));
        }
        let svd = thin_svd(&c)?.truncate(m);
        let zero_fit = c.max_abs() == 0.0;
        let (kept_rows, kept_cols) = if screening {
            (
                (0..p).filter(|&i| c.row(i).iter().any(|&v| v != 0.0)).collect(),
                (0..q).filter(|&j| (0..p).any(|i| c[(i, j)] != 0.0)).collect(),
            )
        } else {
            ((0..p).collect(), (0..q).collect())
        };
        Ok(Self {
            c_tilde: c,
            u0: svd.u,
            v0: svd.v,
            d0: svd.s,
            lambda0,
            kept_rows,
            kept_cols,
            zero_fit,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InitOptions {
    pub k_folds: usize,
    pub grid_size: usize,
    pub seed: u64,
    /// Restrict the SOFAR stage to nonzero rows/columns of `C̃`.
    pub screening: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            k_folds: DEFAULT_CV_FOLDS,
            grid_size: DEFAULT_CV_GRID,
            seed: 0,
            screening: false,
        }
    }
}

/// Cross-validated Lasso fit followed by its rank-`m` SVD.
pub fn initialize(x: &Mat, y: &Mat, m: usize, k_folds: usize, seed: u64) -> Result<InitState> {
    initialize_with(
        x,
        y,
        m,
        &InitOptions {
            k_folds,
            seed,
            ..InitOptions::default()
        },
    )
}

pub fn initialize_with(x: &Mat, y: &Mat, m: usize, opts: &InitOptions) -> Result<InitState> {
    check_xy(x, y)?;
    check_rank(m, x.cols(), y.cols())?;
    let lambda0 = lambda0_cv_curve(x, y, opts.k_folds, opts.grid_size, opts.seed, None)?.lambda();
    initialize_at(x, y, m, lambda0, opts.screening)
}

/// Initialization at a fixed λ₀ (no cross-validation).
pub fn initialize_at(x: &Mat, y: &Mat, m: usize, lambda0: f64, screening: bool) -> Result<InitState> {
    check_xy(x, y)?;
    check_rank(m, x.cols(), y.cols())?;
    let c = lasso_matrix(x, y, lambda0)?;
    InitState::from_coefficients(c, m, lambda0, screening)
}

fn check_rank(m: usize, p: usize, q: usize) -> Result<()> {
    if m == 0 || m > p.min(q) {
        return invalid(format!("rank {m} outside 1..={}", p.min(q)));
    }
    Ok(())
}
