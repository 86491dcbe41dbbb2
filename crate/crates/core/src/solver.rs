//! Augmented-Lagrangian block coordinate descent for the SOFAR problem
//!
//! ```text
//! min ½‖Y − XUDVᵀ‖² + λ_d Σ w_k d_k + λ_a ρ_a(A) + λ_b ρ_b(B)
//! s.t. UᵀU = VᵀV = I, A = UD, B = VD, D ≥ 0 diagonal.
//! ```
//!
//! Each sweep updates U (iterated weighted Procrustes), V (one Procrustes
//! step), D (closed form), A and B (proximal maps); after `inner_sweeps`
//! sweeps the multipliers Γ_a, Γ_b are updated and μ grows by γ.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SofarError};
use crate::lasso_init::InitState;
use crate::linalg::{polar_orthogonal_factor, top_eigenvalue_sym, Mat};
use crate::penalty::{adaptive_row_weights, adaptive_vector_weights, adaptive_weights, Penalty, PenaltyKind};

/// Relative slack for the monotone-descent bookkeeping.
pub const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SofarConfig {
    pub lambda_d: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub penalty_a: Penalty,
    pub penalty_b: Penalty,
    /// Adaptive weights on the singular values, one per initial layer.
    pub weights_d: Option<Vec<f64>>,
    pub mu0: f64,
    pub gamma: f64,
    pub mu_max: f64,
    pub inner_sweeps: usize,
    pub inner_tol: f64,
    pub outer_tol_primal: f64,
    pub outer_tol_obj: f64,
    pub max_outer: usize,
    pub procrustes_max_iter: usize,
    pub procrustes_tol: f64,
    /// Extrapolate the weighted-Procrustes iterates, keeping a step only if
    /// it does not raise the U-subproblem objective.
    pub procrustes_acceleration: bool,
}

impl Default for SofarConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.0,
            lambda_a: 0.0,
            lambda_b: 0.0,
            penalty_a: Penalty::l1(),
            penalty_b: Penalty::l1(),
            weights_d: None,
            mu0: 1.0,
            gamma: 1.05,
            mu_max: 1e8,
            inner_sweeps: 10,
            inner_tol: 1e-4,
            outer_tol_primal: 1e-11,
            outer_tol_obj: 1e-6,
            max_outer: 1000,
            procrustes_max_iter: 50,
            procrustes_tol: 1e-8,
            procrustes_acceleration: true,
        }
    }
}

impl SofarConfig {
    pub fn with_lambdas(mut self, lambda_d: f64, lambda_a: f64, lambda_b: f64) -> Self {
        self.lambda_d = lambda_d;
        self.lambda_a = lambda_a;
        self.lambda_b = lambda_b;
        self
    }

    pub fn with_penalties(mut self, penalty_a: Penalty, penalty_b: Penalty) -> Self {
        self.penalty_a = penalty_a;
        self.penalty_b = penalty_b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_a", self.lambda_a),
            ("lambda_b", self.lambda_b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("mu0", self.mu0),
            ("mu_max", self.mu_max),
            ("inner_tol", self.inner_tol),
            ("outer_tol_primal", self.outer_tol_primal),
            ("outer_tol_obj", self.outer_tol_obj),
            ("procrustes_tol", self.procrustes_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if self.mu_max < self.mu0 {
            return invalid("mu_max must be at least mu0");
        }
        if self.inner_sweeps == 0 || self.max_outer == 0 || self.procrustes_max_iter == 0 {
            return invalid("iteration limits must be positive");
        }
        if let Some(w) = &self.weights_d {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return invalid("singular-value weights must be positive and finite");
            }
        }
        Ok(())
    }
}

/// Powers of the reciprocal initial magnitudes used as adaptive weights:
/// `w_k = d̃_k^{-power_d}`, `W_a = |Ã|^{-power_ab}` (row norms for the group
/// penalty), likewise `W_b`. Magnitudes are floored before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveScheme {
    pub power_d: f64,
    pub power_ab: f64,
    pub floor: f64,
}

impl Default for AdaptiveScheme {
    fn default() -> Self {
        Self {
            power_d: 2.0,
            power_ab: 1.0,
            floor: crate::penalty::DEFAULT_ADAPTIVE_FLOOR,
        }
    }
}

impl SofarConfig {
    /// Replaces the penalty weights by adaptive ones built from `init`,
    /// keeping the penalty kinds.
    pub fn adaptive(mut self, init: &InitState, scheme: AdaptiveScheme) -> Result<Self> {
        let pow = |w: Mat, e: f64| w.map(|x| x.powf(e));
        let build = |kind: PenaltyKind, m: &Mat| -> Result<Penalty> {
            let w = match kind {
                PenaltyKind::EntrywiseL1 => adaptive_weights(m, scheme.floor)?,
                PenaltyKind::RowwiseGroup => adaptive_row_weights(m, scheme.floor)?,
            };
            Penalty::with_weights(kind, pow(w, scheme.power_ab))
        };
        self.penalty_a = build(self.penalty_a.kind, &init.a0())?;
        self.penalty_b = build(self.penalty_b.kind, &init.b0())?;
        self.weights_d = Some(
            adaptive_vector_weights(&init.d0, scheme.floor)?
                .into_iter()
                .map(|w| w.powf(scheme.power_d))
                .collect(),
        );
        Ok(self)
    }
}

/// Sufficient statistics of `(X, Y)`, computed once and shared by every fit.
#[derive(Debug, Clone)]
pub struct Problem {
    /// `XᵀX`
    pub gram: Mat,
    /// `XᵀY`
    pub cross: Mat,
    /// `‖Y e_k‖²` per response.
    pub y_col_norm_sq: Vec<f64>,
    /// Largest eigenvalue of `XᵀX`.
    pub rho2: f64,
    /// `XᵀX = ρ²I`, so the U-update needs a single Procrustes step.
    pub scaled_identity: bool,
}

impl Problem {
    pub fn new(x: &Mat, y: &Mat) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(SofarError::DimensionMismatch {
                context: "design and response rows",
                expected: format!("{}", x.rows()),
                found: format!("{}", y.rows()),
            });
        }
        if x.is_empty() || y.is_empty() {
            return invalid("empty design or response");
        }
        if !x.is_finite() || !y.is_finite() {
            return invalid("design and response must be finite");
        }
        let y_col_norm_sq = (0..y.cols())
            .map(|k| (0..y.rows()).map(|i| y[(i, k)] * y[(i, k)]).sum())
            .collect();
        Self::from_statistics(x.gram(), x.t_matmul(y), y_col_norm_sq)
    }

    pub fn from_statistics(gram: Mat, cross: Mat, y_col_norm_sq: Vec<f64>) -> Result<Self> {
        let p = gram.rows();
        if gram.cols() != p || cross.rows() != p || cross.cols() != y_col_norm_sq.len() {
            return Err(SofarError::DimensionMismatch {
                context: "sufficient statistics",
                expected: format!("{p}x{p} gram and {p}x{} cross", y_col_norm_sq.len()),
                found: format!("{:?} and {:?}", gram.shape(), cross.shape()),
            });
        }
        let diag = gram.diag();
        let scaled_identity = (0..p).all(|i| (0..p).all(|j| i == j || gram[(i, j)] == 0.0))
            && diag.iter().all(|&v| v == diag[0]);
        let rho2 = if scaled_identity { diag[0] } else { top_eigenvalue_sym(&gram)? };
        Ok(Self {
            gram,
            cross,
            y_col_norm_sq,
            rho2,
            scaled_identity,
        })
    }

    /// Identity design with response `y` (`X = I_n`).
    pub fn identity_design(y: &Mat) -> Result<Self> {
        let y_col_norm_sq = (0..y.cols())
            .map(|k| (0..y.rows()).map(|i| y[(i, k)] * y[(i, k)]).sum())
            .collect();
        Self::from_statistics(Mat::identity(y.rows()), y.clone(), y_col_norm_sq)
    }

    pub fn p(&self) -> usize {
        self.gram.rows()
    }

    pub fn q(&self) -> usize {
        self.cross.cols()
    }

    pub fn y_norm_sq(&self) -> f64 {
        self.y_col_norm_sq.iter().sum()
    }

    /// Sub-problem on the listed predictors and responses.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let gram = self.gram.select_rows(rows).select_columns(rows);
        let cross = self.cross.select_rows(rows).select_columns(cols);
        let y = cols.iter().map(|&k| self.y_col_norm_sq[k]).collect();
        Self::from_statistics(gram, cross, y)
    }

    /// `XᵀX·m`, computed as `(mᵀXᵀX)ᵀ` so the inner loop runs over `p`.
    pub fn gram_times(&self, m: &Mat) -> Mat {
        m.t_matmul(&self.gram).transpose()
    }

    /// `‖Y − XC‖_F²` from the statistics.
    pub fn rss(&self, c: &Mat) -> f64 {
        let gc = self.gram.matmul(c);
        (self.y_norm_sq() - 2.0 * self.cross.dot(c) + c.dot(&gc)).max(0.0)
    }
}

/// Iterate of the algorithm. Penalty weights and singular-value weights are
/// kept here because layer pruning deletes their columns.
#[derive(Debug, Clone)]
pub struct SofarState {
    pub u: Mat,
    pub v: Mat,
    pub d: Vec<f64>,
    pub a: Mat,
    pub b: Mat,
    pub gamma_a: Mat,
    pub gamma_b: Mat,
    pub mu: f64,
    pub penalty_a: Penalty,
    pub penalty_b: Penalty,
    pub weights_d: Vec<f64>,
}

impl SofarState {
    /// `A = UD`, `B = VD`, zero multipliers, `μ = μ₀`.
    pub fn new(u: Mat, v: Mat, d: Vec<f64>, config: &SofarConfig) -> Result<Self> {
        let m = d.len();
        if u.cols() != m || v.cols() != m {
            return Err(SofarError::DimensionMismatch {
                context: "initial factors",
                expected: format!("{m} columns"),
                found: format!("{} and {}", u.cols(), v.cols()),
            });
        }
        let weights_d = match &config.weights_d {
            Some(w) if w.len() != m => {
                return Err(SofarError::DimensionMismatch {
                    context: "singular-value weights",
                    expected: format!("{m}"),
                    found: format!("{}", w.len()),
                })
            }
            Some(w) => w.clone(),
            None => vec![1.0; m],
        };
        for (pen, rows, name) in [
            (&config.penalty_a, u.rows(), "penalty_a weights"),
            (&config.penalty_b, v.rows(), "penalty_b weights"),
        ] {
            if let Some(w) = &pen.weights {
                if w.shape() != (rows, m) {
                    return Err(SofarError::DimensionMismatch {
                        context: name,
                        expected: format!("{:?}", (rows, m)),
                        found: format!("{:?}", w.shape()),
                    });
                }
            }
        }
        let a = u.scale_columns(&d);
        let b = v.scale_columns(&d);
        Ok(Self {
            gamma_a: Mat::zeros(u.rows(), m),
            gamma_b: Mat::zeros(v.rows(), m),
            a,
            b,
            u,
            v,
            d,
            mu: config.mu0,
            penalty_a: config.penalty_a.clone(),
            penalty_b: config.penalty_b.clone(),
            weights_d,
        })
    }

    pub fn from_init(init: &InitState, config: &SofarConfig) -> Result<Self> {
        Self::new(init.u0.clone(), init.v0.clone(), init.d0.clone(), config)
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn ud(&self) -> Mat {
        self.u.scale_columns(&self.d)
    }

    pub fn vd(&self) -> Mat {
        self.v.scale_columns(&self.d)
    }

    /// `(‖UD − A‖_F, ‖VD − B‖_F)`
    pub fn primal_residuals(&self) -> (f64, f64) {
        (self.ud().sub(&self.a).fro_norm(), self.vd().sub(&self.b).fro_norm())
    }

    /// Deletes the listed layers from every block.
    fn retain_layers(&mut self, keep: &[usize]) {
        self.u = self.u.select_columns(keep);
        self.v = self.v.select_columns(keep);
        self.a = self.a.select_columns(keep);
        self.b = self.b.select_columns(keep);
        self.gamma_a = self.gamma_a.select_columns(keep);
        self.gamma_b = self.gamma_b.select_columns(keep);
        self.d = keep.iter().map(|&k| self.d[k]).collect();
        self.weights_d = keep.iter().map(|&k| self.weights_d[k]).collect();
        self.penalty_a.retain_columns(keep);
        self.penalty_b.retain_columns(keep);
    }
}

/// `XᵀX·U` and `XᵀY·V` for the current factors.
#[derive(Debug, Clone)]
struct Products {
    gu: Mat,
    cv: Mat,
}

impl Products {
    fn new(state: &SofarState, problem: &Problem) -> Self {
        Self {
            gu: problem.gram_times(&state.u),
            cv: problem.cross.matmul(&state.v),
        }
    }

    fn retain_columns(&mut self, keep: &[usize]) {
        self.gu = self.gu.select_columns(keep);
        self.cv = self.cv.select_columns(keep);
    }
}

/// `½‖Y − XUDVᵀ‖_F²` evaluated through the cached statistics (needs `VᵀV = I`).
pub fn loss(state: &SofarState, problem: &Problem) -> f64 {
    loss_with(state, problem, &Products::new(state, problem))
}

fn loss_with(state: &SofarState, problem: &Problem, prods: &Products) -> f64 {
    let (xu, cross_v) = (&prods.gu, &prods.cv);
    let mut val = 0.5 * problem.y_norm_sq();
    for (k, &dk) in state.d.iter().enumerate() {
        let mut fit = 0.0;
        let mut quad = 0.0;
        for i in 0..state.u.rows() {
            fit += state.u[(i, k)] * cross_v[(i, k)];
            quad += state.u[(i, k)] * xu[(i, k)];
        }
        val += -dk * fit + 0.5 * dk * dk * quad;
    }
    val
}

/// Augmented Lagrangian at the current iterate.
pub fn augmented_lagrangian(state: &SofarState, problem: &Problem, config: &SofarConfig) -> f64 {
    augmented_lagrangian_with(state, problem, config, &Products::new(state, problem))
}

fn augmented_lagrangian_with(state: &SofarState, problem: &Problem, config: &SofarConfig, prods: &Products) -> f64 {
    let ra = state.ud().sub(&state.a);
    let rb = state.vd().sub(&state.b);
    let nuclear: f64 = state.d.iter().zip(&state.weights_d).map(|(d, w)| d * w).sum();
    loss_with(state, problem, prods)
        + config.lambda_d * nuclear
        + config.lambda_a * state.penalty_a.value_unchecked(&state.a)
        + config.lambda_b * state.penalty_b.value_unchecked(&state.b)
        + state.gamma_a.dot(&ra)
        + state.gamma_b.dot(&rb)
        + 0.5 * state.mu * (ra.fro_norm_sq() + rb.fro_norm_sq())
}

/// Terms of the augmented Lagrangian that depend on U (up to a constant):
/// `½tr(DUᵀXᵀXUD) − tr(Uᵀ(XᵀYV − Γ_a + μA)D)`.
pub fn u_subproblem_objective(state: &SofarState, problem: &Problem, u: &Mat) -> f64 {
    let ud = u.scale_columns(&state.d);
    let quad = 0.5 * ud.dot(&problem.gram_times(&ud));
    let lin = u_linear_term(state, &problem.cross.matmul(&state.v));
    quad - u.dot(&lin)
}

/// `(XᵀYV − Γ_a + μA)D` from `cv = XᵀYV`.
fn u_linear_term(state: &SofarState, cv: &Mat) -> Mat {
    let mut m = cv.clone();
    m.axpy(-1.0, &state.gamma_a);
    m.axpy(state.mu, &state.a);
    m.scale_columns(&state.d)
}

/// Outcome of the iterated weighted Procrustes U-update.
#[derive(Debug, Clone)]
pub struct UUpdate {
    pub u: Mat,
    pub iterations: usize,
    pub rank_deficient: bool,
    /// Inner iterates whose subproblem objective rose beyond rounding.
    pub objective_increases: usize,
}

/// U-block: majorize `½tr(DUᵀXᵀXUD)` by `ρ²`, then iterate
/// `U ← polar((XᵀYV + μA − Γ_a + (ρ²I − XᵀX)UD)D)`.
pub fn update_u(state: &SofarState, problem: &Problem, config: &SofarConfig) -> Result<UUpdate> {
    let prods = Products::new(state, problem);
    Ok(update_u_with(state, problem, config, &prods)?.0)
}

/// [`update_u`] from cached products; also returns `XᵀX·U` for the result.
fn update_u_with(state: &SofarState, problem: &Problem, config: &SofarConfig, prods: &Products) -> Result<(UUpdate, Mat)> {
    let mut out = UUpdate {
        u: state.u.clone(),
        iterations: 0,
        rank_deficient: false,
        objective_increases: 0,
    };
    if state.rank() == 0 || state.d.iter().all(|&d| d == 0.0) {
        return Ok((out, prods.gu.clone()));
    }
    let lin = u_linear_term(state, &prods.cv);
    let d2: Vec<f64> = state.d.iter().map(|d| d * d).collect();
    // objective from G·U: ½Σ d_k²(UᵀGU)_kk − ⟨U, lin⟩
    let objective = |u: &Mat, gu: &Mat| 0.5 * u.dot(&gu.scale_columns(&d2)) - u.dot(&lin);
    if problem.scaled_identity {
        let polar = polar_orthogonal_factor(&lin)?;
        out.iterations = 1;
        out.rank_deficient = polar.rank_deficient;
        out.u = polar.q;
        let gu = problem.gram_times(&out.u);
        return Ok((out, gu));
    }
    let mut gu = prods.gu.clone();
    let mut obj = objective(&out.u, &gu);
    // majorizer step C₁(W) = lin + (ρ²W − G W)D² from W and G W
    let surrogate = |w: &Mat, gw: &Mat| {
        let mut c1 = lin.clone();
        c1.axpy(problem.rho2, &w.scale_columns(&d2));
        c1.axpy(-1.0, &gw.scale_columns(&d2));
        c1
    };
    let mut previous: Option<(Mat, Mat)> = None;
    let mut momentum = 1.0_f64;
    while out.iterations < config.procrustes_max_iter {
        let mut accepted = None;
        if let (true, Some((pu, pgu))) = (config.procrustes_acceleration, &previous) {
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            momentum = next_momentum;
            if beta > 0.0 {
                let mut w = out.u.scale(1.0 + beta);
                w.axpy(-beta, pu);
                let mut gw = gu.scale(1.0 + beta);
                gw.axpy(-beta, pgu);
                let polar = polar_orthogonal_factor(&surrogate(&w, &gw))?;
                let g_new = problem.gram_times(&polar.q);
                let val = objective(&polar.q, &g_new);
                if val <= obj {
                    accepted = Some((polar, g_new, val));
                } else {
                    momentum = 1.0;
                }
            }
        }
        let (polar, g_new, next) = match accepted {
            Some(step) => step,
            None => {
                let polar = polar_orthogonal_factor(&surrogate(&out.u, &gu))?;
                let g_new = problem.gram_times(&polar.q);
                let val = objective(&polar.q, &g_new);
                (polar, g_new, val)
            }
        };
        out.iterations += 1;
        out.rank_deficient |= polar.rank_deficient;
        let step = polar.q.sub(&out.u).fro_norm();
        if next > obj + MONOTONE_SLACK * (1.0 + obj.abs()) {
            out.objective_increases += 1;
        }
        previous = Some((std::mem::replace(&mut out.u, polar.q), std::mem::replace(&mut gu, g_new)));
        obj = next;
        if step <= config.procrustes_tol {
            break;
        }
    }
    Ok((out, gu))
}

/// V-block: `V = polar((YᵀXU + μB − Γ_b)D)`.
pub fn update_v(state: &SofarState, problem: &Problem) -> Result<(Mat, bool)> {
    if state.rank() == 0 || state.d.iter().all(|&d| d == 0.0) {
        return Ok((state.v.clone(), false));
    }
    let mut c2 = problem.cross.t_matmul(&state.u);
    c2.axpy(-1.0, &state.gamma_b);
    c2.axpy(state.mu, &state.b);
    let polar = polar_orthogonal_factor(&c2.scale_columns(&state.d))?;
    Ok((polar.q, polar.rank_deficient))
}

/// D-block closed form `d_k = max(0, (h_k − λ_d w_k)/(G_kk + 2μ))` with
/// `G = UᵀXᵀXU` and
/// `h_k = (UᵀXᵀYV)_kk + μ(Uᵀ(A − Γ_a/μ))_kk + μ(Vᵀ(B − Γ_b/μ))_kk`.
pub fn update_d(state: &SofarState, problem: &Problem, lambda_d: f64) -> Result<Vec<f64>> {
    update_d_with(state, lambda_d, &Products::new(state, problem))
}

fn update_d_with(state: &SofarState, lambda_d: f64, prods: &Products) -> Result<Vec<f64>> {
    let mu = state.mu;
    if !(mu > 0.0 && mu.is_finite()) {
        return invalid(format!("mu must be positive, got {mu}"));
    }
    let (gu, cv) = (&prods.gu, &prods.cv);
    let p = state.u.rows();
    let q = state.v.rows();
    Ok((0..state.rank())
        .map(|k| {
            let mut gkk = 0.0;
            let mut h = 0.0;
            for i in 0..p {
                let uik = state.u[(i, k)];
                gkk += uik * gu[(i, k)];
                h += uik * (cv[(i, k)] + mu * state.a[(i, k)] - state.gamma_a[(i, k)]);
            }
            for j in 0..q {
                h += state.v[(j, k)] * (mu * state.b[(j, k)] - state.gamma_b[(j, k)]);
            }
            ((h - lambda_d * state.weights_d[k]) / (gkk + 2.0 * mu)).max(0.0)
        })
        .collect())
}

/// A-block: `prox(ρ_a, UD + Γ_a/μ, λ_a/μ)`.
pub fn update_a(state: &SofarState, lambda_a: f64) -> Mat {
    let mut m = state.ud();
    m.axpy(1.0 / state.mu, &state.gamma_a);
    state.penalty_a.prox_unchecked(&m, lambda_a / state.mu)
}

/// B-block: `prox(ρ_b, VD + Γ_b/μ, λ_b/μ)`.
pub fn update_b(state: &SofarState, lambda_b: f64) -> Mat {
    let mut m = state.vd();
    m.axpy(1.0 / state.mu, &state.gamma_b);
    state.penalty_b.prox_unchecked(&m, lambda_b / state.mu)
}

/// `Γ_a += μ(UD − A)`, `Γ_b += μ(VD − B)`, then `μ ← min(γμ, μ_max)`.
pub fn update_duals(state: &mut SofarState, config: &SofarConfig) {
    let ra = state.ud().sub(&state.a);
    let rb = state.vd().sub(&state.b);
    state.gamma_a.axpy(state.mu, &ra);
    state.gamma_b.axpy(state.mu, &rb);
    state.mu = (state.mu * config.gamma).min(config.mu_max);
}

/// Bookkeeping collected while fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTelemetry {
    pub sweeps: usize,
    /// Sweeps whose augmented Lagrangian rose within a fixed (μ, Γ) epoch.
    pub sweep_increases: usize,
    /// Individual block updates that raised the augmented Lagrangian. At
    /// large μ the U and V terms cancel at magnitudes near `μ‖D‖²`, so rises
    /// of a few ulps of that size can show up here.
    pub block_increases: usize,
    /// U-subproblem increases across weighted-Procrustes iterates.
    pub procrustes_increases: usize,
    pub procrustes_iterations: usize,
    pub procrustes_max_iterations: usize,
    pub rank_deficient_polar: usize,
    pub pruned_layers: usize,
    /// Largest `‖UᵀU − I‖_∞`, `‖VᵀV − I‖_∞` seen after any sweep.
    pub max_orthogonality_defect: f64,
}

impl FitTelemetry {
    /// No sweep raised the augmented Lagrangian within its epoch.
    pub fn monotone(&self) -> bool {
        self.sweep_increases == 0
    }

    /// Accumulates another fit's counters (maxima for the extreme values).
    pub fn absorb(&mut self, other: &FitTelemetry) {
        self.sweeps += other.sweeps;
        self.sweep_increases += other.sweep_increases;
        self.block_increases += other.block_increases;
        self.procrustes_increases += other.procrustes_increases;
        self.procrustes_iterations += other.procrustes_iterations;
        self.procrustes_max_iterations = self.procrustes_max_iterations.max(other.procrustes_max_iterations);
        self.rank_deficient_polar += other.rank_deficient_polar;
        self.pruned_layers += other.pruned_layers;
        self.max_orthogonality_defect = self.max_orthogonality_defect.max(other.max_orthogonality_defect);
    }
}

/// Final estimate with layers sorted by decreasing `d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SofarFit {
    pub u: Mat,
    pub d: Vec<f64>,
    pub v: Mat,
    /// `u·diag(d)`
    pub a: Mat,
    /// `v·diag(d)`
    pub b: Mat,
    /// `u·diag(d)·vᵀ`
    pub c: Mat,
    /// Augmented Lagrangian after every sweep.
    pub objective_trace: Vec<f64>,
    pub primal_residuals: (f64, f64),
    pub outer_iterations: usize,
    pub converged: bool,
    pub telemetry: FitTelemetry,
}

impl SofarFit {
    pub fn zero(p: usize, q: usize) -> Self {
        Self {
            u: Mat::zeros(p, 0),
            d: Vec::new(),
            v: Mat::zeros(q, 0),
            a: Mat::zeros(p, 0),
            b: Mat::zeros(q, 0),
            c: Mat::zeros(p, q),
            objective_trace: Vec::new(),
            primal_residuals: (0.0, 0.0),
            outer_iterations: 0,
            converged: true,
            telemetry: FitTelemetry::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn is_zero(&self) -> bool {
        self.d.is_empty()
    }

    /// Rebuilds `a`, `b`, `c` from `(u, d, v)` after sorting layers by `d`
    /// and flipping signs so each `v` column's largest-magnitude entry is
    /// positive. Idempotent.
    pub fn normalize(&mut self) {
        let m = self.d.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| self.d[j].total_cmp(&self.d[i]));
        self.u = self.u.select_columns(&order);
        self.v = self.v.select_columns(&order);
        self.d = order.iter().map(|&k| self.d[k]).collect();
        for k in 0..m {
            let col = self.v.column(k);
            let lead = col
                .iter()
                .copied()
                .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if lead < 0.0 {
                let neg: Vec<f64> = col.iter().map(|x| -x).collect();
                self.v.set_column(k, &neg);
                let neg: Vec<f64> = self.u.column(k).iter().map(|x| -x).collect();
                self.u.set_column(k, &neg);
            }
        }
        self.a = self.u.scale_columns(&self.d);
        self.b = self.v.scale_columns(&self.d);
        self.c = self.a.matmul_t(&self.v);
    }

    /// Embeds a fit on a screened sub-problem into the full dimensions.
    pub fn embed(mut self, rows: &[usize], cols: &[usize], p: usize, q: usize) -> Self {
        self.u = self.u.embed_rows(rows, p);
        self.v = self.v.embed_rows(cols, q);
        self.a = self.a.embed_rows(rows, p);
        self.b = self.b.embed_rows(cols, q);
        self.c = self.a.matmul_t(&self.v);
        self
    }
}

/// Fits SOFAR from an initializer on raw data.
pub fn fit(x: &Mat, y: &Mat, m: usize, config: &SofarConfig, init: &InitState) -> Result<SofarFit> {
    let problem = Problem::new(x, y)?;
    fit_problem(&problem, m, config, init)
}

/// Fits SOFAR on precomputed statistics. Honors the initializer's zero flag
/// and screening sets.
pub fn fit_problem(problem: &Problem, m: usize, config: &SofarConfig, init: &InitState) -> Result<SofarFit> {
    config.validate()?;
    let (p, q) = (problem.p(), problem.q());
    if m == 0 || m > p.min(q) {
        return invalid(format!("rank {m} outside 1..={}", p.min(q)));
    }
    if init.c_tilde.shape() != (p, q) || init.rank() != m {
        return Err(SofarError::DimensionMismatch {
            context: "initializer",
            expected: format!("{p}x{q} with rank {m}"),
            found: format!("{:?} with rank {}", init.c_tilde.shape(), init.rank()),
        });
    }
    if init.zero_fit {
        return Ok(SofarFit::zero(p, q));
    }
    if !init.is_screened() {
        let state = SofarState::from_init(init, config)?;
        return fit_from_state(problem, config, state);
    }
    let (rows, cols) = (&init.kept_rows, &init.kept_cols);
    let sub = problem.restrict(rows, cols)?;
    let u = polar_orthogonal_factor(&init.u0.select_rows(rows))?.q;
    let v = polar_orthogonal_factor(&init.v0.select_rows(cols))?.q;
    let mut sub_config = config.clone();
    sub_config.penalty_a.retain_rows(rows);
    sub_config.penalty_b.retain_rows(cols);
    let state = SofarState::new(u, v, init.d0.clone(), &sub_config)?;
    Ok(fit_from_state(&sub, &sub_config, state)?.embed(rows, cols, p, q))
}

struct Monitor {
    sweep_base: f64,
    block_base: f64,
}

impl Monitor {
    fn exceeds(prev: f64, next: f64) -> bool {
        next > prev + MONOTONE_SLACK * (1.0 + prev.abs())
    }
}

fn diverged(outer: usize, trace: &[f64]) -> SofarError {
    SofarError::Diverged {
        outer_iterations: outer,
        last_objective: trace.last().copied().unwrap_or(f64::NAN),
        objective_trace: trace.to_vec(),
    }
}

/// Runs the ALM-BCD loop from an explicit state.
pub fn fit_from_state(problem: &Problem, config: &SofarConfig, mut state: SofarState) -> Result<SofarFit> {
    config.validate()?;
    let (p, q) = (problem.p(), problem.q());
    if state.u.rows() != p || state.v.rows() != q {
        return Err(SofarError::DimensionMismatch {
            context: "state factors",
            expected: format!("{p} and {q} rows"),
            found: format!("{} and {}", state.u.rows(), state.v.rows()),
        });
    }
    let mut tel = FitTelemetry::default();
    let mut trace = Vec::new();
    let al = |s: &SofarState, prods: &Products| augmented_lagrangian_with(s, problem, config, prods);
    let mut prods = Products::new(&state, problem);
    let mut epoch_end = al(&state, &prods);
    if !epoch_end.is_finite() {
        return Err(diverged(0, &[epoch_end]));
    }
    let mut converged = false;
    let mut outer = 0;

    'outer: while outer < config.max_outer {
        outer += 1;
        let mut mon = Monitor {
            sweep_base: al(&state, &prods),
            block_base: 0.0,
        };
        for _ in 0..config.inner_sweeps {
            mon.block_base = mon.sweep_base;
            let check = |s: &SofarState, prods: &Products, tel: &mut FitTelemetry, mon: &mut Monitor| {
                let val = al(s, prods);
                if Monitor::exceeds(mon.block_base, val) {
                    tel.block_increases += 1;
                }
                mon.block_base = val;
            };

            let (uu, gu) = update_u_with(&state, problem, config, &prods)?;
            tel.procrustes_iterations += uu.iterations;
            tel.procrustes_max_iterations = tel.procrustes_max_iterations.max(uu.iterations);
            tel.procrustes_increases += uu.objective_increases;
            tel.rank_deficient_polar += usize::from(uu.rank_deficient);
            state.u = uu.u;
            prods.gu = gu;
            check(&state, &prods, &mut tel, &mut mon);

            let (v, deficient) = update_v(&state, problem)?;
            tel.rank_deficient_polar += usize::from(deficient);
            state.v = v;
            prods.cv = problem.cross.matmul(&state.v);
            check(&state, &prods, &mut tel, &mut mon);

            state.d = update_d_with(&state, config.lambda_d, &prods)?;
            check(&state, &prods, &mut tel, &mut mon);
            let keep: Vec<usize> = (0..state.rank()).filter(|&k| state.d[k] > 0.0).collect();
            if keep.is_empty() {
                tel.pruned_layers += state.rank();
                let mut fit = SofarFit::zero(p, q);
                fit.objective_trace = trace;
                fit.outer_iterations = outer;
                fit.telemetry = tel;
                return Ok(fit);
            }
            let pruned = keep.len() < state.rank();
            if pruned {
                tel.pruned_layers += state.rank() - keep.len();
                state.retain_layers(&keep);
                prods.retain_columns(&keep);
                // the objective itself changes with the deleted layers
                mon.block_base = al(&state, &prods);
            }

            state.a = update_a(&state, config.lambda_a);
            check(&state, &prods, &mut tel, &mut mon);
            state.b = update_b(&state, config.lambda_b);
            check(&state, &prods, &mut tel, &mut mon);

            tel.sweeps += 1;
            let val = mon.block_base;
            if !val.is_finite() {
                trace.push(val);
                return Err(diverged(outer, &trace));
            }
            trace.push(val);
            tel.max_orthogonality_defect = tel
                .max_orthogonality_defect
                .max(state.u.orthonormality_defect())
                .max(state.v.orthonormality_defect());
            let prev = mon.sweep_base;
            if !pruned && Monitor::exceeds(prev, val) {
                tel.sweep_increases += 1;
            }
            mon.sweep_base = val;
            if (prev - val).abs() <= config.inner_tol * (1.0 + val.abs()) {
                break;
            }
        }

        let (ra, rb) = state.primal_residuals();
        let scale = 1.0 + state.a.fro_norm() + state.b.fro_norm();
        let current = mon.sweep_base;
        let rel_change = (current - epoch_end).abs() / (1.0 + epoch_end.abs());
        if ra.max(rb) <= config.outer_tol_primal * scale && rel_change <= config.outer_tol_obj {
            converged = true;
            break 'outer;
        }
        update_duals(&mut state, config);
        epoch_end = al(&state, &prods);
        if !epoch_end.is_finite() {
            return Err(diverged(outer, &trace));
        }
    }

    let primal_residuals = state.primal_residuals();
    let mut fit = SofarFit {
        a: Mat::zeros(0, 0),
        b: Mat::zeros(0, 0),
        c: Mat::zeros(0, 0),
        u: state.u,
        d: state.d,
        v: state.v,
        objective_trace: trace,
        primal_residuals,
        outer_iterations: outer,
        converged,
        telemetry: tel,
    };
    fit.normalize();
    Ok(fit)
}
