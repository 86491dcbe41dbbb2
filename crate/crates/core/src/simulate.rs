//! Monte Carlo harness: simulated replicates, every estimator of the
//! comparison, per-replicate metrics and their mean/sd summaries.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apps::{adaptive_lasso_from, ols_fit, rrr_from_ols};
use crate::error::{invalid, Result, SofarError};
use crate::lasso_init::{initialize_with, InitOptions, InitState};
use crate::linalg::Mat;
use crate::metrics::{evaluate, evaluate_coefficients, MetricsRecord};
use crate::penalty::{Penalty, PenaltyKind};
use crate::simgen::{gen_replicate, gen_validation, ModelSpec, SimData};
use crate::solver::{AdaptiveScheme, FitTelemetry, Problem, SofarConfig};
use crate::tuning::{prediction_error, search, Criterion, CriterionData, SearchOptions, TuningResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Adaptive entrywise ℓ₁ on `A` and `B`.
    SofarL,
    /// Adaptive rowwise group penalties on `A` and `B`.
    SofarGl,
    /// Separate adaptive Lasso regressions.
    Lasso,
    /// Reduced-rank regression with tuned rank.
    Rrr,
    Ols,
    /// Rowwise-sparse reduced-rank regression: only `A` is penalized, at
    /// the rank selected for RRR.
    Srrr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SofarL,
        Method::SofarGl,
        Method::Lasso,
        Method::Rrr,
        Method::Ols,
        Method::Srrr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SofarL => "sofar-l",
            Method::SofarGl => "sofar-gl",
            Method::Lasso => "lasso",
            Method::Rrr => "rrr",
            Method::Ols => "ols",
            Method::Srrr => "srrr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SofarError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SofarError::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Everything that determines a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub model: ModelSpec,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Working rank `m` of the SOFAR-type fits and the largest RRR rank tried.
    pub rank: usize,
    /// Rows of the independent validation set; with `Criterion::Validation`
    /// it drives the tuning of every method.
    pub validation_rows: usize,
    pub search: SearchOptions,
    pub init_folds: usize,
    pub init_grid: usize,
    pub adaptive: AdaptiveScheme,
    /// Solver settings shared by all SOFAR-type fits (λ's are overwritten).
    pub solver: SofarConfig,
}

impl SimulationOptions {
    /// Validation-set tuning with the search settings used for the tables.
    pub fn new(model: ModelSpec, replicates: usize, seed: u64, methods: Vec<Method>) -> Self {
        Self {
            model,
            replicates,
            seed,
            methods,
            rank: 5,
            validation_rows: 2000,
            search: SearchOptions {
                grid_size: 30,
                epsilon: 1e-6,
                criterion: Criterion::Validation,
                ratios: [1.0; 3],
                seed,
                patience: Some(4),
            },
            init_folds: crate::lasso_init::DEFAULT_CV_FOLDS,
            init_grid: crate::lasso_init::DEFAULT_CV_GRID,
            adaptive: AdaptiveScheme::default(),
            solver: SofarConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replicates == 0 {
            return invalid("at least one replicate is required");
        }
        if self.methods.is_empty() {
            return invalid("at least one method is required");
        }
        if self.rank == 0 || self.rank > self.model.p.min(self.model.q) {
            return invalid(format!("rank {} outside 1..={}", self.rank, self.model.p.min(self.model.q)));
        }
        if self.search.criterion == Criterion::Validation && self.validation_rows == 0 {
            return invalid("validation tuning needs validation rows");
        }
        self.solver.validate()
    }
}

/// One method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub metrics: MetricsRecord,
    /// `‖Ĉ − C*‖_F`
    pub error_fro: f64,
    /// Selected `(λ_d, λ_a, λ_b)` for penalized SOFAR-type fits.
    pub lambdas: Option<[f64; 3]>,
    /// Rank chosen for RRR and SRRR.
    pub selected_rank: Option<usize>,
    /// Fits executed for this method, including every grid point and fold.
    pub fits: usize,
    pub telemetry: FitTelemetry,
    /// Largest orthonormality defect of the returned factors over all fits.
    pub final_orthogonality_defect: f64,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub lambda0: f64,
    /// `‖C̃ − C*‖_F` of the Lasso initializer.
    pub init_error_fro: f64,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

/// Table row for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mse_est: MeanSd,
    pub mse_pred: MeanSd,
    pub fpr_pct: MeanSd,
    pub fnr_pct: MeanSd,
    /// Percentage of replicates with the correct rank.
    pub rank_pct: f64,
    pub rank_hat: MeanSd,
    pub orth: MeanSd,
    pub error_fro: MeanSd,
    pub total_sweep_increases: usize,
    pub total_block_increases: usize,
    pub max_orthogonality_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub options: SimulationOptions,
    pub replicates: Vec<ReplicateRecord>,
    pub summary: Vec<MethodSummary>,
}

impl SimulationReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn outcomes(&self, method: Method) -> impl Iterator<Item = &MethodOutcome> + '_ {
        self.replicates
            .iter()
            .flat_map(move |r| r.outcomes.iter().filter(move |o| o.method == method))
    }
}

/// Runs every replicate (in parallel on the current rayon pool) and
/// summarizes. Output does not depend on the number of threads.
pub fn run_simulation(opts: &SimulationOptions) -> Result<SimulationReport> {
    opts.validate()?;
    let replicates: Vec<ReplicateRecord> = (0..opts.replicates)
        .into_par_iter()
        .map(|k| run_replicate(opts, k))
        .collect::<Result<_>>()?;
    let summary = opts.methods.iter().map(|&m| summarize(m, &replicates)).collect();
    Ok(SimulationReport {
        options: opts.clone(),
        replicates,
        summary,
    })
}

fn summarize(method: Method, reps: &[ReplicateRecord]) -> MethodSummary {
    let outs: Vec<&MethodOutcome> = reps
        .iter()
        .flat_map(|r| r.outcomes.iter().filter(|o| o.method == method))
        .collect();
    let col = |f: &dyn Fn(&MethodOutcome) -> f64| MeanSd::of(&outs.iter().map(|o| f(o)).collect::<Vec<_>>());
    let correct = outs.iter().filter(|o| o.metrics.rank_correct).count();
    MethodSummary {
        method,
        mse_est: col(&|o| o.metrics.mse_est),
        mse_pred: col(&|o| o.metrics.mse_pred),
        fpr_pct: col(&|o| o.metrics.fpr_pct),
        fnr_pct: col(&|o| o.metrics.fnr_pct),
        rank_pct: if outs.is_empty() { f64::NAN } else { 100.0 * correct as f64 / outs.len() as f64 },
        rank_hat: col(&|o| o.metrics.rank_hat as f64),
        orth: col(&|o| o.metrics.orth),
        error_fro: col(&|o| o.error_fro),
        total_sweep_increases: outs.iter().map(|o| o.telemetry.sweep_increases).sum(),
        total_block_increases: outs.iter().map(|o| o.telemetry.block_increases).sum(),
        max_orthogonality_defect: outs
            .iter()
            .map(|o| o.telemetry.max_orthogonality_defect.max(o.final_orthogonality_defect))
            .fold(0.0, f64::max),
    }
}

struct Replicate<'a> {
    opts: &'a SimulationOptions,
    data: SimData,
    validation: Option<(Mat, Mat)>,
    init: InitState,
}

impl Replicate<'_> {
    fn criterion_data(&self) -> CriterionData<'_> {
        match (&self.validation, self.opts.search.criterion) {
            (Some((x, y)), Criterion::Validation) => CriterionData::Validation { x, y },
            _ => CriterionData::None,
        }
    }
}

/// Runs every requested method on replicate `k`.
pub fn run_replicate(opts: &SimulationOptions, k: usize) -> Result<ReplicateRecord> {
    let data = gen_replicate(&opts.model, opts.seed, k as u64)?;
    let validation = if opts.validation_rows > 0 {
        Some(gen_validation(&opts.model, &data.truth, opts.validation_rows, opts.seed, k as u64)?)
    } else {
        None
    };
    let init_opts = InitOptions {
        k_folds: opts.init_folds,
        grid_size: opts.init_grid,
        seed: opts.seed.wrapping_add(k as u64),
        screening: false,
    };
    let init = initialize_with(&data.x, &data.y, opts.rank, &init_opts)?;
    let rep = Replicate {
        opts,
        data,
        validation,
        init,
    };
    let outcomes = opts
        .methods
        .iter()
        .map(|&m| run_method(&rep, m, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateRecord {
        replicate: k,
        lambda0: rep.init.lambda0,
        init_error_fro: rep.init.c_tilde.sub(&rep.data.truth.c_star).fro_norm(),
        outcomes,
    })
}

fn run_method(rep: &Replicate<'_>, method: Method, k: usize) -> Result<MethodOutcome> {
    let opts = rep.opts;
    let (x, y, truth) = (&rep.data.x, &rep.data.y, &rep.data.truth);
    let plain = |c: Mat, selected_rank: Option<usize>| -> Result<MethodOutcome> {
        Ok(MethodOutcome {
            method,
            metrics: evaluate_coefficients(&c, truth, x)?,
            error_fro: c.sub(&truth.c_star).fro_norm(),
            lambdas: None,
            selected_rank,
            fits: 0,
            telemetry: FitTelemetry::default(),
            final_orthogonality_defect: 0.0,
            all_converged: true,
        })
    };
    match method {
        Method::Ols => plain(ols_fit(x, y)?, None),
        Method::Lasso => {
            let fit = adaptive_lasso_from(
                x,
                y,
                &rep.init.c_tilde,
                rep.init.lambda0,
                opts.init_folds,
                opts.init_grid,
                opts.seed.wrapping_add(k as u64),
            )?;
            plain(fit.coefficients, None)
        }
        Method::Rrr => {
            let (c, rank) = tuned_rrr(rep)?;
            plain(c, Some(rank))
        }
        Method::SofarL | Method::SofarGl => {
            let (config, ratios) = sofar_config(method, &opts.solver, &rep.init, opts.adaptive)?;
            let search_opts = SearchOptions { ratios, ..opts.search };
            let tuned = search(x, y, opts.rank, &config, &rep.init, &search_opts, rep.criterion_data())?;
            sofar_outcome(method, &tuned, rep, None)
        }
        Method::Srrr => {
            // rank from the tuned RRR fit, then λ_a along its own ray
            let (_, rank) = tuned_rrr(rep)?;
            let init = InitState::from_coefficients(rep.init.c_tilde.clone(), rank, rep.init.lambda0, false)?;
            let (config, ratios) = sofar_config(method, &opts.solver, &init, opts.adaptive)?;
            let search_opts = SearchOptions { ratios, ..opts.search };
            let tuned = search(x, y, rank, &config, &init, &search_opts, rep.criterion_data())?;
            sofar_outcome(method, &tuned, rep, Some(rank))
        }
    }
}

/// Base configuration and ray direction of the SOFAR-type methods.
pub fn sofar_config(
    method: Method,
    solver: &SofarConfig,
    init: &InitState,
    scheme: AdaptiveScheme,
) -> Result<(SofarConfig, [f64; 3])> {
    let (kind, ratios) = match method {
        Method::SofarL => (PenaltyKind::EntrywiseL1, [1.0; 3]),
        Method::SofarGl | Method::Srrr => (PenaltyKind::RowwiseGroup, [1.0; 3]),
        other => return invalid(format!("{other} is not a SOFAR-type method")),
    };
    let unweighted = || match kind {
        PenaltyKind::EntrywiseL1 => Penalty::l1(),
        PenaltyKind::RowwiseGroup => Penalty::group(),
    };
    let config = solver
        .clone()
        .with_penalties(unweighted(), unweighted())
        .adaptive(init, scheme)?;
    let ratios = if method == Method::Srrr { [0.0, 1.0, 0.0] } else { ratios };
    Ok((config, ratios))
}

fn sofar_outcome(
    method: Method,
    tuned: &TuningResult,
    rep: &Replicate<'_>,
    selected_rank: Option<usize>,
) -> Result<MethodOutcome> {
    let fit = &tuned.best_fit;
    let truth = &rep.data.truth;
    let mut telemetry = FitTelemetry::default();
    let mut defect: f64 = 0.0;
    let mut all_converged = true;
    for p in &tuned.points {
        telemetry.absorb(&p.telemetry);
        defect = defect.max(p.final_orthogonality_defect);
        all_converged &= p.converged && p.failure.is_none();
    }
    Ok(MethodOutcome {
        method,
        metrics: evaluate(fit, truth, &rep.data.x)?,
        error_fro: fit.c.sub(&truth.c_star).fro_norm(),
        lambdas: Some(tuned.best().lambdas),
        selected_rank,
        fits: tuned.points.len(),
        telemetry,
        final_orthogonality_defect: defect,
        all_converged,
    })
}

/// RRR with rank chosen in `1..=m` by validation error when a validation
/// set is available and by GIC with `r(p + q − r)` degrees of freedom
/// otherwise. Ties go to the smaller rank.
fn tuned_rrr(rep: &Replicate<'_>) -> Result<(Mat, usize)> {
    let (x, y) = (&rep.data.x, &rep.data.y);
    let c_ols = ols_fit(x, y)?;
    let (n, p, q) = (x.rows(), x.cols(), y.cols());
    let problem = Problem::new(x, y)?;
    let mut best: Option<(f64, Mat, usize)> = None;
    for r in 1..=rep.opts.rank {
        let c = rrr_from_ols(x, &c_ols, r)?;
        let score = match rep.criterion_data() {
            CriterionData::Validation { x: xv, y: yv } => prediction_error(xv, yv, &c),
            _ => {
                let rss = problem.rss(&c).max(f64::MIN_POSITIVE);
                let df = (r * (p + q - r)) as f64;
                (rss / (n * q) as f64).ln() + (n as f64).ln().ln() * ((p * q) as f64).ln() * df / (n * q) as f64
            }
        };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, c, r));
        }
    }
    let (_, c, r) = best.expect("rank range is nonempty");
    Ok((c, r))
}
