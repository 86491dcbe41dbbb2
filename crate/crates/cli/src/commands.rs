use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sofar::apps::{self, AppResult};
use sofar::lasso_init::{initialize_with, InitOptions, InitState};
use sofar::simgen::ModelSpec;
use sofar::simulate::{run_simulation, Method, SimulationOptions};
use sofar::solver::{self, AdaptiveScheme, FitTelemetry, SofarConfig, SofarFit};
use sofar::theory::{perturbation_check, rate_diagnostic, robust_spark_bruteforce};
use sofar::tuning::{search, CriterionData, GridPoint, NullBounds, SearchOptions};
use sofar::Mat;

use crate::args::{
    AppArgs, Command, CriterionChoice, DiagCommand, FactorStorage, FitArgs, OutputArgs, PcaArgs, PcaVariant,
    PerturbArgs, RateArgs, RegressionInputs, SimulateArgs, SparkArgs, TuneArgs, VarArgs,
};
use crate::io::{emit_json, read_matrix_csv, write_matrix_csv};

/// Top-level JSON document of every subcommand.
#[derive(Debug, Serialize)]
struct Envelope<R: Serialize> {
    command: &'static str,
    version: &'static str,
    config: Value,
    result: R,
}

fn emit<R: Serialize>(command: &'static str, config: Value, result: R, out: Option<&Path>) -> Result<()> {
    let doc = Envelope {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        result,
    };
    emit_json(&doc, out)
}

/// A matrix either inline or as a CSV file name relative to the JSON output.
#[derive(Debug, Serialize)]
#[serde(untagged)]
enum MatrixRef {
    Inline(Vec<Vec<f64>>),
    Path(String),
}

#[derive(Debug, Serialize)]
struct FitReport {
    rank: usize,
    d: Vec<f64>,
    converged: bool,
    outer_iterations: usize,
    primal_residuals: (f64, f64),
    final_objective: Option<f64>,
    orthogonality_defect: f64,
    telemetry: FitTelemetry,
    /// `u`, `v`, `c` and any application outputs.
    matrices: BTreeMap<String, MatrixRef>,
}

fn fit_report(fit: &SofarFit, derived: &BTreeMap<String, Mat>, output: &OutputArgs) -> Result<FitReport> {
    let mut named: Vec<(&str, &Mat)> = vec![("u", &fit.u), ("v", &fit.v), ("c", &fit.c)];
    named.extend(derived.iter().map(|(k, m)| (k.as_str(), m)));
    let mut matrices = BTreeMap::new();
    for (name, m) in named {
        let entry = match output.factors {
            FactorStorage::Inline => MatrixRef::Inline(m.to_rows()),
            FactorStorage::Csv => {
                let out = output.out.as_deref().context("--factors csv requires --out")?;
                let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("fit");
                let file = format!("{stem}.{name}.csv");
                write_matrix_csv(&out.with_file_name(&file), m)?;
                MatrixRef::Path(file)
            }
        };
        matrices.insert(name.to_string(), entry);
    }
    Ok(FitReport {
        rank: fit.rank(),
        d: fit.d.clone(),
        converged: fit.converged,
        outer_iterations: fit.outer_iterations,
        primal_residuals: fit.primal_residuals,
        final_objective: fit.objective_trace.last().copied(),
        orthogonality_defect: fit.u.orthonormality_defect().max(fit.v.orthonormality_defect()),
        telemetry: fit.telemetry.clone(),
        matrices,
    })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Tune(a) => tune(a),
        Command::Simulate(a) => simulate(a),
        Command::Pca(a) => pca(a),
        Command::Bicluster(a) => app("bicluster", a, apps::bicluster),
        Command::Factor(a) => app("factor", a, apps::sparse_factor_analysis),
        Command::Var(a) => var(a),
        Command::Diag(DiagCommand::Spark(a)) => spark(a),
        Command::Diag(DiagCommand::Perturb(a)) => perturb(a),
        Command::Diag(DiagCommand::Rate(a)) => rate(a),
    }
}

struct Regression {
    x: Mat,
    y: Mat,
    init: InitState,
    config: SofarConfig,
}

fn regression(inputs: &RegressionInputs, solver_config: SofarConfig, header: bool) -> Result<Regression> {
    let x = read_matrix_csv(&inputs.x, header)?;
    let y = read_matrix_csv(&inputs.y, header)?;
    let opts = InitOptions {
        k_folds: inputs.init_folds,
        seed: inputs.seed,
        ..InitOptions::default()
    };
    let init = initialize_with(&x, &y, inputs.rank, &opts)?;
    let config = solver_config.with_penalties(inputs.penalty_a.penalty(), inputs.penalty_b.penalty());
    let config = if inputs.adaptive {
        config.adaptive(&init, AdaptiveScheme::default())?
    } else {
        config
    };
    Ok(Regression { x, y, init, config })
}

fn inputs_echo(inputs: &RegressionInputs) -> Value {
    json!({
        "x": inputs.x,
        "y": inputs.y,
        "rank": inputs.rank,
        "penalty_a": format!("{:?}", inputs.penalty_a).to_lowercase(),
        "penalty_b": format!("{:?}", inputs.penalty_b).to_lowercase(),
        "adaptive": inputs.adaptive,
        "seed": inputs.seed,
        "init_folds": inputs.init_folds,
    })
}

fn fit(a: FitArgs) -> Result<()> {
    let p = &a.penalty;
    let base = a.solver.config().with_lambdas(p.lambda_d, p.lambda_a, p.lambda_b);
    let reg = regression(&a.inputs, base, a.csv.header)?;
    let fit = solver::fit(&reg.x, &reg.y, a.inputs.rank, &reg.config, &reg.init)?;
    let config = json!({
        "inputs": inputs_echo(&a.inputs),
        "lambda0": reg.init.lambda0,
        "solver": reg.config,
    });
    let result = fit_report(&fit, &BTreeMap::new(), &a.output)?;
    emit("fit", config, result, a.output.out.as_deref())
}

#[derive(Debug, Serialize)]
struct TuneReport {
    bounds: NullBounds,
    best_index: usize,
    points: Vec<GridPoint>,
    best_fit: FitReport,
}

fn tune(a: TuneArgs) -> Result<()> {
    let reg = regression(&a.inputs, a.solver.config(), a.csv.header)?;
    let opts = SearchOptions {
        grid_size: a.grid,
        epsilon: a.epsilon,
        criterion: a.criterion.criterion(),
        ratios: [1.0; 3],
        seed: a.inputs.seed,
        patience: a.patience,
    };
    let validation = match (a.criterion, &a.x_valid, &a.y_valid) {
        (CriterionChoice::Valid, Some(xv), Some(yv)) => {
            Some((read_matrix_csv(xv, a.csv.header)?, read_matrix_csv(yv, a.csv.header)?))
        }
        (CriterionChoice::Valid, _, _) => bail!("--criterion valid requires --x-valid and --y-valid"),
        _ => None,
    };
    let data = match (&validation, a.criterion) {
        (Some((x, y)), _) => CriterionData::Validation { x, y },
        (None, CriterionChoice::Cv) => CriterionData::Folds { k: a.folds },
        (None, _) => CriterionData::None,
    };
    let tuned = search(&reg.x, &reg.y, a.inputs.rank, &reg.config, &reg.init, &opts, data)?;
    let config = json!({
        "inputs": inputs_echo(&a.inputs),
        "lambda0": reg.init.lambda0,
        "search": opts,
        "folds": a.folds,
        "solver": reg.config,
    });
    let result = TuneReport {
        bounds: tuned.bounds,
        best_index: tuned.best_index,
        best_fit: fit_report(&tuned.best_fit, &BTreeMap::new(), &a.output)?,
        points: tuned.points,
    };
    emit("tune", config, result, a.output.out.as_deref())
}

/// Methods compared by default: the SOFAR variant matching the model's
/// sparsity pattern and the benchmarks; OLS only when `n > p`.
fn default_methods(spec: &ModelSpec) -> Vec<Method> {
    let mut methods = if spec.is_entrywise_model() {
        vec![Method::SofarL, Method::Lasso, Method::Rrr]
    } else {
        vec![Method::SofarGl, Method::Srrr, Method::Lasso, Method::Rrr]
    };
    if spec.n > spec.p {
        methods.push(Method::Ols);
    }
    methods
}

pub fn simulation_options(a: &SimulateArgs) -> Result<SimulationOptions> {
    let mut spec = ModelSpec::model(a.model)?;
    spec = spec.clone().with_dims(a.p.unwrap_or(spec.p), a.q.unwrap_or(spec.q));
    if let Some(n) = a.n {
        spec = spec.with_n(n);
    }
    let methods = if a.method.is_empty() {
        default_methods(&spec)
    } else {
        a.method.iter().map(|m| m.method()).collect()
    };
    let mut opts = SimulationOptions::new(spec, a.reps, a.seed, methods);
    opts.rank = a.rank;
    opts.validation_rows = a.validation_rows;
    opts.search.criterion = a.criterion.criterion();
    opts.search.grid_size = a.grid;
    opts.search.epsilon = a.epsilon;
    opts.solver = a.solver.config();
    Ok(opts)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let opts = simulation_options(&a)?;
    let report = run_simulation(&opts)?;
    let config = serde_json::to_value(&opts)?;
    emit("simulate", config, report, a.out.as_deref())
}

fn app_config(a: &AppArgs) -> SofarConfig {
    let p = &a.penalty;
    a.solver
        .config()
        .with_penalties(a.penalty_a.penalty(), a.penalty_b.penalty())
        .with_lambdas(p.lambda_d, p.lambda_a, p.lambda_b)
}

fn app_echo(a: &AppArgs, config: &SofarConfig) -> Value {
    json!({ "x": a.x, "rank": a.rank, "solver": config })
}

fn emit_app(command: &'static str, config: Value, res: &AppResult, output: &OutputArgs) -> Result<()> {
    let result = fit_report(&res.fit, &res.derived, output)?;
    emit(command, config, result, output.out.as_deref())
}

fn app(command: &'static str, a: AppArgs, f: fn(&Mat, usize, &SofarConfig) -> sofar::Result<AppResult>) -> Result<()> {
    let x = read_matrix_csv(&a.x, a.csv.header)?;
    let config = app_config(&a);
    let res = f(&x, a.rank, &config)?;
    emit_app(command, app_echo(&a, &config), &res, &a.output)
}

fn pca(a: PcaArgs) -> Result<()> {
    let x = read_matrix_csv(&a.app.x, a.app.csv.header)?;
    let config = app_config(&a.app);
    let res = match a.variant {
        PcaVariant::Regression => apps::sparse_pca_regression(&x, a.app.rank, &config)?,
        PcaVariant::Approx => apps::sparse_pca_approx(&x, a.app.rank, &config)?,
    };
    let mut echo = app_echo(&a.app, &config);
    echo["variant"] = json!(format!("{:?}", a.variant).to_lowercase());
    emit_app("pca", echo, &res, &a.app.output)
}

fn var(a: VarArgs) -> Result<()> {
    let x = read_matrix_csv(&a.app.x, a.app.csv.header)?;
    let y = read_matrix_csv(&a.y_aug, a.app.csv.header)?;
    let config = app_config(&a.app);
    let res = apps::sparse_var(&x, &y, a.app.rank, &config)?;
    let mut echo = app_echo(&a.app, &config);
    echo["y_aug"] = json!(a.y_aug);
    emit_app("var", echo, &res, &a.app.output)
}

fn spark(a: SparkArgs) -> Result<()> {
    let x = read_matrix_csv(&a.x, a.csv.header)?;
    let spark = robust_spark_bruteforce(&x, a.c, a.k_max)?;
    let config = json!({ "x": a.x, "c": a.c, "k_max": a.k_max });
    emit("diag-spark", config, json!({ "robust_spark": spark }), a.out.as_deref())
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let c_star = read_matrix_csv(&a.c_star, a.csv.header)?;
    let pairs = a
        .c_hat
        .iter()
        .map(|path| {
            let c_hat = read_matrix_csv(path, a.csv.header)?;
            if c_hat.shape() != c_star.shape() {
                bail!(
                    "{} is {:?} but the reference is {:?}",
                    path.display(),
                    c_hat.shape(),
                    c_star.shape()
                );
            }
            Ok((c_star.clone(), c_hat.sub(&c_star)))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = perturbation_check(&pairs)?;
    let c_hat: Vec<&PathBuf> = a.c_hat.iter().collect();
    let config = json!({ "c_star": a.c_star, "c_hat": c_hat });
    emit("diag-perturb", config, report, a.out.as_deref())
}

fn rate(a: RateArgs) -> Result<()> {
    let spec = ModelSpec::model(a.model)?.with_dims(a.p, a.q);
    let method = if spec.is_entrywise_model() { Method::SofarL } else { Method::SofarGl };
    let opts = SimulationOptions::new(spec, a.reps, a.seed, vec![method]);
    let table = rate_diagnostic(&opts, &a.n)?;
    let ratios: Vec<Value> = table
        .rows
        .iter()
        .map(|r| json!({ "n": r.n, "init_ratio": r.init_ratio(), "sofar_ratio": r.sofar_ratio() }))
        .collect();
    let config = json!({ "simulation": opts, "n": a.n });
    emit(
        "diag-rate",
        config,
        json!({ "table": table, "scaled": ratios }),
        a.out.as_deref(),
    )
}
