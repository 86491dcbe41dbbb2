use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sofar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sofar"))
        .args(args)
        .env_remove("SOFAR_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn write_csv(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}

fn as_rows(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

/// Deterministic pseudo-random values from a linear congruential sequence.
fn lcg(seed: u64, count: usize) -> Vec<f64> {
    let mut s = seed;
    (0..count)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Solves the normal equations `XᵀX C = XᵀY` by Gaussian elimination with
/// partial pivoting.
fn ols_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (p, q) = (x[0].len(), y[0].len());
    let mut aug: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut row: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[i] * r[j]).sum()).collect();
            row.extend((0..q).map(|k| x.iter().zip(y).map(|(r, t)| r[i] * t[k]).sum::<f64>()));
            row
        })
        .collect();
    for col in 0..p {
        let pivot = (col..p).max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs())).unwrap();
        aug.swap(col, pivot);
        for r in 0..p {
            if r != col {
                let f = aug[r][col] / aug[col][col];
                for c in col..p + q {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    (0..p).map(|i| (0..q).map(|k| aug[i][p + k] / aug[i][i]).collect()).collect()
}

struct Data {
    dir: tempfile::TempDir,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl Data {
    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }
}

fn regression_data(n: usize, p: usize, q: usize) -> Data {
    let noise = lcg(11, n * (p + q));
    let x: Vec<Vec<f64>> = (0..n).map(|i| noise[i * p..(i + 1) * p].to_vec()).collect();
    let e = &noise[n * p..];
    let y: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..q).map(|k| 2.0 * x[i][k % p] - x[i][(k + 1) % p] + 0.1 * e[i * q + k]).collect())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    write_csv(&dir.path().join("x.csv"), &x);
    write_csv(&dir.path().join("y.csv"), &y);
    Data { dir, x, y }
}

#[test]
fn unpenalized_full_rank_fit_is_least_squares() {
    let data = regression_data(40, 4, 3);
    let out = sofar(&[
        "fit", "--x", &data.path("x.csv"), "--y", &data.path("y.csv"), "--rank", "3",
        "--inner-tol", "1e-12", "--outer-tol-obj", "1e-14",
    ]);
    let doc = stdout_json(&out);
    let c = as_rows(&doc["result"]["matrices"]["c"]);
    let oracle = ols_oracle(&data.x, &data.y);
    for (row, orow) in c.iter().zip(&oracle) {
        for (a, b) in row.iter().zip(orow) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
    assert_eq!(doc["result"]["rank"], 3);
    assert!(doc["result"]["orthogonality_defect"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn repeated_fit_is_byte_identical() {
    let data = regression_data(30, 5, 4);
    let args = [
        "fit", "--x", &data.path("x.csv"), "--y", &data.path("y.csv"), "--rank", "2",
        "--lambda-d", "0.5", "--lambda-a", "0.2", "--lambda-b", "0.2", "--adaptive",
    ];
    let first = sofar(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, sofar(&args).stdout);
}

#[test]
fn csv_factor_storage_matches_inline() {
    let data = regression_data(30, 5, 4);
    let base = ["fit", "--x", &data.path("x.csv"), "--y", &data.path("y.csv"), "--rank", "2", "--lambda-a", "0.1"];
    let inline = stdout_json(&sofar(&base));
    let out = data.path("fit.json");
    let mut args = base.to_vec();
    args.extend(["--factors", "csv", "--out", &out]);
    assert!(sofar(&args).status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for name in ["u", "v", "c"] {
        let file = doc["result"]["matrices"][name].as_str().unwrap();
        assert_eq!(file, format!("fit.{name}.csv"));
        let text = std::fs::read_to_string(data.path(file)).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows, as_rows(&inline["result"]["matrices"][name]));
    }
}

#[test]
fn csv_factors_without_output_path_is_a_usage_error() {
    let data = regression_data(20, 3, 2);
    let out = sofar(&["fit", "--x", &data.path("x.csv"), "--y", &data.path("y.csv"), "--rank", "1", "--factors", "csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_inputs_exit_with_usage_code() {
    let data = regression_data(20, 3, 2);
    let ragged = data.path("ragged.csv");
    std::fs::write(&ragged, "1,2,3\n4,5,6\n7,8\n").unwrap();
    let out = sofar(&["fit", "--x", &ragged, "--y", &data.path("y.csv"), "--rank", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let short = data.path("short.csv");
    write_csv(Path::new(&short), &data.y[..10]);
    let out = sofar(&["fit", "--x", &data.path("x.csv"), "--y", &short, "--rank", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));

    let out = sofar(&["fit", "--x", &data.path("missing.csv"), "--y", &short, "--rank", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(sofar(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(sofar(&["simulate", "--model", "9"]).status.code(), Some(2));
}

#[test]
fn thread_count_comes_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let star = dir.path().join("star.csv");
    write_csv(&star, &[vec![2.0, 0.0], vec![0.0, 1.0]]);
    let star = star.to_str().unwrap();
    let with_env = |value: &str, extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_sofar"))
            .args(extra)
            .args(["diag", "perturb", "--c-star", star, "--c-hat", star])
            .env("SOFAR_THREADS", value)
            .output()
            .unwrap()
    };
    assert!(with_env("2", &[]).status.success());
    let bad = with_env("zero", &[]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--threads"));
    assert_eq!(with_env("2", &["--threads", "0"]).status.code(), Some(2));
}

#[test]
fn small_simulation_is_identical_across_thread_counts() {
    let args = |threads: &'static str| {
        [
            "--threads", threads, "simulate", "--model", "1", "--p", "30", "--q", "16", "--n", "80", "--reps", "3",
            "--seed", "5", "--grid", "6", "--validation-rows", "100", "--rank", "3",
        ]
    };
    let one = sofar(&args("1"));
    let three = sofar(&args("3"));
    assert_eq!(one.stdout, three.stdout);
    let doc = stdout_json(&one);
    assert_eq!(doc["command"], "simulate");
    assert_eq!(doc["config"]["seed"], 5);
    let replicates = doc["result"]["replicates"].as_array().unwrap();
    assert_eq!(replicates.len(), 3);
    let summary = doc["result"]["summary"].as_array().unwrap();
    let names: Vec<&str> = summary.iter().map(|s| s["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["sofar-l", "lasso", "rrr", "ols"]);
    for s in summary {
        for field in ["mse_est", "mse_pred", "fpr_pct", "fnr_pct", "orth"] {
            assert!(s[field]["mean"].is_number() && s[field]["sd"].is_number(), "{field}");
        }
        assert!(s["rank_pct"].is_number());
    }
}

#[test]
fn applications_emit_their_outputs() {
    let data = regression_data(30, 5, 4);
    let x = data.path("x.csv");
    let cases: [(&[&str], &[&str]); 5] = [
        (&["pca", "--variant", "regression"], &["loadings", "scores"]),
        (&["pca", "--variant", "approx"], &["loadings", "scores"]),
        (&["bicluster"], &["row_clusters", "column_clusters"]),
        (&["factor"], &["factors", "loadings"]),
        (&["var", "--y-aug", &data.path("y.csv")], &["var_coefficient", "a_block", "b_block"]),
    ];
    for (cmd, keys) in cases {
        let mut args = cmd.to_vec();
        args.extend(["--x", &x, "--rank", "2", "--lambda-a", "0.1"]);
        let doc = stdout_json(&sofar(&args));
        for k in keys {
            assert!(doc["result"]["matrices"][k].is_array(), "{cmd:?} lacks {k}");
        }
        let u = as_rows(&doc["result"]["matrices"]["u"]);
        let rank = doc["result"]["rank"].as_u64().unwrap() as usize;
        for a in 0..rank {
            for b in 0..rank {
                let dot: f64 = u.iter().map(|r| r[a] * r[b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-8, "{cmd:?}");
            }
        }
    }
}

#[test]
fn spark_diagnostic_finds_duplicated_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    let v = lcg(3, 24);
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![v[4 * i], v[4 * i + 1], v[4 * i + 2], v[4 * i]]).collect();
    write_csv(&path, &rows);
    let doc = stdout_json(&sofar(&["diag", "spark", "--x", path.to_str().unwrap(), "--c", "1e-6", "--k-max", "4"]));
    assert_eq!(doc["result"]["robust_spark"], 2);
}

#[test]
fn perturbation_diagnostic_reports_mirsky() {
    let dir = tempfile::tempdir().unwrap();
    let star = dir.path().join("star.csv");
    let hat = dir.path().join("hat.csv");
    write_csv(&star, &[vec![3.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]);
    write_csv(&hat, &[vec![3.5, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]);
    let doc = stdout_json(&sofar(&[
        "diag", "perturb", "--c-star", star.to_str().unwrap(), "--c-hat", hat.to_str().unwrap(), "--c-hat",
        star.to_str().unwrap(),
    ]));
    let pairs = doc["result"]["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(doc["result"]["mirsky_violations"], 0);
    // a shift of one singular value moves D by exactly that shift
    assert!((pairs[0]["delta_d_fro"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(pairs[1]["delta_c_fro"].as_f64().unwrap(), 0.0);
}
