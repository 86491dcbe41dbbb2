//! Random instances and independent oracles shared by the integration tests
//! and the acceptance report.
#![allow(dead_code)]

use sofar::lasso_init::{lasso_column, InitState};
use sofar::linalg::{thin_svd, Mat};
use sofar::simgen::{rng_stream, RngStream};
use sofar::solver::{
    u_subproblem_objective, update_a, update_b, update_d, update_duals, update_u, update_v, Problem, SofarConfig,
    SofarState,
};
use sofar::theory::robust_spark_bruteforce;

pub fn rng(seed: u64) -> RngStream {
    rng_stream(seed, 0xC0FFEE)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut RngStream) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.normal())
}

/// Random matrix with orthonormal columns.
pub fn orthonormal(rows: usize, cols: usize, rng: &mut RngStream) -> Mat {
    thin_svd(&gaussian(rows, cols, rng)).unwrap().u
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(s: &Mat) -> Vec<f64> {
    let n = s.rows();
    let mut a = s.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest gap between `thin_svd` singular values and square roots of the
/// Gram eigenvalues, on a random matrix of random shape.
pub fn svd_oracle_gap(rng: &mut RngStream) -> f64 {
    let rows = 2 + rng.index(6);
    let cols = 1 + rng.index(5);
    let m = gaussian(rows, cols, rng);
    let svd = thin_svd(&m).unwrap();
    let small = if rows >= cols { m.gram() } else { m.matmul_t(&m) };
    let mut ev = sym_eigenvalues(&small);
    ev.reverse();
    let recon = svd.reconstruct().max_abs_diff(&m);
    svd.s
        .iter()
        .zip(&ev)
        .map(|(s, e)| (s - e.max(0.0).sqrt()).abs())
        .fold(recon, f64::max)
}

/// Random data with a random interior iterate and nonzero multipliers.
pub struct Instance {
    pub x: Mat,
    pub y: Mat,
    pub problem: Problem,
    pub state: SofarState,
}

pub fn instance(n: usize, p: usize, q: usize, m: usize, mu: f64, rng: &mut RngStream) -> Instance {
    let x = gaussian(n, p, rng);
    let y = gaussian(n, q, rng);
    let problem = Problem::new(&x, &y).unwrap();
    let u = orthonormal(p, m, rng);
    let v = orthonormal(q, m, rng);
    let d: Vec<f64> = (0..m).map(|_| rng.uniform_in(0.2, 3.0)).collect();
    let mut state = SofarState::new(u, v, d, &SofarConfig::default()).unwrap();
    state.a = gaussian(p, m, rng);
    state.b = gaussian(q, m, rng);
    state.gamma_a = gaussian(p, m, rng).scale(0.5);
    state.gamma_b = gaussian(q, m, rng).scale(0.5);
    state.mu = mu;
    Instance { x, y, problem, state }
}

/// `|closed form − projected gradient|` for the D-block of a random instance.
pub fn d_oracle_gap(m: usize, rng: &mut RngStream) -> f64 {
    let inst = instance(9, 5, 4, m, rng.uniform_in(0.1, 5.0), rng);
    let lambda_d = rng.uniform_in(0.0, 4.0);
    let closed = update_d(&inst.state, &inst.problem, lambda_d).unwrap();

    let s = &inst.state;
    let (u, v) = (&s.u, &s.v);
    let xu = inst.x.matmul(u);
    let lip = thin_svd(&xu).unwrap().s[0].powi(2) + 2.0 * s.mu;
    let mut z = vec![0.0; m];
    for _ in 0..20_000 {
        let resid = xu.scale_columns(&z).matmul_t(v).sub(&inst.y);
        let g_fit = xu.t_matmul(&resid).matmul(v);
        let ga = u.t_matmul(&s.gamma_a.add(&u.scale_columns(&z).sub(&s.a).scale(s.mu)));
        let gb = v.t_matmul(&s.gamma_b.add(&v.scale_columns(&z).sub(&s.b).scale(s.mu)));
        for k in 0..m {
            let grad = g_fit[(k, k)] + lambda_d + ga[(k, k)] + gb[(k, k)];
            z[k] = (z[k] - grad / lip).max(0.0);
        }
    }
    closed.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn givens(theta: f64, i: usize, j: usize, m: &mut [[f64; 2]; 4]) {
    let (c, s) = (theta.cos(), theta.sin());
    for k in 0..2 {
        let (a, b) = (m[i][k], m[j][k]);
        m[i][k] = c * a - s * b;
        m[j][k] = s * a + c * b;
    }
}

/// First two columns of `G₀₁G₀₂G₀₃G₁₂G₁₃`; every orthonormal 4×2 arises.
fn stiefel_point(angles: &[f64; 5]) -> [[f64; 2]; 4] {
    let mut m = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]];
    givens(angles[4], 1, 3, &mut m);
    givens(angles[3], 1, 2, &mut m);
    givens(angles[2], 0, 3, &mut m);
    givens(angles[1], 0, 2, &mut m);
    givens(angles[0], 0, 1, &mut m);
    m
}

/// Global minimum of `½tr(DUᵀGUD) − ⟨U, L⟩` over orthonormal 4×2 `U`: a
/// Givens-angle grid followed by pattern search from the best cells.
pub fn givens_grid_minimum(gram: &Mat, lin: &Mat, d: &[f64], steps: usize) -> f64 {
    let eval = |q: &[[f64; 2]; 4]| -> f64 {
        let mut val = 0.0;
        for k in 0..2 {
            let mut quad = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    quad += q[i][k] * gram[(i, j)] * q[j][k];
                }
                val -= q[i][k] * lin[(i, k)];
            }
            val += 0.5 * d[k] * d[k] * quad;
        }
        val
    };
    let pi = std::f64::consts::PI;
    let h = 2.0 * pi / steps as f64;
    let keep = 8;
    let mut best: Vec<(f64, [f64; 5])> = Vec::new();
    let mut idx = [0usize; 5];
    loop {
        let ang = idx.map(|i| -pi + h * i as f64);
        let val = eval(&stiefel_point(&ang));
        if best.len() < keep || val < best[keep - 1].0 {
            best.push((val, ang));
            best.sort_by(|a, b| a.0.total_cmp(&b.0));
            best.truncate(keep);
        }
        let mut k = 0;
        while k < 5 {
            idx[k] += 1;
            if idx[k] < steps {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == 5 {
            break;
        }
    }
    let mut oracle = f64::INFINITY;
    for (mut val, mut ang) in best {
        let mut step = h;
        while step > 1e-11 {
            let mut moved = false;
            for k in 0..5 {
                for sign in [-1.0, 1.0] {
                    let mut trial = ang;
                    trial[k] += sign * step;
                    let tv = eval(&stiefel_point(&trial));
                    if tv < val {
                        val = tv;
                        ang = trial;
                        moved = true;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        oracle = oracle.min(val);
    }
    oracle
}

/// Runs the block updates on a random `n=8, p=4, q=3, m=2` problem until the
/// multipliers settle, then compares the U-update at that iterate with the
/// Givens-grid global minimum of its subproblem. Returns the objective gap.
pub fn u_oracle_gap(rng: &mut RngStream, steps: usize) -> f64 {
    let config = SofarConfig {
        procrustes_max_iter: 20_000,
        procrustes_tol: 1e-14,
        ..SofarConfig::default().with_lambdas(0.1, 0.1, 0.1)
    };
    let x = gaussian(8, 4, rng);
    let y = gaussian(8, 3, rng);
    let problem = Problem::new(&x, &y).unwrap();
    let init = InitState::from_coefficients(sofar::apps::ols_fit(&x, &y).unwrap(), 2, 0.0, false).unwrap();
    let mut st = SofarState::from_init(&init, &config).unwrap();
    for _ in 0..40 {
        for _ in 0..3 {
            st.u = update_u(&st, &problem, &config).unwrap().u;
            st.v = update_v(&st, &problem).unwrap().0;
            st.d = update_d(&st, &problem, config.lambda_d).unwrap();
            st.a = update_a(&st, config.lambda_a);
            st.b = update_b(&st, config.lambda_b);
        }
        update_duals(&mut st, &config);
    }
    let u_alg = update_u(&st, &problem, &config).unwrap().u;
    let lin = x
        .t_matmul(&y)
        .matmul(&st.v)
        .sub(&st.gamma_a)
        .add(&st.a.scale(st.mu))
        .scale_columns(&st.d);
    let oracle = givens_grid_minimum(&x.gram(), &lin, &st.d, steps);
    let alg = u_subproblem_objective(&st, &problem, &u_alg);
    (alg - oracle).abs()
}

/// Worst stationarity violation of `lasso_column` on the standardized
/// scale, recomputed from the raw data.
pub fn lasso_kkt_gap(rng: &mut RngStream) -> f64 {
    let (n, p) = (20, 5);
    let x = gaussian(n, p, rng);
    let y: Vec<f64> = gaussian(n, 1, rng).column(0);
    let lambda = rng.uniform_in(0.02, 0.5);
    let beta = lasso_column(&x, &y, lambda).unwrap();
    let fit = x.mat_vec(&beta);
    let resid: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mut worst: f64 = 0.0;
    for j in 0..p {
        let col = x.column(j);
        let s = (col.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
        let grad: f64 = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / (nf * s);
        let viol = if beta[j] != 0.0 {
            (grad - lambda * beta[j].signum()).abs()
        } else {
            (grad.abs() - lambda).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

/// Largest coordinate distance between `lasso_column` and the grid
/// minimizer of `(2n)⁻¹‖y − Xβ‖² + λ Σ s_j|β_j|` over `[−5, 5]²`. The
/// objective is convex, so a `1e-2` sweep of the box followed by a `1e-3`
/// sweep around its best cell finds the `1e-3` grid minimizer.
pub fn lasso_grid_gap(rng: &mut RngStream) -> f64 {
    let n = 30;
    let x = gaussian(n, 2, rng);
    let truth = [rng.uniform_in(-3.0, 3.0), rng.uniform_in(-3.0, 3.0)];
    let y: Vec<f64> = x.mat_vec(&truth).iter().map(|v| v + 0.5 * rng.normal()).collect();
    let lambda = rng.uniform_in(0.05, 0.8);
    let beta = lasso_column(&x, &y, lambda).unwrap();

    let nf = n as f64;
    let g = x.gram();
    let xy = x.t_matmul(&Mat::column_vector(&y)).column(0);
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let s = [(g[(0, 0)] / nf).sqrt(), (g[(1, 1)] / nf).sqrt()];
    let objective = |b: [f64; 2]| {
        let quad = g[(0, 0)] * b[0] * b[0] + 2.0 * g[(0, 1)] * b[0] * b[1] + g[(1, 1)] * b[1] * b[1];
        (yy - 2.0 * (xy[0] * b[0] + xy[1] * b[1]) + quad) / (2.0 * nf)
            + lambda * (s[0] * b[0].abs() + s[1] * b[1].abs())
    };
    let sweep = |lo: [f64; 2], hi: [f64; 2], h: f64| {
        let mut best = (f64::INFINITY, lo);
        let steps = [((hi[0] - lo[0]) / h).round() as i64, ((hi[1] - lo[1]) / h).round() as i64];
        for i in 0..=steps[0] {
            for j in 0..=steps[1] {
                let b = [lo[0] + h * i as f64, lo[1] + h * j as f64];
                let val = objective(b);
                if val < best.0 {
                    best = (val, b);
                }
            }
        }
        best.1
    };
    let coarse = sweep([-5.0, -5.0], [5.0, 5.0], 1e-2);
    let fine = sweep([coarse[0] - 0.05, coarse[1] - 0.05], [coarse[0] + 0.05, coarse[1] + 0.05], 1e-3);
    (beta[0] - fine[0]).abs().max((beta[1] - fine[1]).abs())
}

/// Robust spark by enumerating column subsets as bit masks, reading the
/// smallest singular value off the Gram eigenvalues.
pub fn spark_by_enumeration(x: &Mat, c: f64, k_max: usize) -> Option<usize> {
    let (n, p) = x.shape();
    let mut best: Option<usize> = None;
    for mask in 1u32..(1 << p) {
        let cols: Vec<usize> = (0..p).filter(|&j| mask & (1 << j) != 0).collect();
        let k = cols.len();
        if k > k_max || best.is_some_and(|b| b <= k) {
            continue;
        }
        let sub = x.select_columns(&cols);
        let smallest = if k > n {
            0.0
        } else {
            sym_eigenvalues(&sub.gram().scale(1.0 / n as f64))[0].max(0.0).sqrt()
        };
        if smallest < c {
            best = Some(k);
        }
    }
    best
}

/// Whether `robust_spark_bruteforce` agrees with the enumeration oracle on a
/// random 8×6 design at a random threshold.
pub fn spark_oracle_agrees(rng: &mut RngStream) -> bool {
    let mut x = gaussian(8, 6, rng);
    if rng.uniform() < 0.3 {
        // near-collinear pair
        let a = rng.index(6);
        let b = (a + 1 + rng.index(5)) % 6;
        let col: Vec<f64> = x.column(a).iter().map(|v| v + 0.05 * rng.normal()).collect();
        x.set_column(b, &col);
    }
    let c = rng.uniform_in(0.05, 0.9);
    let k_max = 6;
    robust_spark_bruteforce(&x, c, k_max).unwrap() == spark_by_enumeration(&x, c, k_max)
}

/// Random `(C*, ΔC)` pairs with separated spectra, a third of them scaled
/// beyond the perturbation bound's `‖ΔC‖₂ ≤ d₁*` hypothesis.
pub fn perturbation_pairs(count: usize, rng: &mut RngStream) -> Vec<(Mat, Mat)> {
    (0..count)
        .map(|i| {
            let (p, q) = (4 + rng.index(4), 3 + rng.index(4));
            let r = 1 + rng.index(3);
            let d: Vec<f64> = (0..r).map(|k| 10.0 / (1.0 + k as f64)).collect();
            let c = orthonormal(p, r, rng).scale_columns(&d).matmul_t(&orthonormal(q, r, rng));
            let scale = if i % 3 == 0 { 20.0 } else { rng.uniform_in(0.01, 2.0) };
            (c, gaussian(p, q, rng).scale(scale))
        })
        .collect()
}
