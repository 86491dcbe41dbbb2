//! Theory diagnostics: sparsity and identifiability quantities of a planted
//! truth, the robust spark of a design, the SVD perturbation bounds and an
//! empirical check of the error rates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SofarError};
use crate::linalg::{thin_svd, Mat};
use crate::simgen::{gen_replicate, GroundTruth};
use crate::simulate::{run_simulation, Method, SimulationOptions};

/// Slack allowed in the Mirsky inequality.
pub const MIRSKY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    /// `‖C*‖₀`
    pub s: usize,
    /// `‖A*‖₀` with `A* = U*D*`
    pub s_a: usize,
    /// `‖B*‖₀` with `B* = V*D*`
    pub s_b: usize,
    pub r: usize,
    /// Largest δ with `d*²_{j−1} − d*²_j ≥ δ^{1/2} d*²_{j−1}` for `2 ≤ j ≤ r`.
    pub delta: f64,
    pub eta_n: f64,
    /// `(s log(pq)/n)^{1/2}`
    pub r_n: f64,
    /// Smallest nonzero magnitude over `D*`, `A*` and `B*`.
    pub tau: f64,
}

impl TheoryReport {
    pub fn from_truth(truth: &GroundTruth, n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("sample size must be positive");
        }
        let (p, q) = truth.c_star.shape();
        let d: Vec<f64> = truth.d_star.iter().copied().filter(|&v| v > 0.0).collect();
        let (a, b) = (truth.a_star(), truth.b_star());
        let (delta, eta_n) = gap_and_eta(&d);
        let tau = d
            .iter()
            .chain(a.as_slice())
            .chain(b.as_slice())
            .map(|v| v.abs())
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let s = truth.c_star.count_nonzero(0.0);
        Ok(Self {
            s,
            s_a: a.count_nonzero(0.0),
            s_b: b.count_nonzero(0.0),
            r: d.len(),
            delta,
            eta_n,
            r_n: (s as f64 * log_pq(p, q) / n as f64).sqrt(),
            tau: if tau.is_finite() { tau } else { 0.0 },
        })
    }

    /// `((r + s_a + s_b) η_n² log(pq)/n)^{1/2}`, the scaling of the SOFAR
    /// factor error.
    pub fn sofar_scaling(&self, p: usize, q: usize, n: usize) -> f64 {
        ((self.r + self.s_a + self.s_b) as f64 * self.eta_n.powi(2) * log_pq(p, q) / n as f64).sqrt()
    }
}

fn log_pq(p: usize, q: usize) -> f64 {
    ((p * q) as f64).ln()
}

/// Relative spectral gap δ (capped at 1) and `η = 1 + δ^{−1/2}(Σ(d₁/d_j)²)^{1/2}`
/// for nonincreasing positive singular values.
pub fn gap_and_eta(d: &[f64]) -> (f64, f64) {
    if d.is_empty() {
        return (1.0, 1.0);
    }
    let root = d
        .windows(2)
        .map(|w| 1.0 - (w[1] / w[0]).powi(2))
        .fold(1.0_f64, f64::min)
        .max(0.0);
    let delta = root * root;
    let spread: f64 = d.iter().map(|&dj| (d[0] / dj).powi(2)).sum();
    let eta = if delta > 0.0 {
        1.0 + spread.sqrt() / delta.sqrt()
    } else {
        f64::INFINITY
    };
    (delta, eta)
}

/// Smallest singular value of `n^{−1/2} X_S`, zero when `|S| > n`.
fn scaled_min_singular(x: &Mat, subset: &[usize]) -> Result<f64> {
    let n = x.rows();
    if subset.len() > n {
        return Ok(0.0);
    }
    let svd = thin_svd(&x.select_columns(subset))?;
    let smallest = svd.s.get(subset.len() - 1).copied().unwrap_or(0.0);
    Ok(smallest / (n as f64).sqrt())
}

/// Advances `idx` to the next `k`-subset of `0..p` in lexicographic order.
fn next_combination(idx: &mut [usize], p: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < p - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Robust spark κ_c: the smallest `k` such that some `k`-column submatrix of
/// `n^{−1/2}X` has a singular value below `c`, searched up to
/// `min(k_max, p)`. `None` when no such subset exists in range.
///
/// Refuses unless `p ≤ 20` or `k_max ≤ 12`.
pub fn robust_spark_bruteforce(x: &Mat, c: f64, k_max: usize) -> Result<Option<usize>> {
    let p = x.cols();
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("threshold must be positive, got {c}"));
    }
    if p > 20 && k_max > 12 {
        return Err(SofarError::TooLarge(format!(
            "p = {p} with k_max = {k_max}; need p <= 20 or k_max <= 12"
        )));
    }
    if x.rows() == 0 || !x.is_finite() {
        return invalid("design must be nonempty and finite");
    }
    for k in 1..=k_max.min(p) {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            if scaled_min_singular(x, &idx)? < c {
                return Ok(Some(k));
            }
            if !next_combination(&mut idx, p) {
                break;
            }
        }
    }
    Ok(None)
}

/// One `(C*, C)` pair of the perturbation suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPair {
    pub delta_c_fro: f64,
    pub delta_c_spectral: f64,
    pub delta_d_fro: f64,
    /// `‖ΔA‖_F + ‖ΔB‖_F` over the leading `r` layers, signs aligned.
    pub delta_ab_fro: f64,
    pub eta_n: f64,
    pub mirsky_holds: bool,
    /// `(‖ΔA‖_F + ‖ΔB‖_F)/(η_n‖ΔC‖_F)`, zero when `ΔC = 0`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub pairs: Vec<PerturbationPair>,
    /// Pairs dropped because `‖ΔC‖₂ > d₁*`.
    pub filtered: usize,
    pub mirsky_violations: usize,
    pub ratio_median: f64,
    pub ratio_max: f64,
}

/// Checks `‖D − D*‖_F ≤ ‖C − C*‖_F` and reports the factor-perturbation ratio
/// for each `(C*, ΔC)` satisfying `‖ΔC‖₂ ≤ d₁*`.
pub fn perturbation_check(pairs: &[(Mat, Mat)]) -> Result<PerturbationReport> {
    let mut kept = Vec::new();
    let mut filtered = 0;
    for (c_star, delta) in pairs {
        if c_star.shape() != delta.shape() {
            return Err(SofarError::DimensionMismatch {
                context: "perturbation pair",
                expected: format!("{:?}", c_star.shape()),
                found: format!("{:?}", delta.shape()),
            });
        }
        let c = c_star.add(delta);
        let star = thin_svd(c_star)?;
        let est = thin_svd(&c)?;
        let spectral = if delta.max_abs() == 0.0 { 0.0 } else { thin_svd(delta)?.s[0] };
        if spectral > star.s[0] {
            filtered += 1;
            continue;
        }
        let delta_c_fro = delta.fro_norm();
        let width = star.s.len().max(est.s.len());
        let sv = |s: &[f64], k: usize| s.get(k).copied().unwrap_or(0.0);
        let delta_d_fro = (0..width)
            .map(|k| (sv(&est.s, k) - sv(&star.s, k)).powi(2))
            .sum::<f64>()
            .sqrt();

        let cut = 1e-12 * star.s[0];
        let r = star.s.iter().filter(|&&s| s > cut).count();
        let (_, eta_n) = gap_and_eta(&star.s[..r]);
        let (mut da, mut db) = (0.0, 0.0);
        for k in 0..r {
            let (u, v) = (est.u.column(k), est.v.column(k));
            let (us, vs) = (star.u.column(k), star.v.column(k));
            let sign = if crate::linalg::dot(&v, &vs) < 0.0 { -1.0 } else { 1.0 };
            let (dk, dsk) = (sign * sv(&est.s, k), star.s[k]);
            da += u.iter().zip(&us).map(|(a, b)| (dk * a - dsk * b).powi(2)).sum::<f64>();
            db += v.iter().zip(&vs).map(|(a, b)| (dk * a - dsk * b).powi(2)).sum::<f64>();
        }
        let delta_ab_fro = da.sqrt() + db.sqrt();
        kept.push(PerturbationPair {
            delta_c_fro,
            delta_c_spectral: spectral,
            delta_d_fro,
            delta_ab_fro,
            eta_n,
            mirsky_holds: delta_d_fro <= delta_c_fro + MIRSKY_SLACK * (1.0 + delta_c_fro),
            ratio: if delta_c_fro > 0.0 { delta_ab_fro / (eta_n * delta_c_fro) } else { 0.0 },
        });
    }
    let ratios: Vec<f64> = kept.iter().map(|p| p.ratio).collect();
    Ok(PerturbationReport {
        mirsky_violations: kept.iter().filter(|p| !p.mirsky_holds).count(),
        ratio_median: median(&ratios),
        ratio_max: ratios.iter().copied().fold(0.0, f64::max),
        pairs: kept,
        filtered,
    })
}

/// Median of a sample; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    /// Median `‖C̃ − C*‖_F` of the Lasso initializer.
    pub init_error: f64,
    /// Median `‖Ĉ − C*‖_F` of the SOFAR fit.
    pub sofar_error: f64,
    /// Median `(s log(pq)/n)^{1/2}`.
    pub init_scaling: f64,
    /// Median `((r + s_a + s_b)η_n² log(pq)/n)^{1/2}`.
    pub sofar_scaling: f64,
}

impl RateRow {
    pub fn init_ratio(&self) -> f64 {
        self.init_error / self.init_scaling
    }

    pub fn sofar_ratio(&self) -> f64 {
        self.sofar_error / self.sofar_scaling
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub method: Method,
    pub rows: Vec<RateRow>,
}

/// Runs the simulation of `opts` at each sample size and tabulates median
/// errors of the initializer and of SOFAR against the theoretical scalings.
/// The SOFAR variant follows the model's penalty type.
pub fn rate_diagnostic(opts: &SimulationOptions, n_values: &[usize]) -> Result<RateTable> {
    if n_values.is_empty() {
        return invalid("at least one sample size is required");
    }
    let method = if opts.model.is_entrywise_model() {
        Method::SofarL
    } else {
        Method::SofarGl
    };
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut run = opts.clone();
        run.model = opts.model.clone().with_n(n);
        run.methods = vec![method];
        let report = run_simulation(&run)?;
        let (p, q) = (run.model.p, run.model.q);
        let mut init_scaling = Vec::new();
        let mut sofar_scaling = Vec::new();
        for k in 0..run.replicates {
            let truth = gen_replicate(&run.model, run.seed, k as u64)?.truth;
            let th = TheoryReport::from_truth(&truth, n)?;
            init_scaling.push(th.r_n);
            sofar_scaling.push(th.sofar_scaling(p, q, n));
        }
        let sofar: Vec<f64> = report.outcomes(method).map(|o| o.error_fro).collect();
        let init: Vec<f64> = report.replicates.iter().map(|r| r.init_error_fro).collect();
        rows.push(RateRow {
            n,
            init_error: median(&init),
            sofar_error: median(&sofar),
            init_scaling: median(&init_scaling),
            sofar_scaling: median(&sofar_scaling),
        });
    }
    Ok(RateTable { method, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_of_planted_values() {
        // (20, 15, 10): gaps 1 − 9/16 = 7/16 and 1 − 4/9 = 5/9
        let (delta, eta) = gap_and_eta(&[20.0, 15.0, 10.0]);
        let root = 7.0_f64 / 16.0;
        assert!((delta - root * root).abs() < 1e-15);
        let spread = 1.0 + (4.0_f64 / 3.0).powi(2) + 4.0;
        assert!((eta - (1.0 + spread.sqrt() / root)).abs() < 1e-12);
        assert_eq!(gap_and_eta(&[3.0]), (1.0, 2.0));
    }

    #[test]
    fn combinations_enumerate_binomial_count() {
        let mut idx = vec![0, 1, 2];
        let mut count = 1;
        while next_combination(&mut idx, 6) {
            count += 1;
        }
        assert_eq!(count, 20);
        assert_eq!(idx, vec![3, 4, 5]);
    }

    #[test]
    fn spark_guard() {
        let x = Mat::zeros(5, 21);
        assert!(matches!(robust_spark_bruteforce(&x, 0.5, 13), Err(SofarError::TooLarge(_))));
        assert!(robust_spark_bruteforce(&x, 0.5, 12).is_ok());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
