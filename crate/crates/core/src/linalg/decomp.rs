use super::mat::{dot, Mat};
use crate::error::{invalid, Result};

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `M = u · diag(s) · vᵀ`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u · diag(s) · vᵀ`.
    pub fn reconstruct(&self) -> Mat {
        self.u.scale_columns(&self.s).matmul_t(&self.v)
    }

    /// Keeps the leading `k` layers.
    pub fn truncate(&self, k: usize) -> ThinSvd {
        let k = k.min(self.s.len());
        let idx: Vec<usize> = (0..k).collect();
        ThinSvd {
            u: self.u.select_columns(&idx),
            s: self.s[..k].to_vec(),
            v: self.v.select_columns(&idx),
        }
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Rotations act on the columns of the narrower orientation, so the cost is
/// quadratic in `min(rows, cols)`. Singular values come back nonincreasing
/// with ties kept in original column order; each `v` column has its
/// largest-magnitude entry positive.
pub fn thin_svd(m: &Mat) -> Result<ThinSvd> {
    if m.rows() == 0 || m.cols() == 0 {
        return invalid("thin_svd of a matrix with a zero dimension");
    }
    if !m.is_finite() {
        return invalid("thin_svd of a matrix with non-finite entries");
    }
    let mut svd = if m.rows() >= m.cols() {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose());
        ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    };
    normalize_signs(&mut svd);
    Ok(svd)
}

fn jacobi_tall(m: &Mat) -> ThinSvd {
    let (rows, n) = m.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut right: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (rows as f64).max(1.0);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right_cols) = cols.split_at_mut(j);
                rotate(&mut left[i], &mut right_cols[0], c, s);
                let (left, right_cols) = right.split_at_mut(j);
                rotate(&mut left[i], &mut right_cols[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps original column order on ties
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap_or(std::cmp::Ordering::Equal));

    let s_max = norms[order[0]];
    let null_cut = s_max * (rows.max(n) as f64) * f64::EPSILON;
    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &k in &order {
        let sigma = norms[k];
        if sigma > null_cut && sigma > 0.0 {
            u_cols.push(cols[k].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            u_cols.push(vec![0.0; rows]);
            s.push(if sigma > 0.0 { sigma } else { 0.0 });
        }
        v_cols.push(right[k].clone());
    }
    orthonormalize_in_place(&mut u_cols, &s, null_cut);
    ThinSvd {
        u: Mat::from_columns(rows, &u_cols),
        s,
        v: Mat::from_columns(n, &v_cols),
    }
}

#[inline]
fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xa = *x;
        let yb = *y;
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Two passes of modified Gram–Schmidt in singular-value order. Columns whose
/// singular value is numerically zero are replaced by completing unit vectors.
fn orthonormalize_in_place(u: &mut [Vec<f64>], s: &[f64], null_cut: f64) {
    let rows = u.first().map_or(0, |c| c.len());
    for k in 0..u.len() {
        if s[k] <= null_cut {
            u[k] = completion_vector(&u[..k], rows);
            continue;
        }
        for _ in 0..2 {
            for prev in 0..k {
                let proj = dot(&u[prev], &u[k]);
                let (head, tail) = u.split_at_mut(k);
                for (x, p) in tail[0].iter_mut().zip(&head[prev]) {
                    *x -= proj * p;
                }
            }
            let nrm = dot(&u[k], &u[k]).sqrt();
            if nrm > 0.0 {
                u[k].iter_mut().for_each(|x| *x /= nrm);
            }
        }
    }
}

/// A unit vector orthogonal to every vector in `basis`.
fn completion_vector(basis: &[Vec<f64>], rows: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..rows {
        let mut cand = vec![0.0; rows];
        cand[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(b, &cand);
                for (x, y) in cand.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = dot(&cand, &cand).sqrt();
        if nrm > 0.5 {
            cand.iter_mut().for_each(|x| *x /= nrm);
            return cand;
        }
        if nrm > best_norm {
            best_norm = nrm;
            best = Some(cand);
        }
    }
    let mut cand = best.unwrap_or_else(|| vec![0.0; rows]);
    if best_norm > 0.0 {
        cand.iter_mut().for_each(|x| *x /= best_norm);
    }
    cand
}

/// Flips `(u_k, v_k)` so the largest-magnitude entry of `v_k` is positive.
fn normalize_signs(svd: &mut ThinSvd) {
    for k in 0..svd.s.len() {
        let col = svd.v.column(k);
        let mut pivot = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            for i in 0..svd.v.rows() {
                svd.v[(i, k)] = -svd.v[(i, k)];
            }
            for i in 0..svd.u.rows() {
                svd.u[(i, k)] = -svd.u[(i, k)];
            }
        }
    }
}

/// Orthonormal polar factor of a tall matrix.
#[derive(Debug, Clone)]
pub struct PolarFactor {
    pub q: Mat,
    /// Set when the smallest singular value is below `1e-12`; the factor is
    /// then not unique but still orthonormal.
    pub rank_deficient: bool,
}

/// `argmax tr(QᵀM)` over `QᵀQ = I`: the `U₁V₁ᵀ` factor of the SVD of `m`.
pub fn polar_orthogonal_factor(m: &Mat) -> Result<PolarFactor> {
    if m.rows() < m.cols() {
        return invalid(format!(
            "polar factor needs rows >= cols, got {}x{}",
            m.rows(),
            m.cols()
        ));
    }
    if !m.is_finite() {
        return invalid("polar factor of a matrix with non-finite entries");
    }
    if let Some(q) = polar_via_gram(m) {
        return Ok(PolarFactor {
            q,
            rank_deficient: false,
        });
    }
    let svd = thin_svd(m)?;
    let rank_deficient = svd.s.last().is_some_and(|&s| s < 1e-12);
    let q = svd.u.matmul_t(&svd.v);
    // singular vectors of tiny singular values lose orthogonality; one
    // polar step on the nearly orthonormal q restores it
    let q = polar_via_gram(&q).unwrap_or(q);
    Ok(PolarFactor { q, rank_deficient })
}

/// `M (MᵀM)^{-1/2}` through the eigendecomposition of the small Gram matrix.
/// Squaring the condition number costs accuracy, so this declines (returns
/// `None`) unless `M` is well conditioned and the result is orthonormal to
/// `1e-12`.
fn polar_via_gram(m: &Mat) -> Option<Mat> {
    let g = m.gram();
    if g.max_abs() == 0.0 {
        return None;
    }
    let eig = jacobi_tall(&g);
    let (s_max, s_min) = (eig.s[0], *eig.s.last()?);
    if !(s_min > 1e-6 * s_max) || !(s_min > 1e-24) {
        return None;
    }
    let inv_sqrt: Vec<f64> = eig.s.iter().map(|s| 1.0 / s.sqrt()).collect();
    let root = eig.v.scale_columns(&inv_sqrt).matmul_t(&eig.v);
    let q = m.matmul(&root);
    (q.orthonormality_defect() <= 1e-12).then_some(q)
}

const POWER_MAX_ITER: usize = 10_000;
const POWER_TOL: f64 = 1e-12;

/// Dominant eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from the normalized all-ones vector.
pub fn top_eigenvalue_sym(s: &Mat) -> Result<f64> {
    let p = s.rows();
    if p == 0 || s.cols() != p {
        return invalid(format!("top_eigenvalue_sym needs a square matrix, got {:?}", s.shape()));
    }
    let scale = s.max_abs().max(1.0);
    for i in 0..p {
        for j in 0..i {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 * scale {
                return invalid(format!("matrix not symmetric at ({i}, {j})"));
            }
        }
    }
    let start = vec![1.0 / (p as f64).sqrt(); p];
    let lambda = power_iteration(s, start);
    // The all-ones start can be orthogonal to the top eigenvector; the
    // largest diagonal entry is a lower bound on the top eigenvalue.
    let (imax, dmax) = (0..p)
        .map(|i| (i, s[(i, i)]))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    if lambda < dmax * (1.0 - 1e-9) {
        let mut e = vec![0.0; p];
        e[imax] = 1.0;
        return Ok(power_iteration(s, e).max(lambda));
    }
    Ok(lambda)
}

fn power_iteration(s: &Mat, mut v: Vec<f64>) -> f64 {
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = s.mat_vec(&v);
        let next = dot(&v, &w);
        let nrm = dot(&w, &w).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / nrm).collect();
        let converged = (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if converged {
            break;
        }
    }
    lambda.max(0.0)
}

/// Relative cutoff below which singular values are treated as zero in
/// pseudo-inversion.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Minimum-Frobenius-norm minimizer of `‖Y − XC‖_F`, i.e. `X⁺Y`.
pub fn min_norm_least_squares(x: &Mat, y: &Mat) -> Result<Mat> {
    if x.rows() != y.rows() {
        return Err(crate::error::SofarError::DimensionMismatch {
            context: "min_norm_least_squares",
            expected: format!("{} rows in y", x.rows()),
            found: format!("{} rows", y.rows()),
        });
    }
    let svd = thin_svd(x)?;
    let cutoff = PINV_RELATIVE_CUTOFF * svd.s.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> = svd
        .s
        .iter()
        .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    // V Σ⁺ Uᵀ Y
    let uty = svd.u.t_matmul(y);
    let mut scaled = uty;
    for (k, &w) in inv.iter().enumerate() {
        for v in scaled.row_mut(k) {
            *v *= w;
        }
    }
    Ok(svd.v.matmul(&scaled))
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(s: &Mat) -> Result<Mat> {
    let n = s.rows();
    if s.cols() != n {
        return invalid("cholesky needs a square matrix");
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut diag = s[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 {
            return invalid(format!("matrix not positive definite at pivot {j}"));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Mat::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn diagonal_and_permutation() {
        let svd = thin_svd(&Mat::from_diag(&[3.0, 2.0])).unwrap();
        assert_eq!(svd.s, vec![3.0, 2.0]);
        assert!(svd.u.max_abs_diff(&Mat::identity(2)) < 1e-15);
        let perm = Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let svd = thin_svd(&perm).unwrap();
        assert!((svd.s[0] - 1.0).abs() < 1e-15 && (svd.s[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(thin_svd(&Mat::zeros(0, 3)).is_err());
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        let mut m = pseudo_random(6, 4, 3);
        let c0 = m.column(0);
        m.set_column(2, &c0);
        m.set_column(3, &[0.0; 6]);
        let svd = thin_svd(&m).unwrap();
        assert!(svd.u.orthonormality_defect() < 1e-10);
        assert!(svd.v.orthonormality_defect() < 1e-10);
        assert!(svd.reconstruct().sub(&m).fro_norm() < 1e-10 * (1.0 + m.fro_norm()));
        assert!(svd.s[3] < 1e-14 && svd.s[2] < 1e-12);
    }

    #[test]
    fn wide_matrix_and_sign_convention() {
        let m = pseudo_random(3, 7, 11);
        let svd = thin_svd(&m).unwrap();
        assert_eq!(svd.u.shape(), (3, 3));
        assert_eq!(svd.v.shape(), (7, 3));
        for k in 0..3 {
            let col = svd.v.column(k);
            let big = col.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
        }
        assert!(svd.reconstruct().sub(&m).fro_norm() < 1e-12);
    }

    #[test]
    fn polar_of_identity_and_signed_diagonal() {
        let q = polar_orthogonal_factor(&Mat::identity(2)).unwrap();
        assert!(q.q.max_abs_diff(&Mat::identity(2)) < 1e-15);
        let q = polar_orthogonal_factor(&Mat::from_diag(&[2.0, -3.0])).unwrap();
        assert!(q.q.max_abs_diff(&Mat::from_diag(&[1.0, -1.0])) < 1e-15);
        assert!(!q.rank_deficient);
        let q = polar_orthogonal_factor(&Mat::from_diag(&[2.0, 0.0])).unwrap();
        assert!(q.rank_deficient);
        assert!(q.q.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn power_iteration_basic() {
        assert!((top_eigenvalue_sym(&Mat::identity(4)).unwrap() - 1.0).abs() < 1e-12);
        assert!((top_eigenvalue_sym(&Mat::from_diag(&[4.0, 1.0])).unwrap() - 4.0).abs() < 1e-10);
        let asym = Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(top_eigenvalue_sym(&asym).is_err());
        // top eigenvector orthogonal to the all-ones start
        let s = Mat::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap();
        assert!((top_eigenvalue_sym(&s).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn least_squares_small_cases() {
        let y = Mat::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap();
        let c = min_norm_least_squares(&Mat::identity(2), &y).unwrap();
        assert!(c.max_abs_diff(&y) < 1e-14);
        let x = Mat::from_rows(&[[1.0], [1.0]]).unwrap();
        let y = Mat::from_rows(&[[2.0], [4.0]]).unwrap();
        let c = min_norm_least_squares(&x, &y).unwrap();
        assert!((c[(0, 0)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_minimum_norm_when_underdetermined() {
        // one equation, two unknowns: x1 + x2 = 2 -> minimum norm (1, 1)
        let x = Mat::from_rows(&[[1.0, 1.0]]).unwrap();
        let y = Mat::from_rows(&[[2.0]]).unwrap();
        let c = min_norm_least_squares(&x, &y).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-14 && (c[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_reconstructs() {
        let s = Mat::from_fn(4, 4, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let l = cholesky(&s).unwrap();
        assert!(l.matmul_t(&l).max_abs_diff(&s) < 1e-14);
        assert!(cholesky(&Mat::from_diag(&[1.0, -1.0])).is_err());
    }
}
