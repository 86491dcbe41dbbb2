mod common;

use common::{gaussian, rng, svd_oracle_gap, sym_eigenvalues};
use sofar::linalg::{min_norm_least_squares, polar_orthogonal_factor, thin_svd, top_eigenvalue_sym, Mat};

#[test]
fn singular_values_match_gram_eigenvalues() {
    let mut r = rng(1);
    for _ in 0..150 {
        let gap = svd_oracle_gap(&mut r);
        assert!(gap < 1e-8, "gap {gap}");
    }
}

#[test]
fn jacobi_eigen_oracle_on_known_spectrum() {
    let s = Mat::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]).unwrap();
    let ev = sym_eigenvalues(&s);
    for (a, b) in ev.iter().zip([1.0, 3.0, 5.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn polar_factor_maximizes_trace_over_o2_grid() {
    let mut r = rng(2);
    for _ in 0..100 {
        let m = gaussian(2, 2, &mut r);
        let achieved = polar_orthogonal_factor(&m).unwrap().q.dot(&m);
        let steps = 100_000;
        let mut best = f64::NEG_INFINITY;
        for i in 0..steps {
            let t = 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
            let (c, s) = (t.cos(), t.sin());
            // rotation [[c, −s], [s, c]] and reflection [[c, s], [s, −c]]
            let rot = c * m[(0, 0)] - s * m[(0, 1)] + s * m[(1, 0)] + c * m[(1, 1)];
            let refl = c * m[(0, 0)] + s * m[(0, 1)] + s * m[(1, 0)] - c * m[(1, 1)];
            best = best.max(rot).max(refl);
        }
        assert!(achieved >= best - 1e-12);
        assert!(achieved - best <= 1e-4, "{achieved} vs grid {best}");
    }
}

#[test]
fn top_eigenvalue_matches_oracle() {
    let mut r = rng(3);
    for _ in 0..100 {
        let x = gaussian(4, 3, &mut r);
        let g = x.gram();
        let top = top_eigenvalue_sym(&g).unwrap();
        let oracle = *sym_eigenvalues(&g).last().unwrap();
        assert!((top - oracle).abs() < 1e-8 * (1.0 + oracle), "{top} vs {oracle}");
    }
    assert!((top_eigenvalue_sym(&Mat::identity(3)).unwrap() - 1.0).abs() < 1e-14);
    assert!((top_eigenvalue_sym(&Mat::from_diag(&[4.0, 1.0])).unwrap() - 4.0).abs() < 1e-12);
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[test]
fn least_squares_matches_cramer_normal_equations() {
    let mut r = rng(4);
    for _ in 0..100 {
        let x = gaussian(6, 3, &mut r);
        let y = gaussian(6, 1, &mut r);
        let c = min_norm_least_squares(&x, &y).unwrap();
        let g = x.gram();
        let b = x.t_matmul(&y).column(0);
        let a: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| g[(i, j)]));
        let det = det3(&a);
        for k in 0..3 {
            let mut ak = a;
            for i in 0..3 {
                ak[i][k] = b[i];
            }
            let oracle = det3(&ak) / det;
            assert!((c[(k, 0)] - oracle).abs() < 1e-8 * (1.0 + oracle.abs()));
        }
    }
    let ones = Mat::from_rows(&[[1.0], [1.0]]).unwrap();
    let c = min_norm_least_squares(&ones, &Mat::from_rows(&[[2.0], [4.0]]).unwrap()).unwrap();
    assert!((c[(0, 0)] - 3.0).abs() < 1e-12);
    let y = gaussian(2, 3, &mut r);
    assert!(min_norm_least_squares(&Mat::identity(2), &y).unwrap().max_abs_diff(&y) < 1e-12);
}

#[test]
fn mirsky_on_random_pairs() {
    let mut r = rng(6);
    for _ in 0..200 {
        let (p, q) = (2 + r.index(5), 2 + r.index(5));
        let a = gaussian(p, q, &mut r);
        let b = a.add(&gaussian(p, q, &mut r).scale(r.uniform_in(0.01, 3.0)));
        let (sa, sb) = (thin_svd(&a).unwrap().s, thin_svd(&b).unwrap().s);
        let lhs: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(lhs <= a.sub(&b).fro_norm() + 1e-10);
    }
}
