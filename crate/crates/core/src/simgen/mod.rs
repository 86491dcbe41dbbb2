//! Seeded generators for the simulation scenarios (Models 1–5).
//!
//! Models 1, 2 and 5 plant an entrywise-sparse rank-3 SVD built from short
//! recipe vectors (25 left entries, 15 right entries) padded with trailing
//! zeros to `p` and `q`. Models 3 and 4 plant a row-sparse product `C₁C₂ᵀ`.
//! Noise is rescaled per replicate so the weakest layer has SNR exactly one.

mod rng;

pub use rng::{rng_stream, RngStream};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{cholesky, norm2, thin_svd, Mat};

/// Length of the left recipe vectors before zero padding.
pub const LEFT_RECIPE_LEN: usize = 25;
/// Length of the right recipe vectors before zero padding.
pub const RIGHT_RECIPE_LEN: usize = 15;
/// Planted singular values of Models 1, 2 and 5.
pub const PLANTED_SINGULAR_VALUES: [f64; 3] = [20.0, 15.0, 10.0];

const MAX_TRUTH_ATTEMPTS: usize = 16;
const VALIDATION_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "rho")]
pub enum DesignCovariance {
    /// `Σ_ij = ρ^|i−j|`
    Ar1(f64),
    /// unit diagonal, constant off-diagonal `ρ`
    CompoundSymmetry(f64),
}

impl DesignCovariance {
    pub fn matrix(&self, dim: usize) -> Mat {
        match *self {
            DesignCovariance::Ar1(rho) => {
                Mat::from_fn(dim, dim, |i, j| rho.powi((i as i32 - j as i32).abs()))
            }
            DesignCovariance::CompoundSymmetry(rho) => {
                Mat::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: u8,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    /// Nonzero leading rows of `C₁` (Models 3–4).
    pub p0: usize,
    /// Nonzero leading rows of `C₂` (Models 3–4).
    pub q0: usize,
    pub design_covariance: DesignCovariance,
    /// AR(1) correlation of the error rows.
    pub error_rho: f64,
    pub snr_target: f64,
}

impl ModelSpec {
    /// Published dimensions of Models 1–5.
    pub fn model(model_id: u8) -> Result<Self> {
        let base = ModelSpec {
            model_id,
            n: 200,
            p: 100,
            q: 40,
            r: 3,
            p0: LEFT_RECIPE_LEN,
            q0: RIGHT_RECIPE_LEN,
            design_covariance: DesignCovariance::Ar1(0.5),
            error_rho: 0.5,
            snr_target: 1.0,
        };
        let spec = match model_id {
            1 => base,
            2 => ModelSpec { p: 400, q: 120, ..base },
            3 => ModelSpec {
                p: 100,
                q: 10,
                p0: 10,
                q0: 10,
                design_covariance: DesignCovariance::CompoundSymmetry(0.5),
                ..base
            },
            4 => ModelSpec {
                p: 400,
                q: 200,
                p0: 10,
                q0: 10,
                design_covariance: DesignCovariance::CompoundSymmetry(0.5),
                ..base
            },
            5 => ModelSpec { p: 1000, q: 400, ..base },
            other => return invalid(format!("unknown model id {other}; expected 1..=5")),
        };
        Ok(spec)
    }

    pub fn with_dims(mut self, p: usize, q: usize) -> Self {
        self.p = p;
        self.q = q;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn is_entrywise_model(&self) -> bool {
        matches!(self.model_id, 1 | 2 | 5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.model_id) {
            return invalid(format!("model id {} out of range", self.model_id));
        }
        if self.n == 0 || self.r == 0 {
            return invalid("n and r must be positive");
        }
        if !(self.snr_target > 0.0) {
            return invalid("snr target must be positive");
        }
        if self.is_entrywise_model() {
            if self.r != 3 {
                return invalid("the entrywise recipe plants exactly three layers");
            }
            if self.p < LEFT_RECIPE_LEN || self.q < RIGHT_RECIPE_LEN {
                return invalid(format!(
                    "models 1/2/5 need p >= {LEFT_RECIPE_LEN} and q >= {RIGHT_RECIPE_LEN}, got p={} q={}",
                    self.p, self.q
                ));
            }
        } else if self.p0 > self.p || self.q0 > self.q || self.r > self.p0.min(self.q0) {
            return invalid(format!(
                "need r <= min(p0, q0), p0 <= p and q0 <= q (p={}, p0={}, q={}, q0={}, r={})",
                self.p, self.p0, self.q, self.q0, self.r
            ));
        }
        Ok(())
    }
}

/// Planted coefficient matrix and its SVD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub c_star: Mat,
    pub u_star: Mat,
    pub v_star: Mat,
    pub d_star: Vec<f64>,
    /// Error variance scale chosen to hit the SNR target.
    pub sigma2: f64,
    pub r: usize,
}

impl GroundTruth {
    pub fn a_star(&self) -> Mat {
        self.u_star.scale_columns(&self.d_star)
    }

    pub fn b_star(&self) -> Mat {
        self.v_star.scale_columns(&self.d_star)
    }
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct SimData {
    pub x: Mat,
    pub y: Mat,
    pub truth: GroundTruth,
}

/// Draws `(X, Y, truth)` from stream 0 of `seed`.
pub fn gen_model(spec: &ModelSpec, seed: u64) -> Result<SimData> {
    gen_replicate(spec, seed, 0)
}

/// Draws replicate `replicate` of a scenario from its own stream.
pub fn gen_replicate(spec: &ModelSpec, seed: u64, replicate: u64) -> Result<SimData> {
    spec.validate()?;
    let mut rng = rng_stream(seed, replicate);
    let (c_star, u_star, v_star, d_star) = if spec.is_entrywise_model() {
        entrywise_truth(spec, &mut rng)?
    } else {
        rowwise_truth(spec, &mut rng)?
    };
    let sampler = RowSampler::new(spec.design_covariance, spec.p)?;
    let x = sampler.sample(spec.n, &mut rng);
    let e0 = ar1_rows(spec.n, spec.q, spec.error_rho, &mut rng);

    let r = d_star.len();
    let u_r = u_star.column(r - 1);
    let v_r = v_star.column(r - 1);
    let signal = d_star[r - 1] * norm2(&x.mat_vec(&u_r)) * norm2(&v_r);
    let e0_norm = e0.fro_norm();
    if !(e0_norm > 0.0) {
        return invalid("degenerate error draw");
    }
    let sigma = signal / (spec.snr_target * e0_norm);
    let mut y = x.matmul(&c_star);
    y.axpy(sigma, &e0);
    Ok(SimData {
        x,
        y,
        truth: GroundTruth {
            c_star,
            u_star,
            v_star,
            d_star,
            sigma2: sigma * sigma,
            r,
        },
    })
}

/// Independent validation rows `(X_val, Y_val)` for a replicate, drawn with the
/// replicate's truth and noise scale.
pub fn gen_validation(
    spec: &ModelSpec,
    truth: &GroundTruth,
    rows: usize,
    seed: u64,
    replicate: u64,
) -> Result<(Mat, Mat)> {
    spec.validate()?;
    let mut rng = rng_stream(seed, VALIDATION_STREAM_OFFSET + replicate);
    let sampler = RowSampler::new(spec.design_covariance, spec.p)?;
    let x = sampler.sample(rows, &mut rng);
    let e0 = ar1_rows(rows, spec.q, spec.error_rho, &mut rng);
    let mut y = x.matmul(&truth.c_star);
    y.axpy(truth.sigma2.sqrt(), &e0);
    Ok((x, y))
}

type Truth = (Mat, Mat, Mat, Vec<f64>);

fn entrywise_truth(spec: &ModelSpec, rng: &mut RngStream) -> Result<Truth> {
    const S_U: [f64; 2] = [-1.0, 1.0];
    for _ in 0..MAX_TRUTH_ATTEMPTS {
        let mut u1 = vec![0.0; LEFT_RECIPE_LEN];
        for v in u1.iter_mut().take(5) {
            *v = rng.choose(&S_U);
        }
        let mut u2 = vec![0.0; LEFT_RECIPE_LEN];
        u2[3] = -u1[3];
        u2[4] = u1[4];
        for v in u2.iter_mut().skip(5).take(3) {
            *v = rng.choose(&S_U);
        }
        let mut u3 = vec![0.0; LEFT_RECIPE_LEN];
        for v in u3.iter_mut().skip(8).take(2) {
            *v = rng.choose(&S_U);
        }
        let mut vs = [
            vec![0.0; RIGHT_RECIPE_LEN],
            vec![0.0; RIGHT_RECIPE_LEN],
            vec![0.0; RIGHT_RECIPE_LEN],
        ];
        for (layer, v) in vs.iter_mut().enumerate() {
            for entry in v.iter_mut().skip(5 * layer).take(5) {
                *entry = rng.symmetric_band(0.5, 1.0);
            }
        }
        let pad = |v: &[f64], len: usize| -> Vec<f64> {
            let nrm = norm2(v);
            let mut out: Vec<f64> = v.iter().map(|x| x / nrm).collect();
            out.resize(len, 0.0);
            out
        };
        let u = Mat::from_columns(spec.p, &[pad(&u1, spec.p), pad(&u2, spec.p), pad(&u3, spec.p)]);
        let v = Mat::from_columns(
            spec.q,
            &[pad(&vs[0], spec.q), pad(&vs[1], spec.q), pad(&vs[2], spec.q)],
        );
        if u.orthonormality_defect() <= 1e-10 && v.orthonormality_defect() <= 1e-10 {
            let d = PLANTED_SINGULAR_VALUES.to_vec();
            let c = u.scale_columns(&d).matmul_t(&v);
            return Ok((c, u, v, d));
        }
    }
    invalid("could not draw orthogonal recipe layers")
}

fn rowwise_truth(spec: &ModelSpec, rng: &mut RngStream) -> Result<Truth> {
    let r = spec.r;
    let c1_top = Mat::from_fn(spec.p0, r, |_, _| rng.normal());
    let c2_top = Mat::from_fn(spec.q0, r, |_, _| rng.normal());
    let block = c1_top.matmul_t(&c2_top);
    // The SVD of the nonzero block, embedded, keeps the zero rows exact.
    let svd = thin_svd(&block)?.truncate(r);
    if svd.s.iter().any(|&s| !(s > 0.0)) {
        return invalid("planted product is rank deficient");
    }
    let top_rows: Vec<usize> = (0..spec.p0).collect();
    let top_cols: Vec<usize> = (0..spec.q0).collect();
    let u = svd.u.embed_rows(&top_rows, spec.p);
    let v = svd.v.embed_rows(&top_cols, spec.q);
    let c = block.embed_rows(&top_rows, spec.p).embed_columns(&top_cols, spec.q);
    Ok((c, u, v, svd.s))
}

/// Draws rows from `N(0, Σ)` through a lower-triangular factor of `Σ`.
struct RowSampler {
    kind: SamplerKind,
    dim: usize,
}

enum SamplerKind {
    /// The AR(1) Cholesky factor applied as a recursion.
    Ar1 { rho: f64, innovation: f64 },
    Dense(Mat),
}

impl RowSampler {
    fn new(cov: DesignCovariance, dim: usize) -> Result<Self> {
        let kind = match cov {
            DesignCovariance::Ar1(rho) => SamplerKind::Ar1 {
                rho,
                innovation: (1.0 - rho * rho).sqrt(),
            },
            DesignCovariance::CompoundSymmetry(_) => SamplerKind::Dense(cholesky(&cov.matrix(dim))?),
        };
        Ok(Self { kind, dim })
    }

    fn sample(&self, rows: usize, rng: &mut RngStream) -> Mat {
        let mut out = Mat::zeros(rows, self.dim);
        for i in 0..rows {
            let z = rng.normals(self.dim);
            let row = out.row_mut(i);
            match &self.kind {
                SamplerKind::Ar1 { rho, innovation } => {
                    let mut prev = 0.0;
                    for (j, (dst, zj)) in row.iter_mut().zip(&z).enumerate() {
                        prev = if j == 0 { *zj } else { rho * prev + innovation * zj };
                        *dst = prev;
                    }
                }
                SamplerKind::Dense(l) => {
                    for (j, dst) in row.iter_mut().enumerate() {
                        *dst = crate::linalg::dot(&l.row(j)[..=j], &z[..=j]);
                    }
                }
            }
        }
        out
    }
}

fn ar1_rows(rows: usize, dim: usize, rho: f64, rng: &mut RngStream) -> Mat {
    RowSampler {
        kind: SamplerKind::Ar1 {
            rho,
            innovation: (1.0 - rho * rho).sqrt(),
        },
        dim,
    }
    .sample(rows, rng)
}

/// Standalone multivariate normal sampler used by tests and applications.
pub fn sample_rows(cov: DesignCovariance, rows: usize, dim: usize, rng: &mut RngStream) -> Result<Mat> {
    Ok(RowSampler::new(cov, dim)?.sample(rows, rng))
}
