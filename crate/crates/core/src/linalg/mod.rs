//! Dense matrices and the decompositions the solver blocks rely on.

mod decomp;
mod mat;

pub use decomp::{
    cholesky, min_norm_least_squares, polar_orthogonal_factor, thin_svd, top_eigenvalue_sym,
    PolarFactor, ThinSvd, PINV_RELATIVE_CUTOFF,
};
pub use mat::{dot, norm2, Mat};
