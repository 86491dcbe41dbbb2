//! Sparsity penalties on the scaled singular-vector blocks `A = UD` and
//! `B = VD`, their proximal maps, marginal null thresholds and adaptive
//! weights.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SofarError};
use crate::linalg::Mat;

/// Floor applied to initial magnitudes before taking reciprocals.
pub const DEFAULT_ADAPTIVE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `Σ w_ij |m_ij|`
    EntrywiseL1,
    /// `Σ_i w_i ‖m_i·‖₂`
    RowwiseGroup,
}

/// A penalty kind plus optional positive weights of the argument's shape.
///
/// Rowwise weights are stored as a full matrix with constant rows; only the
/// first entry of each row is read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub weights: Option<Mat>,
}

/// Smallest penalty level at which the zero solution is optimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullThreshold {
    pub lambda: f64,
    /// The supplied gradient was identically zero.
    pub zero_gradient: bool,
}

impl Penalty {
    pub fn l1() -> Self {
        Self {
            kind: PenaltyKind::EntrywiseL1,
            weights: None,
        }
    }

    pub fn group() -> Self {
        Self {
            kind: PenaltyKind::RowwiseGroup,
            weights: None,
        }
    }

    pub fn new(kind: PenaltyKind) -> Self {
        Self { kind, weights: None }
    }

    pub fn with_weights(kind: PenaltyKind, weights: Mat) -> Result<Self> {
        if weights.as_slice().iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return invalid("penalty weights must be strictly positive and finite");
        }
        Ok(Self {
            kind,
            weights: Some(weights),
        })
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    fn check_shape(&self, m: &Mat) -> Result<()> {
        match &self.weights {
            Some(w) if w.shape() != m.shape() => Err(SofarError::DimensionMismatch {
                context: "penalty weights",
                expected: format!("{:?}", m.shape()),
                found: format!("{:?}", w.shape()),
            }),
            _ => Ok(()),
        }
    }

    #[inline]
    fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[(i, j)])
    }

    #[inline]
    fn row_weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[(i, 0)])
    }

    pub fn value(&self, m: &Mat) -> Result<f64> {
        self.check_shape(m)?;
        Ok(self.value_unchecked(m))
    }

    pub(crate) fn value_unchecked(&self, m: &Mat) -> f64 {
        match self.kind {
            PenaltyKind::EntrywiseL1 => match &self.weights {
                None => m.l1_norm(),
                Some(w) => weighted_l1(m, w),
            },
            PenaltyKind::RowwiseGroup => {
                if m.cols() == 0 {
                    return 0.0;
                }
                (0..m.rows()).map(|i| self.row_weight(i) * m.row_norm(i)).sum()
            }
        }
    }

    /// Exact minimizer of `(1/2t)‖Z − M‖_F² + value(Z)`.
    pub fn prox(&self, m: &Mat, t: f64) -> Result<Mat> {
        if !(t >= 0.0 && t.is_finite()) {
            return invalid(format!("prox step must be nonnegative and finite, got {t}"));
        }
        self.check_shape(m)?;
        Ok(self.prox_unchecked(m, t))
    }

    pub(crate) fn prox_unchecked(&self, m: &Mat, t: f64) -> Mat {
        let mut out = m.clone();
        if t == 0.0 {
            return out;
        }
        match self.kind {
            PenaltyKind::EntrywiseL1 => {
                for i in 0..m.rows() {
                    for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                        *v = soft_threshold(*v, t * self.weight(i, j));
                    }
                }
            }
            PenaltyKind::RowwiseGroup => {
                if m.cols() == 0 {
                    return out;
                }
                for i in 0..m.rows() {
                    let nrm = m.row_norm(i);
                    let thr = t * self.row_weight(i);
                    let factor = if nrm > thr { 1.0 - thr / nrm } else { 0.0 };
                    for v in out.row_mut(i) {
                        *v *= factor;
                    }
                }
            }
        }
        out
    }

    /// Null threshold for gradient `g` of the smooth loss at zero.
    pub fn null_threshold(&self, g: &Mat) -> Result<NullThreshold> {
        self.check_shape(g)?;
        let lambda = match self.kind {
            PenaltyKind::EntrywiseL1 => {
                let mut best: f64 = 0.0;
                for i in 0..g.rows() {
                    for (j, &v) in g.row(i).iter().enumerate() {
                        best = best.max(v.abs() / self.weight(i, j));
                    }
                }
                best
            }
            PenaltyKind::RowwiseGroup => (0..g.rows())
                .map(|i| g.row_norm(i) / self.row_weight(i))
                .fold(0.0, f64::max),
        };
        Ok(NullThreshold {
            lambda,
            zero_gradient: g.max_abs() == 0.0,
        })
    }

    /// Keeps only the listed weight columns (layer pruning).
    pub fn retain_columns(&mut self, keep: &[usize]) {
        if let Some(w) = &self.weights {
            self.weights = Some(w.select_columns(keep));
        }
    }

    /// Keeps only the listed weight rows (feature screening).
    pub fn retain_rows(&mut self, keep: &[usize]) {
        if let Some(w) = &self.weights {
            self.weights = Some(w.select_rows(keep));
        }
    }

    /// Adaptive version of this penalty kind built from an initial estimate.
    pub fn adaptive(kind: PenaltyKind, init: &Mat, floor: f64) -> Result<Self> {
        let w = match kind {
            PenaltyKind::EntrywiseL1 => adaptive_weights(init, floor)?,
            PenaltyKind::RowwiseGroup => adaptive_row_weights(init, floor)?,
        };
        Penalty::with_weights(kind, w)
    }
}

fn weighted_l1(m: &Mat, w: &Mat) -> f64 {
    m.as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(v, w)| w * v.abs())
        .sum()
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor > 0.0 && floor.is_finite()) {
        return invalid(format!("adaptive floor must be positive, got {floor}"));
    }
    Ok(())
}

/// Entrywise reciprocal weights `1 / max(|init_ij|, floor)`.
pub fn adaptive_weights(init: &Mat, floor: f64) -> Result<Mat> {
    check_floor(floor)?;
    Ok(init.map(|v| 1.0 / v.abs().max(floor)))
}

/// Row-norm reciprocal weights `1 / max(‖init_i·‖₂, floor)`, repeated across each row.
pub fn adaptive_row_weights(init: &Mat, floor: f64) -> Result<Mat> {
    check_floor(floor)?;
    Ok(Mat::from_fn(init.rows(), init.cols(), |i, _| {
        1.0 / init.row_norm(i).max(floor)
    }))
}

/// Reciprocal weights for a vector of singular values.
pub fn adaptive_vector_weights(init: &[f64], floor: f64) -> Result<Vec<f64>> {
    check_floor(floor)?;
    Ok(init.iter().map(|v| 1.0 / v.abs().max(floor)).collect())
}
