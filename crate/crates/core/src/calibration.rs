//! Calibration statistics: the layer Hessian `2 X X^T` averaged over
//! samples, its damped inverse, trailing-window Hessians for block
//! iteration, and per-input-row norms for magnitude-times-activation
//! saliency.

use crate::error::{PruneError, Result};
use crate::matrix::{spd_inverse, DenseMatrix};

/// Default damping as a fraction of the mean Hessian diagonal.
pub const DEFAULT_LAMBDA_REL: f64 = 0.01;

/// A set of `d` input samples, each `b x a`, feeding one linear layer.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    samples: Vec<DenseMatrix>,
}

impl CalibrationSet {
    /// All samples must share one shape and there must be at least one.
    pub fn new(samples: Vec<DenseMatrix>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| PruneError::InvalidCalibration {
                reason: "need at least one sample".into(),
            })?;
        let (b, a) = (first.rows(), first.cols());
        for (i, s) in samples.iter().enumerate() {
            if s.rows() != b || s.cols() != a {
                return Err(PruneError::InvalidCalibration {
                    reason: format!("sample {i} is {}x{}, expected {b}x{a}", s.rows(), s.cols()),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn from_single(x: DenseMatrix) -> Self {
        Self { samples: vec![x] }
    }

    pub fn samples(&self) -> &[DenseMatrix] {
        &self.samples
    }

    /// Number of samples `d`.
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// Input dimension `b` (rows of each sample).
    pub fn input_dim(&self) -> usize {
        self.samples[0].rows()
    }

    /// Sample width `a` (columns of each sample).
    pub fn sample_width(&self) -> usize {
        self.samples[0].cols()
    }
}

/// Damped Hessian window together with its inverse.
///
/// `offset` marks which trailing window of the full input dimension this
/// Hessian describes: index 0 of the window is absolute column `offset`.
#[derive(Debug, Clone)]
pub struct Hessian {
    h: DenseMatrix,
    h_inv: DenseMatrix,
    lambda: f64,
    offset: usize,
}

impl Hessian {
    /// The damped Hessian window.
    pub fn matrix(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn inverse(&self) -> &DenseMatrix {
        &self.h_inv
    }

    /// Damping magnitude actually added to the diagonal.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Side length of the window.
    pub fn dim(&self) -> usize {
        self.h.rows()
    }
}

/// Undamped accumulator `(2/d) * sum_l X^l (X^l)^T`, kept around so that
/// per-block trailing windows can be cut from it and re-damped without
/// touching the calibration data again.
#[derive(Debug, Clone)]
pub struct HessianAccumulator {
    full: DenseMatrix,
}

impl HessianAccumulator {
    pub fn new(cal: &CalibrationSet) -> Self {
        let b = cal.input_dim();
        let a = cal.sample_width();
        let d = cal.count() as f64;
        let mut acc = vec![0.0; b * b];
        for x in cal.samples() {
            for i in 0..b {
                let xi = x.row(i);
                for j in i..b {
                    let xj = x.row(j);
                    let mut s = 0.0;
                    for k in 0..a {
                        s += xi[k] * xj[k];
                    }
                    acc[i * b + j] += s;
                }
            }
        }
        let scale = 2.0 / d;
        for i in 0..b {
            for j in i..b {
                let v = acc[i * b + j] * scale;
                acc[i * b + j] = v;
                acc[j * b + i] = v;
            }
        }
        Self {
            full: DenseMatrix::from_raw(b, b, acc),
        }
    }

    /// The full undamped matrix.
    pub fn full(&self) -> &DenseMatrix {
        &self.full
    }

    /// Cut the trailing window starting at `offset`, damp it by
    /// `lambda_rel` times its own mean diagonal, and invert.
    pub fn window(&self, offset: usize, lambda_rel: f64) -> Result<Hessian> {
        let b = self.full.rows();
        assert!(
            offset < b,
            "window offset {offset} out of range for dimension {b}"
        );
        let n = b - offset;
        let mut h = self.full.submatrix(offset, b, offset, b);

        let mean_diag = (0..n).map(|i| h.get(i, i)).sum::<f64>() / n as f64;
        let lambda = lambda_rel * mean_diag;
        if lambda != 0.0 {
            for i in 0..n {
                h.set(i, i, h.get(i, i) + lambda);
            }
        }
        let h_inv = spd_inverse(&h).map_err(|e| match e {
            PruneError::NotPositiveDefinite { .. } | PruneError::NotSymmetric { .. } => {
                PruneError::HessianNotInvertible { lambda }
            }
            other => other,
        })?;
        Ok(Hessian {
            h,
            h_inv,
            lambda,
            offset,
        })
    }
}

/// Full damped Hessian `(2/d) sum_l X^l (X^l)^T + lambda I` with
/// `lambda = lambda_rel * mean(diag)`, inverted via Cholesky.
pub fn compute_hessian(cal: &CalibrationSet, lambda_rel: f64) -> Result<Hessian> {
    HessianAccumulator::new(cal).window(0, lambda_rel)
}

/// Hessian of the trailing window `j2..b`, cut from the undamped
/// accumulator and then damped and inverted.
pub fn trailing_hessian(cal: &CalibrationSet, j2: usize, lambda_rel: f64) -> Result<Hessian> {
    HessianAccumulator::new(cal).window(j2, lambda_rel)
}

/// Per-input-row aggregate norms: `norms[q] = sqrt((1/d) sum_l ||X^l_q:||^2)`.
///
/// Consistent with the Hessian diagonal: `diag(H)/2 = norms^2` entrywise
/// when no damping is applied.
#[derive(Debug, Clone)]
pub struct RowNorms {
    norms: Vec<f64>,
}

impl RowNorms {
    pub fn values(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn get(&self, q: usize) -> f64 {
        self.norms[q]
    }

    /// Norms restricted to columns `[from, to)`.
    pub fn window(&self, from: usize, to: usize) -> RowNorms {
        RowNorms {
            norms: self.norms[from..to].to_vec(),
        }
    }

    /// All-ones norms; turns saliency selection into plain magnitude.
    pub fn unit(len: usize) -> RowNorms {
        RowNorms {
            norms: vec![1.0; len],
        }
    }

    pub fn from_values(norms: Vec<f64>) -> RowNorms {
        RowNorms { norms }
    }
}

pub fn row_norms(cal: &CalibrationSet) -> RowNorms {
    let b = cal.input_dim();
    let d = cal.count() as f64;
    let mut sq = vec![0.0; b];
    for x in cal.samples() {
        for (q, acc) in sq.iter_mut().enumerate() {
            for &v in x.row(q) {
                *acc += v * v;
            }
        }
    }
    let norms = sq.into_iter().map(|s| (s / d).sqrt()).collect();
    RowNorms { norms }
}
