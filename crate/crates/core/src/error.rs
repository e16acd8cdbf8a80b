//! Error type shared by all pruning and linear-algebra operations.

use thiserror::Error;

/// Errors produced by matrix kernels, calibration, and pruners.
#[derive(Debug, Clone, Error)]
pub enum PruneError {
    /// Matrix product or elementwise operation on incompatible shapes.
    #[error(
        "dimension mismatch: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}"
    )]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// Matrix construction with a payload that does not match rows*cols.
    #[error("data length {len} does not match {rows}x{cols} matrix")]
    BadDataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },

    /// A non-finite entry (NaN or infinity) reached a matrix constructor.
    #[error("non-finite entry {value} at flat index {index}")]
    NotFinite { index: usize, value: f64 },

    /// Cholesky input deviates from symmetry more than tolerated.
    #[error("matrix is not symmetric: |A - A^T| reaches {max_deviation:e}")]
    NotSymmetric { max_deviation: f64 },

    /// Cholesky hit a non-positive pivot; the matrix is not positive definite.
    #[error(
        "matrix is not positive definite: pivot {pivot} is non-positive; add damping and retry"
    )]
    NotPositiveDefinite { pivot: usize },

    /// A linear system in a batch is singular.
    #[error("singular system at batch index {batch_index}: degenerate Hessian submatrix; increase damping")]
    SingularSystem { batch_index: usize },

    /// Permutation vector length does not match the permuted dimension.
    #[error("permutation of length {perm_len} applied to dimension of size {dim}")]
    PermutationLengthMismatch { perm_len: usize, dim: usize },

    /// Index vector is not a bijection on 0..n.
    #[error("mapping is not a permutation of 0..{len}")]
    InvalidPermutation { len: usize },

    /// Hessian could not be inverted even after damping.
    #[error("Hessian is not invertible with damping lambda={lambda:e}; increase lambda_rel")]
    HessianNotInvertible { lambda: f64 },

    /// Removal budget outside the number of available cells.
    #[error("removal budget {requested} exceeds {available} available cells")]
    BudgetOutOfRange { requested: usize, available: usize },

    /// Sparsity ratio outside [0, 1).
    #[error("sparsity ratio {value} outside [0, 1)")]
    InvalidSparsity { value: f64 },

    /// n:m pattern with n >= m or m = 0.
    #[error("invalid {n}:{m} pattern: need 0 < n < m")]
    InvalidPattern { n: usize, m: usize },

    /// Structured mode cannot fit s columns into the layer width.
    #[error("alpha too large for target sparsity: would remove {s} of {b} columns")]
    AlphaTooLarge { s: usize, b: usize },

    /// Inverse-Hessian diagonal entry is non-positive; the single-weight
    /// update rule divides by it.
    #[error("non-positive inverse-Hessian diagonal at column {index}")]
    NonPositiveDiagonal { index: usize },

    /// Calibration set is empty or samples disagree in shape.
    #[error("invalid calibration set: {reason}")]
    InvalidCalibration { reason: String },

    /// Exhaustive search refused to run above its combinatorial bound.
    #[error("exhaustive search over {count} candidates exceeds limit {limit}")]
    SearchTooLarge { count: u128, limit: u128 },

    /// Configuration that cannot be executed as given.
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
}

pub type Result<T> = std::result::Result<T, PruneError>;
