//! Calibration-aware weight pruning for dense linear layers.
//!
//! Given a weight matrix `W` (`c x b`) and a small set of input samples
//! `X^1..X^d` (`b x a` each), every pruner here zeroes a prescribed set of
//! weights while keeping the layer output change `||(W' - W) X||_F^2` as
//! small as it can:
//!
//! - [`baselines::prune_magnitude`] — smallest `|W_ij|`, no compensation.
//! - [`baselines::prune_wanda`] — smallest `|W_ij| * ||X_j||`, row-wise,
//!   no compensation.
//! - [`baselines::prune_sparsegpt`] — sequential column sweep with a
//!   second-order update after every removal.
//! - [`thanos::prune_thanos`] — block-wise simultaneous multi-weight
//!   updates, in unstructured, n:m, and whole-column (structured) modes,
//!   optionally protecting outlier rows.
//!
//! The [`oracle`] module carries brute-force references (direct loss
//! evaluation, constrained least squares by free-variable elimination,
//! exhaustive searches) used to verify all of the above.

pub mod baselines;
pub mod calibration;
pub mod error;
pub mod masks;
pub mod matrix;
pub mod oracle;
pub mod thanos;

pub use baselines::{
    obs_single_step, prune_magnitude, prune_sparsegpt, prune_wanda, PruneOutcome, SparsityTarget,
};
pub use calibration::{
    compute_hessian, row_norms, trailing_hessian, CalibrationSet, Hessian, HessianAccumulator,
    RowNorms,
};
pub use error::{PruneError, Result};
pub use masks::{
    magnitude_mask, nm_mask, phi_indices, psi_select, saliency, wanda_rowwise_mask, IndexSet,
    PruneMask, SaliencyGrid,
};
pub use matrix::{
    cholesky, inverse_permute_cols, inverse_permute_rows, permute_cols, permute_rows, solve_batch,
    solve_batch_chunked, spd_inverse, BatchSystem, DenseMatrix, PermutationVector,
};
pub use oracle::{
    constrained_lsq, exhaustive_mask_search, exhaustive_single_weight, loss_eval, LossValue,
};
pub use thanos::{
    column_losses, outlier_row_losses, prune_thanos, prune_thanos_nm, prune_thanos_structured,
    prune_thanos_unstructured, prune_thanos_with_mask, thanos_row_update, RowUpdateSystem,
    ThanosConfig, ThanosPattern,
};
