//! Block-wise pruning with simultaneous multi-weight row updates.
//!
//! The central primitive removes `s` weights from one row at once: with
//! `Hinv` the inverse of the (damped) window Hessian, `R` the rows of
//! `Hinv` at the removal indices, `Rhat` the square submatrix of those
//! rows at the same indices, and `u` the weights being removed, the loss-
//! minimizing row change is `delta = -u Rhat^{-1} R`, at a predicted cost
//! of `u Rhat^{-1} u^T / 2`.
//!
//! Three drivers wrap the primitive:
//! - unstructured: a global residual mask re-selected before every block,
//!   with only the leading block columns acted on,
//! - semi-structured n:m: per-group masks, with the highest-loss rows held
//!   out as outliers,
//! - structured: whole columns, chosen and moved to the front by a column
//!   permutation, solved for all rows at once.
//!
//! Within a block, rows are independent given the shared inverse Hessian,
//! so their systems are solved as one padded batch; blocks are strictly
//! sequential because each block's updates feed the next block's mask.

use crate::baselines::{finish_outcome, PruneOutcome};
use crate::calibration::{compute_hessian, row_norms, CalibrationSet, HessianAccumulator};
use crate::error::{PruneError, Result};
use crate::masks::{nm_mask, phi_indices, psi_select, IndexSet, PruneMask};
use crate::matrix::{
    inverse_permute_cols, inverse_permute_rows, permute_cols, permute_rows, permute_symmetric,
    solve_batch_chunked, spd_inverse, BatchSystem, DenseMatrix, PermutationVector,
};

/// Sparsity structure produced by [`prune_thanos`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThanosPattern {
    Unstructured,
    /// Exactly `n` zeros per aligned group of `m` columns.
    SemiStructured {
        n: usize,
        m: usize,
    },
    /// Whole columns removed.
    Structured,
}

/// Knobs for the block-wise pruners.
#[derive(Debug, Clone)]
pub struct ThanosConfig {
    /// Columns handled per block. Clamped to the layer width; in n:m mode
    /// rounded down to a multiple of `m` so groups never straddle blocks.
    pub block_size: usize,
    /// Target sparsity ratio `p` (ignored by n:m, which is fixed by the
    /// pattern).
    pub sparsity: f64,
    pub pattern: ThanosPattern,
    /// Fraction of rows exempt from structured and semi-structured pruning.
    pub alpha: f64,
    /// Hessian damping as a fraction of the mean diagonal.
    pub lambda_rel: f64,
    /// Rows per batched-solve chunk.
    pub row_chunk: usize,
}

impl ThanosConfig {
    pub fn unstructured(sparsity: f64) -> Self {
        Self {
            block_size: 128,
            sparsity,
            pattern: ThanosPattern::Unstructured,
            alpha: 0.0,
            lambda_rel: crate::calibration::DEFAULT_LAMBDA_REL,
            row_chunk: 256,
        }
    }

    pub fn semi_structured(n: usize, m: usize) -> Self {
        Self {
            block_size: 512,
            sparsity: n as f64 / m as f64,
            pattern: ThanosPattern::SemiStructured { n, m },
            alpha: 0.0,
            lambda_rel: crate::calibration::DEFAULT_LAMBDA_REL,
            row_chunk: 256,
        }
    }

    pub fn structured(sparsity: f64) -> Self {
        Self {
            block_size: 512,
            sparsity,
            pattern: ThanosPattern::Structured,
            alpha: 0.0,
            lambda_rel: crate::calibration::DEFAULT_LAMBDA_REL,
            row_chunk: 256,
        }
    }

    pub fn with_block_size(mut self, b: usize) -> Self {
        self.block_size = b;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lambda_rel(mut self, lambda_rel: f64) -> Self {
        self.lambda_rel = lambda_rel;
        self
    }

    pub fn with_row_chunk(mut self, chunk: usize) -> Self {
        self.row_chunk = chunk;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(PruneError::InvalidSparsity {
                value: self.sparsity,
            });
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(PruneError::InvalidConfig {
                reason: format!("alpha {} outside [0, 1)", self.alpha),
            });
        }
        if self.block_size == 0 {
            return Err(PruneError::InvalidConfig {
                reason: "block size must be >= 1".into(),
            });
        }
        if let ThanosPattern::SemiStructured { n, m } = self.pattern {
            if n == 0 || n >= m {
                return Err(PruneError::InvalidPattern { n, m });
            }
        }
        Ok(())
    }
}

/// The per-row linear system behind the multi-weight update.
#[derive(Debug, Clone)]
pub struct RowUpdateSystem {
    /// Rows of the inverse Hessian at the removal indices, `s x width`.
    pub r: DenseMatrix,
    /// Columns of `r` at the same indices, `s x s`; symmetric because it is
    /// a principal submatrix of a symmetric inverse.
    pub rhat: DenseMatrix,
    /// The weights being removed, length `s`.
    pub u: Vec<f64>,
}

impl RowUpdateSystem {
    pub fn build(w: &[f64], q: &IndexSet, hinv: &DenseMatrix) -> Self {
        let s = q.len();
        let width = hinv.cols();
        let mut r = Vec::with_capacity(s * width);
        for &qi in q.indices() {
            r.extend_from_slice(hinv.row(qi));
        }
        let r = DenseMatrix::from_raw(s, width, r);
        let mut rhat = Vec::with_capacity(s * s);
        for t in 0..s {
            for &qj in q.indices() {
                rhat.push(r.get(t, qj));
            }
        }
        let rhat = DenseMatrix::from_raw(s, s, rhat);
        let u = q.indices().iter().map(|&qi| w[qi]).collect();
        Self { r, rhat, u }
    }
}

/// Optimal simultaneous removal of the weights at `q` from row `w`.
///
/// Returns the row change `delta` (with `delta[q_j] = -w[q_j]` written
/// exactly so that `w + delta` is exactly zero there) and the predicted
/// loss. The prediction uses `u lambda^T / 2`, which equals the quadratic
/// form `delta H delta^T / 2` because `R H R^T = Rhat`.
pub fn thanos_row_update(w: &[f64], q: &IndexSet, hinv: &DenseMatrix) -> Result<(Vec<f64>, f64)> {
    assert!(!q.is_empty(), "need at least one removal index");
    assert_eq!(w.len(), hinv.cols(), "row width must match Hessian window");
    let sys = RowUpdateSystem::build(w, q, hinv);
    let lambda = solve_batch_chunked(
        &[BatchSystem {
            rhat: sys.rhat.clone(),
            u: sys.u.clone(),
        }],
        1,
    )?
    .pop()
    .expect("one system in, one solution out");

    let width = hinv.cols();
    let mut delta = vec![0.0; width];
    for (t, &l) in lambda.iter().take(sys.u.len()).enumerate() {
        if l == 0.0 {
            continue;
        }
        let r_row = sys.r.row(t);
        for j in 0..width {
            delta[j] -= l * r_row[j];
        }
    }
    let saliency = 0.5
        * sys
            .u
            .iter()
            .zip(lambda.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();
    for &qj in q.indices() {
        delta[qj] = -w[qj];
    }
    Ok((delta, saliency))
}

/// Solve all row systems of one block as a padded batch and apply the
/// deltas to columns `[j1, ..)` in place; masked coordinates end exactly
/// zero. Rows with empty index sets are untouched.
fn apply_block_updates(
    cur: &mut DenseMatrix,
    j1: usize,
    row_sets: &[IndexSet],
    hinv: &DenseMatrix,
    row_chunk: usize,
) -> Result<()> {
    let width = hinv.cols();
    debug_assert_eq!(j1 + width, cur.cols());

    let mut active: Vec<usize> = Vec::new();
    let mut systems: Vec<BatchSystem> = Vec::new();
    for (i, set) in row_sets.iter().enumerate() {
        if set.is_empty() {
            continue;
        }
        let window = &cur.row(i)[j1..];
        let sys = RowUpdateSystem::build(window, set, hinv);
        active.push(i);
        systems.push(BatchSystem {
            rhat: sys.rhat,
            u: sys.u,
        });
    }
    if systems.is_empty() {
        return Ok(());
    }
    let lambdas = solve_batch_chunked(&systems, row_chunk.max(1))?;

    for ((&i, lambda), sys) in active.iter().zip(&lambdas).zip(&systems) {
        let set = &row_sets[i];
        let row = cur.row_mut(i);
        for (t, &l) in lambda.iter().take(sys.u.len()).enumerate() {
            if l == 0.0 {
                continue;
            }
            let qt = set.indices()[t];
            for j in 0..width {
                row[j1 + j] -= l * hinv.get(qt, j);
            }
        }
        for &qj in set.indices() {
            row[j1 + qj] = 0.0;
        }
    }
    Ok(())
}

/// Unstructured block-wise pruning with a global residual mask.
///
/// The removal budget starts at `floor(p * c * b)`. Before each block the
/// mask is re-selected over all remaining columns with the remaining
/// budget; only its leading block columns are pruned, and the budget drops
/// by what was actually taken, so the final zero count is exact.
pub fn prune_thanos_unstructured(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    cfg: &ThanosConfig,
) -> Result<PruneOutcome> {
    cfg.validate()?;
    if cfg.pattern != ThanosPattern::Unstructured {
        return Err(PruneError::InvalidConfig {
            reason: "pattern must be unstructured for this driver".into(),
        });
    }
    let (c, b) = (w.rows(), w.cols());
    let bsize = cfg.block_size.min(b);
    let mut budget = (cfg.sparsity * (c * b) as f64).floor() as usize;

    let acc = HessianAccumulator::new(cal);
    let norms = row_norms(cal);
    let mut cur = w.clone();
    let mut mask = PruneMask::new(c, b);

    let mut j1 = 0;
    while j1 < b && budget > 0 {
        let width = b - j1;
        let local_cols = bsize.min(width);
        if budget > c * width {
            return Err(PruneError::BudgetOutOfRange {
                requested: budget,
                available: c * width,
            });
        }
        let window = cur.submatrix(0, c, j1, b);
        let wnorms = norms.window(j1, b);
        let residual_mask = psi_select(&window, &wnorms, budget)?;

        let mut row_sets: Vec<IndexSet> = Vec::with_capacity(c);
        let mut taken = 0;
        for i in 0..c {
            let local = &residual_mask.row(i)[..local_cols];
            let set = phi_indices(local);
            taken += set.len();
            for &qj in set.indices() {
                mask.set(i, j1 + qj, true);
            }
            row_sets.push(set);
        }

        if taken > 0 {
            let hess = acc.window(j1, cfg.lambda_rel)?;
            apply_block_updates(&mut cur, j1, &row_sets, hess.inverse(), cfg.row_chunk)?;
        }
        budget -= taken;
        j1 += local_cols;
    }

    finish_outcome(w, cur, mask, cal, "thanos")
}

/// One-shot multi-weight update under a caller-supplied mask: one window
/// spanning the whole layer, one solve per masked row. Used to compare the
/// optimal update against plain zeroing on identical masks.
pub fn prune_thanos_with_mask(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    mask: &PruneMask,
    lambda_rel: f64,
    row_chunk: usize,
) -> Result<PruneOutcome> {
    if mask.rows() != w.rows() || mask.cols() != w.cols() {
        return Err(PruneError::DimensionMismatch {
            left_rows: w.rows(),
            left_cols: w.cols(),
            right_rows: mask.rows(),
            right_cols: mask.cols(),
        });
    }
    let hess = compute_hessian(cal, lambda_rel)?;
    let mut cur = w.clone();
    let row_sets: Vec<IndexSet> = (0..w.rows()).map(|i| phi_indices(mask.row(i))).collect();
    apply_block_updates(&mut cur, 0, &row_sets, hess.inverse(), row_chunk)?;
    finish_outcome(w, cur, mask.clone(), cal, "thanos-mask")
}

/// Semi-structured n:m pruning with outlier rows.
///
/// Rows are permuted by ascending removal loss so the `ceil(alpha * c)`
/// highest-loss rows sit last; those rows are never masked or updated and
/// come back bit-identical. The remaining rows get exactly `n` zeros per
/// aligned `m`-group, block by block, with the multi-weight update.
pub fn prune_thanos_nm(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    n: usize,
    m: usize,
    alpha: f64,
    cfg: &ThanosConfig,
) -> Result<PruneOutcome> {
    let (c, b) = (w.rows(), w.cols());
    if n == 0 || n >= m || m > b {
        return Err(PruneError::InvalidPattern { n, m });
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(PruneError::InvalidConfig {
            reason: format!("alpha {alpha} outside [0, 1)"),
        });
    }
    let mut cfg = cfg.clone();
    cfg.pattern = ThanosPattern::SemiStructured { n, m };
    cfg.alpha = alpha;
    cfg.validate()?;

    // groups must not straddle block boundaries
    let mut bsize = cfg.block_size.min(b).max(1);
    bsize = (bsize / m * m).max(m);

    let outliers = (alpha * c as f64).ceil() as usize;
    let keep = c - outliers;

    let h_losses = outlier_row_losses(w, cal);
    let qperm = PermutationVector::sorted_ascending(&h_losses);
    let mut cur = permute_rows(w, &qperm)?;

    let acc = HessianAccumulator::new(cal);
    let norms = row_norms(cal);
    let mut mask_perm = PruneMask::new(c, b);

    let mut j1 = 0;
    while j1 < b && keep > 0 {
        let local_cols = bsize.min(b - j1);
        let sub = cur.submatrix(0, keep, j1, j1 + local_cols);
        let local_mask = nm_mask(&sub, &norms.window(j1, j1 + local_cols), n, m)?;

        let mut row_sets: Vec<IndexSet> = Vec::with_capacity(c);
        for i in 0..keep {
            let set = phi_indices(local_mask.row(i));
            for &qj in set.indices() {
                mask_perm.set(i, j1 + qj, true);
            }
            row_sets.push(set);
        }
        row_sets.resize(c, IndexSet::default());

        let hess = acc.window(j1, cfg.lambda_rel)?;
        apply_block_updates(&mut cur, j1, &row_sets, hess.inverse(), cfg.row_chunk)?;
        j1 += local_cols;
    }

    let pruned = inverse_permute_rows(&cur, &qperm)?;
    let mask = unpermute_mask_rows(&mask_perm, &qperm);
    finish_outcome(w, pruned, mask, cal, &format!("thanos-{n}:{m}"))
}

/// Structured column pruning with outlier rows.
///
/// Removes `s = ceil(p * b / (1 - alpha))` whole columns from the
/// non-outlier rows. Rows are permuted by ascending removal loss, columns
/// by ascending column loss over the non-outlier rows; the leading `s`
/// permuted columns are then zeroed for all non-outlier rows in a single
/// shared-index update, and both permutations are undone.
pub fn prune_thanos_structured(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    p: f64,
    alpha: f64,
    lambda_rel: f64,
) -> Result<PruneOutcome> {
    let (c, b) = (w.rows(), w.cols());
    if !(0.0..1.0).contains(&p) {
        return Err(PruneError::InvalidSparsity { value: p });
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(PruneError::InvalidConfig {
            reason: format!("alpha {alpha} outside [0, 1)"),
        });
    }
    let s = (p * b as f64 / (1.0 - alpha)).ceil() as usize;
    if s > b {
        return Err(PruneError::AlphaTooLarge { s, b });
    }
    if s == 0 {
        return finish_outcome(w, w.clone(), PruneMask::new(c, b), cal, "thanos-structured");
    }
    let outliers = (alpha * c as f64).ceil() as usize;
    let keep = c - outliers;

    let h_losses = outlier_row_losses(w, cal);
    let qperm = PermutationVector::sorted_ascending(&h_losses);
    let wr = permute_rows(w, &qperm)?;

    let v_losses = column_losses(&wr, cal, outliers);
    let pperm = PermutationVector::sorted_ascending(&v_losses);
    let mut wp = permute_cols(&wr, &pperm)?;

    // Hessian in permuted column order: entries relocated, then damped.
    let acc = HessianAccumulator::new(cal);
    let mut h = permute_symmetric(acc.full(), &pperm)?;
    let mean_diag = (0..b).map(|i| h.get(i, i)).sum::<f64>() / b as f64;
    let lambda = lambda_rel * mean_diag;
    for i in 0..b {
        h.set(i, i, h.get(i, i) + lambda);
    }
    let hinv = spd_inverse(&h).map_err(|e| match e {
        PruneError::NotPositiveDefinite { .. } => PruneError::HessianNotInvertible { lambda },
        other => other,
    })?;

    if keep > 0 {
        // shared update for every non-outlier row: delta = -u K with
        // K = (Hinv[:s,:s])^{-1} Hinv[:s,:]
        let rhat = hinv.submatrix(0, s, 0, s);
        let rhat_inv = spd_inverse(&rhat)?;
        let r = hinv.submatrix(0, s, 0, b);
        let k = rhat_inv.matmul(&r)?;
        let u = wp.submatrix(0, keep, 0, s);
        let deltas = u.matmul(&k)?;
        for i in 0..keep {
            let row = wp.row_mut(i);
            for (j, rv) in row.iter_mut().enumerate() {
                *rv -= deltas.get(i, j);
            }
            row[..s].fill(0.0);
        }
    }

    let wc = inverse_permute_cols(&wp, &pperm)?;
    let pruned = inverse_permute_rows(&wc, &qperm)?;

    let mut mask = PruneMask::new(c, b);
    for i in 0..keep {
        let orig_row = qperm.mapping()[i];
        for j in 0..s {
            mask.set(orig_row, pperm.mapping()[j], true);
        }
    }
    finish_outcome(w, pruned, mask, cal, "thanos-structured")
}

/// Loss induced by removing each row: `h_i = (1/d) sum_l ||W_i: X^l||^2`.
pub fn outlier_row_losses(w: &DenseMatrix, cal: &CalibrationSet) -> Vec<f64> {
    let d = cal.count() as f64;
    let mut out = vec![0.0; w.rows()];
    for x in cal.samples() {
        for (i, acc) in out.iter_mut().enumerate() {
            let wi = w.row(i);
            for k in 0..x.cols() {
                let mut dot = 0.0;
                for (j, &wv) in wi.iter().enumerate() {
                    dot += wv * x.get(j, k);
                }
                *acc += dot * dot;
            }
        }
    }
    for v in &mut out {
        *v /= d;
    }
    out
}

/// Loss induced by removing each column, over the non-outlier rows of an
/// already row-permuted weight matrix:
/// `v_j = (sum_i W_ij^2) * (1/d) sum_l ||X^l_j:||^2`.
pub fn column_losses(
    w_row_permuted: &DenseMatrix,
    cal: &CalibrationSet,
    outlier_count: usize,
) -> Vec<f64> {
    let keep = w_row_permuted.rows().saturating_sub(outlier_count);
    let norms = row_norms(cal);
    (0..w_row_permuted.cols())
        .map(|j| {
            let col_sq: f64 = (0..keep)
                .map(|i| {
                    let v = w_row_permuted.get(i, j);
                    v * v
                })
                .sum();
            let n = norms.get(j);
            col_sq * n * n
        })
        .collect()
}

/// Dispatch on the configured pattern.
pub fn prune_thanos(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    cfg: &ThanosConfig,
) -> Result<PruneOutcome> {
    match cfg.pattern {
        ThanosPattern::Unstructured => prune_thanos_unstructured(w, cal, cfg),
        ThanosPattern::SemiStructured { n, m } => prune_thanos_nm(w, cal, n, m, cfg.alpha, cfg),
        ThanosPattern::Structured => {
            prune_thanos_structured(w, cal, cfg.sparsity, cfg.alpha, cfg.lambda_rel)
        }
    }
}

fn unpermute_mask_rows(mask: &PruneMask, qperm: &PermutationVector) -> PruneMask {
    let mut out = PruneMask::new(mask.rows(), mask.cols());
    for i in 0..mask.rows() {
        let orig = qperm.mapping()[i];
        for j in 0..mask.cols() {
            if mask.get(i, j) {
                out.set(orig, j, true);
            }
        }
    }
    out
}
