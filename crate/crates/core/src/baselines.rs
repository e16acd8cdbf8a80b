//! Reference pruners: magnitude, Wanda (row-wise saliency, no update),
//! the single-weight second-order update step, and the sequential
//! column-by-column scheme with inverse-Hessian compensation.

use crate::calibration::{compute_hessian, row_norms, CalibrationSet, Hessian};
use crate::error::{PruneError, Result};
use crate::masks::{magnitude_mask, wanda_rowwise_mask, PruneMask};
use crate::matrix::{cholesky, DenseMatrix};
use crate::oracle::loss_eval;

/// Result of pruning one layer.
///
/// `loss_before` is the reconstruction loss of zeroing the masked weights
/// with no compensation; `loss_after` is the loss actually achieved by the
/// method. Both average over calibration samples. For methods without a
/// weight update the two coincide.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub pruned: DenseMatrix,
    pub mask: PruneMask,
    pub loss_before: f64,
    pub loss_after: f64,
    pub method: String,
}

impl PruneOutcome {
    /// Number of weights forced to zero.
    pub fn zeros(&self) -> usize {
        self.mask.popcount()
    }

    pub fn sparsity(&self) -> f64 {
        self.mask.sparsity()
    }
}

/// `-(M .* W)` as a dense delta, for loss bookkeeping.
pub(crate) fn zeroing_delta(w: &DenseMatrix, mask: &PruneMask) -> DenseMatrix {
    let mut d = DenseMatrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if mask.get(i, j) {
                d.set(i, j, -w.get(i, j));
            }
        }
    }
    d
}

pub(crate) fn difference(after: &DenseMatrix, before: &DenseMatrix) -> DenseMatrix {
    let data = after
        .data()
        .iter()
        .zip(before.data())
        .map(|(a, b)| a - b)
        .collect();
    DenseMatrix::from_raw(before.rows(), before.cols(), data)
}

pub(crate) fn finish_outcome(
    original: &DenseMatrix,
    pruned: DenseMatrix,
    mask: PruneMask,
    cal: &CalibrationSet,
    method: &str,
) -> Result<PruneOutcome> {
    let loss_before = loss_eval(&zeroing_delta(original, &mask), cal)?.value();
    let loss_after = loss_eval(&difference(&pruned, original), cal)?.value();
    Ok(PruneOutcome {
        pruned,
        mask,
        loss_before,
        loss_after,
        method: method.to_string(),
    })
}

/// Zero the `floor(p * cells)` weights of smallest magnitude. No update.
pub fn prune_magnitude(w: &DenseMatrix, cal: &CalibrationSet, p: f64) -> Result<PruneOutcome> {
    let mask = magnitude_mask(w, p)?;
    let mut pruned = w.clone();
    apply_zeroing(&mut pruned, &mask);
    finish_outcome(w, pruned, mask, cal, "magnitude")
}

/// Row-wise saliency mask, zeroing only.
pub fn prune_wanda(w: &DenseMatrix, cal: &CalibrationSet, p: f64) -> Result<PruneOutcome> {
    let norms = row_norms(cal);
    let mask = wanda_rowwise_mask(w, &norms, p)?;
    let mut pruned = w.clone();
    apply_zeroing(&mut pruned, &mask);
    finish_outcome(w, pruned, mask, cal, "wanda")
}

fn apply_zeroing(w: &mut DenseMatrix, mask: &PruneMask) {
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if mask.get(i, j) {
                w.set(i, j, 0.0);
            }
        }
    }
}

/// Optimal single-weight removal for row `k`, column `q` (absolute):
/// `delta = -(W[k][q] / Hinv[q][q]) * Hinv[q, :]` over the Hessian window,
/// with saliency `W[k][q]^2 / (2 Hinv[q][q])`.
///
/// Returns the full updated row with an exact zero at `q`.
pub fn obs_single_step(
    w: &DenseMatrix,
    h: &Hessian,
    k: usize,
    q: usize,
) -> Result<(Vec<f64>, f64)> {
    let off = h.offset();
    assert!(
        k < w.rows() && q >= off && q < off + h.dim(),
        "obs step out of window"
    );
    let qi = q - off;
    let hinv = h.inverse();
    let d = hinv.get(qi, qi);
    if d <= 0.0 {
        return Err(PruneError::NonPositiveDiagonal { index: q });
    }
    let wkq = w.get(k, q);
    let coef = wkq / d;
    let mut row = w.row(k).to_vec();
    for j in 0..h.dim() {
        row[off + j] -= coef * hinv.get(qi, j);
    }
    row[q] = 0.0;
    let saliency = 0.5 * wkq * wkq / d;
    Ok((row, saliency))
}

/// Sparsity contract for the sequential column-wise pruner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparsityTarget {
    /// Block-local density: `floor(p * c * width)` marks per mask block.
    Ratio(f64),
    /// Exactly `n` zeros per aligned group of `m` columns in every row.
    Pattern { n: usize, m: usize },
}

/// Sequential left-to-right pruning with second-order compensation.
///
/// Every `mask_block` columns a fresh mask is selected from the current
/// weights by the metric `W^2 / diag`, where `diag` is the trailing-window
/// inverse-Hessian diagonal. Each pruned weight triggers the single-weight
/// update on the remaining right-side segment of its row. The trailing
/// windows come from the upper Cholesky factor of the damped inverse
/// Hessian, computed once: with `Hinv = U^T U`, the window starting at `q`
/// has inverse `U[q:, q:]^T U[q:, q:]`, so its leading diagonal entry is
/// `U[q][q]^2` and its leading row is `U[q][q] * U[q, q:]`.
///
/// For an `n:m` target the mask block size is forced to `m`.
pub fn prune_sparsegpt(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    target: SparsityTarget,
    block_size: usize,
    mask_block: usize,
    lambda_rel: f64,
) -> Result<PruneOutcome> {
    let (c, b) = (w.rows(), w.cols());
    let mask_block = match target {
        SparsityTarget::Ratio(p) => {
            if !(0.0..1.0).contains(&p) {
                return Err(PruneError::InvalidSparsity { value: p });
            }
            let blk = if block_size == 0 {
                b.max(1)
            } else {
                block_size.min(b.max(1))
            };
            let bs = if mask_block == 0 { blk } else { mask_block };
            if bs == 0 || bs > blk || blk % bs != 0 {
                return Err(PruneError::InvalidConfig {
                    reason: format!("mask block {bs} must divide block size {blk}"),
                });
            }
            bs
        }
        SparsityTarget::Pattern { n, m } => {
            if n == 0 || n >= m {
                return Err(PruneError::InvalidPattern { n, m });
            }
            m
        }
    };

    let hess = compute_hessian(cal, lambda_rel)?;
    // Lower factor of Hinv; its transpose is the upper factor U referenced
    // above, read here as U[q][j] = l.get(j, q).
    let l = cholesky(hess.inverse())?;

    let mut cur = w.clone();
    let mut mask = PruneMask::new(c, b);

    for q in 0..b {
        if q % mask_block == 0 {
            let width = mask_block.min(b - q);
            select_block_mask(&mut mask, &cur, &l, q, width, target);
        }
        let uqq = l.get(q, q);
        for k in 0..c {
            if !mask.get(k, q) {
                continue;
            }
            let coef = cur.get(k, q) / uqq;
            let row = cur.row_mut(k);
            for (j, rv) in row.iter_mut().enumerate().skip(q) {
                *rv -= coef * l.get(j, q);
            }
            row[q] = 0.0;
        }
    }

    finish_outcome(w, cur, mask, cal, "sparsegpt")
}

/// Select the mask for the block of columns `[q0, q0 + width)` from the
/// current weights.
fn select_block_mask(
    mask: &mut PruneMask,
    cur: &DenseMatrix,
    l: &DenseMatrix,
    q0: usize,
    width: usize,
    target: SparsityTarget,
) {
    let c = cur.rows();
    let metric = |i: usize, j: usize| {
        let d = l.get(j, j);
        let v = cur.get(i, j);
        v * v / (d * d)
    };
    match target {
        SparsityTarget::Ratio(p) => {
            let count = (p * (c * width) as f64).floor() as usize;
            let mut order: Vec<(usize, usize)> = (0..c)
                .flat_map(|i| (q0..q0 + width).map(move |j| (i, j)))
                .collect();
            order.sort_unstable_by(|&(ai, aj), &(bi, bj)| {
                metric(ai, aj)
                    .total_cmp(&metric(bi, bj))
                    .then((ai, aj).cmp(&(bi, bj)))
            });
            for &(i, j) in order.iter().take(count) {
                mask.set(i, j, true);
            }
        }
        SparsityTarget::Pattern { n, m } => {
            let take = if width == m { n } else { n * width / m };
            for i in 0..c {
                let mut cols: Vec<usize> = (q0..q0 + width).collect();
                cols.sort_unstable_by(|&a, &b| {
                    metric(i, a).total_cmp(&metric(i, b)).then(a.cmp(&b))
                });
                for &j in cols.iter().take(take) {
                    mask.set(i, j, true);
                }
            }
        }
    }
}
