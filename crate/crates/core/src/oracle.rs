//! Brute-force references for verification: direct loss evaluation,
//! constrained least squares by free-variable elimination, and exhaustive
//! searches over single weights and small masks.
//!
//! These deliberately take a different route than the production pruners —
//! the constrained solve eliminates the pinned coordinates and minimizes
//! over the free block of the Hessian instead of going through the inverse
//! Hessian — so agreement between the two is evidence, not tautology.
//! Shipped in the library so downstream users can re-verify pruned outputs.

use crate::calibration::{CalibrationSet, HessianAccumulator};
use crate::error::{PruneError, Result};
use crate::masks::{IndexSet, PruneMask};
use crate::matrix::DenseMatrix;

/// Cell-count ceiling for [`exhaustive_single_weight`].
pub const SINGLE_WEIGHT_CELL_LIMIT: usize = 256;

/// Candidate-count ceiling for [`exhaustive_mask_search`].
pub const MASK_SEARCH_LIMIT: u128 = 20_000;

/// Nonnegative reconstruction loss `(1/d) sum_l ||Delta X^l||_F^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue(pub f64);

impl LossValue {
    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Direct evaluation of the reconstruction loss of a weight change.
pub fn loss_eval(delta: &DenseMatrix, cal: &CalibrationSet) -> Result<LossValue> {
    if delta.cols() != cal.input_dim() {
        return Err(PruneError::DimensionMismatch {
            left_rows: delta.rows(),
            left_cols: delta.cols(),
            right_rows: cal.input_dim(),
            right_cols: cal.sample_width(),
        });
    }
    let mut total = 0.0;
    for x in cal.samples() {
        total += delta.matmul(x)?.frobenius_norm_sq();
    }
    Ok(LossValue(total / cal.count() as f64))
}

/// Loss of a single row change.
pub fn row_loss_eval(delta: &[f64], cal: &CalibrationSet) -> Result<LossValue> {
    let m = DenseMatrix::from_vec(1, delta.len(), delta.to_vec())?;
    loss_eval(&m, cal)
}

/// Minimize `(1/d) sum_l ||delta X^l||^2` over `delta` subject to
/// `delta[q_j] = -w[q_j]` for every pinned index.
///
/// Solved by eliminating the pinned coordinates: with `H` the undamped
/// Hessian, the free block satisfies `H_FF delta_F^T = -H_FC delta_C^T`.
/// A singular free block is retried once with a tiny diagonal jitter
/// (1e-12 of the mean diagonal) before giving up.
pub fn constrained_lsq(w: &[f64], q: &IndexSet, cal: &CalibrationSet) -> Result<Vec<f64>> {
    let b = w.len();
    assert_eq!(
        b,
        cal.input_dim(),
        "row width must match calibration input dim"
    );
    let pinned = q.indices();
    let mut delta = vec![0.0; b];
    for &j in pinned {
        assert!(j < b, "pinned index {j} out of range");
        delta[j] = -w[j];
    }
    let free: Vec<usize> = (0..b).filter(|j| !pinned.contains(j)).collect();
    if free.is_empty() {
        return Ok(delta);
    }

    let h = HessianAccumulator::new(cal);
    let hm = h.full();
    let nf = free.len();

    // rhs = -H_FC delta_C^T
    let mut rhs = vec![0.0; nf];
    for (fi, &fj) in free.iter().enumerate() {
        let mut s = 0.0;
        for &cj in pinned {
            s -= hm.get(fj, cj) * delta[cj];
        }
        rhs[fi] = s;
    }
    let mut a = vec![0.0; nf * nf];
    for (fi, &fr) in free.iter().enumerate() {
        for (fj, &fc) in free.iter().enumerate() {
            a[fi * nf + fj] = hm.get(fr, fc);
        }
    }

    let mut x = rhs.clone();
    let mut a_try = a.clone();
    if gauss_solve(&mut a_try, &mut x, nf).is_err() {
        // jitter the free diagonal once and retry
        let mean_diag = free.iter().map(|&j| hm.get(j, j)).sum::<f64>() / nf as f64;
        let jitter = 1e-12 * mean_diag.max(1.0);
        let mut a_jit = a;
        for i in 0..nf {
            a_jit[i * nf + i] += jitter;
        }
        x = rhs;
        gauss_solve(&mut a_jit, &mut x, nf)
            .map_err(|_| PruneError::SingularSystem { batch_index: 0 })?;
    }
    for (fi, &fj) in free.iter().enumerate() {
        delta[fj] = x[fi];
    }
    Ok(delta)
}

/// Plain Gaussian elimination with partial pivoting, local to the oracle.
fn gauss_solve(a: &mut [f64], x: &mut [f64], n: usize) -> std::result::Result<(), ()> {
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for r in (col + 1)..n {
            if a[r * n + col].abs() > best {
                best = a[r * n + col].abs();
                pivot = r;
            }
        }
        if best == 0.0 {
            return Err(());
        }
        if pivot != col {
            for j in 0..n {
                a.swap(pivot * n + j, col * n + j);
            }
            x.swap(pivot, col);
        }
        for r in (col + 1)..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut v = x[col];
        for j in (col + 1)..n {
            v -= a[col * n + j] * x[j];
        }
        x[col] = v / a[col * n + col];
    }
    Ok(())
}

/// Result of scanning every single-weight removal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleWeightArgmin {
    pub row: usize,
    pub col: usize,
    pub loss: f64,
}

/// Try removing every single weight `(k, q)` and report the best choice,
/// both with the optimal compensating update and with plain zeroing.
///
/// Ties resolve to the lexicographically smallest `(k, q)`.
pub fn exhaustive_single_weight(
    w: &DenseMatrix,
    cal: &CalibrationSet,
) -> Result<(SingleWeightArgmin, SingleWeightArgmin)> {
    let cells = w.rows() * w.cols();
    if cells > SINGLE_WEIGHT_CELL_LIMIT {
        return Err(PruneError::SearchTooLarge {
            count: cells as u128,
            limit: SINGLE_WEIGHT_CELL_LIMIT as u128,
        });
    }
    let mut best_updated: Option<SingleWeightArgmin> = None;
    let mut best_zeroed: Option<SingleWeightArgmin> = None;
    for k in 0..w.rows() {
        for q in 0..w.cols() {
            let row = w.row(k);
            // zero-only branch
            let mut dz = vec![0.0; w.cols()];
            dz[q] = -row[q];
            let lz = row_loss_eval(&dz, cal)?.value();
            if best_zeroed.is_none() || lz < best_zeroed.unwrap().loss {
                best_zeroed = Some(SingleWeightArgmin {
                    row: k,
                    col: q,
                    loss: lz,
                });
            }
            // updated branch
            let set = IndexSet::new(vec![q])?;
            let du = constrained_lsq(row, &set, cal)?;
            let lu = row_loss_eval(&du, cal)?.value();
            if best_updated.is_none() || lu < best_updated.unwrap().loss {
                best_updated = Some(SingleWeightArgmin {
                    row: k,
                    col: q,
                    loss: lu,
                });
            }
        }
    }
    Ok((best_updated.unwrap(), best_zeroed.unwrap()))
}

/// Enumerate every mask of exactly `r` marks over the layer, solve the
/// per-row constrained least squares for each, and return the best mask
/// with its loss. Only feasible for tiny instances.
pub fn exhaustive_mask_search(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    r: usize,
) -> Result<(PruneMask, f64)> {
    let cells = w.rows() * w.cols();
    let count = binomial(cells as u128, r as u128);
    if count > MASK_SEARCH_LIMIT {
        return Err(PruneError::SearchTooLarge {
            count,
            limit: MASK_SEARCH_LIMIT,
        });
    }
    if r > cells {
        return Err(PruneError::BudgetOutOfRange {
            requested: r,
            available: cells,
        });
    }

    let mut best_mask = PruneMask::new(w.rows(), w.cols());
    let mut best_loss = f64::INFINITY;

    let mut combo: Vec<usize> = (0..r).collect();
    loop {
        let mut mask = PruneMask::new(w.rows(), w.cols());
        for &flat in &combo {
            mask.set(flat / w.cols(), flat % w.cols(), true);
        }
        let mut delta = DenseMatrix::zeros(w.rows(), w.cols());
        for i in 0..w.rows() {
            let set = phi_set(&mask, i);
            if set.is_empty() {
                continue;
            }
            let d = constrained_lsq(w.row(i), &set, cal)?;
            for (j, v) in d.into_iter().enumerate() {
                delta.set(i, j, v);
            }
        }
        let loss = loss_eval(&delta, cal)?.value();
        if loss < best_loss {
            best_loss = loss;
            best_mask = mask;
        }
        if !next_combination(&mut combo, cells) {
            break;
        }
    }
    if r == 0 {
        best_loss = 0.0;
    }
    Ok((best_mask, best_loss))
}

fn phi_set(mask: &PruneMask, row: usize) -> IndexSet {
    crate::masks::phi_indices(mask.row(row))
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
        if acc > MASK_SEARCH_LIMIT * 1000 {
            return acc; // already far past any limit we enforce
        }
    }
    acc
}

/// Advance `combo` to the next k-combination of `0..n` in lexicographic
/// order; false when exhausted.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] != i + n - k {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
