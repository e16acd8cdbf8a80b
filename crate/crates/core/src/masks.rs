//! Saliency metrics and mask construction.
//!
//! The saliency of a weight is `|W[i][j]| * norms[j]`, the loss of zeroing
//! that weight alone (up to a square). Masks mark weights for removal; ties
//! are always broken by ascending row-major index so every selection is
//! deterministic.

use crate::calibration::RowNorms;
use crate::error::{PruneError, Result};
use crate::matrix::DenseMatrix;

/// Boolean removal mask over a weight window. `true` marks a weight that
/// will be forced to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    /// Number of marked weights.
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn popcount_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }

    /// Fraction of marked cells.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.popcount() as f64 / self.bits.len() as f64
        }
    }
}

/// Grid of nonnegative saliency values, same shape as the weight window.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyGrid {
    values: DenseMatrix,
}

impl SaliencyGrid {
    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

/// Strictly increasing column indices selected for removal in one row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    /// Validates strict ascent.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(PruneError::InvalidCalibration {
                    reason: format!("index set not strictly increasing at {} >= {}", w[0], w[1]),
                });
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Rebuild the boolean row this set came from.
    pub fn to_mask_row(&self, width: usize) -> Vec<bool> {
        let mut row = vec![false; width];
        for &q in &self.indices {
            row[q] = true;
        }
        row
    }
}

/// `values[i][j] = |W[i][j]| * norms[j]`.
pub fn saliency(w: &DenseMatrix, norms: &RowNorms) -> Result<SaliencyGrid> {
    if w.cols() != norms.len() {
        return Err(PruneError::DimensionMismatch {
            left_rows: w.rows(),
            left_cols: w.cols(),
            right_rows: norms.len(),
            right_cols: 1,
        });
    }
    let mut out = Vec::with_capacity(w.rows() * w.cols());
    let nv = norms.values();
    for i in 0..w.rows() {
        for (j, &n) in nv.iter().enumerate() {
            out.push(w.get(i, j).abs() * n);
        }
    }
    Ok(SaliencyGrid {
        values: DenseMatrix::from_raw(w.rows(), w.cols(), out),
    })
}

/// Mask of the `r` weights with globally smallest saliency.
pub fn psi_select(w: &DenseMatrix, norms: &RowNorms, r: usize) -> Result<PruneMask> {
    let grid = saliency(w, norms)?;
    let cells = w.rows() * w.cols();
    if r > cells {
        return Err(PruneError::BudgetOutOfRange {
            requested: r,
            available: cells,
        });
    }
    Ok(select_smallest_global(
        grid.values().data(),
        w.rows(),
        w.cols(),
        r,
    ))
}

/// Indices of the set bits of a mask row, strictly increasing.
pub fn phi_indices(mask_row: &[bool]) -> IndexSet {
    IndexSet {
        indices: mask_row
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Within every aligned group of `m` consecutive columns of each row, mark
/// the `n` weights of smallest saliency. A ragged tail of width `m' < m`
/// gets `floor(n * m' / m)` marks so the overall density stays on target.
pub fn nm_mask(w: &DenseMatrix, norms: &RowNorms, n: usize, m: usize) -> Result<PruneMask> {
    if n == 0 || n >= m {
        return Err(PruneError::InvalidPattern { n, m });
    }
    let grid = saliency(w, norms)?;
    let mut mask = PruneMask::new(w.rows(), w.cols());
    for i in 0..w.rows() {
        let mut g0 = 0;
        while g0 < w.cols() {
            let g1 = (g0 + m).min(w.cols());
            let width = g1 - g0;
            let take = if width == m { n } else { n * width / m };
            let mut order: Vec<usize> = (g0..g1).collect();
            order.sort_unstable_by(|&a, &b| {
                grid.get(i, a).total_cmp(&grid.get(i, b)).then(a.cmp(&b))
            });
            for &j in order.iter().take(take) {
                mask.set(i, j, true);
            }
            g0 = g1;
        }
    }
    Ok(mask)
}

/// Mask of the `floor(p * cells)` weights with globally smallest magnitude.
pub fn magnitude_mask(w: &DenseMatrix, p: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&p) {
        return Err(PruneError::InvalidSparsity { value: p });
    }
    let cells = w.rows() * w.cols();
    let r = (p * cells as f64).floor() as usize;
    let abs: Vec<f64> = w.data().iter().map(|v| v.abs()).collect();
    Ok(select_smallest_global(&abs, w.rows(), w.cols(), r))
}

/// Per-row mask: in every row, the `floor(p * cols)` weights of smallest
/// saliency. Ties go to the leftmost column.
pub fn wanda_rowwise_mask(w: &DenseMatrix, norms: &RowNorms, p: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&p) {
        return Err(PruneError::InvalidSparsity { value: p });
    }
    let grid = saliency(w, norms)?;
    let per_row = (p * w.cols() as f64).floor() as usize;
    let mut mask = PruneMask::new(w.rows(), w.cols());
    for i in 0..w.rows() {
        let mut order: Vec<usize> = (0..w.cols()).collect();
        order.sort_unstable_by(|&a, &b| grid.get(i, a).total_cmp(&grid.get(i, b)).then(a.cmp(&b)));
        for &j in order.iter().take(per_row) {
            mask.set(i, j, true);
        }
    }
    Ok(mask)
}

fn select_smallest_global(values: &[f64], rows: usize, cols: usize, r: usize) -> PruneMask {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut mask = PruneMask::new(rows, cols);
    for &flat in order.iter().take(r) {
        mask.bits[flat] = true;
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{row_norms, CalibrationSet};

    fn worked_example() -> (DenseMatrix, RowNorms) {
        let w =
            DenseMatrix::from_rows(&[vec![3.0, -2.0], vec![-2.0, 4.0], vec![1.0, -6.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![4.0, 3.0], vec![0.0, 1.0]]).unwrap();
        let norms = row_norms(&CalibrationSet::from_single(x));
        (w, norms)
    }

    #[test]
    fn saliency_worked_example_grid() {
        let (w, norms) = worked_example();
        let grid = saliency(&w, &norms).unwrap();
        let want = [[15.0, 2.0], [10.0, 4.0], [5.0, 6.0]];
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(grid.get(i, j), want[i][j]);
            }
        }
    }

    #[test]
    fn saliency_zero_weights() {
        let w = DenseMatrix::zeros(2, 3);
        let norms = RowNorms::from_values(vec![1.0, 2.0, 3.0]);
        let grid = saliency(&w, &norms).unwrap();
        assert!(grid.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_shape_mismatch() {
        let w = DenseMatrix::zeros(2, 3);
        assert!(saliency(&w, &RowNorms::from_values(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn psi_worked_example_selections() {
        let (w, norms) = worked_example();
        let m1 = psi_select(&w, &norms, 1).unwrap();
        assert_eq!(m1.popcount(), 1);
        assert!(m1.get(0, 1));

        let m2 = psi_select(&w, &norms, 2).unwrap();
        assert!(m2.get(0, 1) && m2.get(1, 1));
        assert_eq!(m2.popcount(), 2);

        let m4 = psi_select(&w, &norms, 4).unwrap();
        for (i, j) in [(0, 1), (1, 1), (2, 0), (2, 1)] {
            assert!(m4.get(i, j), "expected mark at ({i},{j})");
        }
        assert_eq!(m4.popcount(), 4);
    }

    #[test]
    fn psi_zero_budget() {
        let (w, norms) = worked_example();
        assert_eq!(psi_select(&w, &norms, 0).unwrap().popcount(), 0);
    }

    #[test]
    fn psi_budget_out_of_range() {
        let (w, norms) = worked_example();
        assert!(matches!(
            psi_select(&w, &norms, 7),
            Err(PruneError::BudgetOutOfRange {
                requested: 7,
                available: 6
            })
        ));
    }

    #[test]
    fn phi_examples() {
        // (1,0,0,1,1) -> {0,3,4} and (0,0,1,1,0) -> {2,3} zero-based.
        let a = phi_indices(&[true, false, false, true, true]);
        assert_eq!(a.indices(), &[0, 3, 4]);
        let b = phi_indices(&[false, false, true, true, false]);
        assert_eq!(b.indices(), &[2, 3]);
        assert!(phi_indices(&[false; 4]).is_empty());
    }

    #[test]
    fn phi_mask_row_round_trip() {
        let set = IndexSet::new(vec![1, 4, 5]).unwrap();
        let row = set.to_mask_row(7);
        assert_eq!(phi_indices(&row), set);
    }

    #[test]
    fn nm_ordered_saliencies() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let norms = RowNorms::unit(4);
        let mask = nm_mask(&w, &norms, 2, 4).unwrap();
        assert_eq!(mask.row(0), &[true, true, false, false]);
    }

    #[test]
    fn nm_uniform_ties_take_leftmost() {
        let w = DenseMatrix::from_rows(&[vec![5.0; 4]]).unwrap();
        let mask = nm_mask(&w, &RowNorms::unit(4), 2, 4).unwrap();
        assert_eq!(mask.row(0), &[true, true, false, false]);
    }

    #[test]
    fn nm_groups_have_exact_popcount() {
        let mut data = Vec::new();
        let mut state = 99u64;
        for _ in 0..4 * 8 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            data.push(((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5);
        }
        let w = DenseMatrix::from_vec(4, 8, data).unwrap();
        let norms = RowNorms::unit(8);
        let mask = nm_mask(&w, &norms, 2, 4).unwrap();
        for i in 0..4 {
            for g in 0..2 {
                let cnt = (0..4).filter(|&k| mask.get(i, g * 4 + k)).count();
                assert_eq!(cnt, 2);
            }
            // per-group sort oracle
            for g in 0..2 {
                let mut vals: Vec<(f64, usize)> = (0..4)
                    .map(|k| (w.get(i, g * 4 + k).abs(), g * 4 + k))
                    .collect();
                vals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for (rank, &(_, j)) in vals.iter().enumerate() {
                    assert_eq!(mask.get(i, j), rank < 2);
                }
            }
        }
    }

    #[test]
    fn nm_rejects_bad_pattern() {
        let w = DenseMatrix::zeros(1, 4);
        assert!(nm_mask(&w, &RowNorms::unit(4), 4, 4).is_err());
        assert!(nm_mask(&w, &RowNorms::unit(4), 5, 4).is_err());
    }

    #[test]
    fn nm_ragged_tail_scales_count() {
        // width 6 with m=4: full group gets 2, tail of 2 gets floor(2*2/4)=1.
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        let mask = nm_mask(&w, &RowNorms::unit(6), 2, 4).unwrap();
        assert_eq!(mask.row(0), &[true, true, false, false, true, false]);
    }

    #[test]
    fn magnitude_empty_and_ordered() {
        let w = DenseMatrix::from_rows(&[vec![1.0, -5.0], vec![2.0, -3.0]]).unwrap();
        assert_eq!(magnitude_mask(&w, 0.0).unwrap().popcount(), 0);
        let m = magnitude_mask(&w, 0.5).unwrap();
        assert!(m.get(0, 0) && m.get(1, 0));
        assert_eq!(m.popcount(), 2);
    }

    #[test]
    fn magnitude_matches_full_sort_oracle() {
        let mut data = Vec::new();
        let mut state = 7u64;
        for _ in 0..36 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            data.push(((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5);
        }
        let w = DenseMatrix::from_vec(6, 6, data).unwrap();
        let m = magnitude_mask(&w, 0.5).unwrap();
        assert_eq!(m.popcount(), 18);
        let mut flat: Vec<(f64, usize)> = w
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v.abs(), i))
            .collect();
        flat.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (rank, &(_, flat_idx)) in flat.iter().enumerate() {
            assert_eq!(m.get(flat_idx / 6, flat_idx % 6), rank < 18);
        }
    }

    #[test]
    fn wanda_rowwise_worked_example() {
        let (w, norms) = worked_example();
        let m = wanda_rowwise_mask(&w, &norms, 0.5).unwrap();
        assert_eq!(m.row(0), &[false, true]);
        assert_eq!(m.row(1), &[false, true]);
        assert_eq!(m.row(2), &[true, false]);
    }

    #[test]
    fn wanda_zero_ratio_empty() {
        let (w, norms) = worked_example();
        assert_eq!(wanda_rowwise_mask(&w, &norms, 0.0).unwrap().popcount(), 0);
    }

    #[test]
    fn wanda_uniform_row_marks_leftmost_half() {
        let w = DenseMatrix::from_rows(&[vec![1.0; 6]]).unwrap();
        let m = wanda_rowwise_mask(&w, &RowNorms::unit(6), 0.5).unwrap();
        assert_eq!(m.row(0), &[true, true, true, false, false, false]);
    }

    #[test]
    fn magnitude_equals_psi_with_unit_norms() {
        let w = DenseMatrix::from_rows(&[vec![0.3, -1.2, 0.05], vec![2.0, -0.4, 0.9]]).unwrap();
        let r = 3;
        let a = magnitude_mask(&w, 0.5).unwrap();
        let b = psi_select(&w, &RowNorms::unit(3), r).unwrap();
        assert_eq!(a, b);
    }
}
