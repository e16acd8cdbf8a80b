//! Dense linear-algebra substrate: row-major `f64` matrices, products,
//! Cholesky factorization, SPD inversion, padded batched solves, and
//! index-vector permutations.
//!
//! Everything here is a pure function over immutable inputs; batched solves
//! parallelize across systems but return results ordered by input index.

use rayon::prelude::*;

use crate::error::{PruneError, Result};

/// Symmetry tolerance accepted by [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Row-major dense matrix of 64-bit floats.
///
/// Construction rejects non-finite entries; all arithmetic stays in `f64`
/// even when the surrounding pipeline ingests 32-bit data.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Build from a row-major buffer. Fails on length mismatch or any
    /// NaN/infinite entry.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PruneError::BadDataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(PruneError::NotFinite { index: i, value: v });
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; convenient in tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(PruneError::BadDataLength {
                    rows: r,
                    cols: c,
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Internal constructor for values already produced by finite arithmetic.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        DenseMatrix::from_raw(self.cols, self.rows, out)
    }

    /// Copy of the rectangular window `[r0, r1) x [c0, c1)`.
    pub fn submatrix(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> DenseMatrix {
        assert!(r0 <= r1 && r1 <= self.rows && c0 <= c1 && c1 <= self.cols);
        let mut out = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            out.extend_from_slice(&self.data[i * self.cols + c0..i * self.cols + c1]);
        }
        DenseMatrix::from_raw(r1 - r0, c1 - c0, out)
    }

    /// Standard product `C[i][j] = sum_k A[i][k] * B[k][j]`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(PruneError::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for j in 0..other.cols {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        Ok(DenseMatrix::from_raw(self.rows, other.cols, out))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// so that `L * L^T = A`.
///
/// Symmetry is checked up to [`SYMMETRY_TOL`] relative to the largest entry.
/// A non-positive pivot aborts with the failing index; the caller is
/// expected to add damping and retry.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(PruneError::DimensionMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: n,
            right_cols: n,
        });
    }
    let scale = a.max_abs().max(1.0);
    let mut max_dev = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_dev = max_dev.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if max_dev > SYMMETRY_TOL * scale {
        return Err(PruneError::NotSymmetric {
            max_deviation: max_dev,
        });
    }

    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(PruneError::NotPositiveDefinite { pivot: i });
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(DenseMatrix::from_raw(n, n, l))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
///
/// Computed as `L^{-T} L^{-1}`, which keeps the result symmetric to the bit:
/// entry (i,j) and (j,i) accumulate identical products in identical order.
pub fn spd_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    let l = cholesky(a)?;
    let n = a.rows();
    let ld = l.data();

    // Forward-invert the lower triangle.
    let mut linv = vec![0.0; n * n];
    for i in 0..n {
        linv[i * n + i] = 1.0 / ld[i * n + i];
        for j in 0..i {
            let mut sum = 0.0;
            for k in j..i {
                sum -= ld[i * n + k] * linv[k * n + j];
            }
            linv[i * n + j] = sum / ld[i * n + i];
        }
    }

    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for k in i.max(j)..n {
                sum += linv[k * n + i] * linv[k * n + j];
            }
            inv[i * n + j] = sum;
        }
    }
    Ok(DenseMatrix::from_raw(n, n, inv))
}

/// One system of a batch: solve `lambda * rhat = u` for the row vector
/// `lambda`, with `rhat` square of side `u.len()`.
#[derive(Debug, Clone)]
pub struct BatchSystem {
    pub rhat: DenseMatrix,
    pub u: Vec<f64>,
}

/// Default number of systems handled per parallel chunk.
pub const DEFAULT_BATCH_CHUNK: usize = 256;

/// Solve a batch of row-vector systems `lambda * rhat = u`.
///
/// Systems of differing size are padded to the largest size in the batch:
/// `u` grows with zeros and `rhat` is embedded into a larger matrix whose
/// trailing block is the identity. The padded coordinates solve the identity
/// block and therefore come back as exact zeros; callers may ignore entries
/// past each system's true size.
///
/// Results are ordered by input index regardless of internal parallelism.
pub fn solve_batch(systems: &[BatchSystem]) -> Result<Vec<Vec<f64>>> {
    solve_batch_chunked(systems, DEFAULT_BATCH_CHUNK)
}

/// [`solve_batch`] with an explicit chunk size bounding how many padded
/// systems are materialized at once.
pub fn solve_batch_chunked(systems: &[BatchSystem], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(systems.len());
    for (chunk_idx, group) in systems.chunks(chunk).enumerate() {
        let base = chunk_idx * chunk;
        let r_max = group.iter().map(|s| s.u.len()).max().unwrap_or(0);
        let solved: Vec<Result<Vec<f64>>> = group
            .par_iter()
            .enumerate()
            .map(|(k, sys)| solve_padded(sys, r_max, base + k))
            .collect();
        for s in solved {
            out.push(s?);
        }
    }
    Ok(out)
}

/// Pad one system to `r_max` and solve it; `index` only labels errors.
fn solve_padded(sys: &BatchSystem, r_max: usize, index: usize) -> Result<Vec<f64>> {
    let s = sys.u.len();
    debug_assert_eq!(sys.rhat.rows(), s);
    debug_assert_eq!(sys.rhat.cols(), s);

    // lambda * rhat = u  <=>  rhat^T * lambda^T = u^T.
    let mut a = vec![0.0; r_max * r_max];
    for i in 0..s {
        for j in 0..s {
            a[i * r_max + j] = sys.rhat.get(j, i);
        }
    }
    for i in s..r_max {
        a[i * r_max + i] = 1.0;
    }
    let mut x = vec![0.0; r_max];
    x[..s].copy_from_slice(&sys.u);

    gauss_solve_in_place(&mut a, &mut x, r_max)
        .map_err(|_| PruneError::SingularSystem { batch_index: index })?;
    Ok(x)
}

/// Gaussian elimination with partial pivoting on a row-major square matrix.
fn gauss_solve_in_place(a: &mut [f64], x: &mut [f64], n: usize) -> std::result::Result<(), ()> {
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
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
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let factor = a[r * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            for j in (col + 1)..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            x[r] -= factor * x[col];
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

/// Permutation stored as an index vector: slot `k` of the output takes the
/// entry at `mapping[k]` of the input. Never materialized as a dense 0/1
/// matrix; applying it moves entries without recomputing them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationVector {
    mapping: Vec<usize>,
}

impl PermutationVector {
    /// Validate that `mapping` is a bijection on `0..mapping.len()`.
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(PruneError::InvalidPermutation { len: n });
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    /// Argsort of `values` ascending; ties broken by ascending index so the
    /// result is deterministic.
    pub fn sorted_ascending(values: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        Self { mapping: idx }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// The permutation `inv` with `inv.mapping[self.mapping[k]] = k`.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (k, &m) in self.mapping.iter().enumerate() {
            inv[m] = k;
        }
        Self { mapping: inv }
    }
}

/// Reorder rows: output row `k` is input row `q.mapping[k]`.
pub fn permute_rows(w: &DenseMatrix, q: &PermutationVector) -> Result<DenseMatrix> {
    if q.len() != w.rows() {
        return Err(PruneError::PermutationLengthMismatch {
            perm_len: q.len(),
            dim: w.rows(),
        });
    }
    let mut out = Vec::with_capacity(w.data().len());
    for &src in q.mapping() {
        out.extend_from_slice(w.row(src));
    }
    Ok(DenseMatrix::from_raw(w.rows(), w.cols(), out))
}

/// Reorder columns: output column `k` is input column `p.mapping[k]`.
pub fn permute_cols(w: &DenseMatrix, p: &PermutationVector) -> Result<DenseMatrix> {
    if p.len() != w.cols() {
        return Err(PruneError::PermutationLengthMismatch {
            perm_len: p.len(),
            dim: w.cols(),
        });
    }
    let mut out = Vec::with_capacity(w.data().len());
    for i in 0..w.rows() {
        let row = w.row(i);
        for &src in p.mapping() {
            out.push(row[src]);
        }
    }
    Ok(DenseMatrix::from_raw(w.rows(), w.cols(), out))
}

/// Undo [`permute_rows`] with the same permutation, bit-exactly.
pub fn inverse_permute_rows(w: &DenseMatrix, q: &PermutationVector) -> Result<DenseMatrix> {
    permute_rows(w, &q.inverse())
}

/// Undo [`permute_cols`] with the same permutation, bit-exactly.
pub fn inverse_permute_cols(w: &DenseMatrix, p: &PermutationVector) -> Result<DenseMatrix> {
    permute_cols(w, &p.inverse())
}

/// Symmetric index permutation of a square matrix: `out[i][j] = a[p_i][p_j]`.
/// Entries are relocated, never recomputed.
pub fn permute_symmetric(a: &DenseMatrix, p: &PermutationVector) -> Result<DenseMatrix> {
    if p.len() != a.rows() || a.rows() != a.cols() {
        return Err(PruneError::PermutationLengthMismatch {
            perm_len: p.len(),
            dim: a.rows(),
        });
    }
    let n = a.rows();
    let map = p.mapping();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = a.get(map[i], map[j]);
        }
    }
    Ok(DenseMatrix::from_raw(n, n, out))
}
