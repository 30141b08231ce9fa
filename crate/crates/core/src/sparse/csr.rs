use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sparse matrix in CSR form. The pattern (`row_ptr`, `col_idx`) is fixed at
/// construction; only `values` can change afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Validates the CSR invariants.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::Data(format!("invalid CSR matrix: {m}")));
        if row_ptr.len() != rows + 1 {
            return bad(format!("row_ptr has {} entries, expected {}", row_ptr.len(), rows + 1));
        }
        if row_ptr[0] != 0 || row_ptr[rows] != col_idx.len() {
            return bad(format!(
                "row_ptr must start at 0 and end at nnz = {}, got {} and {}",
                col_idx.len(),
                row_ptr[0],
                row_ptr[rows]
            ));
        }
        if values.len() != col_idx.len() {
            return bad(format!("{} values for {} stored entries", values.len(), col_idx.len()));
        }
        for i in 0..rows {
            if row_ptr[i] > row_ptr[i + 1] {
                return bad(format!("row_ptr decreases at row {i}"));
            }
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("column indices of row {i} are not strictly increasing"));
            }
            if let Some(&j) = row.last() {
                if j >= cols {
                    return bad(format!("column index {j} in row {i} exceeds {cols} columns"));
                }
            }
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    /// Stores the non-zero entries of `m`.
    pub fn from_dense(m: &Matrix) -> Self {
        Self::from_dense_where(m, |v| v != 0.0)
    }

    /// Stores the entries of `values` at the positions where `mask` is non-zero.
    pub fn from_dense_masked(values: &Matrix, mask: &Matrix) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::shape("CSR from mask", values.shape(), mask.shape()));
        }
        let mut row_ptr = vec![0];
        let (mut col_idx, mut stored) = (Vec::new(), Vec::new());
        for i in 0..values.rows() {
            for (j, (&v, &m)) in values.row_slice(i).iter().zip(mask.row_slice(i)).enumerate() {
                if m != 0.0 {
                    col_idx.push(j);
                    stored.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { rows: values.rows(), cols: values.cols(), row_ptr, col_idx, values: stored })
    }

    fn from_dense_where(m: &Matrix, keep: impl Fn(f64) -> bool) -> Self {
        let mut row_ptr = vec![0];
        let (mut col_idx, mut values) = (Vec::new(), Vec::new());
        for i in 0..m.rows() {
            for (j, &v) in m.row_slice(i).iter().enumerate() {
                if keep(v) {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows: m.rows(), cols: m.cols(), row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: n, cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Every position stored, values zero.
    pub fn full_pattern(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: (0..=rows).map(|i| i * cols).collect(),
            col_idx: (0..rows).flat_map(|_| 0..cols).collect(),
            values: vec![0.0; rows * cols],
        }
    }

    /// Bernoulli pattern at `density` with zero values. Empty rows and
    /// columns then receive one entry at a random position so that no unit
    /// is disconnected.
    pub fn random_pattern<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        density: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::Config(format!("density must lie in (0, 1], got {density}")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("empty {rows}x{cols} sparsity pattern")));
        }
        let mut stored: Vec<Vec<usize>> =
            (0..rows).map(|_| (0..cols).filter(|_| rng.random::<f64>() < density).collect()).collect();
        for row in stored.iter_mut().filter(|r| r.is_empty()) {
            row.push(rng.random_range(0..cols));
        }
        let mut column_used = vec![false; cols];
        for &j in stored.iter().flatten() {
            column_used[j] = true;
        }
        for (j, _) in column_used.iter().enumerate().filter(|(_, used)| !**used) {
            let i = rng.random_range(0..rows);
            let at = stored[i].partition_point(|&c| c < j);
            stored[i].insert(at, j);
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for row in &stored {
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Ok(Self { rows, cols, row_ptr, col_idx, values: vec![0.0; nnz] })
    }

    /// Same pattern with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::Data(format!(
                "{} values for a pattern with {} stored entries",
                values.len(),
                self.nnz()
            )));
        }
        Ok(Self { values, ..self.clone_pattern() })
    }

    fn clone_pattern(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> crate::error::Shape {
        crate::error::Shape(self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `nnz / (rows cols)`.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.rows * self.cols) as f64
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Stored `(column, value)` pairs of row `i`.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    /// Whether `other` stores exactly the same positions.
    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// Dense 0/1 matrix marking the stored positions.
    pub fn pattern_mask(&self) -> Matrix {
        self.with_values(vec![1.0; self.nnz()]).expect("value count matches").to_dense()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validates_invariants() {
        assert!(CsrMatrix::new(2, 3, vec![0, 1, 2], vec![0, 2], vec![1.0, 2.0]).is_ok());
        assert!(CsrMatrix::new(2, 3, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(2, 3, vec![1, 1, 2], vec![0, 2], vec![1.0, 2.0]).is_err());
        assert!(CsrMatrix::new(2, 3, vec![0, 2, 1], vec![0, 2], vec![1.0, 2.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 2.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![1, 1], vec![1.0, 2.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 1], vec![3], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 1], vec![0], vec![]).is_err());
    }

    #[test]
    fn dense_round_trip() {
        let m = Matrix::from_rows(&[[0.0, 1.5, 0.0], [0.0, 0.0, 0.0], [2.0, 0.0, -3.0]]).unwrap();
        let s = CsrMatrix::from_dense(&m);
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.row_ptr(), &[0, 1, 1, 3]);
        assert_eq!(s.to_dense(), m);
        assert_eq!(CsrMatrix::identity(3).to_dense(), Matrix::identity(3));
        assert_eq!(CsrMatrix::full_pattern(2, 3).pattern_mask(), Matrix::ones(2, 3));
    }

    #[test]
    fn random_pattern_covers_every_row_and_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &(rows, cols, density) in &[(30, 40, 0.01), (5, 200, 0.05), (64, 64, 0.1)] {
            let s = CsrMatrix::random_pattern(rows, cols, density, &mut rng).unwrap();
            let mask = s.pattern_mask();
            assert!(mask.rows_sum().as_slice().iter().all(|&c| c >= 1.0));
            assert!(mask.columns_sum().as_slice().iter().all(|&c| c >= 1.0));
            // Rebuilding through the validator checks the CSR invariants.
            CsrMatrix::new(rows, cols, s.row_ptr.clone(), s.col_idx.clone(), s.values.clone()).unwrap();
        }
        let s = CsrMatrix::random_pattern(200, 200, 0.2, &mut rng).unwrap();
        assert!((s.density() - 0.2).abs() < 0.01, "{}", s.density());
        assert!(CsrMatrix::random_pattern(3, 3, 0.0, &mut rng).is_err());
        assert!(CsrMatrix::random_pattern(3, 3, 1.1, &mut rng).is_err());
    }

    #[test]
    fn full_density_stores_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = CsrMatrix::random_pattern(7, 5, 1.0, &mut rng).unwrap();
        assert_eq!(s.nnz(), 35);
    }
}
