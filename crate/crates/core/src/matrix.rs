//! Dense row-major matrices and the fixed primitive vocabulary every layer,
//! loss and activation is written in.
//!
//! There is no implicit broadcasting: a bias row `b` is added to an `N x K`
//! batch as `row_repeat(b, N)`, a per-row scalar column as `column_repeat`.
//! Row vectors are `1 x n` matrices and column vectors are `m x 1` matrices.
//!
//! Shape violations return [`Error::Shape`] naming the operation and both
//! shapes; element-wise domain violations return [`Error::Domain`] with the
//! coordinates of the first offending entry.

use crate::error::{Error, Result, Shape};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Constant matrix kinds of the primitive table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fill {
    Zeros,
    Ones,
    Identity,
}

impl std::fmt::Debug for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", self.row_slice(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// `zeros(m, n)`, `ones(m, n)` or `identity(n)`; identity must be square.
    pub fn construct(fill: Fill, rows: usize, cols: usize) -> Result<Self> {
        match fill {
            Fill::Zeros => Ok(Self::zeros(rows, cols)),
            Fill::Ones => Ok(Self::ones(rows, cols)),
            Fill::Identity if rows == cols => Ok(Self::identity(rows)),
            Fill::Identity => Err(Error::shape("identity", Shape(rows, cols), Shape(rows, rows))),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("from_vec", Shape(rows, cols), Shape(1, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested row slices. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("from_rows", Shape(1, cols), Shape(1, r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    /// Stacks `m x 1` columns side by side.
    pub fn from_columns(columns: &[Matrix]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.rows);
        let mut out = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.cols != 1 || c.rows != rows {
                return Err(Error::shape("from_columns", Shape(rows, 1), c.shape()));
            }
            for i in 0..rows {
                out.data[i * out.cols + j] = c.data[i];
            }
        }
        Ok(out)
    }

    /// Stacks `1 x n` rows on top of each other.
    pub fn from_row_vectors(rows: &[Matrix]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.cols);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.rows != 1 || r.cols != cols {
                return Err(Error::shape("from_row_vectors", Shape(1, cols), r.shape()));
            }
            data.extend_from_slice(&r.data);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    // ---- shape queries and element access ----

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        Shape(self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_row_vector(&self) -> bool {
        self.rows == 1
    }

    pub fn is_column_vector(&self) -> bool {
        self.cols == 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds for {}", self.shape());
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds for {}", self.shape());
        self.data[i * self.cols + j] = value;
    }

    /// Row-major backing storage.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Row `i` as a `1 x n` matrix.
    pub fn row(&self, i: usize) -> Matrix {
        Matrix::row_vector(self.row_slice(i))
    }

    /// Column `j` as an `m x 1` matrix.
    pub fn column(&self, j: usize) -> Matrix {
        let values: Vec<f64> = (0..self.rows).map(|i| self.get(i, j)).collect();
        Matrix::column_vector(&values)
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row_slice(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    /// Returns the single entry of a `1 x 1` matrix.
    pub fn scalar(&self) -> Result<f64> {
        if self.rows != 1 || self.cols != 1 {
            return Err(Error::shape("scalar", self.shape(), Shape(1, 1)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    // ---- structural ----

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            let row = self.row_slice(i);
            for (j, &v) in row.iter().enumerate() {
                out.data[j * self.rows + i] = v;
            }
        }
        out
    }

    /// `diag(X)`: the diagonal of a square matrix as a column vector.
    pub fn diag(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::shape("diag", self.shape(), Shape(self.rows, self.rows)));
        }
        let values: Vec<f64> = (0..self.rows).map(|i| self.get(i, i)).collect();
        Ok(Matrix::column_vector(&values))
    }

    /// `Diag(x)`: a square matrix with the row or column vector `x` on its diagonal.
    pub fn diag_matrix(&self) -> Result<Matrix> {
        if self.rows != 1 && self.cols != 1 {
            return Err(Error::shape("Diag", self.shape(), Shape(1, self.len())));
        }
        let n = self.len();
        let mut out = Matrix::zeros(n, n);
        for (i, &v) in self.data.iter().enumerate() {
            out.data[i * n + i] = v;
        }
        Ok(out)
    }

    // ---- arithmetic ----

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.apply(|x| c * x)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        if m == 0 || n == 0 || k == 0 {
            return Ok(out);
        }
        // SAFETY: all three buffers are dense row-major with the given
        // dimensions; the strides address exactly their allocations.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }

    /// Dot product of two vectors of equal length (row or column orientation).
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        let vector = |m: &Matrix| m.rows == 1 || m.cols == 1;
        if !vector(self) || !vector(other) || self.len() != other.len() {
            return Err(Error::shape("dot", self.shape(), other.shape()));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    // ---- repetition ----

    /// `1_m · x`: `m` copies of the row vector `x`.
    pub fn row_repeat(&self, m: usize) -> Result<Matrix> {
        if self.rows != 1 {
            return Err(Error::shape("row_repeat", self.shape(), Shape(1, self.cols)));
        }
        let mut data = Vec::with_capacity(m * self.cols);
        for _ in 0..m {
            data.extend_from_slice(&self.data);
        }
        Ok(Matrix { rows: m, cols: self.cols, data })
    }

    /// `x · 1_n^T`: `n` copies of the column vector `x`.
    pub fn column_repeat(&self, n: usize) -> Result<Matrix> {
        if self.cols != 1 {
            return Err(Error::shape("column_repeat", self.shape(), Shape(self.rows, 1)));
        }
        let mut data = Vec::with_capacity(self.rows * n);
        for &v in &self.data {
            data.extend(std::iter::repeat(v).take(n));
        }
        Ok(Matrix { rows: self.rows, cols: n, data })
    }

    // ---- reductions ----

    /// `1_m^T · X`
    pub fn columns_sum(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (acc, &v) in out.data.iter_mut().zip(self.row_slice(i)) {
                *acc += v;
            }
        }
        out
    }

    /// `X · 1_n`
    pub fn rows_sum(&self) -> Matrix {
        let values: Vec<f64> = (0..self.rows).map(|i| self.row_slice(i).iter().sum()).collect();
        Matrix::column_vector(&values)
    }

    pub fn columns_max(&self) -> Matrix {
        let mut out = Matrix::filled(1, self.cols, f64::NEG_INFINITY);
        for i in 0..self.rows {
            for (acc, &v) in out.data.iter_mut().zip(self.row_slice(i)) {
                *acc = acc.max(v);
            }
        }
        out
    }

    pub fn rows_max(&self) -> Matrix {
        let values: Vec<f64> = (0..self.rows)
            .map(|i| self.row_slice(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Matrix::column_vector(&values)
    }

    pub fn columns_mean(&self) -> Matrix {
        self.columns_sum().scale(1.0 / self.rows as f64)
    }

    pub fn rows_mean(&self) -> Matrix {
        self.rows_sum().scale(1.0 / self.cols as f64)
    }

    /// `1_m^T · X · 1_n`
    pub fn elements_sum(&self) -> f64 {
        self.data.iter().sum()
    }

    // ---- element-wise ----

    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn checked_apply(
        &self,
        op: &'static str,
        valid: impl Fn(f64) -> bool,
        f: impl Fn(f64) -> f64,
    ) -> Result<Matrix> {
        if let Some(pos) = self.data.iter().position(|&x| !valid(x)) {
            return Err(Error::Domain {
                op,
                row: pos / self.cols,
                col: pos % self.cols,
                value: self.data[pos],
            });
        }
        Ok(self.apply(f))
    }

    pub fn exp(&self) -> Matrix {
        self.apply(f64::exp)
    }

    pub fn log(&self) -> Result<Matrix> {
        self.checked_apply("log", |x| x > 0.0, f64::ln)
    }

    pub fn reciprocal(&self) -> Result<Matrix> {
        self.checked_apply("reciprocal", |x| x != 0.0, |x| 1.0 / x)
    }

    pub fn sqrt(&self) -> Result<Matrix> {
        self.checked_apply("sqrt", |x| x >= 0.0, f64::sqrt)
    }

    /// `(X + eps)^(-1/2)` element-wise. Finite for every non-negative entry.
    pub fn inv_sqrt(&self, eps: f64) -> Result<Matrix> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("inv_sqrt epsilon must be positive, got {eps}")));
        }
        self.checked_apply("inv_sqrt", |x| x >= 0.0, move |x| 1.0 / (x + eps).sqrt())
    }

    /// `log(σ(X))` element-wise without overflow.
    pub fn log_sigmoid(&self) -> Matrix {
        self.apply(log_sigmoid)
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
