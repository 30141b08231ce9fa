use super::CsrMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Multiply-add counter filled in by the `*_counted` products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCount(pub u64);

trait Counter {
    fn add(&mut self, n: usize);
}

impl Counter for () {
    #[inline(always)]
    fn add(&mut self, _n: usize) {}
}

impl Counter for MacCount {
    #[inline(always)]
    fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }
}

#[inline(always)]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// `S B`.
pub fn spmm(s: &CsrMatrix, b: &Matrix) -> Result<Matrix> {
    spmm_impl(s, b, &mut ())
}

pub fn spmm_counted(s: &CsrMatrix, b: &Matrix, count: &mut MacCount) -> Result<Matrix> {
    spmm_impl(s, b, count)
}

fn spmm_impl(s: &CsrMatrix, b: &Matrix, counter: &mut impl Counter) -> Result<Matrix> {
    if s.cols() != b.rows() {
        return Err(Error::shape("spmm", s.shape(), b.shape()));
    }
    let m = b.cols();
    let mut out = Matrix::zeros(s.rows(), m);
    let data = out.as_mut_slice();
    for i in 0..s.rows() {
        let row = &mut data[i * m..(i + 1) * m];
        for (j, v) in s.row_entries(i) {
            axpy(row, v, b.row_slice(j));
            counter.add(m);
        }
    }
    Ok(out)
}

/// `S^T B`, scattering each stored entry without forming `S^T`.
pub fn spmm_t(s: &CsrMatrix, b: &Matrix) -> Result<Matrix> {
    spmm_t_impl(s, b, &mut ())
}

pub fn spmm_t_counted(s: &CsrMatrix, b: &Matrix, count: &mut MacCount) -> Result<Matrix> {
    spmm_t_impl(s, b, count)
}

fn spmm_t_impl(s: &CsrMatrix, b: &Matrix, counter: &mut impl Counter) -> Result<Matrix> {
    if s.rows() != b.rows() {
        return Err(Error::shape("spmm_t", s.shape(), b.shape()));
    }
    let m = b.cols();
    let mut out = Matrix::zeros(s.cols(), m);
    let data = out.as_mut_slice();
    for i in 0..s.rows() {
        let source = b.row_slice(i);
        for (j, v) in s.row_entries(i) {
            axpy(&mut data[j * m..(j + 1) * m], v, source);
            counter.add(m);
        }
    }
    Ok(out)
}

/// `A B^T` evaluated only at the stored positions of `pattern`.
pub fn sdd_product(a: &Matrix, b: &Matrix, pattern: &CsrMatrix) -> Result<CsrMatrix> {
    sdd_impl(a, b, pattern, &mut ())
}

pub fn sdd_product_counted(
    a: &Matrix,
    b: &Matrix,
    pattern: &CsrMatrix,
    count: &mut MacCount,
) -> Result<CsrMatrix> {
    sdd_impl(a, b, pattern, count)
}

fn sdd_impl(a: &Matrix, b: &Matrix, pattern: &CsrMatrix, counter: &mut impl Counter) -> Result<CsrMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape("sdd_product", a.shape(), b.shape()));
    }
    if pattern.rows() != a.rows() || pattern.cols() != b.rows() {
        return Err(Error::shape(
            "sdd_product pattern",
            pattern.shape(),
            crate::error::Shape(a.rows(), b.rows()),
        ));
    }
    let mut values = Vec::with_capacity(pattern.nnz());
    for i in 0..pattern.rows() {
        let left = a.row_slice(i);
        for (j, _) in pattern.row_entries(i) {
            values.push(left.iter().zip(b.row_slice(j)).map(|(x, y)| x * y).sum());
            counter.add(left.len());
        }
    }
    pattern.with_values(values)
}
