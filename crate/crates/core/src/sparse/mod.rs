//! Compressed sparse row weights and the three products a sparse linear layer
//! needs: sparse-dense (`S B`), transposed sparse-dense (`S^T B`) and the
//! sampled dense-dense product restricted to a fixed pattern.

mod csr;
mod layer;
mod ops;

pub use csr::CsrMatrix;
pub use layer::{SparseActivationLayer, SparseLinearLayer};
pub use ops::{sdd_product, sdd_product_counted, spmm, spmm_counted, spmm_t, spmm_t_counted, MacCount};
