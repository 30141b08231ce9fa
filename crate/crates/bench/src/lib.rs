//! Seeded inputs shared by the benchmarks in `benches/`.

use mlpform_core::{CsrMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense matrix with entries drawn from `U(-1, 1)`.
pub fn dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// Random CSR pattern at `density` with `U(-1, 1)` values.
pub fn sparse(rows: usize, cols: usize, density: f64, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let pattern = CsrMatrix::random_pattern(rows, cols, density, rng).expect("valid density");
    let values = (0..pattern.nnz()).map(|_| rng.random_range(-1.0..1.0)).collect();
    pattern.with_values(values).expect("one value per entry")
}
