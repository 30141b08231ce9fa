use super::{check_input, check_output_gradient, IoCache, Layer, LayerKind, Param, ParamMut};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optimize::{CompositeOptimizer, OptimizerKind};

pub const DEFAULT_BATCHNORM_EPS: f64 = 1e-5;

/// Batch normalization over the rows of an `N x D` batch.
///
/// Statistics always come from the current batch; there are no running
/// averages, so evaluation also normalizes with batch statistics.
#[derive(Debug)]
pub struct BatchNormLayer {
    gamma: Matrix,
    beta: Matrix,
    dgamma: Matrix,
    dbeta: Matrix,
    eps: f64,
    z: Option<Matrix>,
    inv_sqrt_sigma: Option<Matrix>,
    cache: IoCache,
    optimizer: CompositeOptimizer,
}

impl BatchNormLayer {
    /// `γ = 1`, `β = 0`.
    pub fn new(width: usize, eps: f64) -> Result<Self> {
        Self::with_parameters(Matrix::ones(1, width), Matrix::zeros(1, width), eps)
    }

    pub fn with_parameters(gamma: Matrix, beta: Matrix, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("batch norm epsilon must be positive, got {eps}")));
        }
        if gamma.rows() != 1 || gamma.shape() != beta.shape() {
            return Err(Error::shape("batch norm parameters", gamma.shape(), beta.shape()));
        }
        let d = gamma.cols();
        Ok(Self {
            dgamma: Matrix::zeros(1, d),
            dbeta: Matrix::zeros(1, d),
            gamma,
            beta,
            eps,
            z: None,
            inv_sqrt_sigma: None,
            cache: IoCache::default(),
            optimizer: CompositeOptimizer::uniform(OptimizerKind::GradientDescent, &[d, d]),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn beta(&self) -> &Matrix {
        &self.beta
    }

    pub fn gamma_gradient(&self) -> &Matrix {
        &self.dgamma
    }

    pub fn beta_gradient(&self) -> &Matrix {
        &self.dbeta
    }

    /// Standardized batch `Z` from the last feedforward.
    pub fn standardized(&self) -> Option<&Matrix> {
        self.z.as_ref()
    }

    /// `(Σ + eps)^{-1/2}` from the last feedforward.
    pub fn inv_sqrt_sigma(&self) -> Option<&Matrix> {
        self.inv_sqrt_sigma.as_ref()
    }
}

impl Layer for BatchNormLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm { eps: self.eps }
    }

    fn input_width(&self) -> usize {
        self.gamma.cols()
    }

    fn output_width(&self) -> usize {
        self.gamma.cols()
    }

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input("batch norm feedforward", x, self.input_width())?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::Config(format!("batch norm needs at least 2 rows per batch, got {n}")));
        }
        self.cache.store(x);
        let r = x.sub(&x.columns_mean().row_repeat(n)?)?;
        let sigma = r.transpose().matmul(&r)?.diag()?.transpose().scale(1.0 / n as f64);
        let inv = sigma.inv_sqrt(self.eps)?;
        let z = inv.row_repeat(n)?.hadamard(&r)?;
        let y = self.gamma.row_repeat(n)?.hadamard(&z)?.add(&self.beta.row_repeat(n)?)?;
        self.z = Some(z);
        self.inv_sqrt_sigma = Some(inv);
        Ok(y)
    }

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        let x = self.cache.x("batch norm layer")?;
        check_output_gradient("batch norm backpropagate", x, y, dy, self.output_width())?;
        let n = x.rows();
        let z = self.z.as_ref().expect("Z is cached together with X");
        let inv = self.inv_sqrt_sigma.as_ref().expect("Σ^{-1/2} is cached together with X");

        let dz = self.gamma.row_repeat(n)?.hadamard(dy)?;
        self.dbeta = dy.columns_sum();
        self.dgamma = dy.hadamard(z)?.columns_sum();

        // DX = (1_N Σ^{-1/2} / N) ⊙ ((N I - 1_N 1_N^T) DZ - Z ⊙ (1_N diag(Z^T DZ)^T))
        let centering = Matrix::identity(n).scale(n as f64).sub(&Matrix::ones(n, n))?;
        let projection = z.transpose().matmul(&dz)?.diag()?.transpose();
        let inner = centering.matmul(&dz)?.sub(&z.hadamard(&projection.row_repeat(n)?)?)?;
        let dx = inv.scale(1.0 / n as f64).row_repeat(n)?.hadamard(&inner)?;
        self.cache.dx = Some(dx);
        Ok(())
    }

    fn input(&self) -> Option<&Matrix> {
        self.cache.x.as_ref()
    }

    fn input_gradient(&self) -> Option<&Matrix> {
        self.cache.dx.as_ref()
    }

    fn parameters(&self) -> Vec<Param<'_>> {
        vec![
            Param { name: "gamma", value: self.gamma.as_slice(), grad: self.dgamma.as_slice() },
            Param { name: "beta", value: self.beta.as_slice(), grad: self.dbeta.as_slice() },
        ]
    }

    fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
        vec![
            ParamMut { name: "gamma", value: self.gamma.as_mut_slice(), grad: self.dgamma.as_slice() },
            ParamMut { name: "beta", value: self.beta.as_mut_slice(), grad: self.dbeta.as_slice() },
        ]
    }

    fn set_optimizer(&mut self, kind: OptimizerKind) {
        self.optimizer = CompositeOptimizer::uniform(kind, &[self.gamma.len(), self.beta.len()]);
    }

    fn optimize(&mut self, eta: f64) -> Result<()> {
        self.optimizer.update(
            vec![
                (self.gamma.as_mut_slice(), self.dgamma.as_slice()),
                (self.beta.as_mut_slice(), self.dbeta.as_slice()),
            ],
            eta,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-3.0..5.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn two_point_reference() {
        let mut layer = BatchNormLayer::new(1, 1e-300).unwrap();
        let y = layer.feedforward(&Matrix::column_vector(&[1.0, 3.0])).unwrap();
        assert_eq!(y, Matrix::column_vector(&[-1.0, 1.0]));
        assert_eq!(layer.standardized().unwrap(), &y);
    }

    #[test]
    fn standardized_columns_have_zero_mean_and_unit_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps = DEFAULT_BATCHNORM_EPS;
        let mut layer = BatchNormLayer::new(4, eps).unwrap();
        let x = random(32, 4, &mut rng);
        layer.feedforward(&x).unwrap();
        let z = layer.standardized().unwrap();
        for (j, s) in z.columns_sum().as_slice().iter().enumerate() {
            assert!(s.abs() < 1e-10, "column {j}");
        }
        let r = x.sub(&x.columns_mean().row_repeat(32).unwrap()).unwrap();
        let sigma = r.hadamard(&r).unwrap().columns_mean();
        let var = z.hadamard(z).unwrap().columns_mean();
        for j in 0..4 {
            let expected = sigma.get(0, j) / (sigma.get(0, j) + eps);
            assert!((var.get(0, j) - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn single_row_batch_is_rejected() {
        let mut layer = BatchNormLayer::new(3, DEFAULT_BATCHNORM_EPS).unwrap();
        assert!(matches!(layer.feedforward(&Matrix::ones(1, 3)), Err(Error::Config(_))));
        assert!(BatchNormLayer::new(3, 0.0).is_err());
    }

    #[test]
    fn dx_rows_sum_to_zero() {
        // DX is orthogonal to shifting every row of X by the same vector.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let gamma = random(1, 3, &mut rng);
        let mut layer = BatchNormLayer::with_parameters(gamma, Matrix::zeros(1, 3), 1e-5).unwrap();
        let x = random(6, 3, &mut rng);
        let y = layer.feedforward(&x).unwrap();
        layer.backpropagate(&y, &random(6, 3, &mut rng)).unwrap();
        let sums = layer.input_gradient().unwrap().columns_sum();
        assert!(sums.as_slice().iter().all(|s| s.abs() < 1e-10));
    }
}
