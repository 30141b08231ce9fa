use rand::Rng;

use super::linear::affine;
use super::{check_input, check_output_gradient, Dense, IoCache, Layer, LayerKind, Param, ParamMut};
use crate::error::Result;
use crate::functions::{stable_log_softmax, stable_softmax};
use crate::matrix::Matrix;
use crate::optimize::{OptimizerKind, WeightInit};

/// `Z = X W^T + 1_N b`, `Y = softmax(Z)` row by row.
#[derive(Debug)]
pub struct SoftmaxLayer {
    pub(crate) dense: Dense,
    z: Option<Matrix>,
    cache: IoCache,
}

impl SoftmaxLayer {
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        Ok(Self { dense: Dense::new(w, b)?, z: None, cache: IoCache::default() })
    }

    pub fn init<R: Rng + ?Sized>(d: usize, k: usize, init: WeightInit, rng: &mut R) -> Result<Self> {
        Ok(Self { dense: Dense::init(d, k, init, rng)?, z: None, cache: IoCache::default() })
    }
}

impl Layer for SoftmaxLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::Softmax { outputs: self.output_width() }
    }

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input("softmax feedforward", x, self.input_width())?;
        self.cache.store(x);
        let z = affine(x, &self.dense.w, &self.dense.b)?;
        let y = stable_softmax(&z);
        self.z = Some(z);
        Ok(y)
    }

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        let x = self.cache.x("softmax layer")?;
        let k = self.output_width();
        check_output_gradient("softmax backpropagate", x, y, dy, k)?;
        // DZ = Y ⊙ (DY - diag(DY Y^T) 1_K^T), with the diagonal taken row by row
        let row_dots: Vec<f64> = (0..y.rows())
            .map(|i| dy.row_slice(i).iter().zip(y.row_slice(i)).map(|(a, b)| a * b).sum())
            .collect();
        let dz = y.hadamard(&dy.sub(&Matrix::column_vector(&row_dots).column_repeat(k)?)?)?;
        self.dense.dw = dz.transpose().matmul(x)?;
        self.dense.db = dz.columns_sum();
        self.cache.dx = Some(dz.matmul(&self.dense.w)?);
        Ok(())
    }

    fn pre_activation(&self) -> Option<&Matrix> {
        self.z.as_ref()
    }

    dense_layer_boilerplate!();
}

/// `Z = X W^T + 1_N b`, `Y = log_softmax(Z)` row by row.
#[derive(Debug)]
pub struct LogSoftmaxLayer {
    pub(crate) dense: Dense,
    z: Option<Matrix>,
    cache: IoCache,
}

impl LogSoftmaxLayer {
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        Ok(Self { dense: Dense::new(w, b)?, z: None, cache: IoCache::default() })
    }

    pub fn init<R: Rng + ?Sized>(d: usize, k: usize, init: WeightInit, rng: &mut R) -> Result<Self> {
        Ok(Self { dense: Dense::init(d, k, init, rng)?, z: None, cache: IoCache::default() })
    }
}

impl Layer for LogSoftmaxLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::LogSoftmax { outputs: self.output_width() }
    }

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input("log-softmax feedforward", x, self.input_width())?;
        self.cache.store(x);
        let z = affine(x, &self.dense.w, &self.dense.b)?;
        let y = stable_log_softmax(&z);
        self.z = Some(z);
        Ok(y)
    }

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        let x = self.cache.x("log-softmax layer")?;
        let k = self.output_width();
        check_output_gradient("log-softmax backpropagate", x, y, dy, k)?;
        let z = self.z.as_ref().expect("Z is cached together with X");
        // DZ = DY - softmax(Z) ⊙ (DY 1_K 1_K^T)
        let dz = dy.sub(&stable_softmax(z).hadamard(&dy.rows_sum().column_repeat(k)?)?)?;
        self.dense.dw = dz.transpose().matmul(x)?;
        self.dense.db = dz.columns_sum();
        self.cache.dx = Some(dz.matmul(&self.dense.w)?);
        Ok(())
    }

    fn pre_activation(&self) -> Option<&Matrix> {
        self.z.as_ref()
    }

    dense_layer_boilerplate!();
}
