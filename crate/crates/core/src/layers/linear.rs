use rand::Rng;

use super::{check_input, check_output_gradient, Dense, IoCache, Layer, LayerKind, Param, ParamMut};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::optimize::{OptimizerKind, WeightInit};

/// `Y = X W^T + 1_N b`.
#[derive(Debug)]
pub struct LinearLayer {
    pub(crate) dense: Dense,
    cache: IoCache,
}

impl LinearLayer {
    /// Layer with the given `K x D` weights and `1 x K` bias.
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        Ok(Self { dense: Dense::new(w, b)?, cache: IoCache::default() })
    }

    pub fn init<R: Rng + ?Sized>(d: usize, k: usize, init: WeightInit, rng: &mut R) -> Result<Self> {
        Ok(Self { dense: Dense::init(d, k, init, rng)?, cache: IoCache::default() })
    }

    pub fn weights(&self) -> &Matrix {
        &self.dense.w
    }

    pub fn bias(&self) -> &Matrix {
        &self.dense.b
    }

    pub fn weights_gradient(&self) -> &Matrix {
        &self.dense.dw
    }

    pub fn bias_gradient(&self) -> &Matrix {
        &self.dense.db
    }
}

/// `X W^T + 1_N b`.
pub(crate) fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    x.matmul(&w.transpose())?.add(&b.row_repeat(x.rows())?)
}

impl Layer for LinearLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::Linear { outputs: self.output_width() }
    }

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input("linear feedforward", x, self.input_width())?;
        self.cache.store(x);
        affine(x, &self.dense.w, &self.dense.b)
    }

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        let x = self.cache.x("linear layer")?;
        check_output_gradient("linear backpropagate", x, y, dy, self.output_width())?;
        self.dense.dw = dy.transpose().matmul(x)?;
        self.dense.db = dy.columns_sum();
        self.cache.dx = Some(dy.matmul(&self.dense.w)?);
        Ok(())
    }

    dense_layer_boilerplate!();
}
