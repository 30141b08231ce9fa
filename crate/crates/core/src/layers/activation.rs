use rand::Rng;

use super::linear::affine;
use super::{check_input, check_output_gradient, Dense, IoCache, Layer, LayerKind, Param, ParamMut};
use crate::error::Result;
use crate::functions::Activation;
use crate::matrix::Matrix;
use crate::optimize::{OptimizerKind, WeightInit};

/// `Z = X W^T + 1_N b`, `Y = act(Z)`.
#[derive(Debug)]
pub struct ActivationLayer {
    pub(crate) dense: Dense,
    act: Activation,
    z: Option<Matrix>,
    cache: IoCache,
}

impl ActivationLayer {
    pub fn new(w: Matrix, b: Matrix, act: Activation) -> Result<Self> {
        Ok(Self { dense: Dense::new(w, b)?, act, z: None, cache: IoCache::default() })
    }

    pub fn init<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        act: Activation,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self { dense: Dense::init(d, k, init, rng)?, act, z: None, cache: IoCache::default() })
    }

    pub fn activation(&self) -> Activation {
        self.act
    }
}

impl Layer for ActivationLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::Activation { outputs: self.output_width(), act: self.act }
    }

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input("activation feedforward", x, self.input_width())?;
        self.cache.store(x);
        let z = affine(x, &self.dense.w, &self.dense.b)?;
        let y = self.act.apply(&z);
        self.z = Some(z);
        Ok(y)
    }

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        let x = self.cache.x("activation layer")?;
        check_output_gradient("activation backpropagate", x, y, dy, self.output_width())?;
        let z = self.z.as_ref().expect("Z is cached together with X");
        let dz = dy.hadamard(&self.act.gradient(z))?;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_dead_region() {
        let w = Matrix::filled(2, 3, -1.0);
        let mut layer = ActivationLayer::new(w, Matrix::zeros(1, 2), Activation::Relu).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [0.5, 0.1, 0.2]]).unwrap();
        let y = layer.feedforward(&x).unwrap();
        assert_eq!(y, Matrix::zeros(2, 2));
        layer.backpropagate(&y, &Matrix::ones(2, 2)).unwrap();
        assert_eq!(layer.input_gradient().unwrap(), &Matrix::zeros(2, 3));
        assert_eq!(layer.dense.dw, Matrix::zeros(2, 3));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut layer =
            ActivationLayer::new(Matrix::zeros(2, 3), Matrix::zeros(1, 2), Activation::Sigmoid).unwrap();
        let y = layer.feedforward(&Matrix::ones(4, 3)).unwrap();
        assert_eq!(y, Matrix::filled(4, 2, 0.5));
    }

    #[test]
    fn kind_round_trips() {
        let layer = ActivationLayer::new(
            Matrix::zeros(5, 3),
            Matrix::zeros(1, 5),
            Activation::LeakyRelu { alpha: 0.2 },
        )
        .unwrap();
        assert_eq!(layer.kind().to_string(), "LeakyReLU(5,0.2)");
    }
}
