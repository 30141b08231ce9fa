use rand::{Rng, RngCore};

use super::linear::affine;
use super::{check_input, check_output_gradient, Dense, IoCache, Layer, LayerKind, Param, ParamMut};
use crate::error::{Error, Result};
use crate::functions::Activation;
use crate::matrix::Matrix;
use crate::optimize::{OptimizerKind, WeightInit};

/// Weight mask `R` with entries `0` (probability `p`) or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    r: Matrix,
    p: f64,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Result<Self> {
        check_fraction(p)?;
        let keep = 1.0 / (1.0 - p);
        let data = (0..rows * cols).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        Ok(Self { r: Matrix::from_vec(rows, cols, data)?, p })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.r
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

fn check_fraction(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("dropout fraction must lie in (0, 1), got {p}")));
    }
    Ok(())
}

/// Shared state of both dropout layers: `W ⊙ R` replaces `W` while training.
#[derive(Debug)]
struct DropConnect {
    dense: Dense,
    act: Option<Activation>,
    p: f64,
    mask: Matrix,
    training: bool,
    masked_w: Option<Matrix>,
    z: Option<Matrix>,
    cache: IoCache,
}

impl DropConnect {
    fn init(
        d: usize,
        k: usize,
        p: f64,
        act: Option<Activation>,
        init: WeightInit,
        rng: &mut (impl Rng + ?Sized),
    ) -> Result<Self> {
        check_fraction(p)?;
        let dense = Dense::init(d, k, init, rng)?;
        let mask = DropoutMask::sample(k, d, p, rng)?.r;
        Ok(Self { dense, act, p, mask, training: true, masked_w: None, z: None, cache: IoCache::default() })
    }

    fn set_mask(&mut self, r: Matrix) -> Result<()> {
        if r.shape() != self.dense.w.shape() {
            return Err(Error::shape("dropout mask", r.shape(), self.dense.w.shape()));
        }
        self.mask = r;
        Ok(())
    }

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input("dropout feedforward", x, self.dense.input_width())?;
        self.cache.store(x);
        let w = if self.training { self.dense.w.hadamard(&self.mask)? } else { self.dense.w.clone() };
        let z = affine(x, &w, &self.dense.b)?;
        self.masked_w = Some(w);
        let y = match self.act {
            Some(act) => act.apply(&z),
            None => z.clone(),
        };
        self.z = Some(z);
        Ok(y)
    }

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        let x = self.cache.x("dropout layer")?;
        check_output_gradient("dropout backpropagate", x, y, dy, self.dense.output_width())?;
        let dz = match self.act {
            Some(act) => dy.hadamard(&act.gradient(self.z.as_ref().expect("Z is cached")))?,
            None => dy.clone(),
        };
        let w = self.masked_w.as_ref().expect("W ⊙ R is cached together with X");
        let dw = dz.transpose().matmul(x)?;
        self.dense.dw = if self.training { dw.hadamard(&self.mask)? } else { dw };
        self.dense.db = dz.columns_sum();
        self.cache.dx = Some(dz.matmul(w)?);
        Ok(())
    }

    fn resample(&mut self, rng: &mut dyn RngCore) -> Result<()> {
        let (k, d) = (self.dense.w.rows(), self.dense.w.cols());
        self.mask = DropoutMask::sample(k, d, self.p, rng)?.r;
        Ok(())
    }
}

macro_rules! dropout_layer {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug)]
        pub struct $name {
            inner: DropConnect,
        }

        impl $name {
            /// Current mask `R`.
            pub fn mask(&self) -> &Matrix {
                &self.inner.mask
            }

            /// Replaces `R`; it must have the shape of `W`.
            pub fn set_mask(&mut self, r: Matrix) -> Result<()> {
                self.inner.set_mask(r)
            }

            pub fn p(&self) -> f64 {
                self.inner.p
            }

            pub fn weights(&self) -> &Matrix {
                &self.inner.dense.w
            }

            pub fn weights_gradient(&self) -> &Matrix {
                &self.inner.dense.dw
            }

            pub fn is_training(&self) -> bool {
                self.inner.training
            }
        }

        impl Layer for $name {
            fn kind(&self) -> LayerKind {
                self.kind_of()
            }

            fn input_width(&self) -> usize {
                self.inner.dense.input_width()
            }

            fn output_width(&self) -> usize {
                self.inner.dense.output_width()
            }

            fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
                self.inner.feedforward(x)
            }

            fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
                self.inner.backpropagate(y, dy)
            }

            fn input(&self) -> Option<&Matrix> {
                self.inner.cache.x.as_ref()
            }

            fn input_gradient(&self) -> Option<&Matrix> {
                self.inner.cache.dx.as_ref()
            }

            fn parameters(&self) -> Vec<Param<'_>> {
                self.inner.dense.parameters()
            }

            fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
                self.inner.dense.parameters_mut()
            }

            fn set_optimizer(&mut self, kind: OptimizerKind) {
                self.inner.dense.set_optimizer(kind);
            }

            fn optimize(&mut self, eta: f64) -> Result<()> {
                self.inner.dense.optimize(eta)
            }

            fn set_training(&mut self, training: bool) {
                self.inner.training = training;
            }

            fn resample(&mut self, rng: &mut dyn RngCore) -> Result<()> {
                self.inner.resample(rng)
            }

            fn pre_activation(&self) -> Option<&Matrix> {
                self.inner.act.and(self.inner.z.as_ref())
            }
        }
    };
}

dropout_layer!(
    /// Linear layer with `W ⊙ R` in place of `W` during training.
    LinearDropoutLayer
);

dropout_layer!(
    /// Activation layer with `W ⊙ R` in place of `W` during training.
    ActivationDropoutLayer
);

impl LinearDropoutLayer {
    pub fn init<R: Rng + ?Sized>(d: usize, k: usize, p: f64, init: WeightInit, rng: &mut R) -> Result<Self> {
        Ok(Self { inner: DropConnect::init(d, k, p, None, init, rng)? })
    }

    fn kind_of(&self) -> LayerKind {
        LayerKind::LinearDropout { outputs: self.inner.dense.output_width(), p: self.inner.p }
    }
}

impl ActivationDropoutLayer {
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        p: f64,
        act: Activation,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self { inner: DropConnect::init(d, k, p, Some(act), init, rng)? })
    }

    pub fn activation(&self) -> Activation {
        self.inner.act.expect("activation dropout always has an activation")
    }

    fn kind_of(&self) -> LayerKind {
        LayerKind::ActivationDropout {
            outputs: self.inner.dense.output_width(),
            p: self.inner.p,
            act: self.activation(),
        }
    }
}
