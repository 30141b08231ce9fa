use rand::Rng;

use super::{sdd_product, spmm, spmm_t, CsrMatrix};
use crate::error::{Error, Result};
use crate::functions::Activation;
use crate::layers::{check_input, check_output_gradient, IoCache, Layer, LayerKind, Param, ParamMut};
use crate::matrix::Matrix;
use crate::optimize::{CompositeOptimizer, OptimizerKind, WeightInit};

/// Sparse weights `W` (`K x D`, CSR) with gradient on the same pattern.
#[derive(Debug)]
struct SparseCore {
    w: CsrMatrix,
    dw: CsrMatrix,
    b: Matrix,
    db: Matrix,
    act: Option<Activation>,
    /// Requested density; the realized density of `w` can differ slightly.
    density: f64,
    z: Option<Matrix>,
    cache: IoCache,
    optimizer: CompositeOptimizer,
}

impl SparseCore {
    fn new(w: CsrMatrix, b: Matrix, act: Option<Activation>) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.rows() {
            return Err(Error::shape("sparse layer", w.shape(), b.shape()));
        }
        let k = w.rows();
        Ok(Self {
            dw: w.with_values(vec![0.0; w.nnz()])?,
            db: Matrix::zeros(1, k),
            optimizer: CompositeOptimizer::uniform(OptimizerKind::GradientDescent, &[w.nnz(), k]),
            density: w.density(),
            w,
            b,
            act,
            z: None,
            cache: IoCache::default(),
        })
    }

    /// Draws the pattern at `density`, then initializes the stored weights
    /// with fan-in `D` and fan-out `K`.
    fn init<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        density: f64,
        act: Option<Activation>,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = CsrMatrix::random_pattern(k, d, density, rng)?;
        init.fill(w.values_mut(), d, k, rng)?;
        let mut core = Self::new(w, Matrix::zeros(1, k), act)?;
        core.density = density;
        Ok(core)
    }

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input("sparse feedforward", x, self.w.cols())?;
        self.cache.store(x);
        // Y^T = W X^T
        let z = spmm(&self.w, &x.transpose())?.transpose().add(&self.b.row_repeat(x.rows())?)?;
        let y = match self.act {
            Some(act) => act.apply(&z),
            None => z.clone(),
        };
        self.z = Some(z);
        Ok(y)
    }

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()> {
        let x = self.cache.x("sparse layer")?;
        check_output_gradient("sparse backpropagate", x, y, dy, self.w.rows())?;
        let dz = match self.act {
            Some(act) => dy.hadamard(&act.gradient(self.z.as_ref().expect("Z is cached")))?,
            None => dy.clone(),
        };
        let dz_t = dz.transpose();
        self.dw = sdd_product(&dz_t, &x.transpose(), &self.w)?;
        self.db = dz.columns_sum();
        self.cache.dx = Some(spmm_t(&self.w, &dz_t)?.transpose());
        Ok(())
    }

    fn parameters(&self) -> Vec<Param<'_>> {
        vec![
            Param { name: "W", value: self.w.values(), grad: self.dw.values() },
            Param { name: "b", value: self.b.as_slice(), grad: self.db.as_slice() },
        ]
    }

    fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
        vec![
            ParamMut { name: "W", value: self.w.values_mut(), grad: self.dw.values() },
            ParamMut { name: "b", value: self.b.as_mut_slice(), grad: self.db.as_slice() },
        ]
    }

    fn set_optimizer(&mut self, kind: OptimizerKind) {
        self.optimizer = CompositeOptimizer::uniform(kind, &[self.w.nnz(), self.b.len()]);
    }

    fn optimize(&mut self, eta: f64) -> Result<()> {
        let SparseCore { w, dw, b, db, optimizer, .. } = self;
        optimizer.update(vec![(w.values_mut(), dw.values()), (b.as_mut_slice(), db.as_slice())], eta)
    }
}

macro_rules! sparse_layer {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug)]
        pub struct $name {
            inner: SparseCore,
        }

        impl $name {
            pub fn weights(&self) -> &CsrMatrix {
                &self.inner.w
            }

            /// `DW`, stored on the pattern of `W`.
            pub fn weights_gradient(&self) -> &CsrMatrix {
                &self.inner.dw
            }

            pub fn bias(&self) -> &Matrix {
                &self.inner.b
            }

            pub fn bias_gradient(&self) -> &Matrix {
                &self.inner.db
            }
        }

        impl Layer for $name {
            fn kind(&self) -> LayerKind {
                self.kind_of()
            }

            fn input_width(&self) -> usize {
                self.inner.w.cols()
            }

            fn output_width(&self) -> usize {
                self.inner.w.rows()
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
                self.inner.parameters()
            }

            fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
                self.inner.parameters_mut()
            }

            fn set_optimizer(&mut self, kind: OptimizerKind) {
                self.inner.set_optimizer(kind);
            }

            fn optimize(&mut self, eta: f64) -> Result<()> {
                self.inner.optimize(eta)
            }

            fn pre_activation(&self) -> Option<&Matrix> {
                self.inner.act.and(self.inner.z.as_ref())
            }

            fn sparse_weights(&self) -> Option<&CsrMatrix> {
                Some(&self.inner.w)
            }
        }
    };
}

sparse_layer!(
    /// `Y = X W^T + 1_N b` with CSR weights.
    SparseLinearLayer
);

sparse_layer!(
    /// `Y = act(X W^T + 1_N b)` with CSR weights.
    SparseActivationLayer
);

impl SparseLinearLayer {
    pub fn new(w: CsrMatrix, b: Matrix) -> Result<Self> {
        Ok(Self { inner: SparseCore::new(w, b, None)? })
    }

    /// Restores a layer whose pattern was drawn at `density`.
    pub fn from_parts(w: CsrMatrix, b: Matrix, density: f64) -> Result<Self> {
        let mut inner = SparseCore::new(w, b, None)?;
        inner.density = density;
        Ok(Self { inner })
    }

    pub fn init<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        density: f64,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self { inner: SparseCore::init(d, k, density, None, init, rng)? })
    }

    fn kind_of(&self) -> LayerKind {
        LayerKind::SparseLinear { outputs: self.inner.w.rows(), density: self.inner.density }
    }
}

impl SparseActivationLayer {
    pub fn new(w: CsrMatrix, b: Matrix, act: Activation) -> Result<Self> {
        Ok(Self { inner: SparseCore::new(w, b, Some(act))? })
    }

    /// Restores a layer whose pattern was drawn at `density`.
    pub fn from_parts(w: CsrMatrix, b: Matrix, act: Activation, density: f64) -> Result<Self> {
        let mut inner = SparseCore::new(w, b, Some(act))?;
        inner.density = density;
        Ok(Self { inner })
    }

    pub fn init<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        density: f64,
        act: Activation,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self { inner: SparseCore::init(d, k, density, Some(act), init, rng)? })
    }

    pub fn activation(&self) -> Activation {
        self.inner.act.expect("sparse activation layer always has an activation")
    }

    fn kind_of(&self) -> LayerKind {
        LayerKind::SparseActivation {
            outputs: self.inner.w.rows(),
            density: self.inner.density,
            act: self.activation(),
        }
    }
}
