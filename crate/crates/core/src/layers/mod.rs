//! Layers with explicit batch matrix-form feedforward and backpropagation.
//!
//! Every layer follows the same data flow. `feedforward(X)` stores `X` and
//! returns `Y`. `backpropagate(Y, DY)` reads `Y`, `DY` and cached values and
//! overwrites `DX` and all parameter gradients. `optimize(eta)` hands each
//! `(θ, Dθ)` pair to the optimizer bound to it. Inputs are `N x D`, outputs
//! `N x K`, and weight matrices `K x D`.

// Accessors shared by layers built on `Dense` with an `IoCache`.
macro_rules! dense_layer_boilerplate {
    () => {
        fn input_width(&self) -> usize {
            self.dense.input_width()
        }

        fn output_width(&self) -> usize {
            self.dense.output_width()
        }

        fn input(&self) -> Option<&Matrix> {
            self.cache.x.as_ref()
        }

        fn input_gradient(&self) -> Option<&Matrix> {
            self.cache.dx.as_ref()
        }

        fn parameters(&self) -> Vec<Param<'_>> {
            self.dense.parameters()
        }

        fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
            self.dense.parameters_mut()
        }

        fn set_optimizer(&mut self, kind: OptimizerKind) {
            self.dense.set_optimizer(kind);
        }

        fn optimize(&mut self, eta: f64) -> Result<()> {
            self.dense.optimize(eta)
        }
    };
}

mod activation;
mod batchnorm;
mod dropout;
mod linear;
mod softmax;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

pub use activation::ActivationLayer;
pub use batchnorm::{BatchNormLayer, DEFAULT_BATCHNORM_EPS};
pub use dropout::{ActivationDropoutLayer, DropoutMask, LinearDropoutLayer};
pub use linear::LinearLayer;
pub use softmax::{LogSoftmaxLayer, SoftmaxLayer};

use crate::error::{Error, Result, Shape};
use crate::functions::Activation;
use crate::matrix::Matrix;
use crate::optimize::{CompositeOptimizer, OptimizerKind, WeightInit};
use crate::parse::{real_text, split_top_level, term};
use crate::sparse::{CsrMatrix, SparseActivationLayer, SparseLinearLayer};

/// Read-only view of one parameter and its gradient.
#[derive(Debug)]
pub struct Param<'a> {
    pub name: &'static str,
    pub value: &'a [f64],
    pub grad: &'a [f64],
}

/// Mutable view of one parameter next to its gradient.
#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: &'static str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

pub trait Layer: fmt::Debug + Send + Sync {
    /// Configuration that rebuilds a layer of this shape.
    fn kind(&self) -> LayerKind;

    fn input_width(&self) -> usize;

    fn output_width(&self) -> usize;

    fn feedforward(&mut self, x: &Matrix) -> Result<Matrix>;

    fn backpropagate(&mut self, y: &Matrix, dy: &Matrix) -> Result<()>;

    /// Input `X` stored by the last feedforward.
    fn input(&self) -> Option<&Matrix>;

    /// `DX` computed by the last backpropagate.
    fn input_gradient(&self) -> Option<&Matrix>;

    fn parameters(&self) -> Vec<Param<'_>>;

    fn parameters_mut(&mut self) -> Vec<ParamMut<'_>>;

    /// Binds a fresh optimizer of `kind` to every parameter.
    fn set_optimizer(&mut self, kind: OptimizerKind);

    fn optimize(&mut self, eta: f64) -> Result<()>;

    /// Switches between training and evaluation behaviour (dropout masks).
    fn set_training(&mut self, _training: bool) {}

    /// Draws fresh random state at the start of an epoch (dropout masks).
    fn resample(&mut self, _rng: &mut dyn RngCore) -> Result<()> {
        Ok(())
    }

    /// Pre-activation `Z` cached by the last feedforward, for layers that
    /// apply a nonlinearity after an affine map.
    fn pre_activation(&self) -> Option<&Matrix> {
        None
    }

    /// Sparse weights, for layers that store `W` in CSR form.
    fn sparse_weights(&self) -> Option<&CsrMatrix> {
        None
    }
}

/// Stored input and its gradient.
#[derive(Debug, Clone, Default)]
pub(crate) struct IoCache {
    pub x: Option<Matrix>,
    pub dx: Option<Matrix>,
}

impl IoCache {
    pub fn store(&mut self, x: &Matrix) {
        self.x = Some(x.clone());
    }

    pub fn x(&self, layer: &str) -> Result<&Matrix> {
        self.x
            .as_ref()
            .ok_or_else(|| Error::State(format!("{layer}: backpropagate called before feedforward")))
    }
}

/// Checks an input batch against the expected width.
pub(crate) fn check_input(op: &'static str, x: &Matrix, width: usize) -> Result<()> {
    if x.cols() != width {
        return Err(Error::Shape { op, left: x.shape(), right: Shape(x.rows(), width) });
    }
    Ok(())
}

/// Checks that `DY` matches `Y` and the batch of the stored input.
pub(crate) fn check_output_gradient(
    op: &'static str,
    x: &Matrix,
    y: &Matrix,
    dy: &Matrix,
    width: usize,
) -> Result<()> {
    if y.shape() != dy.shape() {
        return Err(Error::Shape { op, left: y.shape(), right: dy.shape() });
    }
    if dy.shape() != Shape(x.rows(), width) {
        return Err(Error::Shape { op, left: dy.shape(), right: Shape(x.rows(), width) });
    }
    Ok(())
}

/// Weights `W` (`K x D`), bias `b` (`1 x K`), their gradients and optimizers.
#[derive(Debug)]
pub(crate) struct Dense {
    pub w: Matrix,
    pub b: Matrix,
    pub dw: Matrix,
    pub db: Matrix,
    pub optimizer: CompositeOptimizer,
}

impl Dense {
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.rows() {
            return Err(Error::Shape { op: "dense layer", left: w.shape(), right: b.shape() });
        }
        let (k, d) = (w.rows(), w.cols());
        Ok(Self {
            dw: Matrix::zeros(k, d),
            db: Matrix::zeros(1, k),
            optimizer: CompositeOptimizer::uniform(OptimizerKind::GradientDescent, &[k * d, k]),
            w,
            b,
        })
    }

    pub fn init<R: rand::Rng + ?Sized>(d: usize, k: usize, init: WeightInit, rng: &mut R) -> Result<Self> {
        let mut w = Matrix::zeros(k, d);
        init.fill(w.as_mut_slice(), d, k, rng)?;
        Self::new(w, Matrix::zeros(1, k))
    }

    pub fn input_width(&self) -> usize {
        self.w.cols()
    }

    pub fn output_width(&self) -> usize {
        self.w.rows()
    }

    pub fn parameters(&self) -> Vec<Param<'_>> {
        vec![
            Param { name: "W", value: self.w.as_slice(), grad: self.dw.as_slice() },
            Param { name: "b", value: self.b.as_slice(), grad: self.db.as_slice() },
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
        vec![
            ParamMut { name: "W", value: self.w.as_mut_slice(), grad: self.dw.as_slice() },
            ParamMut { name: "b", value: self.b.as_mut_slice(), grad: self.db.as_slice() },
        ]
    }

    pub fn set_optimizer(&mut self, kind: OptimizerKind) {
        self.optimizer = CompositeOptimizer::uniform(kind, &[self.w.len(), self.b.len()]);
    }

    pub fn optimize(&mut self, eta: f64) -> Result<()> {
        let Dense { w, b, dw, db, optimizer } = self;
        optimizer.update(vec![(w.as_mut_slice(), dw.as_slice()), (b.as_mut_slice(), db.as_slice())], eta)
    }
}

/// Layer configuration; the `Display` form is the canonical config string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    Linear { outputs: usize },
    Activation { outputs: usize, act: Activation },
    Softmax { outputs: usize },
    LogSoftmax { outputs: usize },
    BatchNorm { eps: f64 },
    LinearDropout { outputs: usize, p: f64 },
    ActivationDropout { outputs: usize, p: f64, act: Activation },
    SparseLinear { outputs: usize, density: f64 },
    SparseActivation { outputs: usize, density: f64, act: Activation },
}

impl LayerKind {
    /// Output width for a layer receiving `input_width` features.
    pub fn output_width(&self, input_width: usize) -> usize {
        match *self {
            LayerKind::BatchNorm { .. } => input_width,
            LayerKind::Linear { outputs }
            | LayerKind::Activation { outputs, .. }
            | LayerKind::Softmax { outputs }
            | LayerKind::LogSoftmax { outputs }
            | LayerKind::LinearDropout { outputs, .. }
            | LayerKind::ActivationDropout { outputs, .. }
            | LayerKind::SparseLinear { outputs, .. }
            | LayerKind::SparseActivation { outputs, .. } => outputs,
        }
    }

    /// Parses a `;`-separated list such as `ReLU(1024);ReLU(512);Linear(10)`.
    pub fn parse_list(text: &str) -> Result<Vec<LayerKind>> {
        let items: Vec<&str> =
            split_top_level(text, ';').into_iter().filter(|s| !s.trim().is_empty()).collect();
        if items.is_empty() {
            return Err(Error::Config("empty layer list".into()));
        }
        items
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.parse().map_err(|e: Error| e.context(format!("layer {i}"))))
            .collect()
    }

    /// Inverse of [`LayerKind::parse_list`].
    pub fn format_list(kinds: &[LayerKind]) -> String {
        kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";")
    }

    /// Element-wise nonlinearity applied after the affine map, if any.
    pub fn activation(&self) -> Option<Activation> {
        match *self {
            LayerKind::Activation { act, .. }
            | LayerKind::ActivationDropout { act, .. }
            | LayerKind::SparseActivation { act, .. } => Some(act),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.output_width(1) == 0 {
            return bad(format!("{self}: layer width must be positive"));
        }
        match *self {
            LayerKind::BatchNorm { eps } if !(eps > 0.0) => {
                bad(format!("batch norm epsilon must be positive, got {eps}"))
            }
            LayerKind::LinearDropout { p, .. } | LayerKind::ActivationDropout { p, .. }
                if !(p > 0.0 && p < 1.0) =>
            {
                bad(format!("dropout fraction must lie in (0, 1), got {p}"))
            }
            LayerKind::SparseLinear { density, .. } | LayerKind::SparseActivation { density, .. }
                if !(density > 0.0 && density <= 1.0) =>
            {
                bad(format!("density must lie in (0, 1], got {density}"))
            }
            _ => Ok(()),
        }
    }

    /// Creates a layer with `input_width` inputs. Weights are drawn with
    /// `init`; dropout masks and sparsity patterns also come from `rng`.
    pub fn build(
        &self,
        input_width: usize,
        init: WeightInit,
        rng: &mut dyn RngCore,
    ) -> Result<Box<dyn Layer>> {
        self.validate()?;
        if input_width == 0 {
            return Err(Error::Config(format!("{self}: input width must be positive")));
        }
        let d = input_width;
        let layer: Box<dyn Layer> = match *self {
            LayerKind::Linear { outputs } => Box::new(LinearLayer::init(d, outputs, init, rng)?),
            LayerKind::Activation { outputs, act } => {
                Box::new(ActivationLayer::init(d, outputs, act, init, rng)?)
            }
            LayerKind::Softmax { outputs } => Box::new(SoftmaxLayer::init(d, outputs, init, rng)?),
            LayerKind::LogSoftmax { outputs } => Box::new(LogSoftmaxLayer::init(d, outputs, init, rng)?),
            LayerKind::BatchNorm { eps } => Box::new(BatchNormLayer::new(d, eps)?),
            LayerKind::LinearDropout { outputs, p } => {
                Box::new(LinearDropoutLayer::init(d, outputs, p, init, rng)?)
            }
            LayerKind::ActivationDropout { outputs, p, act } => {
                Box::new(ActivationDropoutLayer::init(d, outputs, p, act, init, rng)?)
            }
            LayerKind::SparseLinear { outputs, density } => {
                Box::new(SparseLinearLayer::init(d, outputs, density, init, rng)?)
            }
            LayerKind::SparseActivation { outputs, density, act } => {
                Box::new(SparseActivationLayer::init(d, outputs, density, act, init, rng)?)
            }
        };
        Ok(layer)
    }
}

/// `ReLU(K)`, `LeakyReLU(K,alpha)` and so on.
fn activation_term(act: &Activation, prefix: &str, leading: &[String]) -> String {
    let mut args = leading.to_vec();
    let name = match act {
        Activation::Relu => "ReLU",
        Activation::Tanh => "Tanh",
        Activation::Sigmoid => "Sigmoid",
        Activation::LeakyRelu { alpha } => {
            args.push(real_text(*alpha));
            "LeakyReLU"
        }
    };
    format!("{prefix}{name}({})", args.join(","))
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Linear { outputs } => write!(f, "Linear({outputs})"),
            LayerKind::Activation { outputs, act } => {
                f.write_str(&activation_term(act, "", &[outputs.to_string()]))
            }
            LayerKind::Softmax { outputs } => write!(f, "Softmax({outputs})"),
            LayerKind::LogSoftmax { outputs } => write!(f, "LogSoftmax({outputs})"),
            LayerKind::BatchNorm { eps } => {
                if *eps == DEFAULT_BATCHNORM_EPS {
                    write!(f, "BatchNorm")
                } else {
                    write!(f, "BatchNorm({})", real_text(*eps))
                }
            }
            LayerKind::LinearDropout { outputs, p } => {
                write!(f, "LinearDropout({outputs},{})", real_text(*p))
            }
            LayerKind::ActivationDropout { outputs, p, act } => {
                write!(f, "ActivationDropout({outputs},{},{act})", real_text(*p))
            }
            LayerKind::SparseLinear { outputs, density } => {
                write!(f, "SparseLinear({outputs},{})", real_text(*density))
            }
            LayerKind::SparseActivation { outputs, density, act } => {
                f.write_str(&activation_term(act, "Sparse", &[outputs.to_string(), real_text(*density)]))
            }
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = term(s)?;
        let name = t.name.to_ascii_lowercase();
        let kind = match name.as_str() {
            "linear" => {
                t.expect_args(1..=1)?;
                LayerKind::Linear { outputs: t.count(0)? }
            }
            "softmax" => {
                t.expect_args(1..=1)?;
                LayerKind::Softmax { outputs: t.count(0)? }
            }
            "logsoftmax" => {
                t.expect_args(1..=1)?;
                LayerKind::LogSoftmax { outputs: t.count(0)? }
            }
            "batchnorm" => {
                t.expect_args(0..=1)?;
                let eps = if t.args.is_empty() { DEFAULT_BATCHNORM_EPS } else { t.real(0)? };
                LayerKind::BatchNorm { eps }
            }
            "lineardropout" => {
                t.expect_args(2..=2)?;
                LayerKind::LinearDropout { outputs: t.count(0)?, p: t.real(1)? }
            }
            "activationdropout" => {
                t.expect_args(3..=3)?;
                LayerKind::ActivationDropout { outputs: t.count(0)?, p: t.real(1)?, act: t.args[2].parse()? }
            }
            "sparselinear" => {
                t.expect_args(2..=2)?;
                LayerKind::SparseLinear { outputs: t.count(0)?, density: t.real(1)? }
            }
            _ => {
                // ReLU(K), LeakyReLU(K[,alpha]), SparseReLU(K,density), ...
                let (sparse, act_name) = match name.strip_prefix("sparse") {
                    Some(rest) => (true, rest),
                    None => (false, name.as_str()),
                };
                let fixed = if sparse { 2 } else { 1 };
                let act = if act_name == "leakyrelu" {
                    t.expect_args(fixed..=fixed + 1)?;
                    let alpha = if t.args.len() > fixed {
                        t.real(fixed)?
                    } else {
                        crate::functions::DEFAULT_LEAKY_SLOPE
                    };
                    Activation::leaky_relu(alpha)?
                } else {
                    t.expect_args(fixed..=fixed)?;
                    act_name
                        .parse::<Activation>()
                        .map_err(|_| Error::Config(format!("unknown layer '{s}'")))?
                };
                let outputs = t.count(0)?;
                if sparse {
                    LayerKind::SparseActivation { outputs, density: t.real(1)?, act }
                } else {
                    LayerKind::Activation { outputs, act }
                }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}
