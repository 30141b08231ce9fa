//! Finite-difference certification of the analytic gradients.
//!
//! Every check compares an analytic quantity with a central difference
//! `(f(x + h) - f(x - h)) / 2h`, where `h = ε^{1/3} max(1, |x|)` by default.
//! Errors are measured as `|a - n| / max(1, |a|, |n|)`: relative for large
//! entries and absolute near zero, so exactly-zero gradients (dropped
//! weights, dead units) do not blow up the ratio.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::functions::{
    log_softmax, log_softmax_jacobian, softmax, softmax_jacobian, stable_log_softmax, stable_softmax,
    Activation,
};
use crate::layers::LayerKind;
use crate::loss::LossFunction;
use crate::matrix::Matrix;
use crate::network::{one_hot, Mlp};
use crate::optimize::WeightInit;

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const BATCHNORM_TOLERANCE: f64 = 1e-5;
pub const JACOBIAN_TOLERANCE: f64 = 1e-7;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Inputs whose pre-activation lies this close to a kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 100;

/// Finite-difference step rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// `ε^{1/3} max(1, |x|)`.
    Relative,
    Fixed(f64),
}

impl Step {
    pub fn at(&self, x: f64) -> f64 {
        match *self {
            Step::Relative => f64::EPSILON.cbrt() * x.abs().max(1.0),
            Step::Fixed(h) => h,
        }
    }
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Central difference of `f` in coordinate `k` of `values`. `eval` sees the
/// perturbed values; the coordinate is restored afterwards. The divisor is
/// the realized spacing `(x + h) - (x - h)`.
fn central<F>(values: &mut [f64], k: usize, step: Step, mut eval: F) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let x = values[k];
    let h = step.at(x);
    let (xp, xm) = (x + h, x - h);
    values[k] = xp;
    let fp = eval(values);
    values[k] = xm;
    let fm = eval(values);
    values[k] = x;
    let (fp, fm) = (fp?, fm?);
    if !fp.is_finite() || !fm.is_finite() {
        return Err(Error::Oracle(format!("non-finite function value when perturbing entry {k} by ±{h:e}")));
    }
    Ok(((fp - fm) / (xp - xm), h))
}

/// `∂f/∂X` of a scalar function by central differences.
pub fn fd_gradient<F>(mut f: F, x: &Matrix, step: Step) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    let (rows, cols) = (x.rows(), x.cols());
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(rows, cols);
    for k in 0..x.len() {
        let (g, _) =
            central(probe.as_mut_slice(), k, step, |v| f(&Matrix::from_vec(rows, cols, v.to_vec())?))
                .map_err(|e| e.context(format!("entry ({}, {})", k / cols.max(1), k % cols.max(1))))?;
        grad.as_mut_slice()[k] = g;
    }
    Ok(grad)
}

/// Jacobian of a matrix-valued function: entry `(i, j)` is the derivative of
/// output entry `i` with respect to input entry `j`, both in row-major order.
pub fn fd_jacobian<F>(mut f: F, x: &Matrix, step: Step) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<Matrix>,
{
    let cols = x.cols();
    let m = f(x)?.len();
    let mut jacobian = Matrix::zeros(m, x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let v = probe.get(j / cols, j % cols);
        let h = step.at(v);
        let (vp, vm) = (v + h, v - h);
        probe.set(j / cols, j % cols, vp);
        let fp = f(&probe)?;
        probe.set(j / cols, j % cols, vm);
        let fm = f(&probe)?;
        probe.set(j / cols, j % cols, v);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite function value when perturbing entry ({}, {})",
                j / cols,
                j % cols
            )));
        }
        for i in 0..m {
            jacobian.set(i, j, (fp.as_slice()[i] - fm.as_slice()[i]) / (vp - vm));
        }
    }
    Ok(jacobian)
}

/// Outcome of comparing one analytic array with its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_error: f64,
    /// Flat index of the entry with the largest error.
    pub worst: Option<usize>,
    /// Largest finite-difference step used, zero for exact comparisons.
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn compare(
        name: impl Into<String>,
        analytic: &[f64],
        reference: &[f64],
        step: f64,
        tolerance: f64,
    ) -> Self {
        let name = name.into();
        if analytic.len() != reference.len() {
            return Self { name, max_error: f64::INFINITY, worst: None, step, tolerance, passed: false };
        }
        let mut max_error = 0.0;
        let mut worst = None;
        for (k, (&a, &n)) in analytic.iter().zip(reference).enumerate() {
            let e = relative_error(a, n);
            if e > max_error || e.is_nan() {
                max_error = e;
                worst = Some(k);
            }
        }
        let passed = max_error <= tolerance;
        Self { name, max_error, worst, step, tolerance, passed }
    }

    /// Folds several reports on the same quantity into the worst one.
    fn merge(name: impl Into<String>, reports: Vec<GradCheckReport>, tolerance: f64) -> Self {
        let name = name.into();
        let worst = reports
            .into_iter()
            .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
            .expect("at least one trial");
        let passed = worst.max_error <= tolerance;
        Self { name, passed, tolerance, ..worst }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} max_err={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )?;
        if let Some(k) = self.worst {
            write!(f, " worst={k}")?;
        }
        if self.step > 0.0 {
            write!(f, " h<={:.2e}", self.step)?;
        }
        Ok(())
    }
}

fn uniform(rows: usize, cols: usize, low: f64, high: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(low..high)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// Targets inside the domain of `loss`.
fn targets(loss: LossFunction, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    match loss {
        LossFunction::SquaredError | LossFunction::MeanSquaredError => uniform(n, k, -1.0, 1.0, rng),
        LossFunction::NegativeLogLikelihood => {
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            one_hot(&labels, k).expect("labels below k")
        }
        _ => uniform(n, k, 0.0, 1.0, rng),
    }
}

fn near_kink(mlp: &Mlp) -> bool {
    mlp.layers().iter().any(|layer| {
        layer.kind().activation().is_some_and(|a| a.has_kink())
            && layer.pre_activation().is_some_and(|z| z.as_slice().iter().any(|v| v.abs() < KINK_MARGIN))
    })
}

/// Checks every parameter gradient and `DX` of the network built from
/// `kinds` on an `n x d` batch against finite differences of
/// `loss(feedforward(X), T)`. Inputs are redrawn while any kinked
/// activation sees a pre-activation within [`KINK_MARGIN`] of zero.
pub fn check_network(
    kinds: &[LayerKind],
    d: usize,
    n: usize,
    loss: LossFunction,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<GradCheckReport>> {
    let label = kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        let mut mlp = Mlp::build(d, kinds, WeightInit::Uniform { low: -1.0, high: 1.0 }, &mut rng)?;
        let k = mlp.output_width().unwrap_or(d);
        for layer in mlp.layers_mut() {
            for p in layer.parameters_mut() {
                if p.name == "b" || p.name == "beta" {
                    p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
                }
            }
        }
        let x = uniform(n, d, -1.0, 1.0, &mut rng);
        let t = targets(loss, n, k, &mut rng);
        let y = mlp.feedforward(&x)?;
        if near_kink(&mlp) {
            continue;
        }
        let dy = loss.gradient(&y, &t)?;
        mlp.backpropagate(&y, &dy)?;
        return compare_network(&mut mlp, &label, &x, &t, loss, tolerance);
    }
    Err(Error::Oracle(format!(
        "{label}: every input drawn in {MAX_REDRAWS} attempts lies near an activation kink"
    )))
}

fn compare_network(
    mlp: &mut Mlp,
    label: &str,
    x: &Matrix,
    t: &Matrix,
    loss: LossFunction,
    tolerance: f64,
) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    let step = Step::Relative;
    for l in 0..mlp.len() {
        let count = mlp.layers()[l].parameters().len();
        for p in 0..count {
            let (name, analytic, mut values) = {
                let param = &mlp.layers()[l].parameters()[p];
                (param.name, param.grad.to_vec(), param.value.to_vec())
            };
            let mut numeric = Vec::with_capacity(values.len());
            let mut max_step: f64 = 0.0;
            for k in 0..values.len() {
                let (g, h) = central(&mut values, k, step, |v| {
                    mlp.layers_mut()[l].parameters_mut()[p].value.copy_from_slice(v);
                    loss.value(&mlp.feedforward(x)?, t)
                })
                .map_err(|e| e.context(format!("{label}: layer {l} {name}[{k}]")))?;
                numeric.push(g);
                max_step = max_step.max(h);
            }
            mlp.layers_mut()[l].parameters_mut()[p].value.copy_from_slice(&values);
            reports.push(GradCheckReport::compare(
                format!("{label} layer{l}.{name}"),
                &analytic,
                &numeric,
                max_step,
                tolerance,
            ));
        }
    }
    if let Some(first) = mlp.layers().first() {
        let analytic = first.input_gradient().expect("backpropagate ran").clone();
        let numeric = fd_gradient(|x| loss.value(&mlp.feedforward(x)?, t), x, step)?;
        let max_step = x.as_slice().iter().map(|&v| step.at(v)).fold(0.0, f64::max);
        reports.push(GradCheckReport::compare(
            format!("{label} DX"),
            analytic.as_slice(),
            numeric.as_slice(),
            max_step,
            tolerance,
        ));
    }
    Ok(reports)
}

/// Gradient check of a single layer on an `n x d` batch.
pub fn check_layer(
    kind: LayerKind,
    d: usize,
    n: usize,
    loss: LossFunction,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<GradCheckReport>> {
    check_network(&[kind], d, n, loss, seed, tolerance)
}

/// `loss.gradient` against finite differences of `loss.value` on an `n x k`
/// batch. Probability-valued losses receive softmax outputs.
pub fn check_loss(loss: LossFunction, n: usize, k: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = uniform(n, k, -2.0, 2.0, &mut rng);
    let y = match loss {
        LossFunction::CrossEntropy | LossFunction::NegativeLogLikelihood => softmax(&logits),
        _ => logits,
    };
    let t = targets(loss, n, k, &mut rng);
    let analytic = loss.gradient(&y, &t)?;
    let numeric = fd_gradient(|y| loss.value(y, &t), &y, Step::Relative)?;
    Ok(GradCheckReport::compare(
        format!("loss {loss}"),
        analytic.as_slice(),
        numeric.as_slice(),
        Step::Relative.at(2.0),
        DEFAULT_TOLERANCE,
    ))
}

/// `act.gradient` against finite differences of `act.apply`, away from kinks.
pub fn check_activation(act: Activation, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = uniform(10, 10, -3.0, 3.0, &mut rng);
    for v in x.as_mut_slice() {
        while act.has_kink() && v.abs() < KINK_MARGIN {
            *v = rng.random_range(-3.0..3.0);
        }
    }
    let numeric = fd_gradient(|x| Ok(act.apply(x).elements_sum()), &x, Step::Relative)?;
    Ok(GradCheckReport::compare(
        format!("activation {act}"),
        act.gradient(&x).as_slice(),
        numeric.as_slice(),
        Step::Relative.at(3.0),
        DEFAULT_TOLERANCE,
    ))
}

/// Closed-form softmax and log-softmax Jacobians against finite-difference
/// Jacobians of both the plain and the stable variants, `1 x k` input.
pub fn check_jacobians(k: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = uniform(1, k, -2.0, 2.0, &mut rng);
    type Case = (&'static str, fn(&Matrix) -> Matrix, Matrix);
    let cases: [Case; 4] = [
        ("softmax", softmax, softmax_jacobian(&z)?),
        ("stable_softmax", stable_softmax, softmax_jacobian(&z)?),
        ("log_softmax", log_softmax, log_softmax_jacobian(&z)?),
        ("stable_log_softmax", stable_log_softmax, log_softmax_jacobian(&z)?),
    ];
    cases
        .into_iter()
        .map(|(name, f, closed)| {
            let numeric = fd_jacobian(|z| Ok(f(z)), &z, Step::Relative)?;
            Ok(GradCheckReport::compare(
                format!("jacobian {name}"),
                closed.as_slice(),
                numeric.as_slice(),
                Step::Relative.at(2.0),
                JACOBIAN_TOLERANCE,
            ))
        })
        .collect()
}

/// One of the six row/column identities: the left side is assembled one
/// column (or row) at a time, the right side is the matrix form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixIdentity {
    /// `z^j = x^j (x^j)^T y^j` ⇒ `Z = X ⊙ (1_m diag(X^T Y)^T)`.
    ColumnOuterProjection,
    /// `z^j = 1_m (x^j)^T y^j` ⇒ `Z = 1_m diag(X^T Y)^T`.
    ColumnInnerBroadcast,
    /// `z^j = x^j 1_m^T y^j` ⇒ `Z = X ⊙ (1_m 1_m^T Y)`.
    ColumnSumScale,
    /// `z_i = x_i y_i^T y_i` ⇒ `Z = (diag(X Y^T) 1_n^T) ⊙ Y`.
    RowInnerScale,
    /// `z_i = x_i y_i^T 1_n^T` ⇒ `Z = diag(X Y^T) 1_n^T`.
    RowInnerBroadcast,
    /// `z_i = x_i 1_n y_i` ⇒ `Z = (X 1_n 1_n^T) ⊙ Y`.
    RowSumScale,
}

impl MatrixIdentity {
    pub const ALL: [MatrixIdentity; 6] = [
        MatrixIdentity::ColumnOuterProjection,
        MatrixIdentity::ColumnInnerBroadcast,
        MatrixIdentity::ColumnSumScale,
        MatrixIdentity::RowInnerScale,
        MatrixIdentity::RowInnerBroadcast,
        MatrixIdentity::RowSumScale,
    ];

    /// Left-hand side, built from individual columns or rows.
    pub fn by_parts(&self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        let (m, n) = (x.rows(), x.cols());
        let ones_m = Matrix::ones(m, 1);
        let ones_n = Matrix::ones(n, 1);
        let column = |j: usize| -> Result<Matrix> {
            let (xj, yj) = (x.column(j), y.column(j));
            match self {
                MatrixIdentity::ColumnOuterProjection => xj.matmul(&xj.transpose())?.matmul(&yj),
                MatrixIdentity::ColumnInnerBroadcast => ones_m.matmul(&xj.transpose())?.matmul(&yj),
                MatrixIdentity::ColumnSumScale => xj.matmul(&ones_m.transpose())?.matmul(&yj),
                _ => unreachable!("row identity"),
            }
        };
        let row = |i: usize| -> Result<Matrix> {
            let (xi, yi) = (x.row(i), y.row(i));
            match self {
                MatrixIdentity::RowInnerScale => xi.matmul(&yi.transpose())?.matmul(&yi),
                MatrixIdentity::RowInnerBroadcast => xi.matmul(&yi.transpose())?.matmul(&ones_n.transpose()),
                MatrixIdentity::RowSumScale => xi.matmul(&ones_n)?.matmul(&yi),
                _ => unreachable!("column identity"),
            }
        };
        match self {
            MatrixIdentity::ColumnOuterProjection
            | MatrixIdentity::ColumnInnerBroadcast
            | MatrixIdentity::ColumnSumScale => {
                Matrix::from_columns(&(0..n).map(column).collect::<Result<Vec<_>>>()?)
            }
            _ => Matrix::from_row_vectors(&(0..m).map(row).collect::<Result<Vec<_>>>()?),
        }
    }

    /// Right-hand side in matrix form.
    pub fn matrix_form(&self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        let (m, n) = (x.rows(), x.cols());
        let ones_m = Matrix::ones(m, 1);
        let ones_n = Matrix::ones(n, 1);
        match self {
            MatrixIdentity::ColumnOuterProjection => {
                x.hadamard(&ones_m.matmul(&x.transpose().matmul(y)?.diag()?.transpose())?)
            }
            MatrixIdentity::ColumnInnerBroadcast => {
                ones_m.matmul(&x.transpose().matmul(y)?.diag()?.transpose())
            }
            MatrixIdentity::ColumnSumScale => x.hadamard(&ones_m.matmul(&ones_m.transpose())?.matmul(y)?),
            MatrixIdentity::RowInnerScale => {
                x.matmul(&y.transpose())?.diag()?.matmul(&ones_n.transpose())?.hadamard(y)
            }
            MatrixIdentity::RowInnerBroadcast => {
                x.matmul(&y.transpose())?.diag()?.matmul(&ones_n.transpose())
            }
            MatrixIdentity::RowSumScale => x.matmul(&ones_n)?.matmul(&ones_n.transpose())?.hadamard(y),
        }
    }
}

impl fmt::Display for MatrixIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            MatrixIdentity::ColumnOuterProjection => "z^j = x^j (x^j)^T y^j",
            MatrixIdentity::ColumnInnerBroadcast => "z^j = 1_m (x^j)^T y^j",
            MatrixIdentity::ColumnSumScale => "z^j = x^j 1_m^T y^j",
            MatrixIdentity::RowInnerScale => "z_i = x_i y_i^T y_i",
            MatrixIdentity::RowInnerBroadcast => "z_i = x_i y_i^T 1_n^T",
            MatrixIdentity::RowSumScale => "z_i = x_i 1_n y_i",
        };
        f.write_str(text)
    }
}

/// Both sides of every identity on `trials` random `m x n` pairs with
/// `m, n ≤ 6`.
pub fn check_matrix_identities(seed: u64, trials: usize) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MatrixIdentity::ALL
        .iter()
        .map(|identity| {
            let reports = (0..trials.max(1))
                .map(|_| {
                    let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
                    let x = uniform(m, n, -1.0, 1.0, &mut rng);
                    let y = uniform(m, n, -1.0, 1.0, &mut rng);
                    Ok(GradCheckReport::compare(
                        "",
                        identity.by_parts(&x, &y)?.as_slice(),
                        identity.matrix_form(&x, &y)?.as_slice(),
                        0.0,
                        IDENTITY_TOLERANCE,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GradCheckReport::merge(format!("identity {identity}"), reports, IDENTITY_TOLERANCE))
        })
        .collect()
}

/// Smooth test functions of `x ∈ R^p` (a `p x 1` column) with known
/// Jacobians: `f(x) = tanh(M x + c)` and `g(x) = sin(a^T x) + x^T x / 2`.
struct ProductRuleFixture {
    m: Matrix,
    c: Matrix,
    a: Matrix,
}

impl ProductRuleFixture {
    fn f(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.m.matmul(x)?.add(&self.c)?.apply(f64::tanh))
    }

    /// `Diag(1 - f ⊙ f) M`.
    fn f_jacobian(&self, x: &Matrix) -> Result<Matrix> {
        let f = self.f(x)?;
        f.apply(|v| 1.0 - v * v).diag_matrix()?.matmul(&self.m)
    }

    fn g(&self, x: &Matrix) -> Result<f64> {
        Ok(self.a.transpose().matmul(x)?.scalar()?.sin() + 0.5 * x.dot(x)?)
    }

    /// `cos(a^T x) a^T + x^T`.
    fn g_gradient(&self, x: &Matrix) -> Result<Matrix> {
        let s = self.a.transpose().matmul(x)?.scalar()?.cos();
        self.a.transpose().scale(s).add(&x.transpose())
    }
}

/// The four product-rule instances for vector functions, each compared with
/// a finite-difference Jacobian of `h = f g` over `trials` random problems
/// of dimension at most 4.
pub fn check_product_rules(seed: u64, trials: usize) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "product rule f(x) in R^{n x 1}, g(x) in R",
        "product rule f(x) in R^{1 x n}, g(x) in R",
        "product rule f(x) = A, g(x) in R^{n x 1}",
        "product rule f(x) in R^{1 x m}, g(x) = A",
    ];
    let mut per_rule: Vec<Vec<GradCheckReport>> = vec![Vec::new(); 4];
    for _ in 0..trials.max(1) {
        let p = rng.random_range(1..=4);
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let fx = ProductRuleFixture {
            m: uniform(n, p, -1.0, 1.0, &mut rng),
            c: uniform(n, 1, -0.5, 0.5, &mut rng),
            a: uniform(p, 1, -1.0, 1.0, &mut rng),
        };
        let a = uniform(m, n, -1.0, 1.0, &mut rng);
        let x = uniform(p, 1, -1.0, 1.0, &mut rng);
        let (f, jf, g, dg) = (fx.f(&x)?, fx.f_jacobian(&x)?, fx.g(&x)?, fx.g_gradient(&x)?);

        // h = f g with f a column.
        let analytic = jf.scale(g).add(&f.matmul(&dg)?)?;
        let numeric = fd_jacobian(|x| Ok(fx.f(x)?.scale(fx.g(x)?)), &x, Step::Relative)?;
        per_rule[0].push(compare_jacobian(&analytic, &numeric));

        // h = f g with f a row: ∂h/∂x = ∂f/∂x g + f^T ∂g/∂x.
        let f_row = f.transpose();
        let analytic = jf.scale(g).add(&f_row.transpose().matmul(&dg)?)?;
        let numeric = fd_jacobian(|x| Ok(fx.f(x)?.transpose().scale(fx.g(x)?)), &x, Step::Relative)?;
        per_rule[1].push(compare_jacobian(&analytic, &numeric));

        // h = A g with g a column (the tanh map plays g here).
        let analytic = a.matmul(&jf)?;
        let numeric = fd_jacobian(|x| a.matmul(&fx.f(x)?), &x, Step::Relative)?;
        per_rule[2].push(compare_jacobian(&analytic, &numeric));

        // h = f B with f a 1 x n row and B = A^T of shape n x m.
        let at = a.transpose();
        let analytic = at.transpose().matmul(&jf)?;
        let numeric = fd_jacobian(|x| fx.f(x)?.transpose().matmul(&at), &x, Step::Relative)?;
        per_rule[3].push(compare_jacobian(&analytic, &numeric));
    }
    Ok(per_rule
        .into_iter()
        .zip(names)
        .map(|(reports, name)| GradCheckReport::merge(name, reports, DEFAULT_TOLERANCE))
        .collect())
}

fn compare_jacobian(analytic: &Matrix, numeric: &Matrix) -> GradCheckReport {
    if analytic.shape() != numeric.shape() {
        return GradCheckReport::compare("", &[], &[0.0], 0.0, DEFAULT_TOLERANCE);
    }
    GradCheckReport::compare(
        "",
        analytic.as_slice(),
        numeric.as_slice(),
        Step::Relative.at(1.0),
        DEFAULT_TOLERANCE,
    )
}

/// Layer configurations certified by [`full_suite`], with batch size and
/// tolerance. Dense layers run at `D = 3, K = 2, N = 2`, batch norm at
/// `D = 3, N = 4`.
pub fn layer_cases() -> Vec<(LayerKind, usize, LossFunction, f64)> {
    let se = LossFunction::SquaredError;
    let parse = |s: &str| s.parse::<LayerKind>().expect("valid layer");
    let mut cases: Vec<_> = [
        "Linear(2)",
        "ReLU(2)",
        "LeakyReLU(2,0.1)",
        "Sigmoid(2)",
        "Tanh(2)",
        "Softmax(2)",
        "LogSoftmax(2)",
        "LinearDropout(2,0.5)",
        "ActivationDropout(2,0.5,ReLU)",
        "ActivationDropout(2,0.3,Tanh)",
        "SparseLinear(2,0.5)",
        "SparseReLU(2,0.5)",
    ]
    .into_iter()
    .map(|s| (parse(s), 2, se, DEFAULT_TOLERANCE))
    .collect();
    cases.push((parse("BatchNorm"), 4, se, BATCHNORM_TOLERANCE));
    cases.push((parse("Softmax(2)"), 2, LossFunction::CrossEntropy, DEFAULT_TOLERANCE));
    cases.push((parse("Softmax(2)"), 2, LossFunction::NegativeLogLikelihood, DEFAULT_TOLERANCE));
    cases.push((parse("Linear(2)"), 2, LossFunction::SoftmaxCrossEntropy, DEFAULT_TOLERANCE));
    cases.push((parse("Linear(2)"), 2, LossFunction::LogisticCrossEntropy, DEFAULT_TOLERANCE));
    cases.push((parse("Linear(2)"), 2, LossFunction::MeanSquaredError, DEFAULT_TOLERANCE));
    cases
}

/// Multi-layer configurations certified end to end at `D = 3`.
pub fn network_cases() -> Vec<(Vec<LayerKind>, usize, LossFunction, f64)> {
    let parse =
        |s: &str| -> Vec<LayerKind> { s.split(';').map(|k| k.parse().expect("valid layer")).collect() };
    vec![
        (parse("ReLU(4);Sigmoid(3);Linear(2)"), 2, LossFunction::SquaredError, DEFAULT_TOLERANCE),
        (parse("Linear(4);BatchNorm;Tanh(3);Softmax(2)"), 4, LossFunction::CrossEntropy, BATCHNORM_TOLERANCE),
        (
            parse("SparseReLU(4,0.6);LinearDropout(3,0.3);LogSoftmax(2)"),
            3,
            LossFunction::SquaredError,
            DEFAULT_TOLERANCE,
        ),
        (
            parse("ActivationDropout(4,0.25,Sigmoid);BatchNorm;LeakyReLU(3,0.2);Linear(2)"),
            4,
            LossFunction::SoftmaxCrossEntropy,
            BATCHNORM_TOLERANCE,
        ),
    ]
}

/// Every check: layers, networks, losses, activations, Jacobians, matrix
/// identities and product rules.
pub fn full_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for (i, (kind, n, loss, tol)) in layer_cases().into_iter().enumerate() {
        let mut r = check_layer(kind, 3, n, loss, seed.wrapping_add(i as u64), tol)?;
        for report in &mut r {
            report.name = format!("layer {} [{loss}]", report.name);
        }
        reports.extend(r);
    }
    for (i, (kinds, n, loss, tol)) in network_cases().into_iter().enumerate() {
        let mut r = check_network(&kinds, 3, n, loss, seed.wrapping_add(100 + i as u64), tol)?;
        for report in &mut r {
            report.name = format!("network {} [{loss}]", report.name);
        }
        reports.extend(r);
    }
    for (i, loss) in LossFunction::ALL.into_iter().enumerate() {
        reports.push(check_loss(loss, 3, 4, seed.wrapping_add(200 + i as u64))?);
    }
    let activations =
        [Activation::Relu, Activation::LeakyRelu { alpha: 0.1 }, Activation::Tanh, Activation::Sigmoid];
    for (i, act) in activations.into_iter().enumerate() {
        reports.push(check_activation(act, seed.wrapping_add(300 + i as u64))?);
    }
    reports.extend(check_jacobians(3, seed.wrapping_add(400))?);
    reports.extend(check_matrix_identities(seed.wrapping_add(500), 100)?);
    reports.extend(check_product_rules(seed.wrapping_add(600), 25)?);
    Ok(reports)
}
