//! Activation functions and the softmax family, in batch matrix-form.
//!
//! Batch functions treat each row of `X` as one example. The plain
//! [`softmax`] and [`log_softmax`] follow the textbook formulas and overflow
//! for large entries; layers and losses use the stable variants, which shift
//! every row by its maximum first.

use std::fmt;

use crate::error::{Error, Result, Shape};
use crate::matrix::Matrix;

/// Slope used by `LeakyReLU` when none is given.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn leaky_relu(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("leaky relu slope must lie in (0, 1), got {alpha}")));
        }
        Ok(Activation::LeakyRelu { alpha })
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { alpha } => (alpha * x).max(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at `x`. At the kink of relu and leaky relu the value is 1.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x < alpha * x {
                    alpha
                } else {
                    1.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// `act(X)`, element-wise.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        x.apply(|v| self.value(v))
    }

    /// `act'(X)`, element-wise.
    pub fn gradient(&self, x: &Matrix) -> Matrix {
        x.apply(|v| self.derivative(v))
    }

    /// True for activations with a non-differentiable point at zero.
    pub fn has_kink(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "ReLU"),
            Activation::LeakyRelu { alpha } => write!(f, "LeakyReLU({alpha})"),
            Activation::Tanh => write!(f, "Tanh"),
            Activation::Sigmoid => write!(f, "Sigmoid"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    /// `ReLU`, `LeakyReLU`, `LeakyReLU(alpha)`, `Tanh` or `Sigmoid`, case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let t = crate::parse::term(s)?;
        if t.is("ReLU") {
            t.expect_args(0..=0)?;
            Ok(Activation::Relu)
        } else if t.is("LeakyReLU") {
            t.expect_args(0..=1)?;
            let alpha = if t.args.is_empty() { DEFAULT_LEAKY_SLOPE } else { t.real(0)? };
            Activation::leaky_relu(alpha)
        } else if t.is("Tanh") {
            t.expect_args(0..=0)?;
            Ok(Activation::Tanh)
        } else if t.is("Sigmoid") {
            t.expect_args(0..=0)?;
            Ok(Activation::Sigmoid)
        } else {
            Err(Error::Config(format!("unknown activation '{s}'")))
        }
    }
}

/// Logistic function, evaluated so that `exp` never overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(X)` element-wise.
pub fn sigmoid_matrix(x: &Matrix) -> Matrix {
    x.apply(sigmoid)
}

/// `e^X ⊙ ((1 / (e^X · 1_K)) · 1_K^T)`
pub fn softmax(x: &Matrix) -> Matrix {
    let k = x.cols();
    let e = x.exp();
    let inv = e.rows_sum().apply(|s| 1.0 / s);
    e.hadamard(&inv.column_repeat(k).expect("column vector")).expect("same shape")
}

/// `X - max(X)_row · 1_K^T`
fn shift_by_row_max(x: &Matrix) -> Matrix {
    x.sub(&x.rows_max().column_repeat(x.cols()).expect("column vector")).expect("same shape")
}

/// Softmax of `X - max(X)_row · 1_K^T`. Finite for every finite input.
pub fn stable_softmax(x: &Matrix) -> Matrix {
    softmax(&shift_by_row_max(x))
}

/// `X - log(e^X · 1_K) · 1_K^T`
pub fn log_softmax(x: &Matrix) -> Matrix {
    let k = x.cols();
    // e^X · 1_K is positive unless every entry of a row underflows
    let lse = x.exp().rows_sum().apply(f64::ln);
    x.sub(&lse.column_repeat(k).expect("column vector")).expect("same shape")
}

/// `log_softmax` of the row-max shifted input.
pub fn stable_log_softmax(x: &Matrix) -> Matrix {
    log_softmax(&shift_by_row_max(x))
}

fn require_row_vector(op: &'static str, z: &Matrix) -> Result<()> {
    if z.rows() != 1 {
        return Err(Error::shape(op, z.shape(), Shape(1, z.cols())));
    }
    Ok(())
}

/// `∂ softmax(z) / ∂z = Diag(y) - y^T y` with `y = softmax(z)`, for a `1 x K` row.
pub fn softmax_jacobian(z: &Matrix) -> Result<Matrix> {
    require_row_vector("softmax_jacobian", z)?;
    let y = stable_softmax(z);
    y.diag_matrix()?.sub(&y.transpose().matmul(&y)?)
}

/// `∂ log_softmax(z) / ∂z = I_K - 1_K · softmax(z)`, for a `1 x K` row.
pub fn log_softmax_jacobian(z: &Matrix) -> Result<Matrix> {
    require_row_vector("log_softmax_jacobian", z)?;
    let k = z.cols();
    let y = stable_softmax(z);
    Matrix::identity(k).sub(&Matrix::ones(k, 1).matmul(&y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[f64]) -> Matrix {
        Matrix::row_vector(v)
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn random(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Central finite-difference Jacobian of a row-vector function.
    fn fd_jacobian(f: impl Fn(&Matrix) -> Matrix, z: &Matrix, h: f64) -> Matrix {
        let k_out = f(z).cols();
        let mut jac = Matrix::zeros(k_out, z.cols());
        for j in 0..z.cols() {
            let mut plus = z.clone();
            plus.set(0, j, z.get(0, j) + h);
            let mut minus = z.clone();
            minus.set(0, j, z.get(0, j) - h);
            let (fp, fm) = (f(&plus), f(&minus));
            for i in 0..k_out {
                jac.set(i, j, (fp.get(0, i) - fm.get(0, i)) / (2.0 * h));
            }
        }
        jac
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Relu.apply(&row(&[-1.0, 0.0, 2.0])), row(&[0.0, 0.0, 2.0]));
        assert_eq!(Activation::Sigmoid.apply(&row(&[0.0])), row(&[0.5]));
        let leaky = Activation::leaky_relu(0.01).unwrap();
        close(&leaky.apply(&row(&[-2.0])), &row(&[-0.02]), 1e-17);
        assert!(Activation::leaky_relu(1.5).is_err());
        assert!(Activation::leaky_relu(0.0).is_err());
    }

    #[test]
    fn activation_derivatives_at_kinks() {
        assert_eq!(Activation::Relu.gradient(&row(&[-1.0, 0.0, 2.0])), row(&[0.0, 1.0, 1.0]));
        let leaky = Activation::leaky_relu(0.1).unwrap();
        assert_eq!(leaky.gradient(&row(&[-1.0, 0.0, 2.0])), row(&[0.1, 1.0, 1.0]));
        assert_eq!(Activation::Sigmoid.gradient(&row(&[0.0])), row(&[0.25]));
    }

    #[test]
    fn tanh_derivative_matches_finite_differences() {
        let h: f64 = 1e-5;
        for x in [-2.0f64, -0.5, 0.5, 2.0] {
            let fd = ((x + h).tanh() - (x - h).tanh()) / (2.0 * h);
            assert!((Activation::Tanh.derivative(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn derivatives_match_finite_differences_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for act in
            [Activation::Relu, Activation::leaky_relu(0.01).unwrap(), Activation::Tanh, Activation::Sigmoid]
        {
            let mut checked = 0;
            while checked < 100 {
                let x: f64 = rng.random_range(-5.0..5.0);
                if act.has_kink() && x.abs() < 1e-3 {
                    continue;
                }
                let fd = (act.value(x + h) - act.value(x - h)) / (2.0 * h);
                let d = act.derivative(x);
                assert!((d - fd).abs() <= 1e-7 * d.abs().max(1.0), "{act} at {x}");
                checked += 1;
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert_eq!(
            "LeakyReLU".parse::<Activation>().unwrap(),
            Activation::LeakyRelu { alpha: DEFAULT_LEAKY_SLOPE }
        );
        let a: Activation = "LeakyReLU(0.2)".parse().unwrap();
        assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        assert!("Softplus".parse::<Activation>().is_err());
        assert!("Tanh(3)".parse::<Activation>().is_err());
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(-3.0) - 1.0 / (1.0 + 3f64.exp())).abs() < 1e-16);
    }

    #[test]
    fn softmax_values() {
        close(&softmax(&row(&[0.0, 0.0, 0.0])), &row(&[1.0 / 3.0; 3]), 1e-16);
        let z = row(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        close(&softmax(&z), &row(&[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]), 1e-15);
        let y = softmax(&random(3, 4, -3.0, 3.0, 1));
        for s in y.rows_sum().as_slice() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn stable_softmax_matches_and_is_shift_invariant() {
        let big = stable_softmax(&row(&[1000.0, 1000.0]));
        assert_eq!(big, row(&[0.5, 0.5]));
        assert!(!softmax(&row(&[1000.0, 1000.0])).is_finite());

        let x = random(5, 4, -10.0, 10.0, 2);
        close(&stable_softmax(&x), &softmax(&x), 1e-12);
        let shifted = x.add(&Matrix::filled(5, 4, 123.456)).unwrap();
        close(&stable_softmax(&shifted), &stable_softmax(&x), 1e-12);

        let y = stable_softmax(&random(6, 5, -1000.0, 1000.0, 3));
        assert!(y.is_finite());
        assert!(y.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for s in y.rows_sum().as_slice() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_softmax_values() {
        let ln2 = std::f64::consts::LN_2;
        close(&log_softmax(&row(&[0.0, 0.0])), &row(&[-ln2, -ln2]), 1e-16);
        let s = stable_log_softmax(&row(&[1000.0, 0.0]));
        assert!(s.is_finite());
        assert!(s.get(0, 0).abs() < 1e-300);
        assert_eq!(s.get(0, 1), -1000.0);
        assert!(!log_softmax(&row(&[1000.0, 0.0])).is_finite());

        let x = random(4, 3, -5.0, 5.0, 4);
        close(&log_softmax(&x).exp(), &stable_softmax(&x), 1e-12);
        close(&stable_log_softmax(&x), &log_softmax(&x), 1e-12);
    }

    #[test]
    fn softmax_jacobian_closed_form() {
        let j = softmax_jacobian(&row(&[0.0, 0.0])).unwrap();
        assert_eq!(j, Matrix::from_rows(&[[0.25, -0.25], [-0.25, 0.25]]).unwrap());
        assert!(softmax_jacobian(&Matrix::zeros(2, 2)).is_err());
        assert!(log_softmax_jacobian(&Matrix::zeros(2, 1)).is_err());

        for seed in 0..10 {
            let z = random(1, 3, -2.0, 2.0, 100 + seed);
            let j = softmax_jacobian(&z).unwrap();
            close(&j, &j.transpose(), 1e-12);
            for s in j.rows_sum().as_slice() {
                assert!(s.abs() <= 1e-12);
            }
            close(&j, &fd_jacobian(stable_softmax, &z, 1e-5), 1e-7);

            let l = log_softmax_jacobian(&z).unwrap();
            for s in l.rows_sum().as_slice() {
                assert!(s.abs() <= 1e-12);
            }
            close(&l, &fd_jacobian(stable_log_softmax, &z, 1e-5), 1e-7);
        }
    }
}
