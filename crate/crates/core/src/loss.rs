//! Loss functions over an `N x K` output batch `Y` and target batch `T`.
//!
//! [`LossFunction::value`] is the batch sum `Σ_i L(y_i, t_i)`;
//! [`LossFunction::mean_value`] divides by `N` and is what gets reported.
//! Softmax and logistic cross-entropy go through the stable log-softmax and
//! `log_sigmoid` primitives so they stay finite for large logits.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::functions::{sigmoid_matrix, stable_log_softmax, stable_softmax};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossFunction {
    /// Squared error.
    SquaredError,
    /// Squared error scaled by `1 / (K N)`.
    MeanSquaredError,
    CrossEntropy,
    SoftmaxCrossEntropy,
    LogisticCrossEntropy,
    NegativeLogLikelihood,
}

impl LossFunction {
    pub const ALL: [LossFunction; 6] = [
        LossFunction::SquaredError,
        LossFunction::MeanSquaredError,
        LossFunction::CrossEntropy,
        LossFunction::SoftmaxCrossEntropy,
        LossFunction::LogisticCrossEntropy,
        LossFunction::NegativeLogLikelihood,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            LossFunction::SquaredError => "SE",
            LossFunction::MeanSquaredError => "MSE",
            LossFunction::CrossEntropy => "CE",
            LossFunction::SoftmaxCrossEntropy => "SCE",
            LossFunction::LogisticCrossEntropy => "LCE",
            LossFunction::NegativeLogLikelihood => "NLL",
        }
    }

    /// Batch loss `L(Y, T) = Σ_i L(y_i, t_i)`.
    pub fn value(&self, y: &Matrix, t: &Matrix) -> Result<f64> {
        check_shapes(y, t)?;
        let (n, k) = (y.rows() as f64, y.cols() as f64);
        let v = match self {
            LossFunction::SquaredError => squared_error(y, t)?,
            LossFunction::MeanSquaredError => squared_error(y, t)? / (k * n),
            LossFunction::CrossEntropy => -t.hadamard(&y.log()?)?.elements_sum(),
            LossFunction::SoftmaxCrossEntropy => -t.hadamard(&stable_log_softmax(y))?.elements_sum(),
            LossFunction::LogisticCrossEntropy => -t.hadamard(&y.log_sigmoid())?.elements_sum(),
            LossFunction::NegativeLogLikelihood => -y.hadamard(t)?.rows_sum().log()?.elements_sum(),
        };
        Ok(v)
    }

    /// `L(Y, T) / N`.
    pub fn mean_value(&self, y: &Matrix, t: &Matrix) -> Result<f64> {
        Ok(self.value(y, t)? / y.rows() as f64)
    }

    /// `∇_Y L(Y, T)`, the gradient of [`LossFunction::value`].
    pub fn gradient(&self, y: &Matrix, t: &Matrix) -> Result<Matrix> {
        check_shapes(y, t)?;
        let (n, k) = (y.rows(), y.cols());
        match self {
            LossFunction::SquaredError => Ok(y.sub(t)?.scale(2.0)),
            LossFunction::MeanSquaredError => Ok(y.sub(t)?.scale(2.0 / (k * n) as f64)),
            LossFunction::CrossEntropy => Ok(t.hadamard(&y.reciprocal()?)?.scale(-1.0)),
            LossFunction::SoftmaxCrossEntropy => {
                // softmax(Y) ⊙ (T · 1_K · 1_K^T) - T
                let row_mass = t.matmul(&Matrix::ones(k, 1))?.matmul(&Matrix::ones(1, k))?;
                stable_softmax(y).hadamard(&row_mass)?.sub(t)
            }
            LossFunction::LogisticCrossEntropy => t.hadamard(&sigmoid_matrix(y))?.sub(t),
            LossFunction::NegativeLogLikelihood => {
                // -((1 / ((Y ⊙ T) · 1_K)) · 1_K^T) ⊙ T
                let inv = y.hadamard(t)?.rows_sum().reciprocal()?;
                Ok(inv.column_repeat(k)?.hadamard(t)?.scale(-1.0))
            }
        }
    }
}

fn check_shapes(y: &Matrix, t: &Matrix) -> Result<()> {
    if y.shape() != t.shape() {
        return Err(Error::Shape { op: "loss", left: y.shape(), right: t.shape() });
    }
    Ok(())
}

fn squared_error(y: &Matrix, t: &Matrix) -> Result<f64> {
    let r = y.sub(t)?;
    Ok(r.hadamard(&r)?.elements_sum())
}

/// `softmax(Y) - T`, the softmax cross-entropy gradient for one-hot targets.
pub fn softmax_cross_entropy_one_hot_gradient(y: &Matrix, t: &Matrix) -> Result<Matrix> {
    check_shapes(y, t)?;
    stable_softmax(y).sub(t)
}

impl fmt::Display for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for LossFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        LossFunction::ALL.into_iter().find(|l| l.short_name().eq_ignore_ascii_case(s)).ok_or_else(|| {
            Error::Config(format!("unknown loss '{s}', expected one of SE, MSE, CE, SCE, LCE, NLL"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn row(v: &[f64]) -> Matrix {
        Matrix::row_vector(v)
    }

    #[test]
    fn reference_values() {
        let y = Matrix::from_rows(&[[0.3, -1.0], [2.0, 0.5]]).unwrap();
        assert_eq!(LossFunction::SquaredError.value(&y, &y).unwrap(), 0.0);

        let ce = LossFunction::CrossEntropy.value(&row(&[0.5, 0.5]), &row(&[1.0, 0.0])).unwrap();
        assert!((ce - LN2).abs() < 1e-15);

        let sce = LossFunction::SoftmaxCrossEntropy.value(&row(&[0.0, 0.0]), &row(&[1.0, 0.0])).unwrap();
        assert!((sce - LN2).abs() < 1e-15);

        assert_eq!(
            LossFunction::SquaredError.gradient(&row(&[1.0, 2.0]), &row(&[0.0, 0.0])).unwrap(),
            row(&[2.0, 4.0])
        );
        assert_eq!(
            LossFunction::SoftmaxCrossEntropy.gradient(&row(&[0.0, 0.0]), &row(&[1.0, 0.0])).unwrap(),
            row(&[-0.5, 0.5])
        );
    }

    #[test]
    fn batch_value_is_sum_of_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = softmax(&random(4, 3, -1.0, 1.0, &mut rng));
        let t = random(4, 3, 0.1, 1.0, &mut rng);
        for loss in LossFunction::ALL {
            if loss == LossFunction::MeanSquaredError {
                continue;
            }
            let total = loss.value(&y, &t).unwrap();
            let by_rows: f64 = (0..4).map(|i| loss.value(&y.row(i), &t.row(i)).unwrap()).sum();
            assert!((total - by_rows).abs() < 1e-12, "{loss}");
            assert!((loss.mean_value(&y, &t).unwrap() - total / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_is_scaled_se() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y = random(3, 5, -2.0, 2.0, &mut rng);
        let t = random(3, 5, -2.0, 2.0, &mut rng);
        let se = LossFunction::SquaredError;
        let mse = LossFunction::MeanSquaredError;
        assert_eq!(mse.value(&y, &t).unwrap(), se.value(&y, &t).unwrap() / 15.0);
        assert_eq!(mse.gradient(&y, &t).unwrap(), se.gradient(&y, &t).unwrap().scale(1.0 / 15.0));
    }

    #[test]
    fn one_hot_sce_gradient_simplifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = random(5, 4, -3.0, 3.0, &mut rng);
        let mut t = Matrix::zeros(5, 4);
        for i in 0..5 {
            t.set(i, rng.random_range(0..4), 1.0);
        }
        assert_eq!(
            LossFunction::SoftmaxCrossEntropy.gradient(&y, &t).unwrap(),
            softmax_cross_entropy_one_hot_gradient(&y, &t).unwrap()
        );
    }

    #[test]
    fn stable_losses_handle_large_logits() {
        let y = Matrix::from_rows(&[[500.0, -500.0, 0.0], [-500.0, -499.0, 500.0]]).unwrap();
        let t = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let sce = LossFunction::SoftmaxCrossEntropy.value(&y, &t).unwrap();
        assert!(sce.is_finite());
        assert!((sce - 2000.0).abs() < 1e-9);
        let lce = LossFunction::LogisticCrossEntropy.value(&y, &t).unwrap();
        assert!(lce.is_finite());
        assert!((lce - 1000.0).abs() < 1e-9);
        assert!(LossFunction::SoftmaxCrossEntropy.gradient(&y, &t).unwrap().is_finite());
        assert!(LossFunction::LogisticCrossEntropy.gradient(&y, &t).unwrap().is_finite());
    }

    #[test]
    fn domain_errors_report_row() {
        let y = Matrix::from_rows(&[[0.5, 0.5], [0.0, 1.0]]).unwrap();
        let t = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            LossFunction::CrossEntropy.value(&y, &t),
            Err(Error::Domain { row: 1, col: 0, .. })
        ));
        assert!(matches!(
            LossFunction::NegativeLogLikelihood.value(&y, &t),
            Err(Error::Domain { row: 1, .. })
        ));
        assert!(matches!(
            LossFunction::NegativeLogLikelihood.gradient(&y, &t),
            Err(Error::Domain { row: 1, .. })
        ));
        assert!(LossFunction::SquaredError.value(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn parses_names_case_insensitively() {
        assert_eq!("sce".parse::<LossFunction>().unwrap(), LossFunction::SoftmaxCrossEntropy);
        assert_eq!(" NLL ".parse::<LossFunction>().unwrap(), LossFunction::NegativeLogLikelihood);
        for loss in LossFunction::ALL {
            assert_eq!(loss.to_string().parse::<LossFunction>().unwrap(), loss);
        }
        assert!("hinge".parse::<LossFunction>().is_err());
    }
}
