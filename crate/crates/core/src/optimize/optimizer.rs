use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result, Shape};
use crate::parse::{real_text, term};

/// Update rule for one parameter. Stateful rules own a `Δ` buffer of the
/// parameter's size which starts at zero.
pub trait Optimizer: fmt::Debug + Send + Sync {
    fn update(&mut self, param: &mut [f64], grad: &[f64], eta: f64) -> Result<()>;
}

fn check(name: &'static str, param: &[f64], grad: &[f64], delta: Option<&[f64]>, eta: f64) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {eta}")));
    }
    if param.len() != grad.len() {
        return Err(Error::Shape { op: name, left: Shape(1, param.len()), right: Shape(1, grad.len()) });
    }
    if let Some(delta) = delta {
        if delta.len() != param.len() {
            return Err(Error::Shape { op: name, left: Shape(1, param.len()), right: Shape(1, delta.len()) });
        }
    }
    Ok(())
}

/// `θ' = θ - η·Dθ`
#[derive(Debug, Clone, Default)]
pub struct GradientDescent;

impl Optimizer for GradientDescent {
    fn update(&mut self, param: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
        check("gradient descent", param, grad, None, eta)?;
        for (p, g) in param.iter_mut().zip(grad) {
            *p -= eta * g;
        }
        Ok(())
    }
}

/// `Δ' = μΔ - η·Dθ`, `θ' = θ + Δ'`
#[derive(Debug, Clone)]
pub struct Momentum {
    mu: f64,
    delta: Vec<f64>,
}

impl Momentum {
    pub fn new(mu: f64, len: usize) -> Self {
        Self { mu, delta: vec![0.0; len] }
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }
}

impl Optimizer for Momentum {
    fn update(&mut self, param: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
        check("momentum", param, grad, Some(&self.delta), eta)?;
        for ((p, g), d) in param.iter_mut().zip(grad).zip(&mut self.delta) {
            *d = self.mu * *d - eta * g;
            *p += *d;
        }
        Ok(())
    }
}

/// `Δ' = μΔ - η·Dθ`, `θ' = θ + μΔ' - η·Dθ`
#[derive(Debug, Clone)]
pub struct Nesterov {
    mu: f64,
    delta: Vec<f64>,
}

impl Nesterov {
    pub fn new(mu: f64, len: usize) -> Self {
        Self { mu, delta: vec![0.0; len] }
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }
}

impl Optimizer for Nesterov {
    fn update(&mut self, param: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
        check("nesterov", param, grad, Some(&self.delta), eta)?;
        for ((p, g), d) in param.iter_mut().zip(grad).zip(&mut self.delta) {
            *d = self.mu * *d - eta * g;
            *p += self.mu * *d - eta * g;
        }
        Ok(())
    }
}

/// Configuration-level description of an update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    GradientDescent,
    Momentum { mu: f64 },
    Nesterov { mu: f64 },
}

impl OptimizerKind {
    /// Creates a fresh optimizer (zero state) for a parameter with `len` entries.
    pub fn build(&self, len: usize) -> Box<dyn Optimizer> {
        match *self {
            OptimizerKind::GradientDescent => Box::new(GradientDescent),
            OptimizerKind::Momentum { mu } => Box::new(Momentum::new(mu, len)),
            OptimizerKind::Nesterov { mu } => Box::new(Nesterov::new(mu, len)),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::GradientDescent => write!(f, "GradientDescent"),
            OptimizerKind::Momentum { mu } => write!(f, "Momentum({})", real_text(*mu)),
            OptimizerKind::Nesterov { mu } => write!(f, "Nesterov({})", real_text(*mu)),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = term(s)?;
        let mu = |t: &crate::parse::Term<'_>| -> Result<f64> {
            t.expect_args(1..=1)?;
            let mu = t.real(0)?;
            if !(mu > 0.0 && mu < 1.0) {
                return Err(Error::Config(format!("{}: mu must lie in (0, 1), got {mu}", t.name)));
            }
            Ok(mu)
        };
        if t.is("GradientDescent") {
            t.expect_args(0..=0)?;
            Ok(OptimizerKind::GradientDescent)
        } else if t.is("Momentum") {
            Ok(OptimizerKind::Momentum { mu: mu(&t)? })
        } else if t.is("Nesterov") {
            Ok(OptimizerKind::Nesterov { mu: mu(&t)? })
        } else {
            Err(Error::Config(format!("unknown optimizer '{s}'")))
        }
    }
}

/// One optimizer per parameter of a layer, applied in order.
#[derive(Debug, Default)]
pub struct CompositeOptimizer {
    children: Vec<Box<dyn Optimizer>>,
}

impl CompositeOptimizer {
    pub fn new(children: Vec<Box<dyn Optimizer>>) -> Self {
        Self { children }
    }

    /// Binds `kind` to every parameter size in `lens`.
    pub fn uniform(kind: OptimizerKind, lens: &[usize]) -> Self {
        Self::new(lens.iter().map(|&len| kind.build(len)).collect())
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Applies child `i` to the `i`-th `(parameter, gradient)` pair.
    pub fn update(&mut self, params: Vec<(&mut [f64], &[f64])>, eta: f64) -> Result<()> {
        if params.len() != self.children.len() {
            return Err(Error::State(format!(
                "{} optimizers bound to {} parameters",
                self.children.len(),
                params.len()
            )));
        }
        for (child, (param, grad)) in self.children.iter_mut().zip(params) {
            child.update(param, grad, eta)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_descent_step() {
        let mut theta = [1.0];
        GradientDescent.update(&mut theta, &[2.0], 0.1).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn nesterov_worked_example() {
        let mut opt = Nesterov::new(0.9, 1);
        let mut theta = [0.0];
        opt.update(&mut theta, &[1.0], 0.1).unwrap();
        assert!((opt.delta()[0] - (-0.1)).abs() < 1e-15);
        assert!((theta[0] - (-0.19)).abs() < 1e-12);
    }

    #[test]
    fn momentum_step_accumulates() {
        let mut opt = Momentum::new(0.5, 1);
        let mut theta = [0.0];
        opt.update(&mut theta, &[1.0], 0.1).unwrap();
        opt.update(&mut theta, &[1.0], 0.1).unwrap();
        // Δ1 = -0.1, Δ2 = -0.05 - 0.1
        assert!((theta[0] - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn momentum_with_zero_mu_is_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b = a.clone();
        let mut m = Momentum::new(0.0, 4);
        for _ in 0..10 {
            let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eta = rng.random_range(0.01..0.5);
            GradientDescent.update(&mut a, &g, eta).unwrap();
            m.update(&mut b, &g, eta).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_descent_decreases_a_quadratic() {
        let mut theta = [3.0];
        let f = |t: f64| 0.5 * t * t;
        let before = f(theta[0]);
        let grad = [theta[0]];
        GradientDescent.update(&mut theta, &grad, 0.01).unwrap();
        assert!(f(theta[0]) < before);
    }

    #[test]
    fn rejects_bad_rates_and_sizes() {
        assert!(matches!(GradientDescent.update(&mut [1.0], &[1.0], 0.0), Err(Error::Config(_))));
        assert!(GradientDescent.update(&mut [1.0], &[1.0], -0.1).is_err());
        assert!(Momentum::new(0.9, 2).update(&mut [1.0], &[1.0], 0.1).is_err());
        assert!(GradientDescent.update(&mut [1.0, 2.0], &[1.0], 0.1).is_err());
    }

    #[test]
    fn composite_matches_individual_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b0: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut w1, mut b1) = (w0.clone(), b0.clone());
        let (mut w2, mut b2) = (w0.clone(), b0.clone());

        let mut composite = CompositeOptimizer::new(vec![
            OptimizerKind::Momentum { mu: 0.9 }.build(6),
            OptimizerKind::Nesterov { mu: 0.8 }.build(2),
        ]);
        let mut ow = Momentum::new(0.9, 6);
        let mut ob = Nesterov::new(0.8, 2);
        for _ in 0..5 {
            let dw: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let db: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            composite.update(vec![(&mut w1, &dw), (&mut b1, &db)], 0.05).unwrap();
            // reverse order: disjoint parameters make order irrelevant
            ob.update(&mut b2, &db, 0.05).unwrap();
            ow.update(&mut w2, &dw, 0.05).unwrap();
        }
        assert_eq!(w1, w2);
        assert_eq!(b1, b2);
        assert!(composite.update(vec![(&mut w1, &[0.0; 6])], 0.1).is_err());
    }

    #[test]
    fn parses_config_strings() {
        assert_eq!("Momentum(0.9)".parse::<OptimizerKind>().unwrap(), OptimizerKind::Momentum { mu: 0.9 });
        assert_eq!("gradientdescent".parse::<OptimizerKind>().unwrap(), OptimizerKind::GradientDescent);
        let k: OptimizerKind = "Nesterov(0.95)".parse().unwrap();
        assert_eq!(k.to_string(), "Nesterov(0.95)");
        assert!("Momentum(1.5)".parse::<OptimizerKind>().is_err());
        assert!("Momentum".parse::<OptimizerKind>().is_err());
        assert!("Adam(0.001)".parse::<OptimizerKind>().is_err());
    }
}
