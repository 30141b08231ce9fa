use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::parse::{real_text, term};

/// Weight initialization for a `K x D` weight matrix (`D` inputs, `K` outputs).
/// Biases are always initialized to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// `U(a, b)`
    Uniform { low: f64, high: f64 },
    /// `U(-1/√D, 1/√D)`
    Xavier,
    /// `U(-√6/√(D+K), √6/√(D+K))`
    NormalizedXavier,
    /// `N(0, √(2/D))`, the second argument being the standard deviation.
    He,
}

impl WeightInit {
    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        if !(low < high) {
            return Err(Error::Config(format!("uniform initializer needs low < high, got [{low}, {high}]")));
        }
        Ok(WeightInit::Uniform { low, high })
    }

    /// Fills `weights` (any layout) with i.i.d. samples for a layer with
    /// `fan_in` inputs and `fan_out` outputs.
    pub fn fill<R: Rng + ?Sized>(
        &self,
        weights: &mut [f64],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let (d, k) = (fan_in as f64, fan_out as f64);
        match *self {
            WeightInit::Uniform { low, high } => {
                if !(low < high) {
                    return Err(Error::Config(format!(
                        "uniform initializer needs low < high, got [{low}, {high}]"
                    )));
                }
                sample_into(weights, uniform(low, high)?, rng)
            }
            WeightInit::Xavier => {
                let a = 1.0 / d.sqrt();
                sample_into(weights, uniform(-a, a)?, rng)
            }
            WeightInit::NormalizedXavier => {
                let a = 6f64.sqrt() / (d + k).sqrt();
                sample_into(weights, uniform(-a, a)?, rng)
            }
            WeightInit::He => {
                let normal = Normal::new(0.0, (2.0 / d).sqrt())
                    .map_err(|e| Error::Config(format!("he initializer: {e}")))?;
                sample_into(weights, normal, rng)
            }
        }
        Ok(())
    }
}

fn uniform(low: f64, high: f64) -> Result<Uniform<f64>> {
    Uniform::new_inclusive(low, high).map_err(|e| Error::Config(format!("uniform initializer: {e}")))
}

fn sample_into<R: Rng + ?Sized>(weights: &mut [f64], dist: impl Distribution<f64>, rng: &mut R) {
    for w in weights {
        *w = dist.sample(rng);
    }
}

impl fmt::Display for WeightInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightInit::Uniform { low, high } => {
                write!(f, "Uniform({},{})", real_text(*low), real_text(*high))
            }
            WeightInit::Xavier => write!(f, "Xavier"),
            WeightInit::NormalizedXavier => write!(f, "XavierNormalized"),
            WeightInit::He => write!(f, "He"),
        }
    }
}

impl FromStr for WeightInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = term(s)?;
        if t.is("Uniform") {
            t.expect_args(2..=2)?;
            WeightInit::uniform(t.real(0)?, t.real(1)?)
        } else if t.is("Xavier") {
            t.expect_args(0..=0)?;
            Ok(WeightInit::Xavier)
        } else if t.is("XavierNormalized") || t.is("NormalizedXavier") {
            t.expect_args(0..=0)?;
            Ok(WeightInit::NormalizedXavier)
        } else if t.is("He") {
            t.expect_args(0..=0)?;
            Ok(WeightInit::He)
        } else {
            Err(Error::Config(format!("unknown weight initializer '{s}'")))
        }
    }
}
