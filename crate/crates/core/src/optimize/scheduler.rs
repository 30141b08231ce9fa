use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::parse::{real_text, term};

/// Learning rate as a function of the epoch index `i`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheduler {
    /// `η_i = η_0`
    Constant { eta0: f64 },
    /// `η_{i+1} = η_i / (1 + d·i)`
    TimeBased { eta0: f64, decay: f64 },
    /// `η_i = η_0 · d^⌊(1 + i) / r⌋`
    StepBased { eta0: f64, decay: f64, drop_rate: f64 },
    /// `η_i = η_0 · e^{-d·i}`
    Exponential { eta0: f64, decay: f64 },
    /// `η_i = η_0 · Γ^{Σ_j ⌊i / m_j⌋}`
    MultiStep { eta0: f64, gamma: f64, milestones: Vec<usize> },
}

impl Scheduler {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let eta0 = self.initial_rate();
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return bad(format!("initial learning rate must be positive, got {eta0}"));
        }
        match self {
            Scheduler::Constant { .. } => Ok(()),
            Scheduler::TimeBased { decay, .. } | Scheduler::Exponential { decay, .. } => {
                if *decay < 0.0 {
                    return bad(format!("decay must be non-negative, got {decay}"));
                }
                Ok(())
            }
            Scheduler::StepBased { decay, drop_rate, .. } => {
                if !(*decay > 0.0) {
                    return bad(format!("step decay must be positive, got {decay}"));
                }
                if !(*drop_rate >= 1.0) {
                    return bad(format!("drop rate must be at least 1, got {drop_rate}"));
                }
                Ok(())
            }
            Scheduler::MultiStep { gamma, milestones, .. } => {
                if !(*gamma > 0.0) {
                    return bad(format!("gamma must be positive, got {gamma}"));
                }
                if milestones.contains(&0) {
                    return bad("milestones must be positive".into());
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return bad(format!("milestones must be strictly ascending, got {milestones:?}"));
                }
                Ok(())
            }
        }
    }

    pub fn initial_rate(&self) -> f64 {
        match *self {
            Scheduler::Constant { eta0 }
            | Scheduler::TimeBased { eta0, .. }
            | Scheduler::StepBased { eta0, .. }
            | Scheduler::Exponential { eta0, .. }
            | Scheduler::MultiStep { eta0, .. } => eta0,
        }
    }

    /// Learning rate for epoch `i`.
    pub fn rate(&self, i: usize) -> f64 {
        match self {
            Scheduler::Constant { eta0 } => *eta0,
            Scheduler::TimeBased { eta0, decay } => {
                let mut eta = *eta0;
                for j in 0..i {
                    eta /= 1.0 + decay * j as f64;
                }
                eta
            }
            Scheduler::StepBased { eta0, decay, drop_rate } => {
                let exponent = ((1 + i) as f64 / drop_rate).floor();
                eta0 * decay.powf(exponent)
            }
            Scheduler::Exponential { eta0, decay } => eta0 * (-decay * i as f64).exp(),
            Scheduler::MultiStep { eta0, gamma, milestones } => {
                let exponent: usize = milestones.iter().map(|m| i / m).sum();
                eta0 * gamma.powi(exponent as i32)
            }
        }
    }
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |v: &f64| real_text(*v);
        match self {
            Scheduler::Constant { eta0 } => write!(f, "Constant({})", r(eta0)),
            Scheduler::TimeBased { eta0, decay } => write!(f, "TimeBased({},{})", r(eta0), r(decay)),
            Scheduler::StepBased { eta0, decay, drop_rate } => {
                write!(f, "StepBased({},{},{})", r(eta0), r(decay), r(drop_rate))
            }
            Scheduler::Exponential { eta0, decay } => {
                write!(f, "Exponential({},{})", r(eta0), r(decay))
            }
            Scheduler::MultiStep { eta0, gamma, milestones } => {
                let ms: Vec<String> = milestones.iter().map(|m| m.to_string()).collect();
                write!(f, "MultiStep({},{},{})", r(eta0), r(gamma), ms.join(";"))
            }
        }
    }
}

impl FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = term(s)?;
        let sched = if t.is("Constant") {
            t.expect_args(1..=1)?;
            Scheduler::Constant { eta0: t.real(0)? }
        } else if t.is("TimeBased") {
            t.expect_args(2..=2)?;
            Scheduler::TimeBased { eta0: t.real(0)?, decay: t.real(1)? }
        } else if t.is("StepBased") {
            t.expect_args(3..=3)?;
            Scheduler::StepBased { eta0: t.real(0)?, decay: t.real(1)?, drop_rate: t.real(2)? }
        } else if t.is("Exponential") {
            t.expect_args(2..=2)?;
            Scheduler::Exponential { eta0: t.real(0)?, decay: t.real(1)? }
        } else if t.is("MultiStep") {
            t.expect_args(3..=3)?;
            let milestones = t.args[2]
                .split(';')
                .map(|m| {
                    m.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("MultiStep: bad milestone '{m}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            Scheduler::MultiStep { eta0: t.real(0)?, gamma: t.real(1)?, milestones }
        } else {
            return Err(Error::Config(format!("unknown learning rate scheduler '{s}'")));
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
    }

    #[test]
    fn constant() {
        let s = Scheduler::Constant { eta0: 0.01 };
        for i in [0, 5, 100] {
            assert_eq!(s.rate(i), 0.01);
        }
    }

    #[test]
    fn exponential() {
        let s = Scheduler::Exponential { eta0: 1.0, decay: std::f64::consts::LN_2 };
        close(s.rate(0), 1.0);
        close(s.rate(1), 0.5);
        close(s.rate(2), 0.25);
    }

    #[test]
    fn multistep_uses_floor_sum_exponent() {
        let s = Scheduler::MultiStep { eta0: 0.1, gamma: 0.1, milestones: vec![2, 4] };
        close(s.rate(1), 0.1);
        close(s.rate(2), 0.01);
        // ⌊4/2⌋ + ⌊4/4⌋ = 3
        close(s.rate(4), 1e-4);
    }

    #[test]
    fn time_based_iterates_recurrence() {
        let s = Scheduler::TimeBased { eta0: 1.0, decay: 0.5 };
        close(s.rate(0), 1.0);
        close(s.rate(1), 1.0);
        close(s.rate(2), 1.0 / 1.5);
        close(s.rate(3), 1.0 / 1.5 / 2.0);
    }

    #[test]
    fn step_based() {
        let s = Scheduler::StepBased { eta0: 1.0, decay: 0.5, drop_rate: 2.0 };
        let rates: Vec<f64> = (0..5).map(|i| s.rate(i)).collect();
        assert_eq!(rates, vec![1.0, 0.5, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn decaying_schedules_are_non_increasing() {
        let schedules = [
            Scheduler::TimeBased { eta0: 0.1, decay: 0.3 },
            Scheduler::StepBased { eta0: 0.1, decay: 0.7, drop_rate: 3.0 },
            Scheduler::Exponential { eta0: 0.1, decay: 0.2 },
            Scheduler::MultiStep { eta0: 0.1, gamma: 0.5, milestones: vec![3, 7, 8] },
        ];
        for s in &schedules {
            for i in 0..50 {
                assert!(s.rate(i + 1) <= s.rate(i), "{s} at {i}");
                assert!(s.rate(i) > 0.0);
            }
        }
    }

    #[test]
    fn parse_and_display_round_trip() {
        for text in [
            "Constant(0.01)",
            "TimeBased(0.1,0.001)",
            "StepBased(0.1,0.5,10)",
            "Exponential(0.1,0.05)",
            "MultiStep(0.1,0.1,2;4;10)",
        ] {
            let s: Scheduler = text.parse().unwrap();
            assert_eq!(s.to_string(), text);
        }
        assert_eq!(
            "multistep(0.1, 0.5, 3; 6)".parse::<Scheduler>().unwrap(),
            Scheduler::MultiStep { eta0: 0.1, gamma: 0.5, milestones: vec![3, 6] }
        );
    }

    #[test]
    fn rejects_invalid_parameters() {
        for text in [
            "Constant(0)",
            "Constant(-1)",
            "TimeBased(0.1,-1)",
            "StepBased(0.1,0.5,0.5)",
            "MultiStep(0.1,0.1,4;2)",
            "MultiStep(0.1,0.1,0;2)",
            "MultiStep(0.1,0,2)",
            "Cosine(0.1)",
        ] {
            assert!(text.parse::<Scheduler>().is_err(), "{text}");
        }
    }
}
