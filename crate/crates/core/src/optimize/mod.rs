//! Parameter updates, learning-rate schedules and weight initialization.

mod init;
mod optimizer;
mod scheduler;

pub use init::WeightInit;
pub use optimizer::{CompositeOptimizer, GradientDescent, Momentum, Nesterov, Optimizer, OptimizerKind};
pub use scheduler::Scheduler;
