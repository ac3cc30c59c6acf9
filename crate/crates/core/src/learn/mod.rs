//! Minimal dense-network kernel: layers, losses, reverse-mode gradients,
//! optimizers, a seeded training loop and finite-difference checks.

mod gradcheck;
mod loss;
mod mlp;
mod optim;
mod train;

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use gradcheck::{finite_difference_check, relative_error, GradCheck};
pub use loss::{attract, hinge_repel, kl_standard_normal, l1_distance, mse};
pub use mlp::{Activation, Dense, ForwardCache, Gradients, Mlp, LEAKY_SLOPE};
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{train, Objective, TrainConfig, TrainOutcome};

/// Floating point types the kernel runs on. Models are stored in `f32`;
/// gradient verification runs the same code in `f64`.
pub trait Real:
    Float + LinalgScalar + ScalarOperand + FromPrimitive + Debug + Send + Sync + 'static
{
    fn from_f(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss diverged at epoch {epoch} (value {value})")]
    Divergence { epoch: usize, value: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
}
