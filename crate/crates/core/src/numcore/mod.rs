//! Dense `f64` tensors, a reverse-mode tape, optimizers and a
//! finite-difference gradient checker.

mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use optim::{Optimizer, OptimizerConfig, OptimizerState};
pub use params::{GradStore, Init, ParamId, ParamStore, Parameter};
pub use tape::{NodeGrads, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
