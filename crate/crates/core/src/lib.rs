//! Consistency training with a learned variational data-to-noise coupling.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical
//! machinery: a small reverse-mode autodiff engine, transition kernels and
//! their boundary-respecting scalings, time schedules, the three couplings,
//! the toy networks, the training step, multistep sampling and evaluation.
//! File formats, run directories and the command line live in the `vct`
//! companion crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod couplings;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod networks;
pub mod optim;
pub mod rng;
pub mod sampling;
pub mod schedules;
pub mod tensor;
pub mod training;

pub use diffcore::{Gradients, Primitive, Tape, Var};
pub use error::{Error, Result};
pub use kernels::{KernelKind, TransitionKernel};
pub use networks::{MlpSpec, ParamSet};
pub use rng::DetRng;
pub use tensor::Tensor;
pub use training::{LossBreakdown, TrainConfig, TrainState};
