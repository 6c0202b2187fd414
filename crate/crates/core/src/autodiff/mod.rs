//! Reverse-mode differentiation over real-parameterized complex tensors,
//! the Adam optimizer and a finite-difference gradient check.

mod adam;
mod complex;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use complex::{CTensor, CVar, LEAKY_SLOPE};
pub use gradcheck::{check_gradients, BlockCheck};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
