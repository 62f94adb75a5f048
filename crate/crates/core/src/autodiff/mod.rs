//! Minimal dense-numerics foundation with reverse-mode gradients.
//!
//! Everything the model needs — matrix products, gating nonlinearities,
//! softmax, max-pooling, concatenation, embedding lookup, the stable
//! cross-entropy — runs in 64-bit arithmetic and records onto a
//! [`Tape`], whose reverse pass is verified against central finite
//! differences.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    check_gradients, compare_gradients, DifferentiableLoss, GradCheckEntry, GradCheckError,
    GradCheckReport,
};
pub use tape::{
    bce_with_logits, sigmoid, AutodiffError, GradEntry, GradientMap, Parameter, Primitive, Tape,
    VarId,
};
pub use tensor::{Tensor, TensorError};
