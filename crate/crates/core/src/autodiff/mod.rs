//! Tape-based reverse-mode automatic differentiation over dense buffers.
//!
//! A [`Tape`] records every operation of a forward pass in order; [`Tape::backward`]
//! replays the log in strict reverse to accumulate vector-Jacobian products.
//! The op set is intentionally small and closed: dense elementwise math,
//! matmul/affine, reductions, structural moves, bilinear plane sampling,
//! 2-D convolution, and max pooling — enough for the field decoder, the
//! volume renderer, compositing, and the detector, end to end.
//!
//! Numeric kernels live in [`kernels`] as free functions so that the
//! inference paths (no tape, no gradients) share bit-identical arithmetic
//! with recorded forward passes.

mod adam;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckError};
pub use kernels::{affine_fwd, conv2d_fwd, conv2d_out_dim, matmul, maxpool2d_fwd, sigmoid, softplus};
pub use tape::{Gradients, NodeId, Tape, TapeError};
pub use tensor::TensorBuf;
