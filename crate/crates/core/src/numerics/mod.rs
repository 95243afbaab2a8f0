//! Dense tensors, reverse-mode differentiation and the numeric primitives the
//! networks are built from.

mod gemm;
pub mod image;
pub mod io;
pub mod ops;
pub mod optim;
pub mod tape;
mod tensor;

pub use image::{gaussian_blur2d, resample2d, Resample};
pub use ops::{BnOptions, BnState, Mode};
pub use optim::{adam_step, Adam, AdamConfig, Moments};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
