//! Reverse-mode automatic differentiation over 2-D tensors.

mod adam;
mod checkpoint;
mod sgd;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use sgd::Sgd;
pub use tape::{gelu, Grad, Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
