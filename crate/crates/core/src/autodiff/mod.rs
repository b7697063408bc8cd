//! Dense tensors, a recording tape with reverse-mode differentiation, and
//! finite-difference gradient checking.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_primitives, grad_check, grad_check_params, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{sigmoid, Func, Graph, Var};
pub use params::{GradStore, ParamId, ParamStore};
pub use tensor::{argmax, axpy, dot, softmax_slice, Tensor};
