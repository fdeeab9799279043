//! Dense tensors, tape-based reverse-mode differentiation, AdamW with a
//! linear warmup schedule, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod mask;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use mask::{MaskMatrix, MaskMode};
pub use ops::{layer_norm, masked_softmax, matmul, softmax_rows};
pub use optim::{adamw_step, linear_warmup_lr, LrSchedule, OptimState};
pub use tensor::{Scalar, Tensor};
