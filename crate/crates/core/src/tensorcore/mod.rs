//! Dense tensors, reverse-mode autodiff, AdamW and the learning-rate schedule.

mod graph;
pub mod gradcheck;
pub mod kernels;
mod ops;
mod optim;
mod params;
mod tensor;

pub use graph::{BackCtx, Gradients, Graph, OpRecord, Var};
pub use optim::{adamw_step, clip_global_norm, AdamWConfig, LrSchedule, OptimState};
pub use params::{group_of, Bound, Param, ParamStore};
pub use tensor::Tensor;
