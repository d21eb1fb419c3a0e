//! Minimal 64-bit reverse-mode autodiff, layers, optimizer and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{Checkpoint, RngState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_grad_norm, global_norm, Adam};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
