//! Dense arrays, trainable parameters, reverse-mode gradients and Adam.

mod adam;
mod array;
pub mod gradcheck;
mod graph;
mod param;

pub use adam::{adam_step, AdamState};
pub use array::{ComplexArray, RealArray};
pub use gradcheck::{finite_difference_check, GradCheckReport, GroupReport};
pub use graph::{evaluate, evaluate_with_gradients, Graph, NodeId};
pub use param::{Gradients, ParamId, ParamSet, Parameter};
