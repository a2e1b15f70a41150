//! Reverse-mode automatic differentiation over a record-on-execute tape.

mod gradcheck;
mod graph;
mod ops;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use graph::{BackwardRule, Gradients, Graph, NodeProfile, Var};
pub use ops::{ElementwiseOp, ReduceOp};
