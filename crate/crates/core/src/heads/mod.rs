//! Per-pixel predictor and the task losses.

mod loss;
mod mlp;

pub use loss::{balanced_bce, euclidean_normal_loss, softmax_xent, softplus};
pub use mlp::MlpSpec;

use crate::autodiff::{Graph, Var};
use crate::data::{Target, TaskKind, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Loss matching `task` for predictions `out` against per-row targets.
pub fn task_loss<T: Scalar>(graph: &mut Graph<T>, task: TaskKind, out: Var, targets: &[Target]) -> Result<Var> {
    match task {
        TaskKind::Segmentation { .. } => {
            let labels = targets
                .iter()
                .map(|t| match t {
                    Target::Class(c) => Ok(*c),
                    other => Err(Error::contract(format!("segmentation target {other:?}"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            softmax_xent(graph, out, &labels, Some(IGNORE_LABEL))
        }
        TaskKind::Normals => {
            let normals = targets
                .iter()
                .map(|t| match t {
                    Target::Normal(n) => Ok(n.map(f64::from)),
                    other => Err(Error::contract(format!("normals target {other:?}"))),
                })
                .collect::<Result<Vec<[f64; 3]>>>()?;
            euclidean_normal_loss(graph, out, &normals)
        }
        TaskKind::Edges => {
            let labels = targets
                .iter()
                .map(|t| match t {
                    Target::Edge(e) => Ok(*e),
                    other => Err(Error::contract(format!("edge target {other:?}"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            balanced_bce(graph, out, &labels)
        }
    }
}
