use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, ScalarMode, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// Given the forward inputs, the forward output and the gradient flowing into
/// the output, returns one optional gradient per input, in input order.
pub trait BackwardRule<T: Scalar> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;

    /// Scalars retained by the rule between forward and backward (masks,
    /// argmax indices, interpolation provenance, unfolded patches).
    fn saved_scalars(&self) -> usize {
        0
    }

    /// Fingerprint of the discrete choices made in forward (active ReLU
    /// units, pooling winners). `None` for smooth ops.
    fn branch_fingerprint(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>) -> Option<u64> {
        None
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn BackwardRule<T>>>,
    requires_grad: bool,
}

/// Per-node accounting exposed for memory analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeProfile {
    pub op: &'static str,
    pub value_scalars: usize,
    pub saved_scalars: usize,
    pub inputs: Vec<usize>,
    pub requires_grad: bool,
}

/// Dynamically recorded computation tape.
///
/// Nodes are appended as operations execute, so a node's inputs always
/// precede it and insertion order is a topological order.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), checked: false }
    }

    /// A graph that rejects non-finite values and out-of-domain inputs
    /// after every operation.
    pub fn checked() -> Self {
        Graph { nodes: Vec::new(), checked: true }
    }

    pub fn mode(&self) -> ScalarMode {
        T::MODE
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, inputs: Vec::new(), rule: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Appends an operation node. Used by every op in the crate.
    pub fn record(
        &mut self,
        inputs: Vec<Var>,
        value: Tensor<T>,
        rule: Box<dyn BackwardRule<T>>,
    ) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::contract(format!("input {bad:?} is not recorded on this graph")));
        }
        if self.checked && !value.is_finite() {
            return Err(Error::Numeric(format!("output of {}", rule.name())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, inputs, rule: Some(rule), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Drops every node recorded at or after position `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn profile(&self) -> Vec<NodeProfile> {
        self.nodes
            .iter()
            .map(|n| NodeProfile {
                op: n.rule.as_ref().map_or("leaf", |r| r.name()),
                value_scalars: n.value.len(),
                saved_scalars: n.rule.as_ref().map_or(0, |r| r.saved_scalars()),
                inputs: n.inputs.iter().map(|v| v.0).collect(),
                requires_grad: n.requires_grad,
            })
            .collect()
    }

    /// Combined [`BackwardRule::branch_fingerprint`] of every node. Two
    /// evaluations with equal fingerprints ran the same piecewise-smooth
    /// branch.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let Some(rule) = n.rule.as_ref() else { continue };
            let inputs: Vec<&Tensor<T>> = n.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            if let Some(f) = rule.branch_fingerprint(&inputs, &n.value) {
                (i, f).hash(&mut h);
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Visits every node at or before `loss` exactly once, in reverse
    /// insertion order. The graph is left untouched, so calling this twice
    /// yields identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::contract("loss is not recorded on this graph"))?;
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one())?);
        let mut visits = 0usize;
        let mut visit_counts = vec![0u32; loss.0 + 1];

        for idx in (0..=loss.0).rev() {
            visit_counts[idx] += 1;
            visits += 1;
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad_out) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = rule.backward(&inputs, &node.value, &grad_out)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::contract(format!(
                    "{} returned {} gradients for {} inputs",
                    rule.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if g.shape() != self.nodes[input.0].value.shape() {
                    return Err(Error::shape(format!(
                        "{} produced gradient {:?} for input of shape {:?}",
                        rule.name(),
                        g.shape(),
                        self.nodes[input.0].value.shape()
                    )));
                }
                if self.checked && !g.is_finite() {
                    return Err(Error::Numeric(format!("gradient from {}", rule.name())));
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // interior gradients were taken above; only leaves keep theirs
        debug_assert!(visit_counts.iter().all(|&c| c == 1));
        Ok(Gradients { grads, visited: visits, max_visits_per_node: visit_counts.into_iter().max().unwrap_or(0) })
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
    max_visits_per_node: u32,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or of the loss itself. `None` when the leaf
    /// does not influence the loss or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, materialized as zeros when it has none.
    pub fn get_or_zeros(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| graph.value(v).zeros_like())
    }

    pub fn nodes_visited(&self) -> usize {
        self.visited
    }

    pub fn max_visits_per_node(&self) -> u32 {
        self.max_visits_per_node
    }
}
