//! Named parameter tensors and their binding onto a graph.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Ordered collection of parameters; insertion order is the canonical
/// order for optimizer state and checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

/// Graph handles for the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: Vec<Option<Var>>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .and_then(|&i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("parameter {name} is not bound")))
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, kind, value });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i].value),
            None => Err(Error::contract(format!("unknown parameter {name}"))),
        }
    }

    /// Two distinct entries borrowed mutably at once.
    pub fn pair_mut(&mut self, a: &str, b: &str) -> Result<(&mut Tensor<T>, &mut Tensor<T>)> {
        let ia = *self.index.get(a).ok_or_else(|| Error::contract(format!("unknown parameter {a}")))?;
        let ib = *self.index.get(b).ok_or_else(|| Error::contract(format!("unknown parameter {b}")))?;
        if ia == ib {
            return Err(Error::contract(format!("pair_mut of {a} with itself")));
        }
        let (lo, hi) = (ia.min(ib), ia.max(ib));
        let (left, right) = self.params.split_at_mut(hi);
        let (pl, ph) = (&mut left[lo].value, &mut right[0].value);
        Ok(if ia < ib { (pl, ph) } else { (ph, pl) })
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.kind.trainable()).map(|p| p.value.len()).sum()
    }

    /// Records every trainable entry as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| p.kind.trainable().then(|| g.param(p.value.clone())))
            .collect();
        Bound { vars, index: self.index.clone() }
    }

    /// Binds already recorded `vars`, one per trainable entry in store
    /// order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound> {
        let trainable = self.params.iter().filter(|p| p.kind.trainable()).count();
        if vars.len() != trainable {
            return Err(Error::contract(format!("{} vars for {trainable} trainable parameters", vars.len())));
        }
        let mut it = vars.iter().copied();
        let vars = self.params.iter().map(|p| if p.kind.trainable() { it.next() } else { None }).collect();
        Ok(Bound { vars, index: self.index.clone() })
    }

    /// Records every trainable entry as a constant (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| p.kind.trainable().then(|| g.constant(p.value.clone())))
            .collect();
        Bound { vars, index: self.index.clone() }
    }

    /// Gradients aligned with [`ParamStore::params`]; `None` for
    /// non-trainable entries, zeros for unused trainable ones.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &Bound, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        bound.vars.iter().map(|v| v.map(|v| grads.get_or_zeros(g, v))).collect()
    }

    /// Bitwise equality of names, kinds and values.
    pub fn bitwise_eq(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind && a.value.bitwise_eq(&b.value))
    }
}
