use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensorcore::{Gradients, Graph, Tensor, Var};

/// A named parameter stored at 32-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(self.shape.clone(), &self.data).expect("param shape is consistent")
    }
}

/// Ordered collection of model parameters. Names are dotted paths whose first
/// segment is the parameter group (`encoder`, `quantizer`, `decoder`, `disc`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("param", format!("`{name}`: {shape:?} vs {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("param `{name}`")));
        }
        self.params.insert(name, Param { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        Ok(self.get(name)?.to_tensor())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Subset of parameters whose group is in `groups`.
    pub fn group_subset(&self, groups: &[&str]) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(n, _)| groups.contains(&group_of(n)))
                .map(|(n, p)| (n.clone(), p.clone()))
                .collect(),
        }
    }

    /// Registers every parameter on `graph`. Names selected by `trainable`
    /// become gradient leaves, the rest constants.
    pub fn bind(&self, graph: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| {
                let t = p.to_tensor();
                let v = if trainable(name) {
                    graph.param(t)
                } else {
                    graph.constant(t)
                };
                (name.clone(), (v, trainable(name)))
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters registered on one graph.
pub struct Bound {
    vars: BTreeMap<String, (Var, bool)>,
}

impl Bound {
    /// Wraps graph variables that were created elsewhere, all trainable.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: vars.into_iter().map(|(n, v)| (n, (v, true))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .map(|(v, _)| *v)
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` not bound")))
    }

    /// Gradients of every trainable parameter, zero where the loss did not
    /// depend on it.
    pub fn collect_grads(&self, graph: &Graph, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, (_, trainable))| *trainable)
            .map(|(name, (v, _))| (name.clone(), grads.get_or_zeros(*v, graph.value(*v))))
            .collect()
    }
}
