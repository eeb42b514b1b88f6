use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule can look at.
pub struct BackCtx<'a> {
    /// Gradient of the loss with respect to this op's output.
    pub grad: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    /// Which inputs actually need a gradient.
    pub needs: Vec<bool>,
}

type BackwardFn = Box<dyn Fn(&BackCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Tensor,
    parents: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Read-only view of one executed op.
#[derive(Debug, Clone)]
pub struct OpRecord {
    pub op: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

/// Tape of executed ops. Records are appended in execution order, so the
/// tape is topologically sorted by construction; backward walks it once in
/// reverse.
pub struct Graph {
    nodes: Vec<Node>,
    kink_margin: f64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf("constant", value, false)
    }

    /// Leaf that accumulates a gradient during [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf("param", value, true)
    }

    fn leaf(&mut self, op: &'static str, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Same value, cut from the gradient path (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf("detach", value, false)
    }

    pub fn records(&self) -> impl Iterator<Item = OpRecord> + '_ {
        self.nodes.iter().enumerate().map(|(i, n)| OpRecord {
            op: n.op,
            inputs: n.parents.clone(),
            output: Var(i),
        })
    }

    /// Smallest distance to a non-differentiable point seen by any op so far
    /// (|·| at zero, leaky-relu at zero, quantizer decision boundaries).
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub fn note_kink(&mut self, margin: f64) {
        self.kink_margin = self.kink_margin.min(margin);
    }

    /// Records an op with a caller-supplied backward rule. The rule returns
    /// one optional gradient per input, each shaped like that input.
    pub fn custom(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&BackCtx<'_>) -> Vec<Option<Tensor>> + 'static,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        let requires_grad = inputs.iter().any(|&p| self.requires_grad(p));
        self.nodes.push(Node {
            op,
            value,
            parents: inputs.to_vec(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let ctx = BackCtx {
                grad: &grad,
                inputs: node.parents.iter().map(|p| self.value(*p)).collect(),
                output: &node.value,
                needs: node.parents.iter().map(|p| self.requires_grad(*p)).collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.requires_grad(*parent) {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.value(*parent).shape(), "op {}", node.op);
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient or zeros shaped like `like`.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
