//! Define-by-run reverse-mode tape.
//!
//! Every forward operation appends a node holding its output value, the
//! indices of its inputs and a closure computing input gradients from the
//! output gradient. Inputs always precede their consumers, so a single
//! reverse sweep visits each node once.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees: input values, the op's output, the gradient
/// flowing into that output, and which inputs actually need a gradient.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a [f64],
    pub needs: Vec<bool>,
}

pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<usize>,
}

/// The tape. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    param_vars: HashMap<usize, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// A leaf whose gradient is kept (query it with [`Graph::grad`]).
    pub fn input(&mut self, value: Tensor) -> Var {
        let requires_grad = value.requires_grad;
        self.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
            param: None,
        })
    }

    /// Leaf bound to a named parameter; its gradient is accumulated into the
    /// store on [`Graph::backward`]. Repeated requests reuse the same leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let src = &store.by_id(id).tensor;
        let value = Tensor::new(src.shape(), src.data().to_vec())?;
        let var = self.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad: true,
            param: Some(id),
        });
        self.param_vars.insert(id, var);
        Ok(var)
    }

    /// Appends an operation. The backward rule is dropped when no input
    /// requires a gradient.
    pub fn record(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added to
    /// the store's grad slots, so repeated calls accumulate; parameters the
    /// loss does not reach end up with a zero gradient.
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore) -> Result<()> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::param(format!(
                "backward needs a scalar loss, got shape {loss_shape}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(back) = &node.backward {
                let ctx = BackwardCtx {
                    inputs: node.inputs.iter().map(|&j| &self.nodes[j].value).collect(),
                    output: &node.value,
                    grad: &g,
                    needs: node
                        .inputs
                        .iter()
                        .map(|&j| self.nodes[j].requires_grad)
                        .collect(),
                };
                let input_grads = back(&ctx);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (&j, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !self.nodes[j].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(ig.len(), self.nodes[j].value.numel());
                    match &mut grads[j] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            grads[i] = Some(g);
        }

        for p in params.iter_mut() {
            if p.tensor.grad.is_none() {
                p.tensor.zero_grad();
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, &grads[i]) {
                if pid < params.len() {
                    params.by_id_mut(pid).tensor.accumulate_grad(g);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}
