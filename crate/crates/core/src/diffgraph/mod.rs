//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is built once, node by node, through the builder methods in
//! this module. Shapes are checked while building, so a successfully built
//! graph can only fail at run time through data-dependent guards such as
//! [`Graph::require_positive`]. Leaves are inputs (fed per evaluation),
//! parameters (trainable, named) and constants.
//!
//! ```
//! use sdc::diffgraph::{Array, Graph};
//! let mut g = Graph::new();
//! let x = g.param("x", Array::scalar(3.0));
//! let y = g.square(x);
//! g.forward(&[y]).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().item(), 6.0);
//! ```

mod array;
mod build;
pub mod checkpoint;
mod composite;
mod conv;
pub mod gradcheck;
mod lie;
mod ops;
mod warp;

use thiserror::Error;

pub use array::Array;
pub use conv::output_size as conv_output_size;
pub use ops::Op;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("input `{0}` has not been fed")]
    MissingInput(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("node {0} has not been evaluated")]
    NotEvaluated(usize),
    #[error("{0} is not a {1} node")]
    WrongKind(usize, &'static str),
}

/// Handle of a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    value: Option<Array>,
    grad: Option<Array>,
    needs_grad: bool,
    name: Option<String>,
}

/// Static computation graph. Node ids are issued in creation order, which is
/// also a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs_of(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let needs_grad = op.differentiable() && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, inputs, shape, value: None, grad: None, needs_grad, name: None });
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, op: Op, value: Option<Array>, shape: Vec<usize>, name: Option<String>) -> NodeId {
        let needs_grad = matches!(op, Op::Param);
        self.nodes.push(Node { op, inputs: Vec::new(), shape, value, grad: None, needs_grad, name });
        NodeId(self.nodes.len() - 1)
    }

    /// Placeholder fed through [`Graph::set_input`] before each evaluation.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(Op::Input, None, shape.to_vec(), Some(name.to_string()))
    }

    /// Differentiable input: like [`Graph::input`] but gradients flow to it.
    pub fn differentiable_input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        let id = self.input(name, shape);
        self.nodes[id.0].needs_grad = true;
        id
    }

    /// Trainable parameter with an initial value.
    pub fn param(&mut self, name: &str, value: Array) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.leaf(Op::Param, Some(value), shape, Some(name.to_string()));
        self.params.push(id);
        id
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        let shape = value.shape().to_vec();
        self.leaf(Op::Constant, Some(value), shape, None)
    }

    pub fn scalar_constant(&mut self, v: f64) -> NodeId {
        self.constant(Array::scalar(v))
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].name.as_deref()
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn param_by_name(&self, name: &str) -> Option<NodeId> {
        self.params.iter().copied().find(|&p| self.name(p) == Some(name))
    }

    pub fn input_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| matches!(n.op, Op::Input) && n.name.as_deref() == Some(name)).map(NodeId)
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| self.nodes[p.0].shape.iter().product::<usize>()).sum()
    }

    /// Feeds an input or replaces a parameter/constant value.
    pub fn set_value(&mut self, id: NodeId, value: Array) -> Result<(), GraphError> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Input | Op::Param | Op::Constant) {
            return Err(GraphError::WrongKind(id.0, "leaf"));
        }
        if value.shape() != node.shape.as_slice() {
            return Err(GraphError::ShapeMismatch(format!(
                "node {} expects {:?}, got {:?}",
                id.0,
                node.shape,
                value.shape()
            )));
        }
        node.value = Some(value);
        Ok(())
    }

    pub fn set_input(&mut self, id: NodeId, value: Array) -> Result<(), GraphError> {
        if !matches!(self.nodes[id.0].op, Op::Input) {
            return Err(GraphError::WrongKind(id.0, "input"));
        }
        self.set_value(id, value)
    }

    pub fn value(&self, id: NodeId) -> Result<&Array, GraphError> {
        self.nodes[id.0].value.as_ref().ok_or(GraphError::NotEvaluated(id.0))
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `id`.
    /// `None` when `id` does not influence the loss or is not differentiable.
    pub fn grad(&self, id: NodeId) -> Option<&Array> {
        self.nodes[id.0].grad.as_ref()
    }

    fn ancestors(&self, outputs: &[NodeId]) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = outputs.iter().map(|o| o.0).collect();
        while let Some(i) = stack.pop() {
            if mark[i] {
                continue;
            }
            mark[i] = true;
            stack.extend(self.nodes[i].inputs.iter().map(|n| n.0));
        }
        mark
    }

    /// Evaluates every node the `outputs` depend on.
    pub fn forward(&mut self, outputs: &[NodeId]) -> Result<(), GraphError> {
        let mark = self.ancestors(outputs);
        for i in 0..self.nodes.len() {
            if !mark[i] {
                continue;
            }
            match self.nodes[i].op {
                Op::Input => {
                    if self.nodes[i].value.is_none() {
                        let name = self.nodes[i].name.clone().unwrap_or_default();
                        return Err(GraphError::MissingInput(name));
                    }
                }
                Op::Param | Op::Constant => {}
                _ => {
                    let value = {
                        let node = &self.nodes[i];
                        let args: Vec<&Array> = node
                            .inputs
                            .iter()
                            .map(|n| self.nodes[n.0].value.as_ref().expect("inputs evaluated first"))
                            .collect();
                        node.op.eval(&args, &node.shape)?
                    };
                    debug_assert_eq!(value.shape(), self.nodes[i].shape.as_slice(), "{:?}", self.nodes[i].op);
                    self.nodes[i].value = Some(value);
                }
            }
        }
        Ok(())
    }

    /// Convenience: forward to `id` and return its value.
    pub fn eval(&mut self, id: NodeId) -> Result<&Array, GraphError> {
        self.forward(&[id])?;
        self.value(id)
    }

    /// Back-propagates from the scalar `loss`, which must have been
    /// evaluated by the last [`Graph::forward`]. Clears previous gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), GraphError> {
        let shape = &self.nodes[loss.0].shape;
        if shape.iter().product::<usize>() != 1 {
            return Err(GraphError::NonScalarLoss(shape.clone()));
        }
        if self.nodes[loss.0].value.is_none() {
            return Err(GraphError::NotEvaluated(loss.0));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let mark = self.ancestors(&[loss]);
        self.nodes[loss.0].grad = Some(Array::full(&self.nodes[loss.0].shape, 1.0));
        for i in (0..=loss.0).rev() {
            if !mark[i] || !self.nodes[i].needs_grad || self.nodes[i].inputs.is_empty() {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let grads = {
                let node = &self.nodes[i];
                let args: Vec<&Array> =
                    node.inputs.iter().map(|n| self.nodes[n.0].value.as_ref().expect("evaluated")).collect();
                let needs: Vec<bool> = node.inputs.iter().map(|n| self.nodes[n.0].needs_grad).collect();
                let out = node.value.as_ref().ok_or(GraphError::NotEvaluated(i))?;
                node.op.backprop(&args, out, &g, &needs)
            };
            self.nodes[i].grad = Some(g);
            let inputs = self.nodes[i].inputs.clone();
            for (inp, gi) in inputs.into_iter().zip(grads) {
                let Some(gi) = gi else { continue };
                if !self.nodes[inp.0].needs_grad {
                    continue;
                }
                debug_assert_eq!(gi.shape(), self.nodes[inp.0].shape.as_slice());
                match self.nodes[inp.0].grad.as_mut() {
                    Some(acc) => acc.add_assign(&gi),
                    None => self.nodes[inp.0].grad = Some(gi),
                }
            }
        }
        Ok(())
    }

    /// Mutable value of a parameter together with its current gradient.
    pub fn param_mut(&mut self, id: NodeId) -> Result<(&mut Array, Option<&Array>), GraphError> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Param) {
            return Err(GraphError::WrongKind(id.0, "param"));
        }
        let value = node.value.as_mut().expect("params always hold a value");
        Ok((value, node.grad.as_ref()))
    }

    /// Named parameter values, in creation order.
    pub fn param_values(&self) -> Vec<(String, Array)> {
        self.params
            .iter()
            .map(|&p| {
                let n = &self.nodes[p.0];
                (n.name.clone().unwrap_or_default(), n.value.clone().expect("params always hold a value"))
            })
            .collect()
    }
}
