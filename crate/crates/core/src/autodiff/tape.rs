use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Backward rule of one recorded operation.
///
/// Receives the gradient of the loss with respect to the op's output and
/// returns one entry per input (in recording order); `None` means the input
/// receives no gradient from this op.
pub trait Backward<T: Real> {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Real> {
    inputs: Vec<Option<usize>>,
    op: Option<Box<dyn Backward<T>>>,
    shape: Vec<usize>,
}

/// Value handle produced by tape operations.
///
/// Cloning is cheap; the tensor itself is shared.
#[derive(Clone)]
pub struct Var<T: Real> {
    id: Option<usize>,
    value: Arc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn id(&self) -> Option<usize> {
        self.id
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

/// Ordered record of executed operations.
///
/// A tape is single-writer: one logical thread records a forward pass and
/// then consumes the tape with [`Tape::backward`]. A tape created with
/// [`Tape::no_grad`] records nothing, so intermediate values are freed as
/// soon as their handles drop.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input (parameter or data).
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>) -> Var<T> {
        if !self.recording {
            return Var { id: None, value };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: Vec::new(),
            op: None,
            shape: value.shape().to_vec(),
        });
        Var {
            id: Some(nodes.len() - 1),
            value,
        }
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            id: None,
            value: Arc::new(value),
        }
    }

    /// Record an operation producing `value` from `inputs`.
    ///
    /// `make_op` is only invoked when the tape records and at least one input
    /// is differentiable, so ops can defer saving intermediates to it.
    pub fn record<F>(&self, value: Tensor<T>, inputs: &[&Var<T>], make_op: F) -> Var<T>
    where
        F: FnOnce() -> Box<dyn Backward<T>>,
    {
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.id).collect();
        if !self.recording || ids.iter().all(Option::is_none) {
            return Var {
                id: None,
                value: Arc::new(value),
            };
        }
        let op = make_op();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: ids,
            op: Some(op),
            shape: value.shape().to_vec(),
        });
        Var {
            id: Some(nodes.len() - 1),
            value: Arc::new(value),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`; consumes the tape.
    pub fn backward(self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                loss.value.shape()
            )));
        }
        let nodes = self.nodes.into_inner();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut replayed = 0;
        let Some(root) = loss.id else {
            return Ok(Gradients { grads, replayed });
        };
        grads[root] = Some(Tensor::full(loss.value.shape(), T::one()));
        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            // Interior gradients are dropped once propagated.
            let Some(g) = grads[id].take() else {
                continue;
            };
            replayed += 1;
            let input_grads = op.backward(&g)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Tape(format!(
                    "{} returned {} gradients for {} inputs",
                    op.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(input), Some(ig)) = (*input, ig) else {
                    continue;
                };
                if ig.shape() != nodes[input].shape.as_slice() {
                    return Err(Error::Tape(format!(
                        "{} produced gradient of shape {:?} for input of shape {:?}",
                        op.name(),
                        ig.shape(),
                        nodes[input].shape
                    )));
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads, replayed })
    }
}

/// Gradients of the loss with respect to recorded leaves.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    replayed: usize,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.grads[id].as_ref())
    }

    /// Gradient for `var`, zeros when it is disconnected from the loss.
    pub fn wrt(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn take(&mut self, var: &Var<T>) -> Tensor<T> {
        var.id
            .and_then(|id| self.grads[id].take())
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    /// Number of backward rules executed.
    pub fn replayed(&self) -> usize {
        self.replayed
    }
}
