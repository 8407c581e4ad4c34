use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Real, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule of a recorded op: maps the output gradient to one gradient
/// per parent. `needs[i]` is false when parent `i` does not require a
/// gradient; the rule may return `None` for it.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Computation record for one forward pass.
///
/// Nodes are appended in execution order, so a reverse scan is a valid
/// reverse topological order. A tape is meant to be dropped after the
/// backward pass; a new one is built for every forward.
pub struct Tape<T: Real = f32> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), Vec::new(), None, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), Vec::new(), None, false)
    }

    fn push(
        &self,
        value: Rc<Tensor<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Records an op output. The backward rule is dropped when no parent
    /// requires a gradient.
    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var<'_, T>> {
        let mut requires_grad = false;
        {
            let nodes = self.nodes.borrow();
            for p in parents {
                if p.tape.id != self.id {
                    return Err(Error::ForeignVar);
                }
                requires_grad |= nodes[p.idx].requires_grad;
            }
            debug_assert!(
                value.is_finite() || parents.iter().any(|p| !nodes[p.idx].value.is_finite()),
                "op produced non-finite values from finite inputs"
            );
        }
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        Ok(self.push(
            Rc::new(value),
            parents.iter().map(|p| p.idx).collect(),
            backward,
            requires_grad,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every node is visited at most once, in reverse execution order.
    /// Gradients flowing into the same node are summed.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Grads<T>> {
        if loss.tape.id != self.id {
            return Err(Error::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.idx];
        if loss_node.value.numel() != 1 {
            return Err(Error::NotScalar(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::ones(loss_node.value.shape()));

        for i in (0..=loss.idx).rev() {
            let node = &nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, need) else {
                    continue;
                };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Grads {
            tape_id: self.id,
            grads,
        })
    }

    pub(crate) fn value_of(&self, idx: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[idx].value.clone()
    }

    pub(crate) fn requires_grad_of(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].requires_grad
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) idx: usize,
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.idx).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.value_of(self.idx).numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.idx)
    }

    pub fn backward(&self) -> Result<Grads<T>> {
        self.tape.backward(*self)
    }
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} on tape {})", self.idx, self.tape.id)
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T: Real = f32> {
    tape_id: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of the loss w.r.t. `var`; zeros when `var` is unreachable
    /// from the loss.
    pub fn wrt(&self, var: Var<'_, T>) -> Result<Tensor<T>> {
        if var.tape.id != self.tape_id {
            return Err(Error::ForeignVar);
        }
        Ok(match self.grads.get(var.idx).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.shape()),
        })
    }

    /// Moves the gradient out instead of cloning it.
    pub fn take(&mut self, var: Var<'_, T>) -> Result<Tensor<T>> {
        if var.tape.id != self.tape_id {
            return Err(Error::ForeignVar);
        }
        Ok(match self.grads.get_mut(var.idx).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(&var.shape()),
        })
    }
}
