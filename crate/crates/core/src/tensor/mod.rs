//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tensor`] is an immutable, reference-counted node in a computation
//! graph. Operations on tensors that require gradients record their inputs
//! and an adjoint closure; [`Tensor::backward`] orders the reachable graph
//! into a [`ComputationTape`] and replays the adjoints in reverse.
//!
//! Image-like data uses the `[N, C, H, W]` layout throughout.

mod conv;
mod gradcheck;
mod norm;
mod ops;
mod resize;
mod warp;

pub use conv::conv2d;
pub use gradcheck::{finite_diff_check, one_sided_spread, CheckReport};
pub use norm::{batch_norm, BatchNormMode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use ops::Activation;
pub use resize::{downsample2, upsample2};
pub use warp::{warp, FlowScale};

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Arguments handed to an adjoint closure.
pub(crate) struct Adjoint<'a> {
    pub parents: &'a [Tensor],
    pub output: &'a [f64],
    pub grad: &'a [f64],
}

/// Adjoint of one recorded operation: one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&Adjoint<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` without recording any operations on the graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn grad_enabled() -> bool {
    !NO_GRAD.with(|c| c.get())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "data of length {} cannot take shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor::make(shape.to_vec(), data, false))
    }

    /// Trainable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        Ok(Tensor::make(t.0.shape.clone(), t.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::make(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::make(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::make(vec![], vec![value], false)
    }

    /// Records the result of an operation. Parents and adjoint are dropped
    /// when no parent needs a gradient or recording is disabled.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if !track {
            return Tensor::make(shape, data, false);
        }
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad: true,
            grad: RefCell::new(None),
            parents,
            backward: Some(backward),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::make(self.0.shape.clone(), self.0.data.clone(), false)
    }

    /// `[N, C, H, W]` dimensions, or a shape error.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(Error::Shape(format!("expected a 4-d tensor, got {s:?}"))),
        }
    }

    /// Populates `grad` on every reachable tensor that requires one.
    /// Leaf gradients accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "loss is not connected to any tensor that requires a gradient".into(),
            ));
        }
        ComputationTape::record(self).replay(self)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

/// Topologically ordered record of the operations reachable from a root.
pub struct ComputationTape {
    order: Vec<Tensor>,
}

impl ComputationTape {
    /// Orders every gradient-tracking node reachable from `root` so that
    /// each node appears after all of its parents.
    pub fn record(root: &Tensor) -> ComputationTape {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, children expanded?)
        let mut stack = vec![(root.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !node.requires_grad() || !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.0.parents.iter().rev() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        ComputationTape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Node ids in replay (reverse topological) order.
    pub fn replay_order(&self) -> Vec<u64> {
        self.order.iter().rev().map(Tensor::id).collect()
    }

    fn replay(&self, root: &Tensor) -> Result<()> {
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(root.id(), vec![1.0]);
        for node in self.order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(backward) = &node.0.backward {
                let parent_grads = backward(&Adjoint {
                    parents: &node.0.parents,
                    output: &node.0.data,
                    grad: &grad,
                });
                debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                for (parent, g) in node.0.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(g.len(), parent.len());
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.id(), g);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                None => *slot = Some(grad),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_visits_each_node_once() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        let z = y.add(&x).unwrap().add(&y).unwrap().sum();
        let tape = ComputationTape::record(&z);
        let order = tape.replay_order();
        let unique: std::collections::HashSet<_> = order.iter().collect();
        assert_eq!(unique.len(), order.len());
        assert_eq!(order[0], z.id());
        assert_eq!(*order.last().unwrap(), x.id());
    }

    #[test]
    fn grad_of_weighted_sum_is_input() {
        let w = Tensor::param(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let x = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        w.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), x.to_vec());
        assert!(x.grad().is_none());
    }

    #[test]
    fn mse_grad_of_scalar() {
        let w = Tensor::param(&[1], vec![3.0]).unwrap();
        let zero = Tensor::zeros(&[1]);
        w.mean_squared_error(&zero).unwrap().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::param(&[2], vec![1.0, 1.0]).unwrap();
        let x = Tensor::new(&[2], vec![2.0, 3.0]).unwrap();
        for _ in 0..2 {
            w.mul(&x).unwrap().sum().backward().unwrap();
        }
        assert_eq!(w.grad().unwrap(), vec![4.0, 6.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn intermediates_receive_grads() {
        let x = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        let y = x.scale(3.0);
        y.sum().backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.scale(2.0).backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.scale(2.0));
        assert!(!y.requires_grad());
        assert!(x.scale(2.0).requires_grad());
    }

    #[test]
    fn shape_length_mismatch_is_an_error() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }
}
