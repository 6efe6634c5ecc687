//! Reverse-mode differentiation over a dynamically built graph.
//!
//! Every [`Tensor`] is a reference-counted node. Ops whose inputs require
//! gradients record a backward closure together with their parents; ops on
//! constant inputs record nothing, so inference never retains intermediates.
//! Node ids grow monotonically, which makes "sort by id, descending" a valid
//! reverse topological order for the backward sweep.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use super::array::{numel, Array};
use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Maps the output gradient (and the output value) to one optional gradient
/// per parent, in parent order.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: RefCell<Option<GradFn>>,
    consumed: Cell<bool>,
}

/// N-dimensional `f64` array participating in reverse-mode differentiation.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn leaf(array: Array, requires_grad: bool) -> Self {
        let shape = array.shape().to_vec();
        Self {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data: array.into_data(),
                requires_grad,
                grad: RefCell::new(None),
                grad_fn: RefCell::new(None),
                consumed: Cell::new(false),
            }),
        }
    }

    /// A constant leaf: gradients never flow into it.
    pub fn constant(array: Array) -> Self {
        Self::leaf(array, false)
    }

    /// A trainable leaf.
    pub fn param(array: Array) -> Self {
        Self::leaf(array, true)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Self::constant(Array::new(shape, data)?))
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Array::scalar(value))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(Array::zeros(shape))
    }

    /// Builds an op result. The backward closure and parents are retained
    /// only when at least one parent requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn { parents, backward });
        Self {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                grad_fn: RefCell::new(grad_fn),
                consumed: Cell::new(false),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn to_array(&self) -> Array {
        Array::new(&self.node.shape, self.node.data.clone()).expect("tensor shape is consistent")
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!("item() on tensor of shape {:?}", self.shape())));
        }
        Ok(self.node.data[0])
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::constant(self.to_array())
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<Array> {
        self.node
            .grad
            .borrow()
            .as_ref()
            .map(|g| Array::new(&self.node.shape, g.clone()).expect("grad has node shape"))
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Back-propagates from this scalar through the recorded graph.
    ///
    /// The graph is consumed: a second call on the same loss is rejected.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.node.consumed.get() {
            return Err(Error::Graph("backward() already ran on this graph".into()));
        }
        if !self.requires_grad() {
            return Err(Error::Graph("loss does not depend on any trainable tensor".into()));
        }
        self.node.consumed.set(true);

        // Collect every node with a pending backward closure.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if t.id() != self.id() && t.node.consumed.get() {
                return Err(Error::Graph(
                    "part of this graph was consumed by an earlier backward()".into(),
                ));
            }
            if let Some(gf) = t.node.grad_fn.borrow().as_ref() {
                for p in &gf.parents {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.id()));

        self.accumulate(vec![1.0]);
        for t in order {
            let Some(gf) = t.node.grad_fn.borrow_mut().take() else {
                continue;
            };
            t.node.consumed.set(true);
            // Interior grads are released once propagated; leaves keep theirs.
            let Some(g) = t.node.grad.borrow_mut().take() else {
                continue;
            };
            let parent_grads = (gf.backward)(&g, t.data());
            debug_assert_eq!(parent_grads.len(), gf.parents.len());
            for (p, pg) in gf.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if p.requires_grad() {
                        debug_assert_eq!(pg.len(), p.numel());
                        p.accumulate(pg);
                    }
                }
            }
            if t.id() == self.id() {
                *t.node.grad.borrow_mut() = Some(g);
            }
        }
        Ok(())
    }
}
