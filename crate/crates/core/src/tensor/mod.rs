//! A small reverse-mode automatic differentiation engine.
//!
//! Every [`Tensor`] is an immutable, reference-counted node. Operations that
//! touch at least one tensor requiring a gradient record a [`Backward`]
//! implementation pointing at their inputs, so the graph is built implicitly
//! during the forward pass. Calling [`Tensor::backward`] walks the graph once
//! in reverse creation order and returns the gradients of all leaf tensors as
//! a [`Gradients`] map.
//!
//! Node ids are allocated from a global monotonic counter. A node is always
//! created after its parents, so sorting reachable nodes by descending id is
//! a valid reverse topological order and each node is visited exactly once.
//!
//! Only the operations a 2-D encoder-decoder segmentation network needs are
//! provided; see [`ops`].

mod element;
pub mod gradcheck;
pub mod ops;
pub mod optim;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use element::Element;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Gradient rule of a recorded operation.
///
/// `backward` receives the gradient flowing into the operation's output and
/// returns one optional gradient per parent, in the same order as
/// [`Backward::parents`]. Returning `None` for a parent means "no
/// contribution".
pub trait Backward<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    fn parents(&self) -> Vec<Tensor<T>>;
    fn backward(&self, grad_output: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn Backward<T>>>,
}

/// Dense row-major n-dimensional array with optional graph linkage.
pub struct Tensor<T: Element>(Arc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name()))
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn Backward<T>>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    /// A constant tensor (no gradient is tracked for it).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// A leaf tensor whose gradient is collected by [`Tensor::backward`].
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(t.requiring_grad())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![T::zero(); n], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![], vec![value], false, None)
    }

    /// Result of a differentiable operation. If none of the parents requires
    /// a gradient, the rule is dropped and the result is a constant.
    pub fn from_op(shape: Vec<usize>, data: Vec<T>, grad_fn: Box<dyn Backward<T>>) -> Self {
        let requires_grad = grad_fn.parents().iter().any(|p| p.requires_grad());
        let grad_fn = if requires_grad { Some(grad_fn) } else { None };
        Self::from_parts(shape, data, requires_grad, grad_fn)
    }

    /// A new leaf sharing this tensor's values (fresh node, grad tracked).
    pub fn requiring_grad(&self) -> Self {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Copy with a different element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.0.shape.clone(),
            self.0.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
            false,
            None,
        )
    }

    /// Shape as `[N, C, H, W]`, or a dimension error naming `op`.
    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            s => Err(Error::dim(op, format!("expected a 4-D tensor, got shape {s:?}"))),
        }
    }

    /// Reverse-mode sweep from this tensor, seeded with ones.
    pub fn backward(&self) -> Gradients<T> {
        self.backward_with(vec![T::one(); self.numel()])
    }

    /// Reverse-mode sweep seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: Vec<T>) -> Gradients<T> {
        assert_eq!(seed.len(), self.numel(), "seed gradient length mismatch");
        let mut out = Gradients::default();
        if !self.requires_grad() {
            return out;
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(f) = &t.0.grad_fn {
                stack.extend(f.parents().into_iter().filter(|p| p.requires_grad()));
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in &order {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    out.insert(node.id(), grad);
                }
                Some(f) => {
                    let parents = f.parents();
                    let parent_grads = f.backward(&grad);
                    debug_assert_eq!(parents.len(), parent_grads.len(), "{}", f.name());
                    for (p, g) in parents.iter().zip(parent_grads) {
                        let Some(g) = g else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), p.numel(), "{} grad size", f.name());
                        accumulate(&mut pending, p.id(), g);
                    }
                }
            }
        }
        out
    }
}

fn accumulate<T: Element>(map: &mut HashMap<u64, Vec<T>>, id: u64, g: Vec<T>) {
    match map.get_mut(&id) {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a = *a + *b;
            }
        }
        None => {
            map.insert(id, g);
        }
    }
}

/// Leaf gradients produced by one backward sweep, keyed by tensor identity.
#[derive(Debug, Clone)]
pub struct Gradients<T: Element> {
    by_id: HashMap<u64, Vec<T>>,
}

impl<T: Element> Default for Gradients<T> {
    fn default() -> Self {
        Self {
            by_id: HashMap::new(),
        }
    }
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.by_id.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of `t`, or zeros when `t` was not reached.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Vec<T> {
        self.get(t)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); t.numel()])
    }

    pub fn insert(&mut self, id: u64, grad: Vec<T>) {
        self.by_id.insert(id, grad);
    }

    pub fn remove(&mut self, t: &Tensor<T>) -> Option<Vec<T>> {
        self.by_id.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, g) in other.by_id {
            accumulate(&mut self.by_id, id, g);
        }
    }
}
