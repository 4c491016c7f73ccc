//! Dense tensors with a dynamic reverse-mode gradient tape.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record a [`TapeNode`] on their output
//! holding the inputs and a closure that maps the output gradient to input
//! gradients. [`Tensor::backward`] walks the recorded DAG in reverse
//! topological order, accumulates gradients into every reachable leaf that
//! requires them, and frees the tape.

mod linalg;
mod nn;
mod ops;
mod real;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub use real::{Precision, Real};

use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables tape recording on this thread until the guard is dropped.
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

/// One recorded operation: its inputs and the rule propagating an output
/// gradient back to each of them.
pub struct TapeNode<T: Real> {
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    node: RefCell<Option<TapeNode<T>>>,
}

pub struct Tensor<T: Real> {
    inner: Rc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                node: RefCell::new(None),
            }),
        }
    }

    /// Constant tensor; never receives gradients.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim(
                "from_vec",
                "data",
                format!("{} values for shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, false))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::lit(v)).collect(), shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![], vec![v], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel(shape)], false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::build(shape.to_vec(), vec![v; numel(shape)], false)
    }

    /// Leaf tensor that accumulates gradients during [`Tensor::backward`].
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(Self::build(t.shape().to_vec(), t.into_data(), true))
    }

    /// Same values, no tape, no gradient requirement.
    pub fn detach(&self) -> Self {
        Self::build(self.shape().to_vec(), self.data().to_vec(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.clone()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.inner
            .data
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect()
    }

    fn into_data(self) -> Vec<T> {
        match Rc::try_unwrap(self.inner) {
            Ok(inner) => inner.data,
            Err(rc) => rc.data.clone(),
        }
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<T>>> {
        let g = self.inner.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn has_tape(&self) -> bool {
        self.inner.node.borrow().is_some()
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn key(&self) -> *const Inner<T> {
        Rc::as_ptr(&self.inner)
    }

    /// Output of an operation. Records a tape node when recording is enabled
    /// and at least one input takes part in differentiation.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let tracked = grad_enabled() && inputs.iter().any(|t| t.tracks());
        let out = Self::build(shape, data, tracked);
        if tracked {
            *out.inner.node.borrow_mut() = Some(TapeNode {
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                backward: Box::new(backward),
            });
        }
        out
    }

    /// Whether gradients flow through this tensor.
    pub(crate) fn tracks(&self) -> bool {
        self.inner.requires_grad
    }

    /// Reverse-mode sweep from a scalar loss. The tape is freed afterwards.
    pub fn backward(&self) -> Result<()> {
        self.run_backward(false)
    }

    /// As [`Tensor::backward`] but keeps the tape for a later sweep.
    pub fn backward_retain(&self) -> Result<()> {
        self.run_backward(true)
    }

    fn run_backward(&self, retain: bool) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        if !self.has_tape() {
            return Err(Error::NoTape);
        }

        let order = self.topo_order();
        let mut grads: HashMap<*const Inner<T>, Vec<T>> = HashMap::new();
        grads.insert(self.key(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g_out) = grads.remove(&t.key()) else {
                continue;
            };
            let node = t.inner.node.borrow();
            let node = node
                .as_ref()
                .expect("topological order only holds taped tensors");
            let g_in = (node.backward)(&g_out);
            debug_assert_eq!(g_in.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(g_in) {
                let Some(g) = g else { continue };
                if !input.tracks() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel());
                if input.has_tape() {
                    match grads.get_mut(&input.key()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => {
                            grads.insert(input.key(), g);
                        }
                    }
                } else {
                    let mut slot = input.inner.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
            }
        }

        if !retain {
            for t in &order {
                t.inner.node.borrow_mut().take();
            }
        }
        Ok(())
    }

    /// Taped tensors reachable from `self`, parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (tensor, children pushed?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.inner.node.borrow().as_ref() {
                for input in node.inputs.iter().rev() {
                    if input.has_tape() && !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests;
