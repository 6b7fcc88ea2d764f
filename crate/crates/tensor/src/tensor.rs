use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Result, TensorError};
use crate::{numel, Float};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Maps the gradient of an operation's output to gradients of its parents.
///
/// The returned vector has one entry per parent, in parent order; `None` means
/// the parent receives no gradient from this operation.
pub type BackwardFn = Box<dyn Fn(&[Float]) -> Vec<Option<Vec<Float>>>>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: usize,
    shape: Vec<usize>,
    data: Vec<Float>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<Float>>>,
    node: RefCell<Option<Node>>,
}

/// Reference-counted handle to an immutable tensor value.
///
/// Cloning a `Tensor` is cheap and shares the underlying buffer and gradient.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<Float>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: RefCell::new(node),
        }))
    }

    pub fn new(shape: &[usize], data: Vec<Float>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A leaf that accumulates gradients during [`Tensor::backward`].
    pub fn parameter(shape: &[usize], data: Vec<Float>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: Float) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: Float) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Result of a differentiable operation.
    ///
    /// When gradients are enabled and any parent requires them, `backward` is
    /// recorded; otherwise the result is a constant and `backward` is dropped.
    pub fn from_op(
        shape: Vec<usize>,
        data: Vec<Float>,
        parents: &[&Tensor],
        backward: impl Fn(&[Float]) -> Vec<Option<Vec<Float>>> + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            let node = Node {
                parents: parents.iter().map(|&p| p.clone()).collect(),
                backward: Box::new(backward),
            };
            Self::build(shape, data, true, Some(node))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[Float] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.borrow().is_none()
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> Float {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<Float>>> {
        let g = self.0.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    /// Copy of the accumulated gradient, or zeros if none was accumulated.
    pub fn grad_or_zeros(&self) -> Vec<Float> {
        self.0
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Constant copy of this tensor's value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Same data viewed with a different shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.0.data.clone(),
            &[self],
            |g| vec![Some(g.to_vec())],
        ))
    }

    fn accumulate(&self, g: Vec<Float>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Propagates d(self)/d(leaf) into every reachable leaf that requires
    /// gradients. `self` must hold exactly one element.
    ///
    /// Leaf gradients accumulate across calls; interior gradients are consumed.
    /// Unless `retain_graph` is set, interior nodes also release their closures
    /// as they are processed, so a second backward through the same graph
    /// reaches nothing.
    pub fn backward_with(&self, retain_graph: bool) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        self.accumulate(vec![1.0]);
        for t in order.iter().rev() {
            if t.is_leaf() {
                continue;
            }
            let grad = t.0.grad.borrow_mut().take();
            let Some(grad) = grad else { continue };
            let owned = if retain_graph {
                None
            } else {
                t.0.node.borrow_mut().take()
            };
            let shared = t.0.node.borrow();
            let Some(node) = owned.as_ref().or(shared.as_ref()) else {
                continue;
            };
            let parent_grads = (node.backward)(&grad);
            for (p, g) in node.parents.iter().zip(parent_grads) {
                if let Some(g) = g {
                    if p.requires_grad() {
                        debug_assert_eq!(g.len(), p.numel());
                        p.accumulate(g);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn backward(&self) -> Result<()> {
        self.backward_with(false)
    }

    // Post-order DFS; parents appear before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            let parents: Vec<Tensor> = t
                .0
                .node
                .borrow()
                .as_ref()
                .map(|n| n.parents.iter().filter(|p| p.requires_grad()).cloned().collect())
                .unwrap_or_default();
            stack.push((t, true));
            for p in parents {
                if !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data().iter().take(6).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{mul, sum};

    #[test]
    fn rejects_wrong_data_length() {
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { .. })
        ));
    }

    #[test]
    fn backward_on_non_scalar_is_an_error() {
        let x = Tensor::parameter(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = crate::relu(&x);
        assert!(matches!(y.backward(), Err(TensorError::NonScalar(_))));
    }

    #[test]
    fn diamond_graph_accumulates() {
        // loss = sum(x * x) reaches x twice through mul
        let x = Tensor::parameter(&[2], vec![3.0, -1.0]).unwrap();
        let loss = sum(&mul(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(&*x.grad().unwrap(), &vec![6.0, -2.0]);
    }

    #[test]
    fn graph_is_freed_unless_retained() {
        let x = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let loss = sum(&mul(&x, &x).unwrap());
        loss.backward_with(true).unwrap();
        loss.backward_with(true).unwrap();
        assert_eq!(&*x.grad().unwrap(), &vec![4.0, 8.0]);

        let y = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let loss = sum(&mul(&y, &y).unwrap());
        loss.backward().unwrap();
        loss.backward().unwrap();
        // second pass only reseeds the root; interior closures are gone
        assert_eq!(&*y.grad().unwrap(), &vec![2.0, 4.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| sum(&x));
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }
}
