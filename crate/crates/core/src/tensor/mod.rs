//! Reverse-mode automatic differentiation over `ndarray` storage.
//!
//! A [`Tensor`] is a reference-counted node in a dynamically built
//! computation graph. Leaf nodes hold constants or trainable parameters;
//! every operation allocates a new node that keeps handles to its parents
//! together with a closure computing parent gradients from the output
//! gradient. Calling [`Tensor::backward`] on a scalar result walks the
//! graph in reverse topological order and accumulates gradients into every
//! node that requires them.
//!
//! The graph is single-threaded by construction (`Rc`/`RefCell`); training
//! loops own their models and never share nodes across threads.

mod conv;
mod elementwise;
pub mod gradcheck;
mod reduce;
mod shape;

pub use gradcheck::{central_difference_gradient, grad_check};

use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Computes gradients w.r.t. each parent given (output gradient, output
/// value, parents). `None` entries mean "no gradient flows to this parent".
type BackFn<T> = Box<dyn Fn(&ArrayD<T>, &ArrayD<T>, &[Tensor<T>]) -> Vec<Option<ArrayD<T>>>>;

struct Node<T: Scalar> {
    id: u64,
    value: RefCell<ArrayD<T>>,
    grad: RefCell<Option<ArrayD<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    back: Option<BackFn<T>>,
}

pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;

impl<T: Scalar> Tensor<T> {
    /// Constant leaf: no gradient is ever accumulated here.
    pub fn constant(value: ArrayD<T>) -> Self {
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                value: RefCell::new(value),
                grad: RefCell::new(None),
                requires_grad: false,
                parents: Vec::new(),
                back: None,
            }),
        }
    }

    /// Trainable leaf.
    pub fn param(value: ArrayD<T>) -> Self {
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                value: RefCell::new(value),
                grad: RefCell::new(None),
                requires_grad: true,
                parents: Vec::new(),
                back: None,
            }),
        }
    }

    pub fn scalar_constant(value: T) -> Self {
        Tensor::constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    pub(crate) fn from_op(value: ArrayD<T>, parents: Vec<Tensor<T>>, back: BackFn<T>) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Tensor::constant(value);
        }
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                value: RefCell::new(value),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                back: Some(back),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn value(&self) -> Ref<'_, ArrayD<T>> {
        self.node.value.borrow()
    }

    pub fn to_array(&self) -> ArrayD<T> {
        self.node.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.value.borrow().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.node.value.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let v = self.node.value.borrow();
        assert_eq!(v.len(), 1, "item() on tensor with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    pub fn grad(&self) -> Option<ArrayD<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrite a leaf's value in place (optimizer updates).
    pub fn set_value(&self, value: ArrayD<T>) {
        debug_assert!(self.node.parents.is_empty(), "set_value on non-leaf");
        *self.node.value.borrow_mut() = value;
    }

    /// Apply an in-place update to a leaf's value.
    pub fn update_value(&self, f: impl FnOnce(&mut ArrayD<T>)) {
        f(&mut self.node.value.borrow_mut());
    }

    /// A constant copy of this tensor's value, cut off from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::constant(self.to_array())
    }

    fn accumulate_grad(&self, g: ArrayD<T>) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => existing.zip_mut_with(&g, |a, &b| *a = *a + b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate; call
    /// `zero_grad` on leaves between steps.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar output");
        let order = self.topo_order();
        self.accumulate_grad(ArrayD::from_elem(self.node.value.borrow().raw_dim(), T::one()));
        for t in order.iter().rev() {
            let Some(back) = &t.node.back else { continue };
            let grad = t.node.grad.borrow().clone();
            let Some(grad) = grad else { continue };
            let parent_grads = {
                let out_val = t.node.value.borrow();
                back(&grad, &out_val, &t.node.parents)
            };
            for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if p.requires_grad() {
                        p.accumulate_grad(pg);
                    }
                }
            }
            // Intermediate gradients are not needed once propagated.
            *t.node.grad.borrow_mut() = None;
        }
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Iterative post-order DFS: (node, children_done).
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            if !t.requires_grad() {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::param(arr1(v).into_dyn())
    }

    #[test]
    fn add_mul_backward() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[3.0, 4.0]);
        // L = sum(a * b + a)
        let l = a.mul(&b).add(&a).sum_all();
        l.backward();
        assert_eq!(l.item(), 1.0 * 3.0 + 1.0 + 2.0 * 4.0 + 2.0);
        let ga = a.grad().unwrap();
        let gb = b.grad().unwrap();
        assert_eq!(ga.as_slice().unwrap(), &[4.0, 5.0]); // b + 1
        assert_eq!(gb.as_slice().unwrap(), &[1.0, 2.0]); // a
    }

    #[test]
    fn grad_accumulates_over_shared_node() {
        let a = t(&[2.0]);
        let l = a.mul(&a).sum_all(); // a^2
        l.backward();
        assert_eq!(a.grad().unwrap()[[0]], 4.0);
    }

    #[test]
    fn constant_branches_get_no_grad() {
        let a = t(&[1.0]);
        let c = Tensor::constant(arr1(&[5.0]).into_dyn());
        let l = a.mul(&c).sum_all();
        l.backward();
        assert_eq!(a.grad().unwrap()[[0]], 5.0);
        assert!(c.grad().is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let a = t(&[3.0]);
        let l = a.detach().mul(&a).sum_all();
        l.backward();
        // Only the non-detached factor contributes.
        assert_eq!(a.grad().unwrap()[[0]], 3.0);
    }

    #[test]
    #[should_panic(expected = "scalar output")]
    fn backward_requires_scalar() {
        let a = t(&[1.0, 2.0]);
        a.add(&a).backward();
    }
}
