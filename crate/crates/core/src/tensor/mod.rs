//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every operation that has at least one input with `requires_grad` records a
//! backward closure on its output. [`Tensor::backward`] walks the recorded
//! graph in reverse topological order and accumulates gradients into every
//! node that requires them.

mod ops;

pub use ops::{log_softmax_in_place, softmax_in_place};

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph on this thread (inference mode).
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

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Given the output gradient and a per-parent "needs gradient" mask, returns
/// one optional gradient buffer per parent.
type BackwardFn<S> = Box<dyn Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + Send + Sync>;

struct GradFn<S: Scalar> {
    name: &'static str,
    parents: Vec<Tensor<S>>,
    backward: BackwardFn<S>,
}

struct Node<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<S>>,
    grad: Mutex<Option<Vec<S>>>,
    requires_grad: bool,
    grad_fn: Mutex<Option<GradFn<S>>>,
}

/// Reference-counted handle to a tensor node. Cloning is cheap and shares
/// storage.
pub struct Tensor<S: Scalar = f64> {
    node: Arc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let head: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &head)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn from_node(
        shape: Vec<usize>,
        data: Vec<S>,
        requires_grad: bool,
        grad_fn: Option<GradFn<S>>,
    ) -> Self {
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                grad_fn: Mutex::new(grad_fn),
            }),
        }
    }

    /// Builds a constant tensor. Fails when the data length does not match
    /// the shape or a dimension is zero.
    pub fn new(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::domain(
                "new",
                format!("zero-sized dimension in {shape:?}"),
            ));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape("new", shape, &[data.len()]));
        }
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf.
    pub fn param(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.into_param())
    }

    /// Copies this tensor's values into a fresh leaf with `requires_grad`.
    pub fn into_param(self) -> Self {
        let data = self.data().clone();
        Self::from_node(self.node.shape.clone(), data, true, None)
    }

    pub fn scalar(x: S) -> Self {
        Self::from_node(Vec::new(), vec![x], false, None)
    }

    pub fn from_vec(data: Vec<S>) -> Self {
        let n = data.len();
        Self::new(data, &[n]).expect("non-empty vector")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![S::zero(); numel(shape)], shape).expect("valid shape")
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::new(vec![S::one(); numel(shape)], shape).expect("valid shape")
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self::new(vec![value; numel(shape)], shape).expect("valid shape")
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![S::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = S::one();
        }
        Self::new(data, &[n, n]).expect("valid shape")
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::lit(z * std)
            })
            .collect();
        Self::new(data, shape).expect("valid shape")
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| S::lit(rng.random_range(-bound..bound)))
            .collect();
        Self::new(data, shape).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<S>> {
        self.node.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access to the values. Intended for optimizers and
    /// initialisation; mutating a tensor that is part of a live graph makes
    /// later backward passes meaningless.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<S>> {
        self.node.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> S {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    pub fn at(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.rank());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(self.shape()).enumerate() {
            assert!(
                ix < dim,
                "index {ix} out of bounds for axis {i} of size {dim}"
            );
            flat = flat * dim + ix;
        }
        self.data()[flat]
    }

    /// Row `i` of a 2-D tensor, copied out.
    pub fn row(&self, i: usize) -> Vec<S> {
        assert_eq!(self.rank(), 2);
        let cols = self.shape()[1];
        self.data()[i * cols..(i + 1) * cols].to_vec()
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Overwrites the stored gradient.
    pub fn set_grad(&self, g: Vec<S>) {
        assert_eq!(g.len(), self.numel(), "gradient size");
        *self.node.grad.lock().expect("grad lock poisoned") = Some(g);
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    /// A constant copy of the current values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_node(self.node.shape.clone(), self.to_vec(), false, None)
    }

    pub fn is_leaf(&self) -> bool {
        self.node
            .grad_fn
            .lock()
            .expect("grad_fn lock poisoned")
            .is_none()
    }

    /// Name of the operation that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node
            .grad_fn
            .lock()
            .expect("grad_fn lock poisoned")
            .as_ref()
            .map(|g| g.name)
    }

    fn accumulate_grad(&self, g: &[S]) {
        let mut slot = self.node.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Records an operation result. The backward closure is kept only when a
    /// parent requires gradients.
    pub(crate) fn from_op(
        name: &'static str,
        data: Vec<S>,
        shape: Vec<usize>,
        parents: Vec<Tensor<S>>,
        backward: impl Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{name}: shape/data mismatch");
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            name,
            parents,
            backward: Box::new(backward),
        });
        Self::from_node(shape, data, requires_grad, grad_fn)
    }

    /// Reverse-mode sweep from a scalar loss. The graph is released
    /// afterwards; use [`Tensor::backward_retain`] to keep it.
    pub fn backward(&self) -> Result<()> {
        self.backward_impl(false)
    }

    pub fn backward_retain(&self) -> Result<()> {
        self.backward_impl(true)
    }

    fn backward_impl(&self, retain: bool) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<S>> = HashMap::new();
        pending.insert(self.id(), vec![S::one()]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            node.accumulate_grad(&g);
            let mut slot = node.node.grad_fn.lock().expect("grad_fn lock poisoned");
            let Some(grad_fn) = slot.as_ref() else {
                continue;
            };
            let needs: Vec<bool> = grad_fn.parents.iter().map(|p| p.requires_grad()).collect();
            let parent_grads = (grad_fn.backward)(&g, &needs);
            for (parent, pg) in grad_fn.parents.iter().zip(parent_grads) {
                if !parent.requires_grad() {
                    continue;
                }
                let Some(pg) = pg else { continue };
                debug_assert_eq!(
                    pg.len(),
                    parent.numel(),
                    "{}: parent grad size",
                    grad_fn.name
                );
                match pending.get_mut(&parent.id()) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(pg) {
                            *a += b;
                        }
                    }
                    None => {
                        pending.insert(parent.id(), pg);
                    }
                }
            }
            if !retain {
                *slot = None;
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` through recorded operations, parents
    /// before children.
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (node, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            let slot = t.node.grad_fn.lock().expect("grad_fn lock poisoned");
            if let Some(grad_fn) = slot.as_ref() {
                for p in &grad_fn.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
