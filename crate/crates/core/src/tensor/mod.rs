//! Reverse-mode autodiff tensor engine.
//!
//! A `Tensor` is a cheap handle (`Rc`) onto a dense row-major buffer plus an
//! optional graph node recording how it was produced. Ops build the graph
//! eagerly during the forward pass; `backward()` on a scalar walks the graph
//! once in reverse topological order and accumulates gradients into the leaf
//! tensors that were created with `requires_grad`.
//!
//! Gradients flow through closures: each op registers a function mapping the
//! output's gradient buffer to one optional gradient buffer per input. The
//! engine is single-threaded by construction (`Rc`, `RefCell`); parallelism
//! in training happens across independent graphs, one per worker.

mod activation;
mod conv;
mod gradcheck;
mod linalg;
mod norm;
mod pool;
mod reduce;
mod scalar;

pub use activation::Mode;
pub use conv::weight_norm;
pub use gradcheck::{finite_diff_grad, gradient_max_rel_err, rel_err};
pub use norm::BatchNormState;
pub use reduce::{cross_entropy_with_logits, RowStat};
pub use scalar::Scalar;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread. Ops called
/// inside produce plain tensors with no graph nodes, which keeps repeated
/// forward passes (finite differences, evaluation) from growing memory.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = GRAD_ENABLED.with(|g| Restore(g.replace(false)));
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Maps the output gradient to one optional gradient per recorded input.
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_shape<T: Scalar>(data: &[T], shape: &[usize]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.contains(&0) {
        return Err(Error::shape(
            "from_vec",
            format!("zero-sized dimension in shape {shape:?}"),
        ));
    }
    if numel != data.len() {
        return Err(Error::shape(
            "from_vec",
            format!(
                "shape {shape:?} implies {numel} elements but {} were provided",
                data.len()
            ),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn make(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Leaf tensor that does not participate in differentiation.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(&data, shape)?;
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter or an
    /// input whose sensitivity is wanted).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(&data, shape)?;
        Ok(Self::make(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        assert!(numel > 0, "zeros: empty shape {shape:?}");
        Self::make(vec![T::ZERO; numel], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        assert!(numel > 0, "full: empty shape {shape:?}");
        Self::make(vec![value; numel], shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::make(vec![value], Vec::new(), false, None)
    }

    /// Internal op constructor. Records a graph node only when recording is
    /// enabled and at least one input participates in differentiation.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let node = track.then(|| Node {
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            backward: Box::new(backward) as BackwardFn<T>,
        });
        Self::make(data, shape, track, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub(crate) fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a one-element tensor. Panics otherwise; calling this on a
    /// non-scalar is a programming error, not a recoverable condition.
    pub fn item(&self) -> T {
        let data = self.inner.data.borrow();
        assert!(
            data.len() == 1,
            "item() on tensor of shape {:?}",
            self.inner.shape
        );
        data[0]
    }

    /// Overwrites the buffer in place. Lengths must match; the graph (if
    /// any) is untouched, so this is only sound on leaves.
    pub fn store(&self, src: &[T]) {
        let mut data = self.inner.data.borrow_mut();
        assert_eq!(data.len(), src.len(), "store: length mismatch");
        data.copy_from_slice(src);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Reverse-mode sweep from a scalar. Accumulates (`+=`) into the `grad`
    /// slot of every reachable leaf with `requires_grad`; repeated calls
    /// without `zero_grad` keep accumulating.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar, got shape {:?}",
                self.inner.shape
            )));
        }
        if !self.inner.requires_grad {
            return Err(Error::Autodiff(
                "backward from a tensor detached from the graph".into(),
            ));
        }

        // Post-order DFS; reversed it yields a valid topological order
        // (every consumer visited before its inputs).
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((top, child_idx)) = stack.last_mut() {
            let next_child = top.inner.node.as_ref().and_then(|node| {
                let c = node.inputs.get(*child_idx).cloned();
                *child_idx += 1;
                c
            });
            match next_child {
                Some(child) => {
                    if child.requires_grad() && visited.insert(child.id()) {
                        stack.push((child, 0));
                    }
                }
                None => {
                    let (done, _) = stack.pop().expect("stack nonempty");
                    order.push(done);
                }
            }
        }

        let mut flowing: HashMap<u64, Vec<T>> = HashMap::new();
        flowing.insert(self.id(), vec![T::ONE]);
        for t in order.iter().rev() {
            let Some(node) = t.inner.node.as_ref() else {
                continue;
            };
            // All consumers of t are already processed, so its gradient is
            // final and can be moved out of the map.
            let Some(g) = flowing.remove(&t.id()) else {
                continue;
            };
            let input_grads = (node.backward)(&g);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                if !input.requires_grad() {
                    continue;
                }
                let Some(ig) = ig else { continue };
                debug_assert_eq!(ig.len(), input.numel(), "gradient length mismatch");
                match flowing.entry(input.id()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (a, b) in e.get_mut().iter_mut().zip(&ig) {
                            *a += *b;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(ig);
                    }
                }
            }
        }

        for t in &order {
            if !t.is_leaf() || !t.requires_grad() {
                continue;
            }
            if let Some(g) = flowing.remove(&t.id()) {
                let mut slot = t.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn binary_same_shape<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

// ── elementwise and reduction ops ───────────────────────────────────────────

impl<T: Scalar> Tensor<T> {
    /// Elementwise sum. `rhs` may have a shape that is a trailing suffix of
    /// `self`'s (e.g. a bias of shape `[C]` added to `[B, C]`); it is then
    /// tiled over the leading axes.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() == rhs.shape() {
            let data: Vec<T> = {
                let (a, b) = (self.data(), rhs.data());
                a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
            };
            return Ok(Tensor::from_op(
                data,
                self.shape().to_vec(),
                &[self, rhs],
                |g| vec![Some(g.to_vec()), Some(g.to_vec())],
            ));
        }
        if !self.shape().ends_with(rhs.shape()) {
            return Err(Error::shape(
                "add",
                format!(
                    "{:?} vs {:?} (rhs must match or be a suffix)",
                    self.shape(),
                    rhs.shape()
                ),
            ));
        }
        let inner = rhs.numel();
        let data: Vec<T> = {
            let (a, b) = (self.data(), rhs.data());
            a.iter()
                .enumerate()
                .map(|(i, &x)| x + b[i % inner])
                .collect()
        };
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self, rhs],
            move |g| {
                let mut gb = vec![T::ZERO; inner];
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % inner] += gi;
                }
                vec![Some(g.to_vec()), Some(gb)]
            },
        ))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_same_shape("sub", self, rhs)?;
        let data: Vec<T> = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self, rhs],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
        ))
    }

    /// Hadamard product.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary_same_shape("mul", self, rhs)?;
        let data: Vec<T> = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        let (lhs_c, rhs_c) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self, rhs],
            move |g| {
                let (a, b) = (lhs_c.data(), rhs_c.data());
                let ga = g.iter().zip(b.iter()).map(|(&gi, &y)| gi * y).collect();
                let gb = g.iter().zip(a.iter()).map(|(&gi, &x)| gi * x).collect();
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| x * factor).collect();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().map(|&gi| gi * factor).collect())]
        })
    }

    pub fn add_scalar(&self, value: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| x + value).collect();
        Tensor::from_op(data, self.shape().to_vec(), &[self], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn square(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| x * x).collect();
        let x = self.clone();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            let two = T::from_f64(2.0);
            let xd = x.data();
            vec![Some(
                g.iter()
                    .zip(xd.iter())
                    .map(|(&gi, &xi)| gi * two * xi)
                    .collect(),
            )]
        })
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&self) -> Result<Tensor<T>> {
        if self.data().iter().any(|&x| x <= T::ZERO) {
            return Err(Error::Domain("ln of a non-positive element".into()));
        }
        let data: Vec<T> = self.data().iter().map(|&x| x.ln()).collect();
        let x = self.clone();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self],
            move |g| {
                let xd = x.data();
                vec![Some(
                    g.iter().zip(xd.iter()).map(|(&gi, &xi)| gi / xi).collect(),
                )]
            },
        ))
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().fold(T::ZERO, |acc, &x| acc + x);
        let n = self.numel();
        Tensor::from_op(vec![total], Vec::new(), &[self], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    /// Mean over the last axis; the output drops that axis.
    pub fn mean_last(&self) -> Result<Tensor<T>> {
        if self.ndim() == 0 {
            return Err(Error::shape("mean_last", "rank-0 tensor has no axes"));
        }
        let l = *self.shape().last().expect("ndim >= 1");
        let rows = self.numel() / l;
        let inv = T::ONE / T::from_usize(l);
        let data: Vec<T> = {
            let d = self.data();
            (0..rows)
                .map(|r| {
                    d[r * l..(r + 1) * l]
                        .iter()
                        .fold(T::ZERO, |acc, &x| acc + x)
                        * inv
                })
                .collect()
        };
        let out_shape = self.shape()[..self.ndim() - 1].to_vec();
        Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
            let mut gx = vec![T::ZERO; rows * l];
            for r in 0..rows {
                let gr = g[r] * inv;
                for v in &mut gx[r * l..(r + 1) * l] {
                    *v = gr;
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch_and_zero_dims() {
        assert!(Tensor::from_vec(vec![1.0f64, 2.0], &[3]).is_err());
        assert!(Tensor::from_vec(Vec::<f64>::new(), &[0]).is_err());
        assert!(Tensor::from_vec(vec![1.0f64, 2.0, 3.0], &[3]).is_ok());
    }

    #[test]
    fn chain_rule_through_mul_and_sum() {
        // loss = sum(x * y); dx = y, dy = x
        let x = Tensor::param(vec![1.0f64, 2.0, 3.0], &[3]).unwrap();
        let y = Tensor::param(vec![4.0f64, 5.0, 6.0], &[3]).unwrap();
        let loss = x.mul(&y).unwrap().sum();
        assert_eq!(loss.item(), 32.0);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 5.0, 6.0]);
        assert_eq!(y.grad().unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn same_tensor_used_twice_accumulates_both_paths() {
        // loss = sum(x * x); dx = 2x
        let x = Tensor::param(vec![3.0f64, -2.0], &[2]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, -4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let x = Tensor::param(vec![1.0f64], &[1]).unwrap();
        let loss = x.scale(3.0).sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        x.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        let y = x.scale(2.0);
        let err = y.backward().unwrap_err();
        assert!(matches!(err, Error::Autodiff(_)), "{err}");
    }

    #[test]
    fn no_grad_suppresses_graph_recording() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        let y = no_grad(|| x.scale(2.0));
        assert!(y.is_leaf());
        assert!(!y.requires_grad());
    }

    #[test]
    fn suffix_broadcast_add_and_gradients() {
        // [2,3] + [3]
        let a = Tensor::param(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::param(vec![10.0f64, 20.0, 30.0], &[3]).unwrap();
        let y = a.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        y.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
        // Each bias element is used once per leading row.
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn add_rejects_non_suffix_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn mean_last_drops_axis() {
        let x = Tensor::param(vec![1.0f64, 3.0, 5.0, 7.0], &[2, 2]).unwrap();
        let m = x.mean_last().unwrap();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.to_vec(), vec![2.0, 6.0]);
        m.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn ln_rejects_non_positive() {
        let x = Tensor::from_vec(vec![1.0f64, 0.0], &[2]).unwrap();
        assert!(x.ln().is_err());
    }

    #[test]
    fn gradients_do_not_flow_into_plain_leaves() {
        let x = Tensor::param(vec![2.0f64], &[1]).unwrap();
        let c = Tensor::from_vec(vec![5.0f64], &[1]).unwrap();
        let loss = x.mul(&c).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
        assert!(c.grad().is_none());
    }
}
