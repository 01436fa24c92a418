//! The reverse-mode tape and variable handles.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::{checked, numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one node: receives the output gradient and a
/// mask of which parents need a gradient, returns one entry per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    tracked: bool,
    leaf: bool,
    len: usize,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Records primitive operations in execution order.
///
/// A tape is cheap to clone (shared handle). It lives for one training step
/// and is dropped with the last [`Var`] that refers to it.
pub struct Tape<T: Scalar = f32>(Rc<RefCell<TapeInner<T>>>);

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })))
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, shape: &[usize], data: Vec<T>, tracked: bool) -> Var<T> {
        let len = data.len();
        let id = {
            let mut inner = self.0.borrow_mut();
            inner.nodes.push(Node {
                parents: Vec::new(),
                backward: None,
                tracked,
                leaf: true,
                len,
            });
            inner.nodes.len() - 1
        };
        Var {
            tape: self.clone(),
            id,
            shape: Rc::from(shape),
            value: Rc::new(data),
            tracked,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: &Tensor<T>) -> Var<T> {
        self.push_leaf(t.shape(), t.data().to_vec(), false)
    }

    pub fn constant_from(&self, shape: &[usize], data: Vec<T>) -> Result<Var<T>> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(format!(
                "constant of shape {shape:?} given {} values",
                data.len()
            )));
        }
        Ok(self.push_leaf(shape, data, false))
    }

    pub fn scalar(&self, x: T) -> Var<T> {
        self.push_leaf(&[], vec![x], false)
    }

    /// Leaf that is tracked when `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor<T>) -> Var<T> {
        self.push_leaf(t.shape(), t.data().to_vec(), t.requires_grad())
    }

    /// Leaf that is always tracked.
    pub fn param(&self, t: &Tensor<T>) -> Var<T> {
        self.push_leaf(t.shape(), t.data().to_vec(), true)
    }

    /// Appends a node computed from `parents`. The backward closure is kept
    /// only when at least one parent is tracked.
    pub(crate) fn record(
        &self,
        op: &'static str,
        parents: &[&Var<T>],
        shape: Vec<usize>,
        data: Vec<T>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Var<T> {
        debug_assert_eq!(numel(&shape), data.len(), "{op}: shape/data mismatch");
        if checked() {
            if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
                panic!("{op} produced a non-finite value ({bad})");
            }
        }
        for p in parents {
            assert!(
                Rc::ptr_eq(&p.tape.0, &self.0),
                "{op}: operands belong to different tapes"
            );
        }
        let tracked = parents.iter().any(|p| p.tracked);
        let len = data.len();
        let id = {
            let mut inner = self.0.borrow_mut();
            inner.nodes.push(Node {
                parents: parents.iter().map(|p| p.id).collect(),
                backward: if tracked {
                    Some(Box::new(backward))
                } else {
                    None
                },
                tracked,
                leaf: false,
                len,
            });
            inner.nodes.len() - 1
        };
        Var {
            tape: self.clone(),
            id,
            shape: Rc::from(shape),
            value: Rc::new(data),
            tracked,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<T: Scalar = f32> {
    pub(crate) tape: Tape<T>,
    pub(crate) id: usize,
    pub(crate) shape: Rc<[usize]>,
    pub(crate) value: Rc<Vec<T>>,
    pub(crate) tracked: bool,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            id: self.id,
            shape: Rc::clone(&self.shape),
            value: Rc::clone(&self.value),
            tracked: self.tracked,
        }
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &&*self.shape)
            .field("tracked", &self.tracked)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.value
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn tracked(&self) -> bool {
        self.tracked
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn item(&self) -> T {
        self.value[0]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&self.shape, self.value.to_vec()).expect("var holds a valid shape")
    }

    /// Reverse sweep from a scalar. Returns gradients of every tracked leaf.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                &*self.shape
            )));
        }
        let inner = self.tape.0.borrow();
        let mut grads: Vec<Option<Vec<T>>> = (0..=self.id).map(|_| None).collect();
        grads[self.id] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            if node.leaf {
                if node.tracked {
                    leaves.insert(id, g);
                }
                continue;
            }
            let Some(bw) = &node.backward else { continue };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| inner.nodes[p].tracked)
                .collect();
            let contributions = bw(&g, &mask);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for ((&p, c), &need) in node.parents.iter().zip(contributions).zip(&mask) {
                let Some(c) = c else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(c.len(), inner.nodes[p].len);
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&c) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { by_node: leaves })
    }
}

/// Gradients of tracked leaves produced by [`Var::backward`].
#[derive(Default)]
pub struct Gradients<T: Scalar = f32> {
    by_node: HashMap<usize, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `leaf`, or `None` when the loss does not depend on it.
    pub fn get(&self, leaf: &Var<T>) -> Option<&[T]> {
        self.by_node.get(&leaf.id).map(|g| g.as_slice())
    }

    /// Gradient of `leaf`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, leaf: &Var<T>) -> Vec<T> {
        self.get(leaf)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); leaf.len()])
    }

    /// Writes the gradient of `leaf` into `param.grad`.
    pub fn write_into(&self, leaf: &Var<T>, param: &mut Tensor<T>) -> Result<()> {
        param.set_grad(self.get_or_zeros(leaf))
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}
