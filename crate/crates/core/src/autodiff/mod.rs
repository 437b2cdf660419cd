//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is scoped to one training step: build the forward pass with
//! the kernel methods, call [`Graph::backward`] on a scalar, read gradients
//! from the returned [`Grads`], then drop the graph. A graph is confined to
//! one thread; independent graphs may run concurrently.

pub(crate) mod kernels;
mod nn;
mod ops;

pub mod gradcheck;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub use nn::{LstmWeights, Padding};

#[cfg(test)]
mod tests;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product: receives the upstream gradient of the node and
/// accumulates into its parents.
pub type Backward = Box<dyn Fn(&[f64], &mut Grads)>;

struct Node {
    value: Rc<Tensor>,
    backward: Option<Backward>,
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    track: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            track: true,
        }
    }

    /// A graph that records values only; `backward` yields no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            track: false,
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an input or parameter.
    pub fn leaf(&self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, None)
    }

    /// Copies the value of `v` into a fresh leaf, blocking gradient flow.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            backward: None,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    /// Records a custom kernel. The value is checked for finiteness; the
    /// backward closure is dropped on non-tracking graphs.
    pub fn push(&self, op: &'static str, value: Tensor, backward: Option<Backward>) -> Result<Var> {
        value.check_finite(op)?;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            backward: if self.track { backward } else { None },
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.0].value;
        if out.len() != 1 {
            return shape_err("backward", format!("output must be scalar, got {:?}", out.shape()));
        }
        let mut grads = Grads {
            slots: vec![None; nodes.len()],
        };
        grads.slots[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(bw) = nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads.slots[id].take() else {
                continue;
            };
            bw(&g, &mut grads);
            grads.slots[id] = Some(g);
        }
        Ok(grads)
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.slots.get(v.0).and_then(|s| s.as_deref())
    }

    /// Gradient of `v`, or zeros of `len` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }

    pub fn accumulate(&mut self, v: Var, g: &[f64]) {
        match &mut self.slots[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn accumulate_with(&mut self, v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
        let slot = self.slots[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }
}
