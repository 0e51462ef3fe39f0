//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of a
//! scalar root with respect to every node that requires one. Graphs are cheap
//! to build and are thrown away after each step.

mod basic;
mod nn;
mod spatial;

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::Tensor;

pub use basic::sigmoid;
pub(crate) use basic::softmax_in_place;
pub use spatial::{pixel_shuffle_tensor, pixel_unshuffle_tensor, RoiBox};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Accumulates gradient contributions into parent buffers during backward.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    sizes: &'a [usize],
    wants: &'a [bool],
}

impl GradSink<'_> {
    /// Run `f` on the gradient buffer of `v` (allocated as zeros on first use).
    /// Skipped when `v` does not require a gradient.
    pub(crate) fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants[v.0] {
            return;
        }
        let buf = self.grads[v.0].get_or_insert_with(|| vec![0.0; self.sizes[v.0]]);
        f(buf);
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.wants[v.0]
    }

    pub(crate) fn add(&mut self, v: Var, g: &[f64]) {
        self.with(v, |buf| {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        });
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no path from the root reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

/// The recording tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf (parameters, inputs under gradient check).
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push_node(t, true, None)
    }

    /// Shared-storage leaf; avoids copying parameter tensors into every graph.
    pub fn leaf_rc(&self, t: Rc<Tensor>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: t, requires_grad: true, backward: None });
        Var(nodes.len() - 1)
    }

    /// A leaf that never receives a gradient (targets, encodings, masks).
    pub fn constant(&self, t: Tensor) -> Var {
        self.push_node(t, false, None)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push_node(&self, t: Tensor, requires_grad: bool, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(t), requires_grad, backward });
        Var(nodes.len() - 1)
    }

    /// Record an op result. The backward closure is dropped when none of the
    /// parents needs a gradient.
    pub(crate) fn push_op(
        &self,
        t: Tensor,
        parents: &[Var],
        backward: impl Fn(&[f64], &mut GradSink<'_>) + 'static,
    ) -> Var {
        let needs = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        if needs {
            self.push_node(t, true, Some(Box::new(backward)))
        } else {
            self.push_node(t, false, None)
        }
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.numel(), 1, "backward root must be a scalar");
        let n = nodes.len();
        let sizes: Vec<usize> = nodes.iter().map(|nd| nd.value.numel()).collect();
        let wants: Vec<bool> = nodes.iter().map(|nd| nd.requires_grad).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if wants[root.0] {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let Some(bw) = nodes[i].backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            {
                let mut sink = GradSink { grads: &mut grads, sizes: &sizes, wants: &wants };
                bw(&g, &mut sink);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, nd)| g.map(|d| Tensor::new(nd.value.shape().to_vec(), d)))
            .collect();
        Gradients { grads }
    }
}
