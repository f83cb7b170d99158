//! Reverse-mode automatic differentiation over rank-4 tensors.
//!
//! The engine is a tape: every operation appends a node holding its output
//! value, its parent ids, and a backward closure that turns the output
//! cotangent into parent cotangents. Graphs are rebuilt per step
//! (define-by-run) and all arithmetic is in f64, which keeps loss traces
//! bit-reproducible and leaves finite-difference checks ample headroom.
//!
//! Tensors are `(batch, channel, height, width)`; scalars are `(1,1,1,1)`.
//! Complex spectra are packed as 2C channels: the first C hold real parts,
//! the last C imaginary parts.

mod conv;
mod gradcheck;
mod ops;
mod spectral;

pub use gradcheck::{grad_check, grad_check_seeded, GradCheckReport};

use crate::error::{Error, Result};
use ndarray::Array4;
use std::collections::BTreeMap;

/// Rank-4 value: (batch, channel, height, width).
pub type Tensor = Array4<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Context handed to a backward closure.
pub(crate) struct BackCtx<'a> {
    /// Cotangent of the node output.
    pub grad: &'a Tensor,
    /// The node's forward output.
    pub out: &'a Tensor,
    /// Forward values of the node's parents, in parent order.
    pub parents: &'a [&'a Tensor],
}

type BackwardFn = Box<dyn Fn(&BackCtx) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    needs_grad: bool,
    backward: Option<BackwardFn>,
}

/// A single forward tape. Create one per training step or inference call.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: BTreeMap<usize, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. Gradients are tracked only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, vec![], requires_grad, None)
    }

    /// Insert a constant (no gradient tracking).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Insert a scalar constant as a (1,1,1,1) leaf.
    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::from_elem((1, 1, 1, 1), value))
    }

    /// Bind a parameter from a store as a leaf, memoized per parameter so a
    /// parameter shared across the forward pass accumulates one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&var) = self.param_vars.get(&id.0) {
            return var;
        }
        let entry = store.entry(id);
        let var = self.leaf(entry.value.clone(), entry.requires_grad);
        self.param_vars.insert(id.0, var);
        var
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Value of a (1,1,1,1) node as an f64.
    pub fn scalar_value(&self, var: Var) -> f64 {
        let v = &self.nodes[var.0].value;
        assert_eq!(v.len(), 1, "scalar_value on non-scalar node");
        v[[0, 0, 0, 0]]
    }

    pub fn shape(&self, var: Var) -> (usize, usize, usize, usize) {
        self.nodes[var.0].value.dim()
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        leaf_requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        let needs_grad = if parents.is_empty() {
            leaf_requires_grad
        } else {
            parents.iter().any(|p| self.nodes[p.0].needs_grad)
        };
        self.nodes.push(Node {
            value,
            parents,
            needs_grad,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward requires a scalar loss node"
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones((1, 1, 1, 1)));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &self.nodes[id];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            if !node.parents.iter().any(|p| self.nodes[p.0].needs_grad) {
                continue;
            }
            let (before, at) = grads.split_at_mut(id);
            let grad_out = at[0].as_ref().expect("grad present");
            let parent_values: Vec<&Tensor> =
                node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let ctx = BackCtx {
                grad: grad_out,
                out: &node.value,
                parents: &parent_values,
            };
            let parent_grads = back(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, pgrad) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                debug_assert_eq!(pgrad.dim(), self.nodes[parent.0].value.dim());
                match &mut before[parent.0] {
                    Some(acc) => *acc += &pgrad,
                    slot => *slot = Some(pgrad),
                }
            }
        }
        Gradients { grads }
    }

    /// Write accumulated parameter gradients back into the store.
    pub fn export_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (&pid, &var) in &self.param_vars {
            if let Some(g) = grads.get(var) {
                store.set_grad(ParamId(pid), g.clone());
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// Handle to a named tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

pub(crate) struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

/// Named parameter tensors with their latest gradients.
///
/// Iteration order is insertion order, which fixes the checkpoint layout
/// and the optimizer update order.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, requires_grad: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name: name.clone(),
            value,
            requires_grad,
            grad: None,
        });
        let id = ParamId(self.entries.len() - 1);
        self.by_name.insert(name, id.0);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn requires_grad(&self, id: ParamId) -> bool {
        self.entries[id.0].requires_grad
    }

    pub fn set_requires_grad(&mut self, id: ParamId, requires_grad: bool) {
        self.entries[id.0].requires_grad = requires_grad;
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Tensor) {
        self.entries[id.0].grad = Some(grad);
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Total number of scalar parameters (trainable only).
    pub fn trainable_len(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.requires_grad)
            .map(|e| e.value.len())
            .sum()
    }
}

/// Names of the differentiable operations this backend implements.
pub fn supported_ops() -> &'static [&'static str] {
    &[
        "conv2d",
        "conv2d_stride2",
        "depthwise_conv2d",
        "pointwise_conv2d",
        "conv_transpose2d",
        "gelu",
        "sigmoid",
        "add",
        "mul",
        "concat_channels",
        "fft2",
        "ifft2",
        "amplitude",
        "phase",
        "polar_to_complex",
        "reflect_pad2d",
        "l1_mean",
        "l2_mean",
    ]
}

/// Operations the network requires from a backend, with gradients.
pub fn required_ops() -> &'static [&'static str] {
    &[
        "conv2d",
        "conv2d_stride2",
        "depthwise_conv2d",
        "pointwise_conv2d",
        "conv_transpose2d",
        "gelu",
        "sigmoid",
        "add",
        "mul",
        "concat_channels",
        "fft2",
        "ifft2",
        "amplitude",
        "l1_mean",
        "l2_mean",
    ]
}

/// Verify every required op is available; called at model construction.
pub fn ensure_required_ops() -> Result<()> {
    let supported = supported_ops();
    for op in required_ops() {
        if !supported.contains(op) {
            return Err(Error::Capability(format!("backend lacks op `{op}`")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_through_shared_parameter_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_elem((1, 1, 1, 1), 3.0), true);
        let mut g = Graph::new();
        let w1 = g.param(&store, id);
        let w2 = g.param(&store, id);
        assert_eq!(w1, w2, "param leaves are memoized");
        // loss = w * w, d/dw = 2w = 6
        let prod = g.mul(w1, w2);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        g.export_param_grads(&grads, &mut store);
        let gw = store.grad(id).unwrap()[[0, 0, 0, 0]];
        assert!((gw - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_elem((1, 1, 2, 2), 2.0), true);
        let c = g.constant(Tensor::from_elem((1, 1, 2, 2), 5.0));
        let y = g.mul(x, c);
        let loss = g.sum_all(y);
        let grads = g.backward(loss);
        assert!(grads.get(c).is_none());
        let gx = grads.get(x).unwrap();
        assert!(gx.iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn required_ops_are_all_supported() {
        ensure_required_ops().unwrap();
    }
}
