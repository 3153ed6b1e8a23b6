//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, so node ids are already a topological order and the backward pass
//! is a single reverse sweep.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::ArrayD;

use crate::flops::LayerOp;
use crate::params::{ParamId, ParamStore};
use crate::Tensor;

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Recording context for one forward (and optionally backward) pass.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    trace: RefCell<Vec<LayerOp>>,
    grad_enabled: bool,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records backward closures.
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// A graph for inference: values are computed but nothing is kept for
    /// differentiation.
    pub fn inference() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            trace: RefCell::new(Vec::new()),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a constant input. Gradients are still reported for it, which
    /// is what finite-difference checks against inputs need.
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Records a constant that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Binds a parameter from `store`. Repeated calls for the same id within
    /// one graph return the same node so gradients accumulate in one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                graph: self,
                id: node,
            };
        }
        let var = self.leaf(store.get(id).clone(), true);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let value = standard(value);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation. `backward` maps the output gradient to one
    /// optional gradient per parent, in `parents` order. It is dropped without
    /// being called when no parent needs a gradient.
    pub fn custom<'g, F>(&'g self, value: Tensor, parents: &[Var<'g>], backward: F) -> Var<'g>
    where
        F: Fn(&Tensor) -> Vec<Option<Tensor>> + 'static,
    {
        let value = standard(value);
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends an entry to the layer trace used for FLOP estimation.
    pub fn record(&self, op: LayerOp) {
        self.trace.borrow_mut().push(op);
    }

    /// Layer operations executed so far, in order.
    pub fn layer_trace(&self) -> Vec<LayerOp> {
        self.trace.borrow().clone()
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Backpropagates from `root`, seeding its gradient with ones.
    ///
    /// Backward closures are consumed, so a graph can be differentiated once.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(root.graph, self),
            "backward root belongs to a different graph"
        );
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(ArrayD::ones(nodes[root.id].value.raw_dim()));

        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &mut nodes[id];
            if let Some(backward) = node.backward.take() {
                let parent_grads = backward(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                let parents = node.parents.clone();
                for (pid, pg) in parents.into_iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    match &mut grads[pid] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(grad);
        }

        Gradients {
            grads,
            params: self.params.borrow().clone(),
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, usize>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&n| self.grads[n].as_ref())
    }

    /// Gradients for every parameter bound into the graph, sorted by id.
    /// Parameters that did not influence the root get a zero gradient.
    pub fn params(&self, store: &ParamStore) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .map(|(&pid, &node)| {
                let g = self.grads[node]
                    .clone()
                    .unwrap_or_else(|| ArrayD::zeros(store.get(pid).raw_dim()));
                (pid, g)
            })
            .collect();
        out.sort_by_key(|(pid, _)| *pid);
        out
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Whether a backward pass will produce a gradient for this value.
    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f32 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        v.iter().copied().next().unwrap_or_default()
    }
}

fn standard(value: Tensor) -> Tensor {
    if value.is_standard_layout() {
        value
    } else {
        value.as_standard_layout().into_owned()
    }
}
