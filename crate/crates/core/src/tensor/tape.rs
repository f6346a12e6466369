use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Result, Tensor, TensorError};

/// Backward closure: receives the gradient of the node output and a mask of
/// which inputs need a gradient, returns one optional gradient per input.
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    leaf: bool,
    /// Accumulated gradient for leaves, summed over every `backward` call.
    acc_grad: Option<Vec<f64>>,
}

/// Ordered record of executed operations. Node ids are assigned in execution
/// order, so every node's inputs precede it.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self.clone(), id: nodes.len() - 1 }
    }

    /// Register a leaf; it tracks gradients iff `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.push(Node {
            value: Rc::new(t),
            parents: Vec::new(),
            backward: None,
            requires_grad,
            leaf: true,
            acc_grad: None,
        })
    }

    /// Leaf that tracks gradients.
    pub fn var(&self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Leaf that never tracks gradients.
    pub fn constant(&self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Record a custom differentiable op. `backward` is only kept when some
    /// input requires a gradient.
    pub fn custom(&self, inputs: &[&Var], value: impl Into<Rc<Tensor>>, backward: BackwardFn) -> Result<Var> {
        for v in inputs {
            if !Rc::ptr_eq(&v.tape.nodes, &self.nodes) {
                return Err(TensorError::Invalid { op: "custom", msg: "inputs live on different tapes".into() });
            }
        }
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        Ok(self.push(Node {
            value: value.into(),
            parents: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            leaf: false,
            acc_grad: None,
        }))
    }

    /// Clear accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.acc_grad = None;
        }
    }
}

impl Var {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Accumulated gradient of a leaf (None if never reached).
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.nodes.borrow()[self.id].acc_grad.clone()
    }

    pub fn grad_tensor(&self) -> Option<Tensor> {
        let shape = self.shape();
        self.grad().map(|g| Tensor::from_raw(shape, g))
    }

    /// Reverse-mode pass from this scalar. Leaf gradients are added to
    /// whatever earlier passes left behind.
    pub fn backward(&self) -> Result<()> {
        let mut nodes = self.tape.nodes.borrow_mut();
        let root = &nodes[self.id];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.id + 1];
        grads[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.leaf {
                grads[id] = Some(g);
                continue;
            }
            let Some(backward) = &node.backward else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else { continue };
                debug_assert_eq!(pg.len(), nodes[p].value.len(), "grad length for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        for (id, g) in grads.into_iter().enumerate() {
            let (Some(g), true) = (g, nodes[id].leaf && nodes[id].requires_grad) else { continue };
            match &mut nodes[id].acc_grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
