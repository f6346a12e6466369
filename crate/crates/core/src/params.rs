//! Named parameter storage and per-pass graph binding.

use std::cell::RefCell;

use thiserror::Error;

use crate::rng::Seed;
use crate::tensor::container::TensorSet;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("parameter count mismatch: store has {expected}, source has {found}")]
    Count { expected: usize, found: usize },
    #[error("parameter {index}: expected {expected:?}, found {found:?}")]
    Name { index: usize, expected: String, found: String },
    #[error("parameter {name:?}: expected shape {expected:?}, found {found:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Flat list of named weight tensors. Layers hold [`ParamId`]s into it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value.with_requires_grad(false));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.values.iter().zip(&other.values).all(|(a, b)| a.bit_eq(b))
    }

    pub fn to_set(&self) -> TensorSet {
        let mut set = TensorSet::default();
        for (n, v) in self.names.iter().zip(&self.values) {
            set.push(n.clone(), v.clone());
        }
        set
    }

    /// Replace all values from `set`, which must list the same names and
    /// shapes in the same order. Nothing is modified on error.
    pub fn load_set(&mut self, set: &TensorSet) -> Result<(), ParamError> {
        if set.tensors.len() != self.values.len() {
            return Err(ParamError::Count { expected: self.values.len(), found: set.tensors.len() });
        }
        for (index, ((name, t), (own_name, own))) in
            set.tensors.iter().zip(self.names.iter().zip(&self.values)).enumerate()
        {
            if name != own_name {
                return Err(ParamError::Name { index, expected: own_name.clone(), found: name.clone() });
            }
            if t.shape() != own.shape() {
                return Err(ParamError::Shape {
                    name: name.clone(),
                    expected: own.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        for (slot, (_, t)) in self.values.iter_mut().zip(&set.tensors) {
            *slot = t.clone().with_requires_grad(false);
        }
        Ok(())
    }
}

/// One forward pass: a fresh tape with parameters bound lazily as leaves.
pub struct Graph<'s> {
    tape: Tape,
    store: &'s ParamStore,
    bound: RefCell<Vec<Option<Var>>>,
    trainable: bool,
}

impl<'s> Graph<'s> {
    /// `trainable` decides whether parameters are bound as gradient-tracking
    /// leaves or as constants.
    pub fn new(store: &'s ParamStore, trainable: bool) -> Self {
        Self { tape: Tape::new(), store, bound: RefCell::new(vec![None; store.len()]), trainable }
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var {
        let mut bound = self.bound.borrow_mut();
        bound[id.0]
            .get_or_insert_with(|| {
                let t = self.store.get(id).clone();
                if self.trainable {
                    self.tape.var(t)
                } else {
                    self.tape.constant(t)
                }
            })
            .clone()
    }

    pub fn input(&self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Gradients indexed by parameter; `None` for parameters never bound or
    /// never reached by a backward pass.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.bound.borrow().iter().map(|v| v.as_ref().and_then(Var::grad)).collect()
    }
}

/// Xavier/Glorot uniform initialization.
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, seed: Seed) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, seed)
}

/// Worst relative gradient error found for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub rel_err: f64,
    pub coords: usize,
}

/// Step of the five-point central stencil used by [`check_param_grads`].
pub const STENCIL_STEP: f64 = 1e-3;

/// Compare reverse-mode gradients of every parameter against five-point
/// central differences of the scalar `Σ wᵢ·f(θ)ᵢ` (fixed random `w`). At most
/// `max_coords` coordinates per tensor are probed; the error is relative to
/// the largest gradient entry of that tensor.
pub fn check_param_grads(
    store: &ParamStore,
    f: impl Fn(&Graph) -> crate::tensor::Result<Var>,
    seed: Seed,
    max_coords: usize,
) -> crate::tensor::Result<Vec<ParamCheck>> {
    use crate::tensor::gradcheck::{projection_weights, relative_error};
    let g = Graph::new(store, true);
    let y = f(&g)?;
    let w = projection_weights(y.numel(), seed.derive("projection"));
    let wt = g.input(Tensor::new(y.shape(), w.clone())?);
    y.mul(&wt)?.sum().backward()?;
    let grads = g.grads();
    let eval = |s: &ParamStore| -> crate::tensor::Result<f64> {
        let g = Graph::new(s, false);
        let y = f(&g)?;
        Ok(y.value().data().iter().zip(&w).map(|(a, b)| a * b).sum())
    };
    let mut rng = seed.derive("coords").rng();
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let len = store.get(id).len();
        let coords: Vec<usize> = if len <= max_coords {
            (0..len).collect()
        } else {
            let mut c: Vec<usize> = (0..max_coords).map(|_| rng.index(len)).collect();
            c.sort_unstable();
            c.dedup();
            c
        };
        let analytic: Vec<f64> = match &grads[id.0] {
            Some(gv) => coords.iter().map(|&i| gv[i]).collect(),
            None => vec![0.0; coords.len()],
        };
        let mut numeric = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = store.get(id).data()[i];
            let mut at = |offset: f64| {
                probe.get_mut(id).data_mut()[i] = orig + offset * STENCIL_STEP;
                eval(&probe)
            };
            let (m2, m1, p1, p2) = (at(-2.0)?, at(-1.0)?, at(1.0)?, at(2.0)?);
            probe.get_mut(id).data_mut()[i] = orig;
            numeric.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * STENCIL_STEP));
        }
        // scale by the whole tensor's gradient so sparse probes of tiny
        // coordinates are not judged against round-off alone
        let full_scale = grads[id.0].as_ref().map_or(0.0, |gv| gv.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        let probed_scale = analytic.iter().chain(&numeric).fold(1e-12, |m: f64, v| m.max(v.abs()));
        let rel_err = relative_error(&analytic, &numeric) * probed_scale / probed_scale.max(full_scale);
        out.push(ParamCheck { name: store.name(id).to_string(), rel_err, coords: coords.len() });
    }
    Ok(out)
}
