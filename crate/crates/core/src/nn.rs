//! Named parameters, a forward session that binds them onto a tape, and
//! the handful of layers the model is assembled from.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, Tensor, Var};

/// Model weights keyed by dotted path, kept in a sorted map so iteration
/// (and therefore serialisation and optimiser order) is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Set every weight to zero.
    pub fn zero_all(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// One forward pass: a fresh tape plus lazily bound parameters.
pub struct Session<'p> {
    pub g: Graph,
    params: &'p ParamStore,
    bound: HashMap<String, Var>,
    trainable: bool,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Session {
            g: Graph::new(),
            params,
            bound: HashMap::new(),
            trainable: true,
        }
    }

    /// Parameters enter the tape as constants; nothing is differentiable.
    pub fn inference(params: &'p ParamStore) -> Self {
        Session {
            trainable: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Input(format!("missing parameter {name}")))?
            .clone();
        let v = if self.trainable {
            self.g.leaf(t)
        } else {
            self.g.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Use `v` wherever parameter `name` is read (gradient checking hook).
    pub fn bind(&mut self, name: &str, v: Var) {
        self.bound.insert(name.to_string(), v);
    }

    pub fn has(&self, name: &str) -> bool {
        self.bound.contains_key(name) || self.params.get(name).is_some()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.g.constant(t)
    }

    /// Gradients of every bound parameter, by name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }
}

// ---- initialisation -------------------------------------------------------

pub fn init_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let std = (1.0 / fan_in as f64).sqrt();
    store.insert(format!("{prefix}.w"), Tensor::randn(&[fan_in, fan_out], std, rng));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[1, fan_out]));
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.gain"), Tensor::full(&[1, width], 1.0));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[1, width]));
}

pub fn init_mlp(store: &mut ParamStore, prefix: &str, width: usize, hidden: usize, rng: &mut impl Rng) {
    init_linear(store, &format!("{prefix}.fc1"), width, hidden, rng);
    init_linear(store, &format!("{prefix}.fc2"), hidden, width, rng);
}

// ---- layers ---------------------------------------------------------------

pub fn linear(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let w = s.p(&format!("{prefix}.w"))?;
    let b = s.p(&format!("{prefix}.b"))?;
    let y = s.g.matmul(x, w)?;
    s.g.add_row(y, b)
}

/// Linear map without bias.
pub fn project(s: &mut Session, name: &str, x: Var) -> Result<Var> {
    let w = s.p(name)?;
    s.g.matmul(x, w)
}

pub const LN_EPS: f64 = 1e-5;

pub fn layer_norm(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let gain = s.p(&format!("{prefix}.gain"))?;
    let bias = s.p(&format!("{prefix}.bias"))?;
    let n = s.g.layer_norm(x, LN_EPS);
    let y = s.g.mul_row(n, gain)?;
    s.g.add_row(y, bias)
}

pub fn mlp(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(s, &format!("{prefix}.fc1"), x)?;
    let h = s.g.gelu(h);
    linear(s, &format!("{prefix}.fc2"), h)
}

/// Run `f` in a session that builds onto an existing tape; used to compose
/// model code with [`crate::numerics::grad_check`].
pub fn on_graph<R>(g: &mut Graph, params: &ParamStore, f: impl FnOnce(&mut Session) -> R) -> R {
    let mut s = Session::new(params);
    std::mem::swap(&mut s.g, g);
    let r = f(&mut s);
    std::mem::swap(&mut s.g, g);
    r
}
