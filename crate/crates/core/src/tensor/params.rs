use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::Array;
use super::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// A named trainable array with its most recent gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Array,
    pub grad: Option<Array>,
}

/// Adam moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Parameters keyed by dot-separated path, iterated lexicographically,
/// plus the optimizer state that belongs to them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    moments: BTreeMap<String, AdamMoments>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `±sqrt(1/fan_in)`.
    FanIn(usize),
}

/// FNV-1a, used to derive per-parameter RNG streams from names.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn init_array(name: &str, shape: &[usize], init: Init, seed: u64) -> Array {
    match init {
        Init::Zeros => Array::zeros(shape),
        Init::Constant(c) => Array::full(shape, c),
        Init::FanIn(fan_in) => {
            let bound = (1.0 / fan_in.max(1) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
            Array::from_fn(shape, |_| rng.random_range(-bound..bound))
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), Param { value, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, AdamMoments> {
        &self.moments
    }

    pub(crate) fn restore_optimizer(&mut self, step: u64, moments: BTreeMap<String, AdamMoments>) {
        self.step = step;
        self.moments = moments;
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds `grad` into the stored gradient of `name`.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Array) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if grad.shape() != p.value.shape() {
            return Err(shape_err!("gradient for `{name}` has shape {:?}, expected {:?}",
                grad.shape(), p.value.shape()));
        }
        match p.grad.as_mut() {
            Some(acc) => acc.data_mut().iter_mut().zip(grad.data()).for_each(|(a, b)| *a += b),
            None => p.grad = Some(grad.clone()),
        }
        Ok(())
    }

    /// Scales every stored gradient (e.g. to average over a batch).
    pub fn scale_grads(&mut self, s: f64) {
        for p in self.params.values_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// One Adam update with bias correction over every parameter.
    ///
    /// Parameters that never received a gradient in this step are rejected;
    /// callers that intentionally leave a sub-network idle pass
    /// `allow_missing = true`, which skips those parameters entirely.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64, allow_missing: bool) -> Result<()> {
        if !allow_missing {
            if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
                return Err(Error::Graph(format!("parameter `{name}` has no gradient")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for (name, p) in self.params.iter_mut() {
            let Some(g) = p.grad.as_ref() else { continue };
            let n = g.numel();
            let st = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| AdamMoments { m: vec![0.0; n], v: vec![0.0; n] });
            for (((w, &gi), m), v) in
                p.value.data_mut().iter_mut().zip(g.data()).zip(st.m.iter_mut()).zip(st.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

enum Source<'a> {
    Store(&'a ParamStore),
    Leaves,
    Create { store: RefCell<ParamStore>, seed: u64 },
}

struct ScopeInner<'a> {
    source: Source<'a>,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Tensor>>,
}

/// Binds named parameters into graph leaves for one forward pass.
///
/// Each parameter becomes a single leaf per scope, so weights shared across
/// several call sites accumulate their gradients into the same node. A scope
/// built with [`Scope::initializer`] creates missing parameters instead of
/// reading them, which lets one forward pass on a dummy input define the
/// whole parameter set.
#[derive(Clone)]
pub struct Scope<'a> {
    inner: Rc<ScopeInner<'a>>,
    prefix: String,
}

impl<'a> Scope<'a> {
    /// Parameters become trainable leaves.
    pub fn train(store: &'a ParamStore) -> Self {
        Self::with_source(Source::Store(store), true)
    }

    /// Parameters become constants; no graph is retained.
    pub fn infer(store: &'a ParamStore) -> Self {
        Self::with_source(Source::Store(store), false)
    }

    /// A scope over caller-provided leaves (used by gradient checks).
    pub fn with_leaves(leaves: BTreeMap<String, Tensor>) -> Scope<'static> {
        let scope = Scope::with_source(Source::Leaves, true);
        *scope.inner.bound.borrow_mut() = leaves;
        scope
    }

    pub fn initializer(seed: u64) -> Scope<'static> {
        Scope::with_source(Source::Create { store: RefCell::new(ParamStore::new()), seed }, false)
    }

    fn with_source(source: Source<'a>, trainable: bool) -> Self {
        Self {
            inner: Rc::new(ScopeInner { source, trainable, bound: RefCell::new(BTreeMap::new()) }),
            prefix: String::new(),
        }
    }

    pub fn sub(&self, name: &str) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Scope { inner: Rc::clone(&self.inner), prefix }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.inner.trainable
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let path = self.path(name);
        if let Some(t) = self.inner.bound.borrow().get(&path) {
            if t.shape() != shape {
                return Err(shape_err!("parameter `{path}` bound with shape {:?}, requested {shape:?}", t.shape()));
            }
            return Ok(t.clone());
        }
        let array = match &self.inner.source {
            Source::Leaves => return Err(Error::MissingParam(path)),
            Source::Store(store) => {
                let p = store.get(&path).ok_or_else(|| Error::MissingParam(path.clone()))?;
                if p.value.shape() != shape {
                    return Err(shape_err!("parameter `{path}` stored with shape {:?}, model expects {shape:?}",
                        p.value.shape()));
                }
                p.value.clone()
            }
            Source::Create { store, seed } => {
                let a = init_array(&path, shape, init, *seed);
                store.borrow_mut().insert(&path, a.clone())?;
                a
            }
        };
        let t = if self.inner.trainable { Tensor::param(array) } else { Tensor::constant(array) };
        self.inner.bound.borrow_mut().insert(path, t.clone());
        Ok(t)
    }

    /// Leaves bound so far, by parameter path.
    pub fn bound(&self) -> BTreeMap<String, Tensor> {
        self.inner.bound.borrow().clone()
    }

    /// Moves leaf gradients into `store` after `backward()`.
    pub fn collect_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, t) in self.inner.bound.borrow().iter() {
            if let Some(g) = t.grad() {
                store.accumulate_grad(name, &g)?;
            }
        }
        Ok(())
    }

    /// The parameter set created by an initializer scope.
    pub fn into_store(self) -> Result<ParamStore> {
        let inner = Rc::try_unwrap(self.inner)
            .map_err(|_| Error::InvalidArgument("scope still shared".into()))?;
        match inner.source {
            Source::Create { store, .. } => Ok(store.into_inner()),
            Source::Store(s) => Ok(s.clone()),
            Source::Leaves => Err(Error::InvalidArgument("leaf scope owns no store".into())),
        }
    }
}
