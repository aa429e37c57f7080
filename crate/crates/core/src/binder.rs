//! Resolves parameter names to graph nodes.
//!
//! A parameter stored under its plain name is deterministic. A parameter
//! stored as a `name.mu` / `name.rho` pair is Gaussian: frozen mode binds the
//! mean, open mode draws one weight per forward pass as
//! `mu + softplus(rho) * xi` with `xi ~ N(0, 1)` held constant in the graph.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Array, Graph, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Gaussian parameters use their means.
    Frozen,
    /// Gaussian parameters are sampled.
    Open,
}

/// One reparameterized draw of a Gaussian parameter.
#[derive(Clone, Copy, Debug)]
pub struct SampledWeight<'g> {
    pub mu: Var<'g>,
    pub rho: Var<'g>,
    pub weight: Var<'g>,
}

enum Noise {
    Rng(ChaCha8Rng),
    Fixed(BTreeMap<String, Array>),
}

pub struct Binder<'g, 'p> {
    graph: &'g Graph,
    store: &'p ParamStore,
    mode: WeightMode,
    noise: RefCell<Noise>,
    cache: RefCell<HashMap<String, Var<'g>>>,
    sampled: RefCell<Vec<(String, SampledWeight<'g>)>>,
}

impl<'g, 'p> Binder<'g, 'p> {
    /// Frozen binder: deterministic parameters as-is, Gaussian ones at their means.
    pub fn frozen(graph: &'g Graph, store: &'p ParamStore) -> Self {
        Self::build(graph, store, WeightMode::Frozen, Noise::Rng(ChaCha8Rng::seed_from_u64(0)))
    }

    /// Open binder drawing noise from a stream seeded with `seed`.
    pub fn open(graph: &'g Graph, store: &'p ParamStore, seed: u64) -> Self {
        Self::build(graph, store, WeightMode::Open, Noise::Rng(ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Open binder with caller-supplied noise per Gaussian parameter name.
    pub fn open_with_noise(
        graph: &'g Graph,
        store: &'p ParamStore,
        noise: BTreeMap<String, Array>,
    ) -> Self {
        Self::build(graph, store, WeightMode::Open, Noise::Fixed(noise))
    }

    pub fn with_mode(graph: &'g Graph, store: &'p ParamStore, mode: WeightMode, seed: u64) -> Self {
        match mode {
            WeightMode::Frozen => Self::frozen(graph, store),
            WeightMode::Open => Self::open(graph, store, seed),
        }
    }

    fn build(graph: &'g Graph, store: &'p ParamStore, mode: WeightMode, noise: Noise) -> Self {
        Binder {
            graph,
            store,
            mode,
            noise: RefCell::new(noise),
            cache: RefCell::new(HashMap::new()),
            sampled: RefCell::new(Vec::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    /// Graph node for parameter `name`; a Gaussian parameter is sampled at
    /// most once per binder.
    pub fn get(&self, name: &str) -> Result<Var<'g>> {
        if let Ok(a) = self.store.get(name) {
            return Ok(self.graph.param(name, a));
        }
        let mu_name = format!("{name}.mu");
        let rho_name = format!("{name}.rho");
        if !self.store.contains(&mu_name) {
            return Err(Error::UnknownParam(name.to_string()));
        }
        let mu = self.graph.param(&mu_name, self.store.get(&mu_name)?);
        if self.mode == WeightMode::Frozen {
            return Ok(mu);
        }
        if let Some(&v) = self.cache.borrow().get(name) {
            return Ok(v);
        }
        let rho_value = self.store.get(&rho_name)?;
        let rho = self.graph.param(&rho_name, rho_value);
        let xi = match &mut *self.noise.borrow_mut() {
            Noise::Rng(rng) => standard_normal(rho_value.shape(), rng),
            Noise::Fixed(map) => map
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnknownParam(format!("noise for {name}")))?,
        };
        if xi.shape() != rho_value.shape() {
            return Err(Error::shape("sample_weights", &[xi.shape(), rho_value.shape()]));
        }
        let xi = self.graph.constant(xi);
        let weight = rho.softplus().mul(xi)?.add(mu)?;
        self.cache.borrow_mut().insert(name.to_string(), weight);
        self.sampled.borrow_mut().push((
            name.to_string(),
            SampledWeight { mu, rho, weight },
        ));
        Ok(weight)
    }

    /// Gaussian parameters sampled so far, in draw order.
    pub fn sampled(&self) -> Vec<(String, SampledWeight<'g>)> {
        self.sampled.borrow().clone()
    }
}

pub(crate) fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
    Array::from_fn(shape, |_| StandardNormal.sample(rng))
}
