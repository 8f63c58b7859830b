//! Named parameter storage, deterministic initialization, checksums, and the
//! Adam optimizer used by the training steps.

use std::collections::BTreeMap;

use ndarray::IxDyn;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Arr, Graph, Val};

/// An ordered bag of named tensors. Ordering is lexicographic by name so
/// every walk over the set is deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, ParamTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn to_array(&self) -> Arr {
        Arr::from_shape_vec(IxDyn(&self.shape), self.data.clone()).unwrap()
    }

    pub fn from_array(a: &Arr) -> Self {
        Self {
            shape: a.shape().to_vec(),
            data: a.iter().cloned().collect(),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Arr) {
        self.tensors
            .insert(name.to_string(), ParamTensor::from_array(&value));
    }

    pub fn get(&self, name: &str) -> Arr {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
            .to_array()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn set(&mut self, name: &str, value: Arr) {
        assert!(self.contains(name), "unknown parameter `{name}`");
        self.insert(name, value);
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.tensors.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// SHA-256 over names and little-endian value bytes, in name order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex_digest(h)
    }

    /// Checksum restricted to parameters whose name starts with `prefix`.
    pub fn checksum_prefix(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            if !name.starts_with(prefix) {
                continue;
            }
            h.update(name.as_bytes());
            h.update([0u8]);
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex_digest(h)
    }
}

fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic uniform initializer in `[-limit, limit]` (fan-in scaled).
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Arr {
        let limit = (1.0 / fan_in.max(1) as f64).sqrt();
        let rng = &mut self.rng;
        Arr::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-limit..limit))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Arr {
        Arr::zeros(IxDyn(shape))
    }
}

/// Parameters bound into a graph as leaves, so gradients can be read back by
/// name after `backward`.
pub struct Bound<'g> {
    graph: &'g Graph,
    vals: BTreeMap<String, Val>,
}

impl<'g> Bound<'g> {
    pub fn bind(graph: &'g Graph, params: &ParamSet) -> Self {
        let mut vals = BTreeMap::new();
        for name in params.names() {
            vals.insert(name.to_string(), graph.leaf(params.get(name)));
        }
        Self { graph, vals }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn val(&self, name: &str) -> Val {
        *self
            .vals
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    /// Collect gradients per parameter name from a backward pass.
    pub fn gradients(&self, grads: &[Option<Arr>]) -> BTreeMap<String, Arr> {
        let mut out = BTreeMap::new();
        for (name, val) in &self.vals {
            if let Some(g) = &grads[val.0] {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

/// Adam with fixed hyperparameters (β1=0.9, β2=0.999, ε=1e−8).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Adam {
    lr: f64,
    t: u64,
    m: BTreeMap<String, ParamTensor>,
    v: BTreeMap<String, ParamTensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    /// Apply one update. Only parameters present in `grads` move; the
    /// trainable set is enforced by the caller filtering `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Arr>) {
        self.t += 1;
        let t = self.t as i32;
        for (name, g) in grads {
            let mut p = params.get(name);
            let mut m = self
                .m
                .get(name)
                .map(|t| t.to_array())
                .unwrap_or_else(|| Arr::zeros(g.raw_dim()));
            let mut v = self
                .v
                .get(name)
                .map(|t| t.to_array())
                .unwrap_or_else(|| Arr::zeros(g.raw_dim()));
            m = &m * Self::B1 + g * (1.0 - Self::B1);
            v = &v * Self::B2 + &(g * g) * (1.0 - Self::B2);
            let mhat = &m / (1.0 - Self::B1.powi(t));
            let vhat = &v / (1.0 - Self::B2.powi(t));
            let update = mhat / (vhat.mapv(f64::sqrt) + Self::EPS) * self.lr;
            p -= &update;
            params.set(name, p);
            self.m.insert(name.clone(), ParamTensor::from_array(&m));
            self.v.insert(name.clone(), ParamTensor::from_array(&v));
        }
    }
}

/// Derive a sub-seed from a run seed and a label, so independent RNG streams
/// never overlap.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
