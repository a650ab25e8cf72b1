//! Named parameter collections, graph binding and the Adam optimizer.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Graph, Mat, Var};

/// An ordered map of named matrices. Iteration order is lexicographic, which
/// keeps checkpoints and optimizer updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Mat>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    /// Panicking lookup for names the owning model created itself.
    pub fn expect(&self, name: &str) -> &Mat {
        self.tensors.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Mat> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    pub fn extend(&mut self, other: Params) {
        self.tensors.extend(other.tensors);
    }

    /// SHA-256 over names, shapes and the exact bit patterns of the values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl FromIterator<(String, Mat)> for Params {
    fn from_iter<T: IntoIterator<Item = (String, Mat)>>(iter: T) -> Self {
        Self { tensors: iter.into_iter().collect() }
    }
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Mat>;

/// Parameters placed on a graph as leaves.
#[derive(Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
    trainable: Vec<String>,
}

impl Bound {
    /// Adds every tensor of `params` to `g`; names accepted by `trainable`
    /// become differentiable leaves, the rest constants.
    pub fn new(g: &mut Graph, params: &Params, trainable: impl Fn(&str) -> bool) -> Self {
        let mut b = Self::default();
        b.add(g, params, trainable);
        b
    }

    pub fn add(&mut self, g: &mut Graph, params: &Params, trainable: impl Fn(&str) -> bool) {
        for (name, m) in params.iter() {
            let var = if trainable(name) {
                self.trainable.push(name.clone());
                g.param(m.clone())
            } else {
                g.input(m.clone())
            };
            self.vars.insert(name.clone(), var);
        }
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn trainable_names(&self) -> &[String] {
        &self.trainable
    }

    /// Extracts gradients of all trainable leaves; unreached leaves get zeros.
    pub fn grads(&self, g: &Graph, grads: &mut Gradients) -> GradMap {
        self.trainable
            .iter()
            .map(|name| {
                let v = self.vars[name];
                let grad = grads.take(v).unwrap_or_else(|| Mat::zeros(g.shape(v)));
                (name.clone(), grad)
            })
            .collect()
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Applies one update to every parameter named in `grads`.
    pub fn step(&mut self, params: &mut Params, grads: &GradMap) {
        self.step_in(&mut [params], grads);
    }

    /// Like [`Adam::step`] for parameters spread over several collections;
    /// each gradient updates the first collection holding its name.
    pub fn step_in(&mut self, stores: &mut [&mut Params], grads: &GradMap) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        if lr == 0.0 {
            return;
        }
        for (name, g) in grads {
            let p = stores
                .iter_mut()
                .find_map(|s| s.get_mut(name))
                .unwrap_or_else(|| panic!("optimizer: unknown parameter `{name}`"));
            let m = self.m.entry(name.clone()).or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Mat::zeros(g.dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Mat {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    Mat::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Sum of squared entries over all gradients; used for finiteness checks.
pub fn grad_norm_sq(grads: &GradMap) -> f64 {
    grads.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut p = Params::new();
        p.insert("w", Mat::from_elem((2, 2), 0.3));
        let before = p.clone();
        let mut grads = GradMap::new();
        grads.insert("w".into(), Mat::from_elem((2, 2), 5.0));
        let mut opt = Adam::new(0.0);
        opt.step(&mut p, &grads);
        assert_eq!(p.checksum(), before.checksum());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Params::new();
        p.insert("w", Mat::zeros((1, 1)));
        let mut grads = GradMap::new();
        grads.insert("w".into(), Mat::from_elem((1, 1), 2.0));
        Adam::new(0.1).step(&mut p, &grads);
        assert!((p.expect("w")[[0, 0]] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn checksum_tracks_bits() {
        let mut p = Params::new();
        p.insert("a", Mat::zeros((1, 2)));
        let c0 = p.checksum();
        p.get_mut("a").unwrap()[[0, 1]] = -0.0;
        assert_ne!(c0, p.checksum());
    }
}
