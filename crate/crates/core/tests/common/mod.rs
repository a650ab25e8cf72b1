#![allow(dead_code)]

use llmemb::gradcheck::Tolerance;
use llmemb::params::GradMap;
use llmemb::{Mat, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_mat(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// [`llmemb::gradcheck::check`] with the default tolerances, panicking on
/// the first mismatch.
pub fn check_gradients<M: Clone>(
    model: &M,
    analytic: &GradMap,
    stores: impl Fn(&mut M) -> Vec<&mut Params>,
    loss: impl Fn(&M) -> f64,
    per_tensor: usize,
) -> f64 {
    llmemb::gradcheck::check(model, analytic, stores, loss, per_tensor, Tolerance::default()).unwrap_or_else(|e| panic!("{e}")).worst_rel
}
