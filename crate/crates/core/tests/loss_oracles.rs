//! Vectorized contrastive losses against scalar double loops.

mod common;

use common::{random_mat, rng};
use llmemb::rat::align_loss;
use llmemb::scft::{directional_cl_loss, scft_loss};
use llmemb::Mat;
use ndarray::array;
use rand::Rng;

const TOL: f64 = 1e-10;

fn dot(a: &Mat, i: usize, b: &Mat, k: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        s += a[[i, c]] * b[[k, c]];
    }
    s
}

/// `-(1/B) Σ_i log( exp(a_i·b_i/τ) / Σ_{k≠i} exp(a_i·b_k/τ) )`.
fn directional_reference(a: &Mat, b: &Mat, tau: f64) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let num = (dot(a, i, b, i) / tau).exp();
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (dot(a, i, b, k) / tau).exp();
            }
        }
        total += (num / den).ln();
    }
    -total / n as f64
}

#[test]
fn vectorized_losses_match_double_loops() {
    let mut r = rng(2024);
    for trial in 0..100 {
        for b in 2..=8 {
            let d = r.random_range(1..6);
            let e1 = random_mat(b, d, 1.5, &mut r);
            let e2 = random_mat(b, d, 1.5, &mut r);
            let tau = r.random_range(0.05..3.0);
            let want = directional_reference(&e1, &e2, tau);
            let got = directional_cl_loss(&e1, &e2, tau).unwrap();
            assert!((got - want).abs() < TOL, "directional trial {trial} B={b}: {got} vs {want}");

            let want = directional_reference(&e1, &e2, tau) + directional_reference(&e2, &e1, tau);
            let got = scft_loss(&e1, &e2, tau).unwrap();
            assert!((got - want).abs() < TOL, "scft trial {trial} B={b}: {got} vs {want}");

            let gamma = r.random_range(0.5..8.0);
            let want = directional_reference(&e1, &e2, gamma) + directional_reference(&e2, &e1, gamma);
            let got = align_loss(&e1, &e2, gamma).unwrap();
            assert!((got - want).abs() < TOL, "align trial {trial} B={b}: {got} vs {want}");
        }
    }
}

#[test]
fn orthonormal_pair_exact_values() {
    let e = array![[1.0, 0.0], [0.0, 1.0]];
    assert_eq!(directional_cl_loss(&e, &e, 1.0).unwrap(), -1.0);
    assert_eq!(scft_loss(&e, &e, 1.0).unwrap(), -2.0);
    assert_eq!(align_loss(&e, &e, 1.0).unwrap(), -2.0);
}
