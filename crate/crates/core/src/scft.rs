//! Supervised contrastive fine-tuning of the text encoder.
//!
//! Each item is rendered twice with random attribute dropping; the two views
//! are a positive pair and every other item in the batch is a negative.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::catalog::{augment_pair, Catalog, PromptTemplate};
use crate::encoder::{TextEncoder, LOG_TEMPERATURE, TAU_MAX, TAU_MIN};
use crate::error::{Error, Result};
use crate::params::{Adam, Bound};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScftConfig {
    pub batch_size: usize,
    pub drop_ratio: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Length-normalize embeddings before the inner product.
    pub normalize: bool,
    /// Put the positive pair in the denominator too (standard InfoNCE).
    pub include_positive: bool,
}

impl Default for ScftConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            drop_ratio: 0.3,
            epochs: 3,
            learning_rate: 1e-4,
            seed: 42,
            normalize: false,
            include_positive: false,
        }
    }
}

impl ScftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("scft batch_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_ratio) {
            return Err(Error::Config(format!("scft drop_ratio {} outside [0, 1]", self.drop_ratio)));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("scft learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_pair(e1: &Mat, e2: &Mat, tau: f64) -> Result<()> {
    if e1.dim() != e2.dim() {
        return Err(Error::Shape(format!("views have shapes {:?} and {:?}", e1.dim(), e2.dim())));
    }
    if e1.nrows() < 2 {
        return Err(Error::Config("contrastive loss needs a batch of at least 2".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!("temperature {tau} must be positive")));
    }
    Ok(())
}

/// `-(1/B) Σ_i log[exp(e1_i·e2_i/τ) / Σ_{k≠i} exp(e1_i·e2_k/τ)]`.
pub fn directional_cl_loss(e1: &Mat, e2: &Mat, tau: f64) -> Result<f64> {
    directional_cl_loss_with(e1, e2, tau, false)
}

pub fn directional_cl_loss_with(e1: &Mat, e2: &Mat, tau: f64, include_positive: bool) -> Result<f64> {
    check_pair(e1, e2, tau)?;
    let mut g = Graph::new();
    let (a, b) = (g.input(e1.clone()), g.input(e2.clone()));
    let logits = g.matmul_t(a, b);
    let logits = g.scale(logits, 1.0 / tau);
    let loss = g.contrastive(logits, include_positive);
    Ok(g.scalar(loss))
}

/// Both directions summed.
pub fn scft_loss(e1: &Mat, e2: &Mat, tau: f64) -> Result<f64> {
    Ok(directional_cl_loss(e1, e2, tau)? + directional_cl_loss(e2, e1, tau)?)
}

/// Symmetric contrastive objective on the graph; `tau` is a `1 × 1` node.
pub fn symmetric_contrastive(g: &mut Graph, e1: Var, e2: Var, tau: Var, include_positive: bool) -> Var {
    let l12 = g.matmul_t(e1, e2);
    let l12 = g.scalar_div(l12, tau);
    let l21 = g.transpose(l12);
    let a = g.contrastive(l12, include_positive);
    let b = g.contrastive(l21, include_positive);
    g.add(a, b)
}

/// SCFT objective on the graph with `τ = clamp(exp(log_tau))`.
pub fn scft_loss_graph(g: &mut Graph, e1: Var, e2: Var, log_tau: Var, normalize: bool, include_positive: bool) -> Var {
    let (e1, e2) = if normalize { (g.normalize_rows(e1), g.normalize_rows(e2)) } else { (e1, e2) };
    let tau = g.clamped_exp(log_tau, TAU_MIN, TAU_MAX);
    symmetric_contrastive(g, e1, e2, tau, include_positive)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub tau: f64,
}

/// Renders the loss trace as `step,epoch,loss,tau` CSV.
pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("step,epoch,loss,tau\n");
    for r in trace {
        writeln!(out, "{},{},{},{}", r.step, r.epoch, r.loss, r.tau).expect("write to string");
    }
    out
}

pub struct ScftOutcome {
    pub encoder: TextEncoder,
    pub trace: Vec<LossRecord>,
}

impl ScftOutcome {
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.trace.iter().map(|r| r.epoch).max().map_or(0, |e| e + 1);
        (0..epochs)
            .map(|e| {
                let vals: Vec<f64> = self.trace.iter().filter(|r| r.epoch == e).map(|r| r.loss).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    }
}

/// One optimization step on a batch of item indices; returns the loss.
fn scft_step(
    encoder: &mut TextEncoder,
    opt: &mut Adam,
    catalog: &Catalog,
    template: &PromptTemplate,
    batch: &[usize],
    config: &ScftConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut first = Vec::with_capacity(batch.len());
    let mut second = Vec::with_capacity(batch.len());
    for &id in batch {
        let item = catalog.get(id).expect("batch ids come from the catalog");
        let (a, b) = augment_pair(item, template, config.drop_ratio, rng)?;
        first.push(a);
        second.push(b);
    }
    let mut tokens = encoder.tokenize_batch(&first)?;
    tokens.extend(encoder.tokenize_batch(&second)?);

    let mut g = Graph::new();
    let bound: Bound = encoder.bind(&mut g);
    let emb = encoder.forward(&mut g, &bound, &tokens)?;
    let b = batch.len();
    let e1 = g.gather_rows(emb, (0..b).collect::<Vec<_>>());
    let e2 = g.gather_rows(emb, (b..2 * b).collect::<Vec<_>>());
    let loss = scft_loss_graph(&mut g, e1, e2, bound.var(LOG_TEMPERATURE), config.normalize, config.include_positive);
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("scft loss became {value}")));
    }
    let mut grads = g.backward(loss);
    let grads = bound.grads(&g, &mut grads);
    match encoder.lora.as_mut() {
        Some(l) => opt.step_in(&mut [&mut l.tensors, &mut encoder.params.tensors], &grads),
        None => opt.step(&mut encoder.params.tensors, &grads),
    }
    Ok(value)
}

/// Fine-tunes the encoder's trainable parameters on augmented item pairs.
///
/// Items are reshuffled every epoch; a trailing batch smaller than 2 is
/// dropped. Base weights stay untouched when the encoder carries adapters.
pub fn train_scft(
    catalog: &Catalog,
    template: &PromptTemplate,
    encoder: TextEncoder,
    config: &ScftConfig,
) -> Result<ScftOutcome> {
    config.validate()?;
    if catalog.is_empty() {
        return Err(Error::Precondition("scft needs a non-empty catalog".into()));
    }
    template.validate()?;
    let mut encoder = encoder;
    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..catalog.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size).filter(|b| b.len() >= 2) {
            let loss = scft_step(&mut encoder, &mut opt, catalog, template, batch, config, &mut rng)?;
            trace.push(LossRecord { step: trace.len(), epoch, loss, tau: encoder.params.temperature() });
        }
        log::info!(
            "scft epoch {epoch}: mean loss {:.4}",
            trace.iter().filter(|r| r.epoch == epoch).map(|r| r.loss).sum::<f64>()
                / trace.iter().filter(|r| r.epoch == epoch).count().max(1) as f64
        );
    }
    Ok(ScftOutcome { encoder, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Scalar double loop straight from the definition.
    fn reference(e1: &Mat, e2: &Mat, tau: f64) -> f64 {
        let b = e1.nrows();
        let dot = |i: usize, k: usize| (0..e1.ncols()).map(|c| e1[[i, c]] * e2[[k, c]]).sum::<f64>();
        let mut total = 0.0;
        for i in 0..b {
            let num = (dot(i, i) / tau).exp();
            let mut den = 0.0;
            for k in 0..b {
                if k != i {
                    den += (dot(i, k) / tau).exp();
                }
            }
            total += (num / den).ln();
        }
        -total / b as f64
    }

    #[test]
    fn orthonormal_pair_gives_minus_one() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(directional_cl_loss(&e, &e, 1.0).unwrap(), -1.0);
        assert_eq!(scft_loss(&e, &e, 1.0).unwrap(), -2.0);
    }

    #[test]
    fn identical_rows_give_log_b_minus_one() {
        for b in 2..7 {
            let e = Mat::from_elem((b, 3), 0.7);
            let l = directional_cl_loss(&e, &e, 0.5).unwrap();
            assert!((l - ((b - 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn large_temperature_tends_to_uniform() {
        let e1 = array![[1.0, 2.0], [-1.0, 0.5], [0.3, 0.3]];
        let e2 = array![[0.2, -1.0], [1.0, 1.0], [2.0, 0.0]];
        let l = directional_cl_loss(&e1, &e2, 1e9).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn matches_reference_and_is_symmetric() {
        let e1 = array![[0.1, 0.4, -0.3], [0.9, -0.2, 0.5], [-0.6, 0.1, 0.8]];
        let e2 = array![[0.3, -0.1, 0.2], [0.2, 0.7, -0.4], [-0.5, 0.5, 0.1]];
        let l = directional_cl_loss(&e1, &e2, 0.7).unwrap();
        assert!((l - reference(&e1, &e2, 0.7)).abs() < 1e-12);
        assert_eq!(scft_loss(&e1, &e2, 0.7).unwrap(), scft_loss(&e2, &e1, 0.7).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let one = Mat::zeros((1, 2));
        assert!(matches!(directional_cl_loss(&one, &one, 1.0), Err(Error::Config(_))));
        assert!(directional_cl_loss(&Mat::zeros((2, 2)), &Mat::zeros((3, 2)), 1.0).is_err());
        assert!(directional_cl_loss(&Mat::zeros((2, 2)), &Mat::zeros((2, 2)), 0.0).is_err());
        let cfg = ScftConfig { batch_size: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn standard_variant_is_positive() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let l = directional_cl_loss_with(&e, &e, 1.0, true).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_header() {
        let csv = loss_trace_csv(&[LossRecord { step: 0, epoch: 0, loss: 1.5, tau: 1.0 }]);
        assert_eq!(csv, "step,epoch,loss,tau\n0,0,1.5,1\n");
    }
}
