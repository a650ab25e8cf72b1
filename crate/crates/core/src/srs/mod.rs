//! Sequential recommendation: item embedding sources, backbones, the
//! next-item BCE objective and the collaborative training loop.

pub mod backbone;
pub mod dataset;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::params::{grad_norm_sq, normal_matrix, Adam, Bound, Params};
use crate::rat::Adapter;

pub use backbone::{score_items, Backbone, BackboneConfig, BackboneKind, Dropout};
pub use dataset::{InteractionDataset, UserSequence};

pub const ITEM_EMBEDDING: &str = "item_embedding";
pub const FROZEN_TABLE: &str = "frozen_table";

/// Where item vectors of width `d` come from.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingSource {
    /// A trainable `|V| × d` table stored under [`ITEM_EMBEDDING`].
    LearnedTable(Params),
    /// Reduced text embeddings (`|V| × d_m`, stored under [`FROZEN_TABLE`])
    /// mapped through an adapter. With `train_frozen` unset the table is a
    /// graph constant and never receives an update.
    AdaptedFrozen { frozen: Params, adapter: Adapter, train_frozen: bool },
}

impl EmbeddingSource {
    pub fn learned(n_items: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        p.insert(ITEM_EMBEDDING, normal_matrix(n_items, d, 1.0 / (d as f64).sqrt(), &mut rng));
        Self::LearnedTable(p)
    }

    pub fn from_table(table: Mat) -> Self {
        let mut p = Params::new();
        p.insert(ITEM_EMBEDDING, table);
        Self::LearnedTable(p)
    }

    pub fn adapted(frozen: Mat, adapter: Adapter, train_frozen: bool) -> Result<Self> {
        if frozen.ncols() != adapter.input_dim() {
            return Err(Error::Shape(format!("frozen table width {} but adapter expects {}", frozen.ncols(), adapter.input_dim())));
        }
        let mut p = Params::new();
        p.insert(FROZEN_TABLE, frozen);
        Ok(Self::AdaptedFrozen { frozen: p, adapter, train_frozen })
    }

    pub fn n_items(&self) -> usize {
        match self {
            Self::LearnedTable(p) => p.expect(ITEM_EMBEDDING).nrows(),
            Self::AdaptedFrozen { frozen, .. } => frozen.expect(FROZEN_TABLE).nrows(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Self::LearnedTable(p) => p.expect(ITEM_EMBEDDING).ncols(),
            Self::AdaptedFrozen { adapter, .. } => adapter.output_dim(),
        }
    }

    pub fn frozen_table(&self) -> Option<&Mat> {
        match self {
            Self::LearnedTable(_) => None,
            Self::AdaptedFrozen { frozen, .. } => frozen.get(FROZEN_TABLE),
        }
    }

    /// Full `|V| × d` item table.
    pub fn table(&self) -> Result<Mat> {
        match self {
            Self::LearnedTable(p) => Ok(p.expect(ITEM_EMBEDDING).clone()),
            Self::AdaptedFrozen { frozen, adapter, .. } => adapter.forward(frozen.expect(FROZEN_TABLE)),
        }
    }

    /// Places the source on `g` and returns the table node.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> (Bound, Var) {
        match self {
            Self::LearnedTable(p) => {
                let b = Bound::new(g, p, |_| trainable);
                let t = b.var(ITEM_EMBEDDING);
                (b, t)
            }
            Self::AdaptedFrozen { frozen, adapter, train_frozen } => {
                let mut b = Bound::new(g, frozen, |_| trainable && *train_frozen);
                b.add(g, &adapter.params, |_| trainable);
                let t = adapter.graph(g, &b, b.var(FROZEN_TABLE));
                (b, t)
            }
        }
    }

    /// Parameter stores an optimizer may touch.
    pub fn stores_mut(&mut self) -> Vec<&mut Params> {
        match self {
            Self::LearnedTable(p) => vec![p],
            Self::AdaptedFrozen { frozen, adapter, .. } => vec![&mut adapter.params, frozen],
        }
    }
}

/// Backbone plus item embedding source.
#[derive(Clone, Debug, PartialEq)]
pub struct SrsModel {
    pub backbone: Backbone,
    pub source: EmbeddingSource,
}

impl SrsModel {
    pub fn new(backbone: Backbone, source: EmbeddingSource) -> Result<Self> {
        if backbone.config.d != source.width() {
            return Err(Error::Shape(format!("backbone width {} but item embeddings have width {}", backbone.config.d, source.width())));
        }
        Ok(Self { backbone, source })
    }

    /// Representation of each history's final position, `users × d`.
    pub fn user_representations(&self, histories: &[&[usize]]) -> Result<Mat> {
        self.backbone.user_representations(&self.source.table()?, histories)
    }
}

/// `−log σ(s_pos) − log(1 − σ(s_neg))` averaged over positions.
pub fn bce_next_item_loss(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::Shape("positive and negative score lists must be non-empty and equally long".into()));
    }
    let sp = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    Ok(pos.iter().zip(neg).map(|(&p, &n)| sp(-p) + sp(n)).sum::<f64>() / pos.len() as f64)
}

/// Uniform draw from items absent from `exclude`.
pub fn sample_absent(n_items: usize, exclude: &HashSet<usize>, rng: &mut impl Rng) -> Result<usize> {
    if exclude.len() >= n_items {
        return Err(Error::Data(format!("no negative available: user covers all {n_items} items")));
    }
    loop {
        let c = rng.random_range(0..n_items);
        if !exclude.contains(&c) {
            return Ok(c);
        }
    }
}

/// Graph nodes of one batch's next-item objective.
pub struct BatchTerms {
    pub srs_loss: Var,
    pub table: Var,
    /// Item ids of every occupied position (inputs plus final target) of
    /// every training window in the batch, in batch order.
    pub window_items: Vec<usize>,
    pub positions: usize,
}

/// Builds the BCE next-item loss for the train prefixes of `batch`.
///
/// Users whose train prefix is shorter than two items contribute nothing;
/// returns `None` if no user contributes.
pub fn bce_batch(
    g: &mut Graph,
    backbone: &Backbone,
    backbone_bound: &Bound,
    table: Var,
    batch: &[&UserSequence],
    rng: &mut ChaCha8Rng,
    train_mode: bool,
) -> Result<Option<BatchTerms>> {
    let n_items = g.shape(table).0;
    let window_len = backbone.config.max_seq_len + 1;
    let (mut inputs, mut targets, mut negatives, mut lengths, mut window_items) = (vec![], vec![], vec![], vec![], vec![]);
    for u in batch {
        let train = u.train();
        if train.len() < 2 {
            continue;
        }
        let window = &train[train.len().saturating_sub(window_len)..];
        let seen: HashSet<usize> = u.items.iter().copied().collect();
        inputs.extend_from_slice(&window[..window.len() - 1]);
        targets.extend_from_slice(&window[1..]);
        for _ in 1..window.len() {
            negatives.push(sample_absent(n_items, &seen, rng)?);
        }
        lengths.push(window.len() - 1);
        window_items.extend_from_slice(window);
    }
    if lengths.is_empty() {
        return Ok(None);
    }
    let positions = targets.len();
    let x = g.gather_rows(table, inputs);
    let drop = (train_mode && backbone.config.dropout > 0.0).then(|| Dropout { p: backbone.config.dropout, rng });
    let h = backbone.forward_packed(g, backbone_bound, x, &lengths, drop)?;
    let pos_e = g.gather_rows(table, targets);
    let neg_e = g.gather_rows(table, negatives);
    let s_pos = g.row_dot(h, pos_e);
    let s_neg = g.row_dot(h, neg_e);
    let s_pos = g.scale(s_pos, -1.0);
    let l_pos = g.softplus(s_pos);
    let l_neg = g.softplus(s_neg);
    let l_pos = g.mean(l_pos);
    let l_neg = g.mean(l_neg);
    let srs_loss = g.add(l_pos, l_neg);
    Ok(Some(BatchTerms { srs_loss, table, window_items, positions }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrsConfig {
    pub backbone: BackboneConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SrsConfig {
    fn default() -> Self {
        Self { backbone: BackboneConfig::default(), epochs: 30, batch_size: 128, learning_rate: 1e-3, seed: 42 }
    }
}

impl SrsConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub srs_loss: f64,
    pub extra_loss: f64,
}

/// An additional weighted loss term built on top of a batch's terms.
/// Returns `(weighted term, unweighted value)`.
pub type ExtraTerm<'a> = dyn FnMut(&mut Graph, &Bound, &BatchTerms) -> Result<Option<(Var, f64)>> + 'a;

/// Joint training of the backbone and the embedding source on next-item BCE
/// plus an optional extra term.
pub fn train_model(model: &mut SrsModel, dataset: &InteractionDataset, config: &SrsConfig, extra: Option<&mut ExtraTerm<'_>>) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if dataset.n_items() != model.source.n_items() {
        return Err(Error::Shape(format!("dataset has {} items, embedding source {}", dataset.n_items(), model.source.n_items())));
    }
    let mut extra = extra;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_srs, mut sum_extra, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&UserSequence> = chunk.iter().map(|&i| &dataset.users()[i]).collect();
            let mut g = Graph::new();
            let bound = model.backbone.bind(&mut g, true);
            let (source_bound, table) = model.source.bind(&mut g, true);
            let Some(terms) = bce_batch(&mut g, &model.backbone, &bound, table, &batch, &mut rng, true)? else { continue };
            let srs = g.scalar(terms.srs_loss);
            if !srs.is_finite() {
                return Err(Error::Numerical(format!("recommendation loss is {srs} at epoch {epoch}")));
            }
            let mut total = terms.srs_loss;
            let mut extra_value = 0.0;
            if let Some(f) = extra.as_mut() {
                if let Some((term, raw)) = f(&mut g, &source_bound, &terms)? {
                    if !raw.is_finite() {
                        return Err(Error::Numerical(format!("alignment loss is {raw} at epoch {epoch}")));
                    }
                    extra_value = raw;
                    total = g.add(total, term);
                }
            }
            let value = g.scalar(total);
            let mut grads = g.backward(total);
            let mut gm = bound.grads(&g, &mut grads);
            gm.extend(source_bound.grads(&g, &mut grads));
            if !grad_norm_sq(&gm).is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient at epoch {epoch}")));
            }
            let mut stores = model.source.stores_mut();
            stores.insert(0, &mut model.backbone.params);
            opt.step_in(&mut stores, &gm);
            sum += value;
            sum_srs += srs;
            sum_extra += extra_value;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let rec = EpochRecord { epoch, loss: sum / n, srs_loss: sum_srs / n, extra_loss: sum_extra / n };
        log::info!("srs epoch {epoch}: loss {:.5} (bce {:.5}, extra {:.5})", rec.loss, rec.srs_loss, rec.extra_loss);
        history.push(rec);
    }
    Ok(history)
}

/// Output of collaborative pretraining: the learned table is `ẽ` and the
/// whole model is the baseline without text embeddings.
pub struct CollaborativeOutcome {
    pub model: SrsModel,
    pub history: Vec<EpochRecord>,
}

impl CollaborativeOutcome {
    pub fn item_table(&self) -> Mat {
        match &self.model.source {
            EmbeddingSource::LearnedTable(p) => p.expect(ITEM_EMBEDDING).clone(),
            EmbeddingSource::AdaptedFrozen { .. } => unreachable!("collaborative model uses a learned table"),
        }
    }
}

pub fn train_collaborative(dataset: &InteractionDataset, config: &SrsConfig) -> Result<CollaborativeOutcome> {
    config.validate()?;
    let backbone = Backbone::init(config.backbone.clone(), config.seed)?;
    let source = EmbeddingSource::learned(dataset.n_items(), config.backbone.d, config.seed.wrapping_add(1));
    let mut model = SrsModel::new(backbone, source)?;
    let history = train_model(&mut model, dataset, config, None)?;
    Ok(CollaborativeOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        assert!((bce_next_item_loss(&[0.0], &[0.0]).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expect = -sig(2.0).ln() - (1.0 - sig(-1.0)).ln();
        assert!((bce_next_item_loss(&[2.0], &[-1.0]).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.4402).abs() < 1e-4);
        assert!(bce_next_item_loss(&[60.0], &[-60.0]).unwrap() < 1e-20);
        assert!(bce_next_item_loss(&[], &[]).is_err());
    }

    #[test]
    fn negative_sampling_avoids_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex: HashSet<usize> = [0, 2, 3].into_iter().collect();
        for _ in 0..200 {
            let c = sample_absent(5, &ex, &mut rng).unwrap();
            assert!(c == 1 || c == 4);
        }
        let all: HashSet<usize> = (0..3).collect();
        assert!(matches!(sample_absent(3, &all, &mut rng), Err(Error::Data(_))));
    }

    fn tiny_dataset() -> InteractionDataset {
        let users = (0..12u64)
            .map(|u| UserSequence { user_id: u, items: (0..6).map(|k| ((u as usize) + 2 * k) % 15).collect() })
            .collect();
        InteractionDataset::new(15, users).unwrap()
    }

    #[test]
    fn zero_lr_keeps_initialization_and_seed_repeats() {
        let ds = tiny_dataset();
        let cfg = SrsConfig { backbone: BackboneConfig { d: 8, ..Default::default() }, epochs: 2, batch_size: 4, learning_rate: 0.0, seed: 3 };
        let init = EmbeddingSource::learned(15, 8, 4);
        let out = train_collaborative(&ds, &cfg).unwrap();
        assert_eq!(out.model.source, init);
        let cfg = SrsConfig { learning_rate: 1e-2, ..cfg };
        let a = train_collaborative(&ds, &cfg).unwrap();
        let b = train_collaborative(&ds, &cfg).unwrap();
        assert_eq!(a.item_table(), b.item_table());
        assert_ne!(a.item_table(), init.table().unwrap());
    }

    #[test]
    fn loss_matches_scalar_reference() {
        let ds = tiny_dataset();
        let backbone = Backbone::init(BackboneConfig { d: 4, dropout: 0.0, ..Default::default() }, 5).unwrap();
        let source = EmbeddingSource::learned(15, 4, 6);
        let table = source.table().unwrap();
        let batch: Vec<&UserSequence> = ds.users().iter().take(3).collect();
        let mut g = Graph::new();
        let bound = backbone.bind(&mut g, false);
        let (_, t) = source.bind(&mut g, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let terms = bce_batch(&mut g, &backbone, &bound, t, &batch, &mut rng, false).unwrap().unwrap();

        // Replay the same negative draws and score every prefix separately.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut pos, mut neg) = (vec![], vec![]);
        for u in &batch {
            let train = u.train();
            let seen: HashSet<usize> = u.items.iter().copied().collect();
            for t in 1..train.len() {
                let n = sample_absent(15, &seen, &mut rng).unwrap();
                let rep = backbone.user_representations(&table, &[&train[..t]]).unwrap();
                let r = rep.row(0);
                pos.push(r.dot(&table.row(train[t])));
                neg.push(r.dot(&table.row(n)));
            }
        }
        assert_eq!(terms.positions, pos.len());
        let reference = bce_next_item_loss(&pos, &neg).unwrap();
        assert!((g.scalar(terms.srs_loss) - reference).abs() < 1e-10);
    }
}
