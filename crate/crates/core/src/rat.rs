//! Recommendation adaptation: the adapter over frozen reduced text
//! embeddings, collaborative alignment and joint training with a backbone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::catalog::{Catalog, PromptTemplate};
use crate::encoder::TextEmbedder;
use crate::error::{Error, Result};
use crate::params::{normal_matrix, Bound, Params};
use crate::reduce::PcaModel;
use crate::scft::{directional_cl_loss, symmetric_contrastive};
use crate::srs::{
    bce_batch, train_model, Backbone, BackboneConfig, BatchTerms, EmbeddingSource, EpochRecord, InteractionDataset, SrsConfig,
    SrsModel, UserSequence,
};
use crate::tensor_io::TensorFile;

pub const W1: &str = "adapter.w1";
pub const B1: &str = "adapter.b1";
pub const W2: &str = "adapter.w2";
pub const B2: &str = "adapter.b2";

/// Two stacked affine maps `x ↦ W1 (W2 x + b2) + b1`, with an optional GELU
/// between them. `W1` is `d × d_m/2`, `W2` is `d_m/2 × d_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub params: Params,
    pub activation: bool,
}

impl Adapter {
    pub fn init(d_m: usize, d: usize, activation: bool, seed: u64) -> Result<Self> {
        if d_m == 0 || d_m % 2 != 0 || d == 0 {
            return Err(Error::Config(format!("adapter needs an even positive input width, got d_m = {d_m}")));
        }
        let h = d_m / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        p.insert(W2, normal_matrix(h, d_m, 1.0 / (d_m as f64).sqrt(), &mut rng));
        p.insert(B2, Mat::zeros((1, h)));
        p.insert(W1, normal_matrix(d, h, 1.0 / (h as f64).sqrt(), &mut rng));
        p.insert(B1, Mat::zeros((1, d)));
        Ok(Self { params: p, activation })
    }

    pub fn from_params(params: Params, activation: bool) -> Result<Self> {
        let get = |n: &str| params.get(n).ok_or_else(|| Error::Config(format!("adapter tensor `{n}` missing")));
        let (w1, b1, w2, b2) = (get(W1)?, get(B1)?, get(W2)?, get(B2)?);
        let h = w2.nrows();
        let (d, d_m) = (w1.nrows(), w2.ncols());
        if d_m % 2 != 0 || h != d_m / 2 || w1.ncols() != h || b2.dim() != (1, h) || b1.dim() != (1, d) {
            return Err(Error::Shape("adapter tensors have inconsistent shapes".into()));
        }
        Ok(Self { params, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.params.expect(W2).ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.params.expect(W1).nrows()
    }

    /// Row-wise `(x W2ᵀ + b2) W1ᵀ + b1`.
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!("adapter expects {} columns, got {}", self.input_dim(), x.ncols())));
        }
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &self.params, |_| false);
        let xv = g.input(x.clone());
        let out = self.graph(&mut g, &b, xv);
        Ok(g.value(out).clone())
    }

    /// The adapter on the graph; parameters come from `bound`.
    pub fn graph(&self, g: &mut Graph, bound: &Bound, x: Var) -> Var {
        let h = g.matmul_t(x, bound.var(W2));
        let mut h = g.add_row(h, bound.var(B2));
        if self.activation {
            h = g.gelu(h);
        }
        let o = g.matmul_t(h, bound.var(W1));
        g.add_row(o, bound.var(B1))
    }

    pub fn write_to(&self, f: &mut TensorFile) {
        f.push_vec("adapter_meta.activation", &[if self.activation { 1.0 } else { 0.0 }]);
        f.push_params("", &self.params);
    }

    pub fn read_from(f: &TensorFile) -> Result<Self> {
        let activation = f.vec("adapter_meta.activation")?.first().copied().unwrap_or(0.0) != 0.0;
        let params: Params = [W1, B1, W2, B2].iter().map(|n| Ok((n.to_string(), f.mat(n)?))).collect::<Result<_>>()?;
        Self::from_params(params, activation)
    }
}

pub fn adapter_forward(reduced: &Mat, adapter: &Adapter) -> Result<Mat> {
    adapter.forward(reduced)
}

/// Symmetric in-batch contrastive loss between adapter outputs and
/// collaborative targets with temperature `γ`.
pub fn align_loss(e: &Mat, target: &Mat, gamma: f64) -> Result<f64> {
    Ok(directional_cl_loss(e, target, gamma)? + directional_cl_loss(target, e, gamma)?)
}

/// [`align_loss`] on the graph; `target` enters as a constant.
pub fn align_loss_graph(g: &mut Graph, e: Var, target: &Mat, gamma: f64) -> Result<Var> {
    let (rows, cols) = g.shape(e);
    if target.dim() != (rows, cols) {
        return Err(Error::Shape(format!("alignment rows {:?} vs targets {:?}", (rows, cols), target.dim())));
    }
    if rows < 2 {
        return Err(Error::Config("alignment needs at least 2 rows".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("alignment temperature {gamma} must be positive")));
    }
    let t = g.input(target.clone());
    let tau = g.constant_scalar(gamma);
    Ok(symmetric_contrastive(g, e, t, tau, false))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep the reduced text table fixed; unset for the "w/o freeze" ablation.
    pub freeze: bool,
    /// Use each distinct item once per batch in the alignment term.
    pub dedup: bool,
    /// Insert a GELU between the two adapter maps.
    pub activation: bool,
}

impl Default for RatConfig {
    fn default() -> Self {
        Self { alpha: 1e-2, gamma: 2.0, epochs: 30, learning_rate: 1e-3, batch_size: 128, seed: 42, freeze: true, dedup: false, activation: false }
    }
}

impl RatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma {} must be positive", self.gamma)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be non-negative", self.alpha)));
        }
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config("rat learning_rate must be non-negative and batch_size positive".into()));
        }
        Ok(())
    }

    fn srs(&self, backbone: &BackboneConfig) -> SrsConfig {
        SrsConfig { backbone: backbone.clone(), epochs: self.epochs, batch_size: self.batch_size, learning_rate: self.learning_rate, seed: self.seed }
    }
}

/// Alignment term for one batch: adapter outputs of the batch's occupied
/// positions against the matching rows of `ẽ`. Returns `(α·L_align, L_align)`.
pub fn align_term(g: &mut Graph, terms: &BatchTerms, collab: &Mat, config: &RatConfig) -> Result<Option<(Var, f64)>> {
    if config.alpha == 0.0 {
        return Ok(None);
    }
    let mut rows = terms.window_items.clone();
    if config.dedup {
        let mut seen = std::collections::HashSet::new();
        rows.retain(|i| seen.insert(*i));
    }
    if rows.len() < 2 {
        return Ok(None);
    }
    let target = collab.select(ndarray::Axis(0), &rows);
    let e = g.gather_rows(terms.table, rows);
    let loss = align_loss_graph(g, e, &target, config.gamma)?;
    let raw = g.scalar(loss);
    Ok(Some((g.scale(loss, config.alpha), raw)))
}

/// One batch's joint objective `L_SRS + α L_align`, built on a fresh graph
/// with backbone and adapter as trainable leaves.
pub struct JointObjective {
    pub graph: Graph,
    pub total: Var,
    pub srs_loss: f64,
    pub align_loss: Option<f64>,
    pub backbone: Bound,
    pub source: Bound,
}

pub fn joint_objective(model: &SrsModel, batch: &[&UserSequence], collab: &Mat, config: &RatConfig, rng: &mut ChaCha8Rng, train_mode: bool) -> Result<Option<JointObjective>> {
    let mut g = Graph::new();
    let backbone = model.backbone.bind(&mut g, true);
    let (source, table) = model.source.bind(&mut g, true);
    let Some(terms) = bce_batch(&mut g, &model.backbone, &backbone, table, batch, rng, train_mode)? else { return Ok(None) };
    let srs_loss = g.scalar(terms.srs_loss);
    let (total, align_loss) = match align_term(&mut g, &terms, collab, config)? {
        Some((term, raw)) => (g.add(terms.srs_loss, term), Some(raw)),
        None => (terms.srs_loss, None),
    };
    Ok(Some(JointObjective { graph: g, total, srs_loss, align_loss, backbone, source }))
}

pub struct RatOutcome {
    pub model: SrsModel,
    pub history: Vec<EpochRecord>,
}

/// Trains a fresh backbone and adapter over the reduced table `reduced`
/// (`|V| × d_m`) with alignment to `collab` (`|V| × d`).
pub fn train_rat(dataset: &InteractionDataset, reduced: &Mat, collab: &Mat, backbone: &BackboneConfig, config: &RatConfig) -> Result<RatOutcome> {
    config.validate()?;
    if reduced.nrows() != dataset.n_items() || collab.nrows() != dataset.n_items() {
        return Err(Error::Shape(format!(
            "tables have {} and {} rows for {} items",
            reduced.nrows(),
            collab.nrows(),
            dataset.n_items()
        )));
    }
    if collab.ncols() != backbone.d {
        return Err(Error::Shape(format!("collaborative width {} vs backbone width {}", collab.ncols(), backbone.d)));
    }
    let adapter = Adapter::init(reduced.ncols(), backbone.d, config.activation, config.seed.wrapping_add(2))?;
    let source = EmbeddingSource::adapted(reduced.clone(), adapter, !config.freeze)?;
    let mut model = SrsModel::new(Backbone::init(backbone.clone(), config.seed)?, source)?;
    let mut extra = |g: &mut Graph, _: &Bound, terms: &BatchTerms| align_term(g, terms, collab, config);
    let history = train_model(&mut model, dataset, &config.srs(backbone), Some(&mut extra))?;
    Ok(RatOutcome { model, history })
}

/// Full prompts → encoder → PCA → adapter, one row per catalog item.
pub fn precompute_cache(catalog: &Catalog, template: &PromptTemplate, encoder: &dyn TextEmbedder, pca: &PcaModel, adapter: &Adapter) -> Result<Mat> {
    let prompts = catalog.prompts(template)?;
    let raw = encoder.embed(&prompts)?;
    let reduced = pca.transform(&raw)?;
    adapter.forward(&reduced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn adapter_from(w1: Mat, b1: Mat, w2: Mat, b2: Mat) -> Adapter {
        let p: Params = [(W1, w1), (B1, b1), (W2, w2), (B2, b2)].into_iter().map(|(n, m)| (n.to_string(), m)).collect();
        Adapter::from_params(p, false).unwrap()
    }

    #[test]
    fn zero_adapter_outputs_zero() {
        let a = adapter_from(Mat::zeros((2, 2)), Mat::zeros((1, 2)), Mat::zeros((2, 4)), Mat::zeros((1, 2)));
        assert!(a.forward(&array![[1.0, 2.0, 3.0, 4.0]]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn selector_composition() {
        let w2 = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let a = adapter_from(Mat::eye(2), Mat::zeros((1, 2)), w2, Mat::zeros((1, 2)));
        assert_eq!(a.forward(&array![[5.0, -3.0, 7.0, 9.0]]).unwrap(), array![[5.0, -3.0]]);
    }

    #[test]
    fn dense_hand_example() {
        let w2 = array![[1.0, 0.0, 2.0, 0.0], [0.0, 1.0, 0.0, -1.0]];
        let b2 = array![[0.5, -0.5]];
        let w1 = array![[1.0, 2.0], [-1.0, 0.0]];
        let b1 = array![[0.1, 0.2]];
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        // W2 x + b2 = [1 + 6 + 0.5, 2 - 4 - 0.5] = [7.5, -2.5]
        // W1 h + b1 = [7.5 - 5 + 0.1, -7.5 + 0.2]
        let out = adapter_from(w1, b1, w2, b2).forward(&x).unwrap();
        assert!((out[[0, 0]] - 2.6).abs() < 1e-12 && (out[[0, 1]] + 7.3).abs() < 1e-12);
    }

    #[test]
    fn adapter_shape_checks() {
        assert!(Adapter::init(5, 4, false, 0).is_err());
        let a = Adapter::init(8, 4, false, 0).unwrap();
        assert!(a.forward(&Mat::zeros((2, 6))).is_err());
        let mut f = TensorFile::new();
        a.write_to(&mut f);
        let back = Adapter::read_from(&f).unwrap();
        assert_eq!(back.params.names().collect::<Vec<_>>(), a.params.names().collect::<Vec<_>>());
    }

    #[test]
    fn align_examples() {
        let eye = Mat::eye(2);
        assert!((align_loss(&eye, &eye, 1.0).unwrap() + 2.0).abs() < 1e-12);
        let e = array![[0.3, -1.0], [2.0, 0.1], [0.5, 0.5]];
        let t = array![[1.0, 0.0], [0.2, 0.9], [-0.4, 0.3]];
        let perm = [2, 0, 1];
        let ep = e.select(ndarray::Axis(0), &perm);
        let tp = t.select(ndarray::Axis(0), &perm);
        assert!((align_loss(&e, &t, 0.7).unwrap() - align_loss(&ep, &tp, 0.7).unwrap()).abs() < 1e-12);
        let big = align_loss(&e, &t, 1e9).unwrap();
        assert!((big - 2.0 * 2f64.ln()).abs() < 1e-6);
        assert!(align_loss(&e.slice(ndarray::s![..1, ..]).to_owned(), &t.slice(ndarray::s![..1, ..]).to_owned(), 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RatConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(RatConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(RatConfig::default().validate().is_ok());
    }
}
