//! Word-level tokenizer and the small pre-norm transformer text encoder.
//!
//! The encoder maps a prompt to the mean of its final-layer token states. It
//! optionally carries low-rank adapter pairs on the attention projections of
//! selected layers; when present, only those pairs and the contrastive
//! temperature are trainable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{pack_segments, Graph, Mat, Segment, Var};
use crate::error::{Error, Result};
use crate::params::{normal_matrix, Bound, Params};
use crate::tensor_io::TensorFile;

pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 100.0;
pub const LOG_TEMPERATURE: &str = "log_temperature";
const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

/// Text in, one embedding row per prompt out.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, prompts: &[String]) -> Result<Mat>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocabulary: BTreeMap<String, usize>,
    pub unk_id: usize,
    pub max_len: usize,
}

pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases and splits on anything that is not alphanumeric.
pub fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

impl Tokenizer {
    pub fn new(vocabulary: BTreeMap<String, usize>, unk_id: usize, max_len: usize) -> Result<Self> {
        let t = Self { vocabulary, unk_id, max_len };
        t.validate()?;
        Ok(t)
    }

    /// Vocabulary of every word in `texts`, sorted, with `<unk>` at id 0.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, max_len: usize) -> Result<Self> {
        let words: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        let mut vocabulary = BTreeMap::new();
        vocabulary.insert(UNK_TOKEN.to_string(), 0);
        for w in words {
            let next = vocabulary.len();
            vocabulary.entry(w).or_insert(next);
        }
        Self::new(vocabulary, 0, max_len)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vocabulary.len();
        let ids: BTreeSet<usize> = self.vocabulary.values().copied().collect();
        if ids.len() != n || ids.iter().next_back().is_some_and(|&m| m + 1 != n) {
            return Err(Error::Config("tokenizer ids must be dense in [0, vocab_size)".into()));
        }
        if self.unk_id >= n {
            return Err(Error::Config(format!("unk_id {} outside vocabulary of {n}", self.unk_id)));
        }
        if self.max_len == 0 {
            return Err(Error::Config("tokenizer max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn tokenize(&self, prompt: &str) -> Result<Vec<usize>> {
        if prompt.is_empty() {
            return Err(Error::Precondition("cannot tokenize an empty prompt".into()));
        }
        let mut ids: Vec<usize> = split_words(prompt)
            .take(self.max_len)
            .map(|w| self.vocabulary.get(&w).copied().unwrap_or(self.unk_id))
            .collect();
        if ids.is_empty() {
            ids.push(self.unk_id);
        }
        Ok(ids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        t.validate()?;
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_token: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_token == 0 || self.vocab_size == 0 || self.max_len == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.n_heads == 0 || self.d_token % self.n_heads != 0 {
            return Err(Error::Config(format!("d_token {} not divisible by {} heads", self.d_token, self.n_heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub scale: f64,
    pub target_layers: Vec<usize>,
}

impl LoraConfig {
    pub fn multiplier(&self) -> f64 {
        self.scale / self.rank as f64
    }
}

/// Encoder weights. Tensor names:
/// `token_embedding`, `position_embedding`, `layers.{l}.{ln1,ln2}.{gamma,beta}`,
/// `layers.{l}.attn.{q,k,v,o}`, `layers.{l}.ffn.{w1,b1,w2,b2}`,
/// `final_ln.{gamma,beta}`, `log_temperature`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tensors: Params,
}

/// Low-rank pairs `layers.{l}.attn.{p}.lora_a` (`r × d`) and `.lora_b` (`d × r`).
#[derive(Clone, Debug, PartialEq)]
pub struct LoraWeights {
    pub config: LoraConfig,
    pub tensors: Params,
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_token;
        let hidden = d * config.ffn_mult;
        let std = 0.02;
        let proj_std = 1.0 / (d as f64).sqrt();
        let mut t = Params::new();
        t.insert("token_embedding", normal_matrix(config.vocab_size, d, 1.0, &mut rng));
        t.insert("position_embedding", normal_matrix(config.max_len, d, std, &mut rng));
        for l in 0..config.n_layers {
            for ln in ["ln1", "ln2"] {
                t.insert(format!("layers.{l}.{ln}.gamma"), Mat::ones((1, d)));
                t.insert(format!("layers.{l}.{ln}.beta"), Mat::zeros((1, d)));
            }
            for p in PROJECTIONS {
                t.insert(format!("layers.{l}.attn.{p}"), normal_matrix(d, d, proj_std, &mut rng));
            }
            t.insert(format!("layers.{l}.ffn.w1"), normal_matrix(hidden, d, proj_std, &mut rng));
            t.insert(format!("layers.{l}.ffn.b1"), Mat::zeros((1, hidden)));
            t.insert(format!("layers.{l}.ffn.w2"), normal_matrix(d, hidden, 1.0 / (hidden as f64).sqrt(), &mut rng));
            t.insert(format!("layers.{l}.ffn.b2"), Mat::zeros((1, d)));
        }
        t.insert("final_ln.gamma", Mat::ones((1, d)));
        t.insert("final_ln.beta", Mat::zeros((1, d)));
        t.insert(LOG_TEMPERATURE, Mat::zeros((1, 1)));
        Ok(Self { config, tensors: t })
    }

    /// `τ = exp(log_temperature)` clamped to `[0.01, 100]`.
    pub fn temperature(&self) -> f64 {
        self.tensors.expect(LOG_TEMPERATURE)[[0, 0]].exp().clamp(TAU_MIN, TAU_MAX)
    }

    /// Every tensor except `log_temperature`.
    pub fn base_weights(&self) -> Params {
        self.tensors.iter().filter(|(n, _)| n.as_str() != LOG_TEMPERATURE).map(|(n, m)| (n.clone(), m.clone())).collect()
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let expect = |name: &str, shape: (usize, usize)| -> Result<()> {
            match self.tensors.get(name) {
                Some(m) if m.dim() == shape => Ok(()),
                Some(m) => Err(Error::Config(format!("encoder tensor `{name}` has shape {:?}, expected {shape:?}", m.dim()))),
                None => Err(Error::Config(format!("encoder tensor `{name}` missing"))),
            }
        };
        let d = c.d_token;
        expect("token_embedding", (c.vocab_size, d))?;
        expect("position_embedding", (c.max_len, d))?;
        for l in 0..c.n_layers {
            for p in PROJECTIONS {
                expect(&format!("layers.{l}.attn.{p}"), (d, d))?;
            }
            expect(&format!("layers.{l}.ffn.w1"), (d * c.ffn_mult, d))?;
            expect(&format!("layers.{l}.ffn.w2"), (d, d * c.ffn_mult))?;
        }
        expect(LOG_TEMPERATURE, (1, 1))
    }
}

impl LoraWeights {
    /// `A ~ N(0, 0.02)`, `B = 0` on the four attention projections of each
    /// target layer.
    pub fn init(encoder: &EncoderConfig, config: LoraConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = encoder.d_token;
        let mut tensors = Params::new();
        for &l in &config.target_layers {
            for p in PROJECTIONS {
                tensors.insert(format!("layers.{l}.attn.{p}.lora_a"), normal_matrix(config.rank, d, 0.02, &mut rng));
                tensors.insert(format!("layers.{l}.attn.{p}.lora_b"), Mat::zeros((d, config.rank)));
            }
        }
        let w = Self { config, tensors };
        w.validate(encoder)?;
        Ok(w)
    }

    pub fn validate(&self, encoder: &EncoderConfig) -> Result<()> {
        let c = &self.config;
        let d = encoder.d_token;
        if c.rank == 0 || c.rank >= d {
            return Err(Error::Config(format!("lora rank {} must be in [1, {d})", c.rank)));
        }
        let mut layers = BTreeSet::new();
        for &l in &c.target_layers {
            if l >= encoder.n_layers || !layers.insert(l) {
                return Err(Error::Config(format!("invalid or repeated lora target layer {l}")));
            }
            for p in PROJECTIONS {
                let a = self.tensors.get(&format!("layers.{l}.attn.{p}.lora_a"));
                let b = self.tensors.get(&format!("layers.{l}.attn.{p}.lora_b"));
                match (a, b) {
                    (Some(a), Some(b)) if a.dim() == (c.rank, d) && b.dim() == (d, c.rank) => {}
                    _ => return Err(Error::Config(format!("lora pair for layer {l} projection {p} has wrong shape"))),
                }
            }
        }
        if self.tensors.len() != c.target_layers.len() * PROJECTIONS.len() * 2 {
            return Err(Error::Config("lora tensors do not match target layers".into()));
        }
        Ok(())
    }
}

/// Tokenizer plus weights; the unit that is checkpointed and shared.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub tokenizer: Tokenizer,
    pub params: EncoderParams,
    pub lora: Option<LoraWeights>,
}

/// Names of the trainable tensors and their total element count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainableView {
    pub names: Vec<String>,
    pub count: usize,
}

impl TextEncoder {
    pub fn new(tokenizer: Tokenizer, params: EncoderParams, lora: Option<LoraWeights>) -> Result<Self> {
        tokenizer.validate()?;
        params.config.validate()?;
        params.check_shapes()?;
        if tokenizer.vocab_size() != params.config.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} tokens but encoder expects {}",
                tokenizer.vocab_size(),
                params.config.vocab_size
            )));
        }
        if let Some(l) = &lora {
            l.validate(&params.config)?;
        }
        Ok(Self { tokenizer, params, lora })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.params.config
    }

    pub fn tokenize_batch(&self, prompts: &[String]) -> Result<Vec<Vec<usize>>> {
        prompts.iter().map(|p| self.tokenizer.tokenize(p)).collect()
    }

    /// With adapters: the low-rank pairs plus `log_temperature`. Without: every
    /// encoder tensor (which includes `log_temperature`).
    pub fn trainable_parameters(&self) -> TrainableView {
        let mut names: Vec<String> = match &self.lora {
            Some(l) => l.tensors.names().cloned().chain([LOG_TEMPERATURE.to_string()]).collect(),
            None => self.params.tensors.names().cloned().collect(),
        };
        names.sort();
        let count = names
            .iter()
            .map(|n| self.params.tensors.get(n).or_else(|| self.lora.as_ref().and_then(|l| l.tensors.get(n))).map_or(0, |m| m.len()))
            .sum();
        TrainableView { names, count }
    }

    /// Binds encoder tensors (and adapters) onto `g`, marking
    /// [`Self::trainable_parameters`] as differentiable.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let view = self.trainable_parameters();
        let trainable = |n: &str| view.names.iter().any(|t| t == n);
        let mut b = Bound::new(g, &self.params.tensors, trainable);
        if let Some(l) = &self.lora {
            b.add(g, &l.tensors, trainable);
        }
        b
    }

    /// Packs token sequences and runs the encoder; returns `B × d_token`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, batch: &[Vec<usize>]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Precondition("encode needs a non-empty batch".into()));
        }
        let c = self.params.config;
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for seq in batch {
            if seq.is_empty() || seq.len() > c.max_len {
                return Err(Error::Precondition(format!("token sequence length {} outside [1, {}]", seq.len(), c.max_len)));
            }
            if let Some(&bad) = seq.iter().find(|&&t| t >= c.vocab_size) {
                return Err(Error::Precondition(format!("token id {bad} outside vocabulary")));
            }
            ids.extend_from_slice(seq);
            positions.extend(0..seq.len());
        }
        let segments: Rc<[Segment]> = pack_segments(batch.iter().map(Vec::len)).into();
        let tok = g.gather_rows(bound.var("token_embedding"), ids);
        let pos = g.gather_rows(bound.var("position_embedding"), positions);
        let mut h = g.add(tok, pos);
        for l in 0..c.n_layers {
            let a = g.layer_norm(h, bound.var(&format!("layers.{l}.ln1.gamma")), bound.var(&format!("layers.{l}.ln1.beta")));
            let q = self.project(g, bound, a, l, "q");
            let k = self.project(g, bound, a, l, "k");
            let v = self.project(g, bound, a, l, "v");
            let att = g.attention(q, k, v, segments.clone(), c.n_heads, true);
            let o = self.project(g, bound, att, l, "o");
            h = g.add(h, o);
            let f = g.layer_norm(h, bound.var(&format!("layers.{l}.ln2.gamma")), bound.var(&format!("layers.{l}.ln2.beta")));
            let f = g.matmul_t(f, bound.var(&format!("layers.{l}.ffn.w1")));
            let f = g.add_row(f, bound.var(&format!("layers.{l}.ffn.b1")));
            let f = g.gelu(f);
            let f = g.matmul_t(f, bound.var(&format!("layers.{l}.ffn.w2")));
            let f = g.add_row(f, bound.var(&format!("layers.{l}.ffn.b2")));
            h = g.add(h, f);
        }
        let h = g.layer_norm(h, bound.var("final_ln.gamma"), bound.var("final_ln.beta"));
        Ok(g.segment_mean(h, segments))
    }

    /// `x Wᵀ`, plus `m · (x Aᵀ) Bᵀ` when the layer carries an adapter pair.
    fn project(&self, g: &mut Graph, bound: &Bound, x: Var, layer: usize, proj: &str) -> Var {
        let base = format!("layers.{layer}.attn.{proj}");
        let y = g.matmul_t(x, bound.var(&base));
        match (&self.lora, bound.try_var(&format!("{base}.lora_a"))) {
            (Some(l), Some(a)) => {
                let b = bound.var(&format!("{base}.lora_b"));
                let xa = g.matmul_t(x, a);
                let delta = g.matmul_t(xa, b);
                let delta = g.scale(delta, l.config.multiplier());
                g.add(y, delta)
            }
            _ => y,
        }
    }

    /// Mean-pooled final-layer states for each prompt, `B × d_token`.
    pub fn encode(&self, prompts: &[String]) -> Result<Mat> {
        if prompts.is_empty() {
            return Err(Error::Precondition("encode needs a non-empty batch".into()));
        }
        let tokens = self.tokenize_batch(prompts)?;
        let mut rows = Vec::with_capacity(prompts.len());
        for chunk in tokens.chunks(128) {
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, &self.params.tensors, |_| false);
            let mut bound = bound;
            if let Some(l) = &self.lora {
                bound.add(&mut g, &l.tensors, |_| false);
            }
            let out = self.forward(&mut g, &bound, chunk)?;
            rows.push(g.value(out).clone());
        }
        let views: Vec<_> = rows.iter().map(|m| m.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("consistent widths"))
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        let c = &self.params.config;
        f.push_vec("meta.n_heads", &[c.n_heads as f64]);
        f.push_vec("meta.ffn_mult", &[c.ffn_mult as f64]);
        f.push_params("encoder.", &self.params.tensors);
        if let Some(l) = &self.lora {
            f.push_vec("meta.lora_scale", &[l.config.scale]);
            f.push_params("lora.", &l.tensors);
        }
        f
    }

    /// Writes the weight checkpoint and the tokenizer JSON next to each other.
    pub fn save(&self, checkpoint: &Path, tokenizer: &Path) -> Result<()> {
        self.to_tensor_file().write(checkpoint)?;
        self.tokenizer.save(tokenizer)
    }

    pub fn from_tensor_file(f: &TensorFile, tokenizer: Tokenizer) -> Result<Self> {
        let meta = |name: &str| -> Result<usize> { Ok(f.vec(name)?.first().copied().unwrap_or(0.0) as usize) };
        let tensors = f.params("encoder.")?;
        let tok = tensors.get("token_embedding").ok_or_else(|| Error::Format("checkpoint lacks token_embedding".into()))?;
        let pos = tensors.get("position_embedding").ok_or_else(|| Error::Format("checkpoint lacks position_embedding".into()))?;
        let n_layers = (0..).take_while(|l| tensors.contains(&format!("layers.{l}.attn.q"))).count();
        let config = EncoderConfig {
            vocab_size: tok.nrows(),
            d_token: tok.ncols(),
            n_layers,
            n_heads: meta("meta.n_heads")?,
            max_len: pos.nrows(),
            ffn_mult: meta("meta.ffn_mult")?,
        };
        let params = EncoderParams { config, tensors };
        let lora_tensors = f.params("lora.")?;
        let lora = if lora_tensors.is_empty() {
            None
        } else {
            let scale = f.vec("meta.lora_scale")?.first().copied().unwrap_or(1.0);
            let rank = lora_tensors.iter().next().map(|(_, m)| m.nrows().min(m.ncols())).unwrap_or(1);
            let target_layers: BTreeSet<usize> = lora_tensors
                .names()
                .filter_map(|n| n.strip_prefix("layers.")?.split('.').next()?.parse().ok())
                .collect();
            let config = LoraConfig { rank, scale, target_layers: target_layers.into_iter().collect() };
            Some(LoraWeights { config, tensors: lora_tensors })
        };
        Self::new(tokenizer, params, lora)
    }

    pub fn load(checkpoint: &Path, tokenizer: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(checkpoint)?, Tokenizer::load(tokenizer)?)
    }
}

impl TextEmbedder for TextEncoder {
    fn dim(&self) -> usize {
        self.params.config.d_token
    }

    fn embed(&self, prompts: &[String]) -> Result<Mat> {
        self.encode(prompts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;

    fn tokenizer() -> Tokenizer {
        let vocab = [("name", 0), ("is", 1), ("blue", 2), ("<unk>", 3)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        Tokenizer::new(vocab, 3, 4).unwrap()
    }

    fn small_encoder(lora_layers: Option<Vec<usize>>, d: usize) -> TextEncoder {
        let tok = Tokenizer::fit(["the cat is on the mat", "a dog is blue"], 16).unwrap();
        let config = EncoderConfig { vocab_size: tok.vocab_size(), d_token: d, n_layers: 2, n_heads: 2, max_len: 16, ffn_mult: 2 };
        let params = EncoderParams::init(config, 1).unwrap();
        let lora = lora_layers.map(|layers| {
            LoraWeights::init(&config, LoraConfig { rank: 4, scale: 8.0, target_layers: layers }, 2).unwrap()
        });
        TextEncoder::new(tok, params, lora).unwrap()
    }

    #[test]
    fn tokenize_lookup_unknown_and_truncation() {
        let t = tokenizer();
        assert_eq!(t.tokenize("name is Blue").unwrap(), vec![0, 1, 2]);
        assert_eq!(t.tokenize("name, is... green").unwrap(), vec![0, 1, 3]);
        assert_eq!(t.tokenize("a b c d e f g h i").unwrap().len(), 4);
        assert_eq!(t.tokenize("?!").unwrap(), vec![3]);
        assert!(matches!(t.tokenize(""), Err(Error::Precondition(_))));
    }

    #[test]
    fn tokenizer_rejects_sparse_ids() {
        let vocab = [("a", 0), ("b", 2)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        assert!(Tokenizer::new(vocab, 0, 4).is_err());
    }

    #[test]
    fn zero_b_lora_matches_plain_encoder() {
        let with = small_encoder(Some(vec![0, 1]), 16);
        let without = TextEncoder { lora: None, ..with.clone() };
        let prompts = vec!["the cat is blue".to_string(), "a dog".to_string()];
        assert_eq!(with.encode(&prompts).unwrap(), without.encode(&prompts).unwrap());
    }

    #[test]
    fn single_token_prompt_pools_to_its_state() {
        let enc = small_encoder(None, 16);
        let mut g = Graph::new();
        let b = enc.bind(&mut g);
        let out = enc.forward(&mut g, &b, &[vec![3]]).unwrap();
        assert_eq!(g.shape(out), (1, 16));
        let direct = enc.encode(&["cat".to_string()]).unwrap();
        let ids = enc.tokenizer.tokenize("cat").unwrap();
        assert_eq!(ids.len(), 1);
        let mut g2 = Graph::new();
        let b2 = enc.bind(&mut g2);
        let o2 = enc.forward(&mut g2, &b2, &[ids]).unwrap();
        assert_eq!(g2.value(o2), &direct);
    }

    #[test]
    fn batch_rows_are_independent_of_order() {
        let enc = small_encoder(Some(vec![1]), 16);
        let p = vec!["the cat".to_string(), "a dog is blue".to_string(), "the cat".to_string()];
        let out = enc.encode(&p).unwrap();
        assert_eq!(out.row(0), out.row(2));
        let rev: Vec<String> = p.iter().rev().cloned().collect();
        let out_rev = enc.encode(&rev).unwrap();
        assert_eq!(out.slice(s![..;-1, ..]), out_rev);
    }

    #[test]
    fn trainable_counts() {
        let tok = Tokenizer::fit(["x y z"], 8).unwrap();
        let config = EncoderConfig { vocab_size: tok.vocab_size(), d_token: 32, n_layers: 2, n_heads: 4, max_len: 8, ffn_mult: 2 };
        let params = EncoderParams::init(config, 0).unwrap();
        let lora = LoraWeights::init(&config, LoraConfig { rank: 4, scale: 8.0, target_layers: vec![0, 1] }, 0).unwrap();
        let enc = TextEncoder::new(tok.clone(), params.clone(), Some(lora)).unwrap();
        assert_eq!(enc.trainable_parameters().count, 2 * 4 * (2 * 4 * 32) + 1);

        let plain = TextEncoder::new(tok.clone(), params.clone(), None).unwrap();
        assert_eq!(plain.trainable_parameters().count, params.base_weights().num_elements() + 1);

        let none = LoraWeights::init(&config, LoraConfig { rank: 4, scale: 8.0, target_layers: vec![] }, 0).unwrap();
        let enc = TextEncoder::new(tok, params, Some(none)).unwrap();
        assert_eq!(enc.trainable_parameters().names, vec![LOG_TEMPERATURE.to_string()]);
        assert_eq!(enc.trainable_parameters().count, 1);
    }

    #[test]
    fn lora_rank_must_be_below_width() {
        let config = EncoderConfig { vocab_size: 4, d_token: 4, n_layers: 1, n_heads: 1, max_len: 4, ffn_mult: 1 };
        assert!(LoraWeights::init(&config, LoraConfig { rank: 4, scale: 1.0, target_layers: vec![0] }, 0).is_err());
        assert!(LoraWeights::init(&config, LoraConfig { rank: 2, scale: 1.0, target_layers: vec![1] }, 0).is_err());
    }

    #[test]
    fn temperature_is_clamped() {
        let mut p = small_encoder(None, 16).params;
        p.tensors.insert(LOG_TEMPERATURE, Mat::from_elem((1, 1), 10.0));
        assert_eq!(p.temperature(), TAU_MAX);
        p.tensors.insert(LOG_TEMPERATURE, Mat::from_elem((1, 1), -10.0));
        assert_eq!(p.temperature(), TAU_MIN);
    }

    #[test]
    fn checkpoint_roundtrip_restores_structure() {
        let enc = small_encoder(Some(vec![1]), 16);
        let f = TextEncoder::from_tensor_file(&enc.to_tensor_file(), enc.tokenizer.clone()).unwrap();
        assert_eq!(f.params.config, enc.params.config);
        assert_eq!(f.lora.as_ref().unwrap().config, enc.lora.as_ref().unwrap().config);
        let p = vec!["the mat".to_string()];
        let diff = (&f.encode(&p).unwrap() - &enc.encode(&p).unwrap()).mapv(f64::abs);
        assert!(diff.iter().all(|&x| x < 1e-4));
    }
}
