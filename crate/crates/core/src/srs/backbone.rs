//! Sequence encoders: a causal self-attentive stack and a GRU.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{pack_segments, Graph, Mat, Segment, Var};
use crate::error::{Error, Result};
use crate::params::{normal_matrix, Bound, Params};
use crate::tensor_io::TensorFile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    SelfAttentive,
    Recurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub d: usize,
    /// Attention blocks; ignored by the recurrent kind.
    pub n_blocks: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { kind: BackboneKind::SelfAttentive, d: 64, n_blocks: 2, n_heads: 1, max_seq_len: 50, dropout: 0.2 }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("backbone width and max_seq_len must be positive".into()));
        }
        if self.kind == BackboneKind::SelfAttentive && (self.n_heads == 0 || self.d % self.n_heads != 0) {
            return Err(Error::Config(format!("width {} not divisible by {} heads", self.d, self.n_heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Backbone weights Θ. Self-attentive names: `position_embedding`,
/// `blocks.{b}.{ln1,ln2}.{gamma,beta}`, `blocks.{b}.attn.{q,k,v,o}`,
/// `blocks.{b}.ffn.{w1,b1,w2,b2}`, `final_ln.{gamma,beta}`. Recurrent names:
/// `gru.{w,u}_{z,r,n}`, `gru.b_{z,r,n}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub params: Params,
}

/// Per-call dropout state; `None` runs in inference mode.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn dropout(g: &mut Graph, x: Var, drop: &mut Option<Dropout<'_>>) -> Var {
    match drop {
        Some(Dropout { p, rng }) if *p > 0.0 => {
            let keep = 1.0 / (1.0 - *p);
            let p = *p;
            let mask = Mat::from_shape_simple_fn(g.shape(x), || if rng.random::<f64>() < p { 0.0 } else { keep });
            g.dropout_with_mask(x, mask)
        }
        _ => x,
    }
}

impl Backbone {
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let std = 1.0 / (d as f64).sqrt();
        let mut t = Params::new();
        match config.kind {
            BackboneKind::SelfAttentive => {
                t.insert("position_embedding", normal_matrix(config.max_seq_len, d, std, &mut rng));
                for b in 0..config.n_blocks {
                    for ln in ["ln1", "ln2"] {
                        t.insert(format!("blocks.{b}.{ln}.gamma"), Mat::ones((1, d)));
                        t.insert(format!("blocks.{b}.{ln}.beta"), Mat::zeros((1, d)));
                    }
                    for p in ["q", "k", "v", "o"] {
                        t.insert(format!("blocks.{b}.attn.{p}"), normal_matrix(d, d, std, &mut rng));
                    }
                    t.insert(format!("blocks.{b}.ffn.w1"), normal_matrix(d, d, std, &mut rng));
                    t.insert(format!("blocks.{b}.ffn.b1"), Mat::zeros((1, d)));
                    t.insert(format!("blocks.{b}.ffn.w2"), normal_matrix(d, d, std, &mut rng));
                    t.insert(format!("blocks.{b}.ffn.b2"), Mat::zeros((1, d)));
                }
                t.insert("final_ln.gamma", Mat::ones((1, d)));
                t.insert("final_ln.beta", Mat::zeros((1, d)));
            }
            BackboneKind::Recurrent => {
                for gate in ["z", "r", "n"] {
                    t.insert(format!("gru.w_{gate}"), normal_matrix(d, d, std, &mut rng));
                    t.insert(format!("gru.u_{gate}"), normal_matrix(d, d, std, &mut rng));
                    t.insert(format!("gru.b_{gate}"), Mat::zeros((1, d)));
                }
            }
        }
        Ok(Self { config, params: t })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound::new(g, &self.params, |_| trainable)
    }

    /// Keeps the most recent `max_seq_len` items.
    pub fn truncate<'s>(&self, seq: &'s [usize]) -> &'s [usize] {
        &seq[seq.len().saturating_sub(self.config.max_seq_len)..]
    }

    /// Runs the backbone over already embedded, packed sequences.
    ///
    /// `x` holds `Σ len` rows of width `d`, one segment per sequence, each
    /// segment at most `max_seq_len` long. Returns the output at every
    /// position in the same packed layout; the output at position `t` only
    /// depends on positions `<= t`.
    pub fn forward_packed(&self, g: &mut Graph, bound: &Bound, x: Var, lengths: &[usize], mut drop: Option<Dropout<'_>>) -> Result<Var> {
        let (rows, d) = g.shape(x);
        if d != self.config.d {
            return Err(Error::Shape(format!("backbone width {} but embeddings have {d} columns", self.config.d)));
        }
        if lengths.iter().sum::<usize>() != rows || lengths.iter().any(|&l| l == 0 || l > self.config.max_seq_len) {
            return Err(Error::Precondition(format!("segment lengths must lie in [1, {}] and cover the input", self.config.max_seq_len)));
        }
        let segments: Rc<[Segment]> = pack_segments(lengths.iter().copied()).into();
        match self.config.kind {
            BackboneKind::SelfAttentive => Ok(self.attentive(g, bound, x, &segments, &mut drop)),
            BackboneKind::Recurrent => Ok(self.recurrent(g, bound, x, &segments, &mut drop)),
        }
    }

    fn attentive(&self, g: &mut Graph, bound: &Bound, x: Var, segments: &Rc<[Segment]>, drop: &mut Option<Dropout<'_>>) -> Var {
        let positions: Vec<usize> = segments.iter().flat_map(|s| 0..s.len).collect();
        let pos = g.gather_rows(bound.var("position_embedding"), positions);
        let mut h = g.add(x, pos);
        h = dropout(g, h, drop);
        for b in 0..self.config.n_blocks {
            let v = |n: &str| bound.var(&format!("blocks.{b}.{n}"));
            let a = g.layer_norm(h, v("ln1.gamma"), v("ln1.beta"));
            let q = g.matmul_t(a, v("attn.q"));
            let k = g.matmul_t(a, v("attn.k"));
            let val = g.matmul_t(a, v("attn.v"));
            let att = g.attention(q, k, val, segments.clone(), self.config.n_heads, true);
            let o = g.matmul_t(att, v("attn.o"));
            let o = dropout(g, o, drop);
            h = g.add(h, o);
            let f = g.layer_norm(h, v("ln2.gamma"), v("ln2.beta"));
            let f = g.matmul_t(f, v("ffn.w1"));
            let f = g.add_row(f, v("ffn.b1"));
            let f = g.gelu(f);
            let f = g.matmul_t(f, v("ffn.w2"));
            let f = g.add_row(f, v("ffn.b2"));
            let f = dropout(g, f, drop);
            h = g.add(h, f);
        }
        g.layer_norm(h, bound.var("final_ln.gamma"), bound.var("final_ln.beta"))
    }

    /// GRU scan over packed segments. Sequences are visited longest first so
    /// the active set at step `t` is always a prefix of that order.
    fn recurrent(&self, g: &mut Graph, bound: &Bound, x: Var, segments: &Rc<[Segment]>, drop: &mut Option<Dropout<'_>>) -> Var {
        let x = dropout(g, x, drop);
        let v = |n: &str| bound.var(&format!("gru.{n}"));
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.sort_by(|&a, &b| segments[b].len.cmp(&segments[a].len).then(a.cmp(&b)));
        let steps = segments[order[0]].len;
        let total: usize = segments.iter().map(|s| s.len).sum();

        let mut outputs = Vec::with_capacity(steps);
        let mut perm = vec![0usize; total];
        let mut offset = 0;
        let mut h: Option<Var> = None;
        for t in 0..steps {
            let active = order.iter().take_while(|&&s| segments[s].len > t).count();
            let rows: Vec<usize> = order[..active].iter().map(|&s| segments[s].start + t).collect();
            for (j, &r) in rows.iter().enumerate() {
                perm[r] = offset + j;
            }
            let xt = g.gather_rows(x, rows);
            let hp = match h {
                Some(prev) => g.gather_rows(prev, (0..active).collect::<Vec<_>>()),
                None => g.input(Mat::zeros((active, self.config.d))),
            };
            let gate = |g: &mut Graph, name: &str| {
                let a = g.matmul_t(xt, v(&format!("w_{name}")));
                let b = g.matmul_t(hp, v(&format!("u_{name}")));
                let s = g.add(a, b);
                g.add_row(s, v(&format!("b_{name}")))
            };
            let z = gate(g, "z");
            let z = g.sigmoid(z);
            let r = gate(g, "r");
            let r = g.sigmoid(r);
            let xn = g.matmul_t(xt, v("w_n"));
            let xn = g.add_row(xn, v("b_n"));
            let hn = g.matmul_t(hp, v("u_n"));
            let hn = g.mul(r, hn);
            let n = g.add(xn, hn);
            let n = g.tanh(n);
            // h' = (1 - z) * n + z * h
            let keep = g.one_minus(z);
            let a = g.mul(keep, n);
            let b = g.mul(z, hp);
            let next = g.add(a, b);
            outputs.push(next);
            h = Some(next);
            offset += active;
        }
        let stacked = g.concat_rows(&outputs);
        g.gather_rows(stacked, perm)
    }

    /// Final-position outputs for each history, computed in inference mode
    /// against a fixed item table.
    pub fn user_representations(&self, table: &Mat, histories: &[&[usize]]) -> Result<Mat> {
        if table.ncols() != self.config.d {
            return Err(Error::Shape(format!("item table width {} does not match backbone width {}", table.ncols(), self.config.d)));
        }
        let mut out = Mat::zeros((histories.len(), self.config.d));
        let mut row = 0;
        for chunk in histories.chunks(256) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let table_var = g.input(table.clone());
            let seqs: Vec<&[usize]> = chunk.iter().map(|h| self.truncate(h)).collect();
            if seqs.iter().any(|s| s.is_empty()) {
                return Err(Error::Precondition("user history is empty".into()));
            }
            let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
            if ids.iter().any(|&i| i >= table.nrows()) {
                return Err(Error::Data("history references an item outside the table".into()));
            }
            let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
            let x = g.gather_rows(table_var, ids);
            let hv = self.forward_packed(&mut g, &bound, x, &lengths, None)?;
            let values = g.value(hv);
            let mut end = 0;
            for len in lengths {
                end += len;
                out.row_mut(row).assign(&values.row(end - 1));
                row += 1;
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, f: &mut TensorFile) {
        let c = &self.config;
        let kind = match c.kind {
            BackboneKind::SelfAttentive => 0.0,
            BackboneKind::Recurrent => 1.0,
        };
        f.push_vec("backbone_meta.kind", &[kind]);
        f.push_vec("backbone_meta.d", &[c.d as f64]);
        f.push_vec("backbone_meta.n_blocks", &[c.n_blocks as f64]);
        f.push_vec("backbone_meta.n_heads", &[c.n_heads as f64]);
        f.push_vec("backbone_meta.max_seq_len", &[c.max_seq_len as f64]);
        f.push_vec("backbone_meta.dropout", &[c.dropout]);
        f.push_params("backbone.", &self.params);
    }

    pub fn read_from(f: &TensorFile) -> Result<Self> {
        let meta = |n: &str| -> Result<f64> {
            f.vec(&format!("backbone_meta.{n}"))?.first().copied().ok_or_else(|| Error::Format(format!("empty backbone meta `{n}`")))
        };
        let kind = if meta("kind")? == 0.0 { BackboneKind::SelfAttentive } else { BackboneKind::Recurrent };
        let config = BackboneConfig {
            kind,
            d: meta("d")? as usize,
            n_blocks: meta("n_blocks")? as usize,
            n_heads: meta("n_heads")? as usize,
            max_seq_len: meta("max_seq_len")? as usize,
            // Stored as f32; snap back to the decimal the config was written with.
            dropout: (meta("dropout")? * 1e6).round() / 1e6,
        };
        config.validate()?;
        let params = f.params("backbone.")?;
        let expected = Backbone::init(config.clone(), 0)?;
        for (name, m) in expected.params.iter() {
            match params.get(name) {
                Some(p) if p.dim() == m.dim() => {}
                _ => return Err(Error::Format(format!("backbone tensor `{name}` missing or misshapen"))),
            }
        }
        Ok(Self { config, params })
    }
}

/// `E · u`.
pub fn score_items(u: &[f64], table: &Mat) -> Result<Vec<f64>> {
    if u.len() != table.ncols() {
        return Err(Error::Shape(format!("user vector width {} vs item width {}", u.len(), table.ncols())));
    }
    Ok(table.rows().into_iter().map(|r| r.iter().zip(u).map(|(a, b)| a * b).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table(n: usize, d: usize, seed: u64) -> Mat {
        normal_matrix(n, d, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn outputs(b: &Backbone, table: &Mat, seq: &[usize]) -> Mat {
        let mut g = Graph::new();
        let bound = b.bind(&mut g, false);
        let t = g.input(table.clone());
        let x = g.gather_rows(t, seq.to_vec());
        let h = b.forward_packed(&mut g, &bound, x, &[seq.len()], None).unwrap();
        g.value(h).clone()
    }

    #[test]
    fn score_items_examples() {
        let e = array![[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]];
        assert_eq!(score_items(&[2.0, 4.0], &e).unwrap(), vec![10.0, -4.0, 8.0]);
        assert_eq!(score_items(&[0.0, 0.0], &e).unwrap(), vec![0.0; 3]);
        let eye = Mat::eye(3);
        assert_eq!(score_items(&[0.0, 1.0, 0.0], &eye).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(score_items(&[1.0], &e).is_err());
    }

    #[test]
    fn causal_outputs_ignore_future_items() {
        for kind in [BackboneKind::SelfAttentive, BackboneKind::Recurrent] {
            let b = Backbone::init(BackboneConfig { kind, d: 8, max_seq_len: 10, ..Default::default() }, 1).unwrap();
            let t = table(20, 8, 2);
            let a = outputs(&b, &t, &[1, 4, 7, 2, 9]);
            let c = outputs(&b, &t, &[1, 4, 7, 15, 3, 11]);
            for row in 0..3 {
                for col in 0..8 {
                    assert!((a[[row, col]] - c[[row, col]]).abs() < 1e-10, "{kind:?}");
                }
            }
            assert!((0..8).any(|col| (a[[3, col]] - c[[3, col]]).abs() > 1e-6));
        }
    }

    #[test]
    fn truncation_keeps_recent_items() {
        let b = Backbone::init(BackboneConfig { d: 8, max_seq_len: 4, ..Default::default() }, 3).unwrap();
        let t = table(10, 8, 4);
        let long = [0, 1, 2, 3, 4, 5, 6];
        let u = b.user_representations(&t, &[&long]).unwrap();
        let v = b.user_representations(&t, &[&long[3..]]).unwrap();
        assert_eq!(u, v);
    }

    #[test]
    fn single_item_is_deterministic() {
        let mut b = Backbone::init(BackboneConfig { d: 4, ..Default::default() }, 5).unwrap();
        let names: Vec<String> = b.params.names().filter(|n| n.contains("attn") || n.contains("ffn")).cloned().collect();
        for n in names {
            b.params.get_mut(&n).unwrap().fill(0.0);
        }
        let t = table(3, 4, 6);
        let u1 = b.user_representations(&t, &[&[2]]).unwrap();
        let u2 = b.user_representations(&t, &[&[2]]).unwrap();
        assert_eq!(u1, u2);
        let other = b.user_representations(&t, &[&[1]]).unwrap();
        assert_ne!(u1, other);
    }

    #[test]
    fn batched_matches_individual() {
        for kind in [BackboneKind::SelfAttentive, BackboneKind::Recurrent] {
            let b = Backbone::init(BackboneConfig { kind, d: 8, ..Default::default() }, 7).unwrap();
            let t = table(12, 8, 8);
            let hs: [&[usize]; 3] = [&[1, 2], &[3, 4, 5, 6], &[7]];
            let all = b.user_representations(&t, &hs).unwrap();
            for (i, h) in hs.iter().enumerate() {
                let one = b.user_representations(&t, &[h]).unwrap();
                assert!((&all.row(i) - &one.row(0)).iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn width_mismatch_and_roundtrip() {
        let b = Backbone::init(BackboneConfig { kind: BackboneKind::Recurrent, d: 4, ..Default::default() }, 9).unwrap();
        assert!(b.user_representations(&table(3, 5, 1), &[&[0]]).is_err());
        let mut f = TensorFile::new();
        b.write_to(&mut f);
        let back = Backbone::read_from(&TensorFile::from_bytes(&f.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.config, b.config);
        assert_eq!(back.params.len(), b.params.len());
    }
}
