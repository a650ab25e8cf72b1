//! Finite-difference checks of every trained parameter group.

mod common;

use common::{check_gradients, random_mat, rng};
use llmemb::encoder::LOG_TEMPERATURE;
use llmemb::params::GradMap;
use llmemb::rat::{joint_objective, Adapter, RatConfig};
use llmemb::scft::scft_loss_graph;
use llmemb::srs::{bce_batch, Backbone, BackboneConfig, BackboneKind, EmbeddingSource, SrsModel, UserSequence};
use llmemb::{EncoderConfig, EncoderParams, Graph, LoraConfig, LoraWeights, Mat, Params, TextEncoder, Tokenizer};

const PER_TENSOR: usize = 4;

#[test]
fn scft_loss_wrt_embeddings_and_log_tau() {
    let mut r = rng(1);
    for (normalize, include_positive) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut p = Params::new();
        p.insert("e1", random_mat(5, 4, 1.0, &mut r));
        p.insert("e2", random_mat(5, 4, 1.0, &mut r));
        p.insert("log_tau", Mat::from_elem((1, 1), -0.3));
        let loss_grads = |p: &Params| -> (f64, GradMap) {
            let mut g = Graph::new();
            let b = llmemb::params::Bound::new(&mut g, p, |_| true);
            let l = scft_loss_graph(&mut g, b.var("e1"), b.var("e2"), b.var("log_tau"), normalize, include_positive);
            let mut grads = g.backward(l);
            (g.scalar(l), b.grads(&g, &mut grads))
        };
        let (_, grads) = loss_grads(&p);
        check_gradients(&p, &grads, |p| vec![p], |p| loss_grads(p).0, 20);
    }
}

fn small_encoder(lora: bool) -> (TextEncoder, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let texts = ["name is lumo; category is cafe", "name is tavi; price is cheap", "style is cozy; category is bar", "amenity is wifi"];
    let tok = Tokenizer::fit(texts.iter().copied(), 8).unwrap();
    let cfg = EncoderConfig { vocab_size: tok.vocab_size(), d_token: 8, n_layers: 2, n_heads: 2, max_len: 8, ffn_mult: 2 };
    let params = EncoderParams::init(cfg, 3).unwrap();
    let lora = lora.then(|| {
        let mut l = LoraWeights::init(&cfg, LoraConfig { rank: 2, scale: 4.0, target_layers: vec![0, 1] }, 4).unwrap();
        // Non-zero B so that A receives gradient too.
        let mut r = rng(5);
        let names: Vec<String> = l.tensors.names().filter(|n| n.ends_with("lora_b")).cloned().collect();
        for n in names {
            let m = l.tensors.get_mut(&n).unwrap();
            *m = random_mat(m.nrows(), m.ncols(), 0.3, &mut r);
        }
        l
    });
    let enc = TextEncoder::new(tok, params, lora).unwrap();
    let v1 = enc.tokenize_batch(&texts.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap();
    let v2: Vec<Vec<usize>> = v1.iter().map(|t| t[..t.len().div_ceil(2)].to_vec()).collect();
    (enc, v1, v2)
}

fn encoder_loss(enc: &TextEncoder, v1: &[Vec<usize>], v2: &[Vec<usize>]) -> (f64, GradMap) {
    let mut g = Graph::new();
    let b = enc.bind(&mut g);
    let e1 = enc.forward(&mut g, &b, v1).unwrap();
    let e2 = enc.forward(&mut g, &b, v2).unwrap();
    let l = scft_loss_graph(&mut g, e1, e2, b.var(LOG_TEMPERATURE), false, false);
    let mut grads = g.backward(l);
    (g.scalar(l), b.grads(&g, &mut grads))
}

fn encoder_stores(e: &mut TextEncoder) -> Vec<&mut Params> {
    let mut v = vec![&mut e.params.tensors];
    if let Some(l) = e.lora.as_mut() {
        v.push(&mut l.tensors);
    }
    v
}

#[test]
fn encoder_lora_parameters() {
    let (enc, v1, v2) = small_encoder(true);
    let (_, grads) = encoder_loss(&enc, &v1, &v2);
    assert_eq!(grads.len(), enc.trainable_parameters().names.len());
    assert!(grads.keys().all(|n| n.contains("lora") || n == LOG_TEMPERATURE));
    check_gradients(&enc, &grads, encoder_stores, |e| encoder_loss(e, &v1, &v2).0, PER_TENSOR);
}

#[test]
fn encoder_all_parameters_without_lora() {
    let (enc, v1, v2) = small_encoder(false);
    let (_, grads) = encoder_loss(&enc, &v1, &v2);
    assert_eq!(grads.len(), enc.params.tensors.len());
    check_gradients(&enc, &grads, encoder_stores, |e| encoder_loss(e, &v1, &v2).0, PER_TENSOR);
}

#[test]
fn adapter_parameters() {
    for activation in [false, true] {
        let adapter = Adapter::init(6, 4, activation, 9).unwrap();
        let x = random_mat(7, 6, 1.0, &mut rng(10));
        let w = random_mat(7, 4, 1.0, &mut rng(11));
        let loss_grads = |a: &Adapter| -> (f64, GradMap) {
            let mut g = Graph::new();
            let b = llmemb::params::Bound::new(&mut g, &a.params, |_| true);
            let xv = g.input(x.clone());
            let y = a.graph(&mut g, &b, xv);
            let wv = g.input(w.clone());
            let t = g.tanh(y);
            let m = g.mul(t, wv);
            let l = g.sum(m);
            let mut grads = g.backward(l);
            (g.scalar(l), b.grads(&g, &mut grads))
        };
        let (_, grads) = loss_grads(&adapter);
        assert_eq!(grads.len(), 4);
        check_gradients(&adapter, &grads, |a| vec![&mut a.params], |a| loss_grads(a).0, 8);
    }
}

fn users() -> Vec<UserSequence> {
    let seqs: [&[usize]; 4] = [&[0, 3, 5, 1, 7, 2], &[4, 4, 8, 9, 1, 0, 2, 6, 3, 11], &[10, 2, 5, 7], &[1, 6, 8, 3, 9]];
    seqs.iter().enumerate().map(|(u, s)| UserSequence { user_id: u as u64, items: s.to_vec() }).collect()
}

fn small_backbone(kind: BackboneKind) -> Backbone {
    Backbone::init(BackboneConfig { kind, d: 6, n_blocks: 2, n_heads: 2, max_seq_len: 5, dropout: 0.2 }, 21).unwrap()
}

fn bce_loss(model: &SrsModel, batch: &[&UserSequence]) -> (f64, GradMap) {
    let mut g = Graph::new();
    let bb = model.backbone.bind(&mut g, true);
    let (sb, table) = model.source.bind(&mut g, true);
    let terms = bce_batch(&mut g, &model.backbone, &bb, table, batch, &mut rng(30), false).unwrap().unwrap();
    let mut grads = g.backward(terms.srs_loss);
    let mut out = bb.grads(&g, &mut grads);
    out.extend(sb.grads(&g, &mut grads));
    (g.scalar(terms.srs_loss), out)
}

fn model_stores(m: &mut SrsModel) -> Vec<&mut Params> {
    let mut v = vec![&mut m.backbone.params];
    v.extend(m.source.stores_mut());
    v
}

#[test]
fn backbone_parameters_both_kinds() {
    let us = users();
    let batch: Vec<&UserSequence> = us.iter().collect();
    for kind in [BackboneKind::SelfAttentive, BackboneKind::Recurrent] {
        let model = SrsModel::new(small_backbone(kind), EmbeddingSource::learned(12, 6, 22)).unwrap();
        let (_, grads) = bce_loss(&model, &batch);
        assert_eq!(grads.len(), model.backbone.params.len() + 1);
        check_gradients(&model, &grads, model_stores, |m| bce_loss(m, &batch).0, PER_TENSOR);
    }
}

fn joint_loss(model: &SrsModel, batch: &[&UserSequence], collab: &Mat, cfg: &RatConfig) -> (f64, GradMap) {
    let mut j = joint_objective(model, batch, collab, cfg, &mut rng(31), false).unwrap().unwrap();
    let mut grads = j.graph.backward(j.total);
    let mut out = j.backbone.grads(&j.graph, &mut grads);
    out.extend(j.source.grads(&j.graph, &mut grads));
    let total = j.graph.scalar(j.total);
    j.graph = Graph::new();
    (total, out)
}

#[test]
fn joint_objective_parameters() {
    let us = users();
    let batch: Vec<&UserSequence> = us.iter().collect();
    let reduced = random_mat(12, 8, 1.0, &mut rng(40));
    let collab = random_mat(12, 6, 1.0, &mut rng(41));
    for (freeze, activation) in [(true, false), (false, true)] {
        let cfg = RatConfig { alpha: 0.5, gamma: 1.5, freeze, activation, ..Default::default() };
        let adapter = Adapter::init(8, 6, activation, 42).unwrap();
        let source = EmbeddingSource::adapted(reduced.clone(), adapter, !freeze).unwrap();
        let model = SrsModel::new(small_backbone(BackboneKind::SelfAttentive), source).unwrap();
        let (_, grads) = joint_loss(&model, &batch, &collab, &cfg);
        assert_eq!(grads.contains_key(llmemb::srs::FROZEN_TABLE), !freeze);
        check_gradients(&model, &grads, model_stores, |m| joint_loss(m, &batch, &collab, &cfg).0, PER_TENSOR);
    }
}
