//! Stage graph, artifact layout and stage execution.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use llmemb::data::{gen_catalog, gen_interactions};
use llmemb::encoder::{EncoderParams, LoraWeights, TextEncoder, Tokenizer};
use llmemb::eval::{evaluate, project_2d, projection_csv, uniformity, EvalReport};
use llmemb::rat::{precompute_cache, train_rat, Adapter, RatConfig};
use llmemb::reduce::pca_fit;
use llmemb::scft::{loss_trace_csv, train_scft};
use llmemb::srs::{train_collaborative, Backbone, EpochRecord, InteractionDataset, ITEM_EMBEDDING};
use llmemb::{Catalog, Mat, PcaModel, TensorFile};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, ARTIFACTS_ENV};
use crate::error::CliError;

pub const CATALOG: &str = "gen-data/catalog.jsonl";
pub const INTERACTIONS: &str = "gen-data/interactions.txt";
pub const CLUSTERS: &str = "gen-data/clusters.csv";
pub const ENCODER_INIT: &str = "scft/encoder_init.lemb";
pub const ENCODER: &str = "scft/encoder.lemb";
pub const TOKENIZER: &str = "scft/tokenizer.json";
pub const LOSS_TRACE: &str = "scft/loss_trace.csv";
pub const EMBEDDINGS: &str = "embed/embeddings.lemb";
pub const REDUCED: &str = "reduce/reduced.lemb";
pub const COLLAB: &str = "pretrain-srs/collab.lemb";
pub const COLLAB_HISTORY: &str = "pretrain-srs/history.csv";
pub const RAT_MODEL: &str = "rat/model.lemb";
pub const RAT_HISTORY: &str = "rat/history.csv";
pub const CACHE: &str = "cache/item_embeddings.lemb";
pub const CACHE_PROVENANCE: &str = "cache/provenance.json";
pub const REPORT_NONE: &str = "eval/none.json";
pub const REPORT_NONE_TEXT: &str = "eval/none.txt";
pub const REPORT_LLMEMB: &str = "eval/llmemb.json";
pub const REPORT_LLMEMB_TEXT: &str = "eval/llmemb.txt";
pub const UNIFORMITY: &str = "diag/uniformity.json";
pub const SWEEP_CSV: &str = "sweep/sweep.csv";

/// Tensor names inside artifacts.
pub const EMBEDDINGS_TENSOR: &str = "embeddings";
pub const REDUCED_TENSOR: &str = "reduced";
pub const CACHE_TENSOR: &str = "item_embeddings";
pub const TUNED_TABLE_TENSOR: &str = "tuned_frozen_table";

const PROJECTIONS: [&str; 4] = ["pre_scft", "post_scft", "collaborative", "llmemb"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    GenData,
    Scft,
    Embed,
    Reduce,
    PretrainSrs,
    Rat,
    Cache,
    Eval,
    Diag,
    Sweep,
}

/// Order used by `all`. The sweep is run separately.
pub const PIPELINE: [Stage; 9] =
    [Stage::GenData, Stage::Scft, Stage::Embed, Stage::Reduce, Stage::PretrainSrs, Stage::Rat, Stage::Cache, Stage::Eval, Stage::Diag];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::GenData => "gen-data",
            Self::Scft => "scft",
            Self::Embed => "embed",
            Self::Reduce => "reduce",
            Self::PretrainSrs => "pretrain-srs",
            Self::Rat => "rat",
            Self::Cache => "cache",
            Self::Eval => "eval",
            Self::Diag => "diag",
            Self::Sweep => "sweep",
        }
    }

    pub fn manifest(self) -> String {
        format!("{}/manifest.json", self.name())
    }

    pub fn outputs(self) -> Vec<String> {
        let fixed: &[&str] = match self {
            Self::GenData => &[CATALOG, INTERACTIONS, CLUSTERS],
            Self::Scft => &[ENCODER_INIT, ENCODER, TOKENIZER, LOSS_TRACE],
            Self::Embed => &[EMBEDDINGS],
            Self::Reduce => &[REDUCED],
            Self::PretrainSrs => &[COLLAB, COLLAB_HISTORY],
            Self::Rat => &[RAT_MODEL, RAT_HISTORY],
            Self::Cache => &[CACHE, CACHE_PROVENANCE],
            Self::Eval => &[REPORT_NONE, REPORT_NONE_TEXT, REPORT_LLMEMB, REPORT_LLMEMB_TEXT],
            Self::Diag => &[UNIFORMITY],
            Self::Sweep => &[SWEEP_CSV],
        };
        let mut out: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
        if self == Self::Diag {
            out.extend(PROJECTIONS.iter().map(|p| projection_path(p)));
        }
        out
    }
}

pub fn projection_path(name: &str) -> String {
    format!("diag/projection_{name}.csv")
}

/// A file a stage reads, with the stage that produces it.
#[derive(Clone, Debug)]
pub struct Input {
    pub path: PathBuf,
    pub label: String,
    pub producer: Stage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,srs_loss,extra_loss\n");
    for h in history {
        writeln!(out, "{},{},{},{}", h.epoch, h.loss, h.srs_loss, h.extra_loss).expect("write to string");
    }
    out
}

/// One row of the sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub overall_hit: f64,
    pub overall_ndcg: f64,
    pub tail_hit: f64,
    pub tail_ndcg: f64,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub root: PathBuf,
    pub force: bool,
}

impl Pipeline {
    /// Artifact root precedence: explicit override, then the
    /// environment variable, then `paths.artifacts`.
    pub fn new(config: PipelineConfig, root: Option<PathBuf>, force: bool) -> Self {
        let root = root
            .or_else(|| std::env::var_os(ARTIFACTS_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| config.paths.artifacts.clone());
        Self { config, root, force }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.config.paths.catalog.clone().unwrap_or_else(|| self.path(CATALOG))
    }

    pub fn interactions_path(&self) -> PathBuf {
        self.config.paths.interactions.clone().unwrap_or_else(|| self.path(INTERACTIONS))
    }

    fn artifact(&self, rel: &str, producer: Stage) -> Input {
        Input { path: self.path(rel), label: rel.to_string(), producer }
    }

    fn catalog_input(&self) -> Input {
        match &self.config.paths.catalog {
            Some(p) => Input { path: p.clone(), label: p.display().to_string(), producer: Stage::GenData },
            None => self.artifact(CATALOG, Stage::GenData),
        }
    }

    fn interactions_input(&self) -> Input {
        match &self.config.paths.interactions {
            Some(p) => Input { path: p.clone(), label: p.display().to_string(), producer: Stage::GenData },
            None => self.artifact(INTERACTIONS, Stage::GenData),
        }
    }

    pub fn inputs(&self, stage: Stage) -> Vec<Input> {
        let a = |rel: &str, s: Stage| self.artifact(rel, s);
        match stage {
            Stage::GenData => vec![],
            Stage::Scft => vec![self.catalog_input()],
            Stage::Embed => vec![self.catalog_input(), a(ENCODER, Stage::Scft), a(TOKENIZER, Stage::Scft)],
            Stage::Reduce => vec![a(EMBEDDINGS, Stage::Embed)],
            Stage::PretrainSrs => vec![self.catalog_input(), self.interactions_input()],
            Stage::Rat => vec![a(REDUCED, Stage::Reduce), a(COLLAB, Stage::PretrainSrs), self.catalog_input(), self.interactions_input()],
            Stage::Cache => vec![
                self.catalog_input(),
                a(ENCODER, Stage::Scft),
                a(TOKENIZER, Stage::Scft),
                a(REDUCED, Stage::Reduce),
                a(RAT_MODEL, Stage::Rat),
            ],
            Stage::Eval => vec![
                self.catalog_input(),
                self.interactions_input(),
                a(COLLAB, Stage::PretrainSrs),
                a(RAT_MODEL, Stage::Rat),
                a(CACHE, Stage::Cache),
            ],
            Stage::Diag => vec![
                self.catalog_input(),
                self.interactions_input(),
                a(ENCODER_INIT, Stage::Scft),
                a(ENCODER, Stage::Scft),
                a(TOKENIZER, Stage::Scft),
                a(COLLAB, Stage::PretrainSrs),
                a(CACHE, Stage::Cache),
            ],
            Stage::Sweep => vec![
                a(EMBEDDINGS, Stage::Embed),
                a(REDUCED, Stage::Reduce),
                a(COLLAB, Stage::PretrainSrs),
                self.catalog_input(),
                self.interactions_input(),
            ],
        }
    }

    /// The configuration slice a stage depends on, recorded in its manifest.
    pub fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let c = &self.config;
        let v = match stage {
            Stage::GenData => serde_json::json!({ "data": c.data }),
            Stage::Scft => serde_json::json!({ "seed": c.seed, "template": c.template, "encoder": c.encoder, "lora": c.lora, "scft": c.scft }),
            Stage::Embed | Stage::Cache => serde_json::json!({ "template": c.template }),
            Stage::Reduce => serde_json::json!({ "d_m": c.d_m() }),
            Stage::PretrainSrs => serde_json::json!({ "srs": c.srs }),
            Stage::Rat => serde_json::json!({ "backbone": c.srs.backbone, "rat": c.rat }),
            Stage::Eval => serde_json::json!({ "eval": c.eval }),
            Stage::Diag => serde_json::json!({ "template": c.template, "bins": c.eval.bins }),
            Stage::Sweep => serde_json::json!({ "backbone": c.srs.backbone, "rat": c.rat, "eval": c.eval, "sweep": c.sweep }),
        };
        v
    }

    fn check_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>, CliError> {
        let inputs = self.inputs(stage);
        let missing: Vec<&Input> = inputs.iter().filter(|i| !i.path.is_file()).collect();
        if !missing.is_empty() {
            let mut stages: Vec<Stage> = missing.iter().map(|i| i.producer).collect();
            stages.sort();
            stages.dedup();
            return Err(CliError::Missing {
                stages: stages.iter().map(|s| s.name().to_string()).collect(),
                paths: missing.iter().map(|i| i.path.display().to_string()).collect(),
            });
        }
        inputs.iter().map(|i| Ok((i.label.clone(), sha256_file(&i.path)?))).collect()
    }

    fn output_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>, CliError> {
        stage.outputs().iter().map(|rel| Ok((rel.clone(), sha256_file(&self.path(rel))?))).collect()
    }

    pub fn read_manifest(&self, stage: Stage) -> Option<Manifest> {
        let text = fs::read_to_string(self.path(&stage.manifest())).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn up_to_date(&self, stage: Stage, config: &serde_json::Value, inputs: &BTreeMap<String, String>) -> bool {
        let Some(m) = self.read_manifest(stage) else { return false };
        if &m.config != config || &m.inputs != inputs {
            return false;
        }
        stage.outputs().iter().all(|rel| {
            let p = self.path(rel);
            p.is_file() && m.outputs.get(rel).is_some_and(|h| sha256_file(&p).ok().as_ref() == Some(h))
        })
    }

    /// Runs one stage unless its manifest shows identical inputs and config.
    pub fn run(&self, stage: Stage) -> Result<Outcome, CliError> {
        let inputs = self.check_inputs(stage)?;
        let config = self.stage_config(stage);
        if !self.force && self.up_to_date(stage, &config, &inputs) {
            info!("{}: up to date", stage.name());
            return Ok(Outcome::UpToDate);
        }
        info!("{}: running", stage.name());
        self.execute(stage)?;
        let manifest = Manifest { stage: stage.name().to_string(), config, inputs, outputs: self.output_hashes(stage)? };
        write_file(&self.path(&stage.manifest()), serde_json::to_string_pretty(&manifest)? + "\n")?;
        info!("{}: done", stage.name());
        Ok(Outcome::Ran)
    }

    /// The full ordered pipeline. `gen-data` is skipped when both data
    /// paths point at external files.
    pub fn run_all(&self) -> Result<(), CliError> {
        let external = self.config.paths.catalog.is_some() && self.config.paths.interactions.is_some();
        for stage in PIPELINE {
            if stage == Stage::GenData && external {
                continue;
            }
            self.run(stage)?;
        }
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<Catalog, CliError> {
        Ok(Catalog::load(&self.catalog_path())?)
    }

    pub fn load_dataset(&self, n_items: usize) -> Result<InteractionDataset, CliError> {
        Ok(InteractionDataset::load(&self.interactions_path(), n_items)?)
    }

    pub fn load_encoder(&self, checkpoint: &str) -> Result<TextEncoder, CliError> {
        Ok(TextEncoder::load(&self.path(checkpoint), &self.path(TOKENIZER))?)
    }

    pub fn load_reduced(&self) -> Result<(PcaModel, Mat), CliError> {
        let f = TensorFile::read(&self.path(REDUCED))?;
        Ok((PcaModel::read_from(&f)?, f.mat(REDUCED_TENSOR)?))
    }

    /// Backbone and `ẽ` of the collaborative baseline.
    pub fn load_collab(&self) -> Result<(Backbone, Mat), CliError> {
        let f = TensorFile::read(&self.path(COLLAB))?;
        Ok((Backbone::read_from(&f)?, f.mat(ITEM_EMBEDDING)?))
    }

    /// Backbone, adapter and, for unfrozen runs, the tuned reduced table.
    pub fn load_rat(&self) -> Result<(Backbone, Adapter, Option<Mat>), CliError> {
        let f = TensorFile::read(&self.path(RAT_MODEL))?;
        let tuned = if f.contains(TUNED_TABLE_TENSOR) { Some(f.mat(TUNED_TABLE_TENSOR)?) } else { None };
        Ok((Backbone::read_from(&f)?, Adapter::read_from(&f)?, tuned))
    }

    pub fn load_cache(&self) -> Result<Mat, CliError> {
        Ok(TensorFile::read(&self.path(CACHE))?.mat(CACHE_TENSOR)?)
    }

    fn execute(&self, stage: Stage) -> Result<(), CliError> {
        let c = &self.config;
        match stage {
            Stage::GenData => {
                let synthetic = gen_catalog(&c.data)?;
                let dataset = gen_interactions(&c.data, &synthetic)?;
                write_file(&self.path(CATALOG), synthetic.catalog.to_jsonl())?;
                write_file(&self.path(INTERACTIONS), dataset.to_text())?;
                write_file(&self.path(CLUSTERS), synthetic.clusters_csv())?;
            }
            Stage::Scft => {
                let catalog = self.load_catalog()?;
                let prompts = catalog.prompts(&c.template)?;
                let tokenizer = Tokenizer::fit(prompts.iter().map(String::as_str), c.encoder.max_len)?;
                let ec = c.encoder.with_vocab(tokenizer.vocab_size());
                let params = EncoderParams::init(ec, c.seed)?;
                let lora = c.lora.resolve(ec.n_layers).map(|l| LoraWeights::init(&ec, l, c.seed.wrapping_add(1))).transpose()?;
                let encoder = TextEncoder::new(tokenizer, params, lora)?;
                fs::create_dir_all(self.path("scft"))?;
                encoder.save(&self.path(ENCODER_INIT), &self.path(TOKENIZER))?;
                let outcome = train_scft(&catalog, &c.template, encoder, &c.scft)?;
                info!("scft epoch means {:?}", outcome.epoch_means());
                outcome.encoder.save(&self.path(ENCODER), &self.path(TOKENIZER))?;
                write_file(&self.path(LOSS_TRACE), loss_trace_csv(&outcome.trace))?;
            }
            Stage::Embed => {
                let catalog = self.load_catalog()?;
                let encoder = self.load_encoder(ENCODER)?;
                let e = encoder.encode(&catalog.prompts(&c.template)?)?;
                let mut f = TensorFile::new();
                f.push_mat(EMBEDDINGS_TENSOR, &e);
                f.write(&self.path(EMBEDDINGS))?;
            }
            Stage::Reduce => {
                let e = TensorFile::read(&self.path(EMBEDDINGS))?.mat(EMBEDDINGS_TENSOR)?;
                let (pca, reduced) = fit_reduce(&e, c.d_m())?;
                write_reduced(&self.path(REDUCED), &pca, &reduced)?;
            }
            Stage::PretrainSrs => {
                let dataset = self.load_dataset(self.load_catalog()?.len())?;
                let outcome = train_collaborative(&dataset, &c.srs)?;
                let mut f = TensorFile::new();
                outcome.model.backbone.write_to(&mut f);
                f.push_mat(ITEM_EMBEDDING, &outcome.item_table());
                f.write(&self.path(COLLAB))?;
                write_file(&self.path(COLLAB_HISTORY), history_csv(&outcome.history))?;
            }
            Stage::Rat => {
                let dataset = self.load_dataset(self.load_catalog()?.len())?;
                let (_, reduced) = self.load_reduced()?;
                let (_, collab) = self.load_collab()?;
                let outcome = train_rat(&dataset, &reduced, &collab, &c.srs.backbone, &c.rat)?;
                let mut f = TensorFile::new();
                outcome.model.backbone.write_to(&mut f);
                let llmemb::srs::EmbeddingSource::AdaptedFrozen { frozen, adapter, .. } = &outcome.model.source else {
                    unreachable!("rat trains an adapted source")
                };
                adapter.write_to(&mut f);
                if !c.rat.freeze {
                    f.push_mat(TUNED_TABLE_TENSOR, frozen.expect(llmemb::srs::FROZEN_TABLE));
                }
                f.write(&self.path(RAT_MODEL))?;
                write_file(&self.path(RAT_HISTORY), history_csv(&outcome.history))?;
            }
            Stage::Cache => {
                let (pca, _) = self.load_reduced()?;
                let (_, adapter, tuned) = self.load_rat()?;
                let table = match tuned {
                    Some(t) => adapter.forward(&t)?,
                    None => {
                        let catalog = self.load_catalog()?;
                        let encoder = self.load_encoder(ENCODER)?;
                        precompute_cache(&catalog, &c.template, &encoder, &pca, &adapter)?
                    }
                };
                let mut f = TensorFile::new();
                f.push_mat(CACHE_TENSOR, &table);
                f.write(&self.path(CACHE))?;
                let provenance = serde_json::json!({
                    "encoder": sha256_file(&self.path(ENCODER))?,
                    "pca": sha256_file(&self.path(REDUCED))?,
                    "adapter": sha256_file(&self.path(RAT_MODEL))?,
                });
                write_file(&self.path(CACHE_PROVENANCE), serde_json::to_string_pretty(&provenance)? + "\n")?;
            }
            Stage::Eval => {
                let dataset = self.load_dataset(self.load_catalog()?.len())?;
                let (collab_backbone, collab) = self.load_collab()?;
                let (rat_backbone, _, _) = self.load_rat()?;
                let cache = self.load_cache()?;
                for (name, backbone, table, json, text) in [
                    ("none", &collab_backbone, &collab, REPORT_NONE, REPORT_NONE_TEXT),
                    ("llmemb", &rat_backbone, &cache, REPORT_LLMEMB, REPORT_LLMEMB_TEXT),
                ] {
                    let report = evaluate(name, backbone, table, &dataset, &c.eval)?;
                    info!("\n{}", report.to_text());
                    write_file(&self.path(json), report.to_json()? + "\n")?;
                    write_file(&self.path(text), report.to_text())?;
                }
            }
            Stage::Diag => {
                let catalog = self.load_catalog()?;
                let dataset = self.load_dataset(catalog.len())?;
                let prompts = catalog.prompts(&c.template)?;
                let pre = self.load_encoder(ENCODER_INIT)?.encode(&prompts)?;
                let post = self.load_encoder(ENCODER)?.encode(&prompts)?;
                let (_, collab) = self.load_collab()?;
                let cache = self.load_cache()?;
                let mut values = serde_json::Map::new();
                for (name, table) in PROJECTIONS.iter().zip([&pre, &post, &collab, &cache]) {
                    values.insert(name.to_string(), serde_json::json!(uniformity(table)?));
                    let csv = projection_csv(&project_2d(table)?, dataset.popularity(), &c.eval.bins)?;
                    write_file(&self.path(&projection_path(name)), csv)?;
                }
                write_file(&self.path(UNIFORMITY), serde_json::to_string_pretty(&values)? + "\n")?;
            }
            Stage::Sweep => {
                let rows = self.sweep()?;
                write_file(&self.path(SWEEP_CSV), sweep_csv(&rows))?;
            }
        }
        Ok(())
    }

    /// One-at-a-time sweep: each listed value of γ, α and d_m is trained
    /// with every other setting at its configured value.
    pub fn sweep(&self) -> Result<Vec<SweepRow>, CliError> {
        let c = &self.config;
        let dataset = self.load_dataset(self.load_catalog()?.len())?;
        let (_, reduced) = self.load_reduced()?;
        let (_, collab) = self.load_collab()?;
        let embeddings = TensorFile::read(&self.path(EMBEDDINGS))?.mat(EMBEDDINGS_TENSOR)?;
        let mut points: Vec<(&str, f64, RatConfig, Option<usize>)> = Vec::new();
        for &g in &c.sweep.gamma {
            points.push(("gamma", g, RatConfig { gamma: g, ..c.rat.clone() }, None));
        }
        for &a in &c.sweep.alpha {
            points.push(("alpha", a, RatConfig { alpha: a, ..c.rat.clone() }, None));
        }
        for &d in &c.sweep.d_m {
            points.push(("d_m", d as f64, c.rat.clone(), Some(d)));
        }
        let mut rows = Vec::with_capacity(points.len());
        for (axis, value, rat, d_m) in points {
            info!("sweep {axis}={value}");
            let table = match d_m {
                Some(d) => fit_reduce(&embeddings, d)?.1,
                None => reduced.clone(),
            };
            let outcome = train_rat(&dataset, &table, &collab, &c.srs.backbone, &rat)?;
            let report = evaluate("llmemb", &outcome.model.backbone, &outcome.model.source.table()?, &dataset, &c.eval)?;
            let dir = self.path(&format!("sweep/{axis}={value}"));
            write_file(&dir.join("report.json"), report.to_json()? + "\n")?;
            rows.push(sweep_row(axis, value, &report));
        }
        Ok(rows)
    }
}

/// PCA fit plus transform, with the reduced table rounded the way it will be
/// stored so in-process and reloaded runs see the same values.
pub fn fit_reduce(e: &Mat, d_m: usize) -> Result<(PcaModel, Mat), CliError> {
    let pca = pca_fit(e, d_m)?;
    let reduced = llmemb::tensor_io::round_to_f32(&pca.transform(e)?);
    Ok((pca, reduced))
}

pub fn write_reduced(path: &Path, pca: &PcaModel, reduced: &Mat) -> Result<(), CliError> {
    let mut f = TensorFile::new();
    pca.write_to(&mut f);
    f.push_mat(REDUCED_TENSOR, reduced);
    f.write(path)?;
    Ok(())
}

fn sweep_row(axis: &str, value: f64, report: &EvalReport) -> SweepRow {
    SweepRow {
        axis: axis.to_string(),
        value,
        overall_hit: report.mean.overall.hit,
        overall_ndcg: report.mean.overall.ndcg,
        tail_hit: report.mean.tail.hit,
        tail_ndcg: report.mean.tail.ndcg,
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,overall_hit,overall_ndcg,tail_hit,tail_ndcg\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.axis, r.value, r.overall_hit, r.overall_ndcg, r.tail_hit, r.tail_ndcg).expect("write to string");
    }
    out
}
