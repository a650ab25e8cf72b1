//! Pipeline configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use llmemb::data::SynthConfig;
use llmemb::encoder::{EncoderConfig, LoraConfig};
use llmemb::eval::EvalConfig;
use llmemb::rat::RatConfig;
use llmemb::scft::ScftConfig;
use llmemb::srs::SrsConfig;
use llmemb::PromptTemplate;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable that overrides `paths.artifacts`.
pub const ARTIFACTS_ENV: &str = "LLMEMB_ARTIFACTS";

pub const DEFAULT_TOML: &str = include_str!("../configs/default.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Every stage writes below this directory and nowhere else.
    pub artifacts: PathBuf,
    /// External catalog; defaults to the `gen-data` output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    /// External interactions file; defaults to the `gen-data` output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interactions: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { artifacts: PathBuf::from("artifacts"), catalog: None, interactions: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub d_token: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self { d_token: 128, n_layers: 2, n_heads: 2, max_len: 64, ffn_mult: 2 }
    }
}

impl EncoderSection {
    pub fn with_vocab(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_token: self.d_token,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_len: self.max_len,
            ffn_mult: self.ffn_mult,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSection {
    pub enabled: bool,
    pub rank: usize,
    pub scale: f64,
    /// Empty means every layer.
    pub target_layers: Vec<usize>,
}

impl Default for LoraSection {
    fn default() -> Self {
        Self { enabled: true, rank: 8, scale: 16.0, target_layers: Vec::new() }
    }
}

impl LoraSection {
    pub fn resolve(&self, n_layers: usize) -> Option<LoraConfig> {
        self.enabled.then(|| LoraConfig {
            rank: self.rank,
            scale: self.scale,
            target_layers: if self.target_layers.is_empty() { (0..n_layers).collect() } else { self.target_layers.clone() },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceSection {
    /// Omitted means `min(256, d_token)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_m: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub d_m: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { gamma: vec![0.5, 1.0, 2.0, 4.0, 8.0], alpha: Vec::new(), d_m: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds encoder init, SCFT, SRS pretraining and RAT. `data.seed` only
    /// controls the synthetic dataset; stage `seed` fields are overwritten.
    pub seed: u64,
    pub paths: Paths,
    pub data: SynthConfig,
    pub template: PromptTemplate,
    pub encoder: EncoderSection,
    pub lora: LoraSection,
    pub scft: ScftConfig,
    pub reduce: ReduceSection,
    pub srs: SrsConfig,
    pub rat: RatConfig,
    pub eval: EvalConfig,
    pub sweep: SweepSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            data: SynthConfig::default(),
            template: PromptTemplate::default(),
            encoder: EncoderSection::default(),
            lora: LoraSection::default(),
            scft: ScftConfig::default(),
            reduce: ReduceSection::default(),
            srs: SrsConfig::default(),
            rat: RatConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text, applies `key.path=value` overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("field `{path}`: {}", e.into_inner()))
        })?;
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Copies the global seed into every stage config.
    pub fn sync_seeds(&mut self) {
        self.scft.seed = self.seed;
        self.srs.seed = self.seed;
        self.rat.seed = self.seed;
    }

    pub fn d_m(&self) -> usize {
        self.reduce.d_m.unwrap_or(self.encoder.d_token.min(256))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let section = |name: &'static str| move |e: llmemb::Error| CliError::Config(format!("field `{name}`: {e}"));
        self.data.validate().map_err(section("data"))?;
        self.template.validate().map_err(section("template"))?;
        self.encoder.with_vocab(1).validate().map_err(section("encoder"))?;
        if let Some(l) = self.lora.resolve(self.encoder.n_layers) {
            if l.rank == 0 || l.rank >= self.encoder.d_token {
                return Err(CliError::Config(format!("field `lora.rank`: {} must be in [1, d_token)", l.rank)));
            }
            if let Some(&bad) = l.target_layers.iter().find(|&&t| t >= self.encoder.n_layers) {
                return Err(CliError::Config(format!("field `lora.target_layers`: layer {bad} does not exist")));
            }
        }
        self.scft.validate().map_err(section("scft"))?;
        let d_m = self.d_m();
        if d_m == 0 || d_m % 2 != 0 || d_m > self.encoder.d_token {
            return Err(CliError::Config(format!("field `reduce.d_m`: {d_m} must be even and in [2, d_token]")));
        }
        self.srs.validate().map_err(section("srs"))?;
        self.rat.validate().map_err(section("rat"))?;
        if self.eval.num_negatives == 0 || self.eval.k == 0 || self.eval.seeds.is_empty() {
            return Err(CliError::Config("field `eval`: num_negatives, k and seeds must be non-empty".into()));
        }
        self.eval.bins.validate().map_err(section("eval.bins"))?;
        if self.sweep.gamma.iter().any(|&g| !(g > 0.0)) {
            return Err(CliError::Config("field `sweep.gamma`: values must be positive".into()));
        }
        if self.sweep.alpha.iter().any(|&a| !(a >= 0.0)) {
            return Err(CliError::Config("field `sweep.alpha`: values must be non-negative".into()));
        }
        if self.sweep.d_m.iter().any(|&d| d == 0 || d % 2 != 0 || d > self.encoder.d_token) {
            return Err(CliError::Config("field `sweep.d_m`: values must be even and at most d_token".into()));
        }
        Ok(())
    }
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(CliError::Config(format!("override `{spec}` has an empty key")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("", &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn shipped_file_matches_defaults() {
        assert_eq!(PipelineConfig::from_toml(DEFAULT_TOML, &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn overrides_win() {
        let cfg = PipelineConfig::from_toml("[rat]\ngamma = 4.0\n", &["rat.gamma=0.5".into(), "seed=7".into()]).unwrap();
        assert_eq!(cfg.rat.gamma, 0.5);
        assert_eq!(cfg.rat.seed, 7);
        assert_eq!(cfg.scft.seed, 7);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = PipelineConfig::from_toml("[rat]\ngamma = \"high\"\n", &[]).unwrap_err();
        assert!(err.to_string().contains("rat.gamma"), "{err}");
        let err = PipelineConfig::from_toml("[scft]\nepoch = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        let err = PipelineConfig::from_toml("[rat]\ngamma = -1.0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("`rat`"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn odd_d_m_rejected() {
        let err = PipelineConfig::from_toml("[reduce]\nd_m = 63\n", &[]).unwrap_err();
        assert!(err.to_string().contains("reduce.d_m"));
    }

    #[test]
    fn roundtrip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }
}
