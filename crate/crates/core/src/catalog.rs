//! Item catalog, prompt rendering and attribute-drop augmentation.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemRecord {
    pub item_id: usize,
    /// `(name, value)` pairs in catalog order.
    pub attributes: Vec<(String, String)>,
}

impl ItemRecord {
    pub fn new(item_id: usize, attributes: Vec<(String, String)>) -> Result<Self> {
        let item = Self { item_id, attributes };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::Data(format!("item {} has no attributes", self.item_id)));
        }
        let mut seen = HashSet::new();
        for (name, _) in &self.attributes {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("item {} repeats attribute `{name}`", self.item_id)));
            }
        }
        Ok(())
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub instruction: String,
    /// Pattern with exactly one `{name}` and one `{value}` slot.
    pub attribute_format: String,
    pub separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: "The point of interest has the following attributes: ".into(),
            attribute_format: "{name} is {value}".into(),
            separator: "; ".into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        let names = self.attribute_format.matches("{name}").count();
        let values = self.attribute_format.matches("{value}").count();
        if names != 1 || values != 1 {
            return Err(Error::Config(format!(
                "attribute_format must contain one {{name}} and one {{value}} slot, got `{}`",
                self.attribute_format
            )));
        }
        Ok(())
    }

    fn render_attribute(&self, name: &str, value: &str) -> String {
        // Substitute in one pass so values containing "{name}" stay literal.
        let (before, after) = self.attribute_format.split_once("{name}").expect("validated template");
        let sub = |s: &str| s.replace("{value}", value);
        format!("{}{}{}", sub(before), name, sub(after))
    }
}

/// Renders `[instruction, A_j1, ..., A_jm]` for the selected attribute indices
/// (all attributes when `subset` is `None`), always in catalog order.
pub fn build_prompt(item: &ItemRecord, template: &PromptTemplate, subset: Option<&[usize]>) -> Result<String> {
    template.validate()?;
    let k = item.num_attributes();
    let indices: Vec<usize> = match subset {
        None => (0..k).collect(),
        Some([]) => return Err(Error::Precondition("attribute subset must be non-empty".into())),
        Some(s) => {
            if let Some(bad) = s.iter().find(|&&i| i >= k) {
                return Err(Error::Precondition(format!("attribute index {bad} out of range for {k} attributes")));
            }
            let mut v = s.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let parts: Vec<String> = indices
        .iter()
        .map(|&i| {
            let (name, value) = &item.attributes[i];
            template.render_attribute(name, value)
        })
        .collect();
    Ok(format!("{}{}", template.instruction, parts.join(&template.separator)))
}

/// Independent Bernoulli(`drop_ratio`) drop per attribute, resampled until at
/// least one attribute survives. Returned indices are ascending.
pub fn sample_kept_attributes(k: usize, drop_ratio: f64, rng: &mut impl Rng) -> Vec<usize> {
    debug_assert!(k >= 1);
    if drop_ratio >= 1.0 {
        return vec![rng.random_range(0..k)];
    }
    loop {
        let kept: Vec<usize> = (0..k).filter(|_| rng.random::<f64>() >= drop_ratio).collect();
        if !kept.is_empty() {
            return kept;
        }
    }
}

/// Builds two augmented views of `item`, each from its own child random
/// stream seeded off `rng`.
pub fn augment_pair(
    item: &ItemRecord,
    template: &PromptTemplate,
    drop_ratio: f64,
    rng: &mut impl RngCore,
) -> Result<(String, String)> {
    if !(0.0..=1.0).contains(&drop_ratio) {
        return Err(Error::Precondition(format!("drop ratio {drop_ratio} outside [0, 1]")));
    }
    if item.num_attributes() == 0 {
        return Err(Error::Precondition(format!("item {} has no attributes", item.item_id)));
    }
    let mut first = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut second = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let k = item.num_attributes();
    let a = sample_kept_attributes(k, drop_ratio, &mut first);
    let b = sample_kept_attributes(k, drop_ratio, &mut second);
    Ok((build_prompt(item, template, Some(&a))?, build_prompt(item, template, Some(&b))?))
}

/// Items indexed densely by id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Catalog {
    items: Vec<ItemRecord>,
}

#[derive(Serialize, Deserialize)]
struct CatalogLine {
    item_id: usize,
    attributes: serde_json::Map<String, serde_json::Value>,
}

impl Catalog {
    /// Sorts by id and checks ids are exactly `0..n`.
    pub fn new(mut items: Vec<ItemRecord>) -> Result<Self> {
        items.sort_by_key(|i| i.item_id);
        for (pos, item) in items.iter().enumerate() {
            if item.item_id != pos {
                return Err(Error::Data(format!(
                    "catalog ids must be dense and unique from 0; found {} at position {pos}",
                    item.item_id
                )));
            }
            item.validate()?;
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn get(&self, id: usize) -> Option<&ItemRecord> {
        self.items.get(id)
    }

    /// Full prompts for every item in id order.
    pub fn prompts(&self, template: &PromptTemplate) -> Result<Vec<String>> {
        self.items.iter().map(|i| build_prompt(i, template, None)).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            let attributes = item
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            let line = CatalogLine { item_id: item.item_id, attributes };
            out.push_str(&serde_json::to_string(&line).expect("catalog line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::File::create(path)?.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut items = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CatalogLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("catalog line {}: {e}", lineno + 1)))?;
            let attributes = parsed
                .attributes
                .into_iter()
                .map(|(k, v)| {
                    let v = match v {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    (k, v)
                })
                .collect();
            items.push(ItemRecord::new(parsed.item_id, attributes)?);
        }
        Self::new(items)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(fs::File::open(path)?))
    }
}
