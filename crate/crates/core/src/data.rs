//! Synthetic long-tail benchmark.
//!
//! Items belong to latent taste clusters. Cluster-correlated attributes mostly
//! take their cluster's prototype value, so items of one cluster read alike.
//! Item draws follow a global Zipf law and users wander between clusters,
//! which yields a heavy-tailed popularity histogram where most items are rare
//! but still share text with popular cluster mates.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ItemRecord};
use crate::error::{Error, Result};
use crate::srs::dataset::{InteractionDataset, UserSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttrRule {
    /// Cluster prototype value, replaced by a uniform draw with probability `noise`.
    Cluster { noise: f64 },
    /// Uniform draw independent of the cluster.
    Random,
    /// `words` independent uniform draws joined by spaces (item names).
    Compound { words: usize },
    /// Tier of the item's latent popularity on a log scale, values ordered
    /// from most to least popular; moved to a neighbouring tier with
    /// probability `noise`. Plays the role of a review-count field.
    Popularity { noise: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrSpec {
    pub name: String,
    pub values: Vec<String>,
    pub rule: AttrRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub n_clusters: usize,
    pub zipf_exponent: f64,
    pub mean_seq_len: f64,
    pub min_seq_len: usize,
    pub max_seq_len: usize,
    /// Probability that the next interaction stays in the current cluster.
    pub stay_prob: f64,
    /// Probability that a cluster switch returns to the user's home cluster.
    pub home_prob: f64,
    pub allow_repeats: bool,
    pub seed: u64,
    /// Empty means [`default_schema`].
    pub attr_schema: Vec<AttrSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_users: 5000,
            n_clusters: 40,
            zipf_exponent: 1.5,
            mean_seq_len: 12.0,
            min_seq_len: 3,
            max_seq_len: 50,
            stay_prob: 0.5,
            home_prob: 0.3,
            allow_repeats: false,
            seed: 7,
            attr_schema: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn schema(&self) -> Vec<AttrSpec> {
        if self.attr_schema.is_empty() {
            default_schema(self.seed)
        } else {
            self.attr_schema.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_clusters == 0 {
            return Err(Error::Config("synthetic data needs at least one item and one cluster".into()));
        }
        if self.min_seq_len < 3 {
            return Err(Error::Config("min_seq_len must be at least 3 for leave-one-out splits".into()));
        }
        if self.max_seq_len < self.min_seq_len || self.mean_seq_len < self.min_seq_len as f64 {
            return Err(Error::Config("sequence length bounds are inconsistent".into()));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::Config("zipf_exponent must be positive".into()));
        }
        let schema = self.schema();
        if schema.is_empty() {
            return Err(Error::Config("attribute schema is empty".into()));
        }
        let mut names = HashSet::new();
        for a in &schema {
            if a.values.is_empty() {
                return Err(Error::Config(format!("attribute `{}` has an empty vocabulary", a.name)));
            }
            if !names.insert(a.name.as_str()) {
                return Err(Error::Config(format!("attribute `{}` declared twice", a.name)));
            }
        }
        Ok(())
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// `count` distinct pronounceable pseudo-words not already in `taken`.
pub fn pseudo_words(count: usize, rng: &mut impl Rng, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Point-of-interest style schema with generated vocabularies.
pub fn default_schema(seed: u64) -> Vec<AttrSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a77e);
    let mut taken = BTreeSet::new();
    let mut words = |n| pseudo_words(n, &mut rng, &mut taken);
    let price = ["cheap", "moderate", "pricey", "luxury"].map(String::from).to_vec();
    let reviews = ["abundant", "plentiful", "steady", "sparse", "scarce"].map(String::from).to_vec();
    vec![
        AttrSpec { name: "name".into(), values: words(300), rule: AttrRule::Compound { words: 2 } },
        AttrSpec { name: "category".into(), values: words(48), rule: AttrRule::Cluster { noise: 0.05 } },
        AttrSpec { name: "style".into(), values: words(48), rule: AttrRule::Cluster { noise: 0.1 } },
        AttrSpec { name: "neighborhood".into(), values: words(32), rule: AttrRule::Cluster { noise: 0.1 } },
        AttrSpec { name: "price".into(), values: price, rule: AttrRule::Cluster { noise: 0.2 } },
        AttrSpec { name: "amenity".into(), values: words(12), rule: AttrRule::Random },
        AttrSpec { name: "reviews".into(), values: reviews, rule: AttrRule::Popularity { noise: 0.1 } },
    ]
}

/// Catalog plus the latent cluster of each item (diagnostics only).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCatalog {
    pub catalog: Catalog,
    pub clusters: Vec<usize>,
    /// Latent global popularity rank of each item (0 = most popular).
    pub popularity_rank: Vec<usize>,
}

impl SyntheticCatalog {
    pub fn clusters_csv(&self) -> String {
        let mut out = String::from("item_id,cluster_id\n");
        for (i, c) in self.clusters.iter().enumerate() {
            writeln!(out, "{i},{c}").expect("write to string");
        }
        out
    }

    pub fn save_clusters(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.clusters_csv())?;
        Ok(())
    }
}

pub fn gen_catalog(config: &SynthConfig) -> Result<SyntheticCatalog> {
    config.validate()?;
    let schema = config.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Prototype value index per (cluster, attribute). Vocabularies at least as
    // large as the cluster count get distinct prototypes where possible.
    let prototypes: Vec<Vec<usize>> = {
        let mut per_attr: Vec<Vec<usize>> = Vec::new();
        for spec in &schema {
            let n = spec.values.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            per_attr.push((0..config.n_clusters).map(|c| if n >= config.n_clusters { order[c] } else { rng.random_range(0..n) }).collect());
        }
        (0..config.n_clusters).map(|c| per_attr.iter().map(|v| v[c]).collect()).collect()
    };

    let n = config.n_items;
    let mut popularity_rank: Vec<usize> = (0..n).collect();
    popularity_rank.shuffle(&mut rng);

    let mut items = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);
    for id in 0..n {
        let cluster = rng.random_range(0..config.n_clusters);
        let attributes = schema
            .iter()
            .enumerate()
            .map(|(a, spec)| {
                let pick = |rng: &mut ChaCha8Rng| spec.values[rng.random_range(0..spec.values.len())].clone();
                let value = match spec.rule {
                    AttrRule::Cluster { noise } => {
                        if rng.random::<f64>() < noise {
                            pick(&mut rng)
                        } else {
                            spec.values[prototypes[cluster][a]].clone()
                        }
                    }
                    AttrRule::Random => pick(&mut rng),
                    AttrRule::Compound { words } => {
                        let parts: Vec<String> = (0..words.max(1)).map(|_| pick(&mut rng)).collect();
                        parts.join(" ")
                    }
                    AttrRule::Popularity { noise } => {
                        let k = spec.values.len() as i64;
                        let q = (popularity_rank[id] as f64 + 0.5) / n as f64;
                        let mut tier = (q.log2().floor() as i64 + k).clamp(0, k - 1);
                        if rng.random::<f64>() < noise {
                            tier = (tier + if rng.random::<bool>() { 1 } else { -1 }).clamp(0, k - 1);
                        }
                        spec.values[tier as usize].clone()
                    }
                };
                (spec.name.clone(), value)
            })
            .collect();
        items.push(ItemRecord::new(id, attributes)?);
        clusters.push(cluster);
    }
    Ok(SyntheticCatalog { catalog: Catalog::new(items)?, clusters, popularity_rank })
}

/// Samples user sequences from cluster-conditioned Zipf-weighted draws.
pub fn gen_interactions(config: &SynthConfig, synthetic: &SyntheticCatalog) -> Result<InteractionDataset> {
    config.validate()?;
    let n = synthetic.catalog.len();
    if n != synthetic.clusters.len() || n != synthetic.popularity_rank.len() {
        return Err(Error::Data("cluster sidecar does not match catalog".into()));
    }
    if !config.allow_repeats && n < config.min_seq_len {
        return Err(Error::Config(format!(
            "min_seq_len {} unreachable without repeats in a catalog of {n} items",
            config.min_seq_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));

    let weight: Vec<f64> = synthetic.popularity_rank.iter().map(|&r| ((r + 1) as f64).powf(-config.zipf_exponent)).collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); config.n_clusters];
    for (i, &c) in synthetic.clusters.iter().enumerate() {
        members[c].push(i);
    }
    let live: Vec<usize> = (0..config.n_clusters).filter(|&c| !members[c].is_empty()).collect();
    let mass: Vec<f64> = live.iter().map(|&c| members[c].iter().map(|&i| weight[i]).sum()).collect();
    let cluster_dist = WeightedIndex::new(&mass).map_err(|e| Error::Config(e.to_string()))?;
    let within: Vec<Option<WeightedIndex<f64>>> = members
        .iter()
        .map(|m| if m.is_empty() { None } else { WeightedIndex::new(m.iter().map(|&i| weight[i])).ok() })
        .collect();

    let extra_mean = config.mean_seq_len - config.min_seq_len as f64;
    let cap = if config.allow_repeats { config.max_seq_len } else { config.max_seq_len.min(n) };
    let mut users = Vec::with_capacity(config.n_users);
    for user_id in 0..config.n_users {
        // Geometric number of extra items on top of the minimum.
        let p = 1.0 / (1.0 + extra_mean);
        let mut len = config.min_seq_len;
        while len < cap && rng.random::<f64>() >= p {
            len += 1;
        }
        let home = live[cluster_dist.sample(&mut rng)];
        let mut current = home;
        let mut seq: Vec<usize> = Vec::with_capacity(len);
        let mut used = HashSet::new();
        while seq.len() < len {
            if !seq.is_empty() && rng.random::<f64>() >= config.stay_prob {
                current = if rng.random::<f64>() < config.home_prob { home } else { live[cluster_dist.sample(&mut rng)] };
            }
            let dist = within[current].as_ref().expect("live cluster");
            let cluster_items = &members[current];
            let allowed = |i: &usize| if config.allow_repeats { seq.last() != Some(i) } else { !used.contains(i) };
            let mut chosen = None;
            for _ in 0..8 {
                let cand = cluster_items[dist.sample(&mut rng)];
                if allowed(&cand) {
                    chosen = Some(cand);
                    break;
                }
            }
            // Rejection keeps failing once the user has taken the cluster's
            // popular items; draw exactly from what is left, first within the
            // cluster, then anywhere.
            let chosen = chosen
                .or_else(|| weighted_pick(cluster_items.iter().copied().filter(allowed), &weight, &mut rng))
                .or_else(|| weighted_pick((0..n).filter(allowed), &weight, &mut rng));
            let Some(item) = chosen else { break };
            used.insert(item);
            seq.push(item);
        }
        if seq.len() < config.min_seq_len {
            return Err(Error::Config("could not reach min_seq_len with the given catalog".into()));
        }
        users.push(UserSequence { user_id: user_id as u64, items: seq });
    }
    InteractionDataset::new(n, users)
}

fn weighted_pick(candidates: impl Iterator<Item = usize>, weight: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let pool: Vec<usize> = candidates.collect();
    let dist = WeightedIndex::new(pool.iter().map(|&i| weight[i])).ok()?;
    Some(pool[dist.sample(rng)])
}
