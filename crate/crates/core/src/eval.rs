//! Ranking metrics under sampled negatives, popularity stratification and
//! embedding diagnostics.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::reduce::pca_fit;
use crate::srs::{Backbone, InteractionDataset};

/// `count` distinct items drawn uniformly from those absent from `seq`.
pub fn sample_negatives(seq: &[usize], n_items: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let seen: HashSet<usize> = seq.iter().copied().collect();
    if seen.iter().any(|&i| i >= n_items) {
        return Err(Error::Data(format!("sequence references an item outside catalog of {n_items}")));
    }
    let eligible = n_items - seen.len();
    if eligible < count {
        return Err(Error::Data(format!("only {eligible} uninteracted items for {count} negatives")));
    }
    if eligible < 4 * count {
        let pool: Vec<usize> = (0..n_items).filter(|i| !seen.contains(i)).collect();
        return Ok(pool.choose_multiple(rng, count).copied().collect());
    }
    let mut picked = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let c = rng.random_range(0..n_items);
        if !seen.contains(&c) && picked.insert(c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Rank of the positive is `1 + #{negatives scoring at least as high}`;
/// returns `(hit@k, ndcg@k)`.
pub fn rank_metrics_at(positive: f64, negatives: &[f64], k: usize) -> Result<(f64, f64)> {
    if negatives.is_empty() {
        return Err(Error::Precondition("rank metrics need at least one negative".into()));
    }
    if !positive.is_finite() || negatives.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("non-finite score in ranking".into()));
    }
    let rank = 1 + negatives.iter().filter(|&&s| s >= positive).count();
    if rank <= k {
        Ok((1.0, 1.0 / ((rank + 1) as f64).log2()))
    } else {
        Ok((0.0, 0.0))
    }
}

/// [`rank_metrics_at`] with `k = 10`.
pub fn rank_metrics(positive: f64, negatives: &[f64]) -> Result<(f64, f64)> {
    rank_metrics_at(positive, negatives, 10)
}

/// Items ordered by descending count, ties by ascending id; the first
/// `|V| - ⌈0.8 |V|⌉` form the head, the rest the tail.
pub fn tail_split(popularity: &[u64]) -> (Vec<usize>, Vec<usize>) {
    let n = popularity.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| popularity[b].cmp(&popularity[a]).then(a.cmp(&b)));
    let tail_len = (n * 4).div_ceil(5);
    let tail = order.split_off(n - tail_len);
    (order, tail)
}

/// Popularity bins given by their lower edges; the last bin is open-ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityBins {
    pub lower_edges: Vec<u64>,
}

impl Default for PopularityBins {
    fn default() -> Self {
        Self { lower_edges: vec![1, 5, 10, 20, 40] }
    }
}

impl PopularityBins {
    pub fn validate(&self) -> Result<()> {
        if self.lower_edges.is_empty() || self.lower_edges[0] == 0 || self.lower_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("popularity bin edges must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        let e = &self.lower_edges;
        (0..e.len())
            .map(|i| match e.get(i + 1) {
                Some(next) => format!("{}-{}", e[i], next - 1),
                None => format!("{}+", e[i]),
            })
            .collect()
    }

    /// Bin index of `count`; `None` below the first edge.
    pub fn bin(&self, count: u64) -> Option<usize> {
        self.lower_edges.iter().rposition(|&edge| count >= edge)
    }
}

/// Bin of every item; items with zero count are left out with a warning.
pub fn group_by_popularity(popularity: &[u64], bins: &PopularityBins) -> Vec<Option<usize>> {
    let groups: Vec<Option<usize>> = popularity.iter().map(|&c| bins.bin(c)).collect();
    let unbinned = groups.iter().filter(|g| g.is_none()).count();
    if unbinned > 0 {
        log::warn!("{unbinned} items have no train interactions and are excluded from group analysis");
    }
    groups
}

/// `log mean_{i<j} exp(−2 ‖ê_i − ê_j‖²)` over length-normalized rows.
pub fn uniformity(e: &Mat) -> Result<f64> {
    let n = e.nrows();
    if n < 2 {
        return Err(Error::Precondition("uniformity needs at least 2 rows".into()));
    }
    let mut unit = e.clone();
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Data(format!("row {i} has zero or non-finite norm")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    let gram = unit.dot(&unit.t());
    // ‖a − b‖² = 2 − 2 a·b for unit rows; every exponent lies in [−8, 0].
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let sq = (2.0 - 2.0 * gram[[i, j]]).max(0.0);
            sum += (-2.0 * sq).exp();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((sum / pairs).ln())
}

/// Top-2 principal-axis coordinates of each row.
pub fn project_2d(e: &Mat) -> Result<Mat> {
    if e.nrows() < 3 || e.ncols() < 2 {
        return Err(Error::Precondition("2-D projection needs at least 3 rows and 2 columns".into()));
    }
    pca_fit(e, 2)?.transform(e)
}

/// CSV `item_id,x,y,popularity,group`; items without a bin get group `none`.
pub fn projection_csv(coords: &Mat, popularity: &[u64], bins: &PopularityBins) -> Result<String> {
    if coords.nrows() != popularity.len() || coords.ncols() != 2 {
        return Err(Error::Shape("projection rows must match the popularity vector".into()));
    }
    let labels = bins.labels();
    let mut out = String::from("item_id,x,y,popularity,group\n");
    for (i, row) in coords.rows().into_iter().enumerate() {
        let group = bins.bin(popularity[i]).map_or("none", |b| labels[b].as_str());
        writeln!(out, "{i},{},{},{},{group}", row[0], row[1], popularity[i]).expect("write to string");
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub num_negatives: usize,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub bins: PopularityBins,
    pub split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { num_negatives: 100, k: 10, seeds: vec![42, 43, 44], bins: PopularityBins::default(), split: Split::Test }
    }
}

/// Per-user ranking outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct UserOutcome {
    pub positive: usize,
    pub hit: f64,
    pub ndcg: f64,
}

/// Scores each user's held-out item against sampled negatives.
pub fn evaluate_users(backbone: &Backbone, table: &Mat, dataset: &InteractionDataset, config: &EvalConfig, seed: u64) -> Result<Vec<UserOutcome>> {
    if table.nrows() != dataset.n_items() {
        return Err(Error::Shape(format!("item table has {} rows for {} items", table.nrows(), dataset.n_items())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = dataset.users();
    let histories: Vec<&[usize]> = users
        .iter()
        .map(|u| match config.split {
            Split::Valid => u.valid_history(),
            Split::Test => u.test_history(),
        })
        .collect();
    let reps = backbone.user_representations(table, &histories)?;
    let mut out = Vec::with_capacity(users.len());
    for (i, u) in users.iter().enumerate() {
        let positive = match config.split {
            Split::Valid => u.valid(),
            Split::Test => u.test(),
        };
        let negatives = sample_negatives(&u.items, dataset.n_items(), config.num_negatives, &mut rng)?;
        let r = reps.row(i);
        let pos_score = r.dot(&table.row(positive));
        let neg_scores: Vec<f64> = negatives.iter().map(|&n| r.dot(&table.row(n))).collect();
        let (hit, ndcg) = rank_metrics_at(pos_score, &neg_scores, config.k)?;
        out.push(UserOutcome { positive, hit, ndcg });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hit: f64,
    pub ndcg: f64,
    pub users: usize,
}

impl Metrics {
    fn from_outcomes<'a>(outcomes: impl Iterator<Item = &'a UserOutcome>) -> Self {
        let (mut hit, mut ndcg, mut users) = (0.0, 0.0, 0usize);
        for o in outcomes {
            hit += o.hit;
            ndcg += o.ndcg;
            users += 1;
        }
        if users == 0 {
            return Self::default();
        }
        Self { hit: hit / users as f64, ndcg: ndcg / users as f64, users }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub label: String,
    pub hit: f64,
    pub ndcg: f64,
    pub users: usize,
    pub items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub overall: Metrics,
    pub tail: Metrics,
    pub head: Metrics,
    pub groups: Vec<GroupMetrics>,
}

/// Aggregates per-user outcomes overall, by head/tail and by popularity bin.
pub fn summarize(outcomes: &[UserOutcome], popularity: &[u64], bins: &PopularityBins) -> Summary {
    let (head, tail) = tail_split(popularity);
    let tail_set: HashSet<usize> = tail.into_iter().collect();
    let head_set: HashSet<usize> = head.into_iter().collect();
    let item_groups = group_by_popularity(popularity, bins);
    let groups = bins
        .labels()
        .into_iter()
        .enumerate()
        .map(|(b, label)| {
            let m = Metrics::from_outcomes(outcomes.iter().filter(|o| item_groups[o.positive] == Some(b)));
            let items = item_groups.iter().filter(|g| **g == Some(b)).count();
            GroupMetrics { label, hit: m.hit, ndcg: m.ndcg, users: m.users, items }
        })
        .collect();
    Summary {
        overall: Metrics::from_outcomes(outcomes.iter()),
        tail: Metrics::from_outcomes(outcomes.iter().filter(|o| tail_set.contains(&o.positive))),
        head: Metrics::from_outcomes(outcomes.iter().filter(|o| head_set.contains(&o.positive))),
        groups,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub seeds: Vec<SeedReport>,
    pub mean: Summary,
}

fn mean_metrics(ms: &[&Metrics]) -> Metrics {
    let n = ms.len().max(1) as f64;
    Metrics {
        hit: ms.iter().map(|m| m.hit).sum::<f64>() / n,
        ndcg: ms.iter().map(|m| m.ndcg).sum::<f64>() / n,
        users: (ms.iter().map(|m| m.users).sum::<usize>() as f64 / n).round() as usize,
    }
}

impl EvalReport {
    pub fn new(model: impl Into<String>, seeds: Vec<SeedReport>) -> Result<Self> {
        let first = seeds.first().ok_or_else(|| Error::Precondition("report needs at least one seed".into()))?;
        let pick = |f: fn(&Summary) -> &Metrics| mean_metrics(&seeds.iter().map(|s| f(&s.summary)).collect::<Vec<_>>());
        let groups = (0..first.summary.groups.len())
            .map(|b| {
                let gs: Vec<&GroupMetrics> = seeds.iter().map(|s| &s.summary.groups[b]).collect();
                let n = gs.len() as f64;
                GroupMetrics {
                    label: gs[0].label.clone(),
                    hit: gs.iter().map(|g| g.hit).sum::<f64>() / n,
                    ndcg: gs.iter().map(|g| g.ndcg).sum::<f64>() / n,
                    users: (gs.iter().map(|g| g.users).sum::<usize>() as f64 / n).round() as usize,
                    items: gs[0].items,
                }
            })
            .collect();
        let mean = Summary { overall: pick(|s| &s.overall), tail: pick(|s| &s.tail), head: pick(|s| &s.head), groups };
        Ok(Self { model: model.into(), seeds, mean })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table of the seed means.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.seed.to_string()).collect();
        let mut out = format!("model: {}  seeds: {}\n", self.model, seeds.join(" "));
        writeln!(out, "{:<10} {:>8} {:>8} {:>7} {:>7}", "segment", "H@10", "N@10", "users", "items").unwrap();
        let m = &self.mean;
        for (name, x) in [("overall", &m.overall), ("tail", &m.tail), ("head", &m.head)] {
            writeln!(out, "{name:<10} {:>8.4} {:>8.4} {:>7} {:>7}", x.hit, x.ndcg, x.users, "").unwrap();
        }
        for gm in &m.groups {
            writeln!(out, "{:<10} {:>8.4} {:>8.4} {:>7} {:>7}", gm.label, gm.hit, gm.ndcg, gm.users, gm.items).unwrap();
        }
        out
    }
}

/// Evaluates one model under every configured seed.
pub fn evaluate(model_name: &str, backbone: &Backbone, table: &Mat, dataset: &InteractionDataset, config: &EvalConfig) -> Result<EvalReport> {
    config.bins.validate()?;
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let outcomes = evaluate_users(backbone, table, dataset, config, seed)?;
        seeds.push(SeedReport { seed, summary: summarize(&outcomes, dataset.popularity(), &config.bins) });
    }
    EvalReport::new(model_name, seeds)
}
