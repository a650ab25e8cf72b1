//! Synthetic benchmark generator at default settings.

use llmemb::data::{gen_catalog, gen_interactions, SynthConfig};
use llmemb::srs::InteractionDataset;
use llmemb::Catalog;

#[test]
fn default_config_is_long_tailed() {
    let cfg = SynthConfig::default();
    let syn = gen_catalog(&cfg).unwrap();
    let ds = gen_interactions(&cfg, &syn).unwrap();
    assert_eq!(ds.n_items(), 2000);
    assert_eq!(ds.len(), 5000);
    let below = ds.popularity().iter().filter(|&&c| c < 5).count();
    assert!(below > 1000, "{below} of 2000 items below 5 train interactions");
}

#[test]
fn same_cluster_items_share_half_their_attributes_by_default() {
    let cfg = SynthConfig { n_items: 400, ..SynthConfig::default() };
    let (mut shared, mut total) = (0usize, 0usize);
    for seed in 0..3 {
        let syn = gen_catalog(&SynthConfig { seed, ..cfg.clone() }).unwrap();
        let items = syn.catalog.items();
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                if syn.clusters[i] == syn.clusters[j] {
                    shared += items[i].attributes.iter().zip(&items[j].attributes).filter(|(a, b)| a.1 == b.1).count();
                    total += items[i].attributes.len();
                }
            }
        }
    }
    let frac = shared as f64 / total as f64;
    assert!(frac >= 0.5, "shared fraction {frac}");
}

#[test]
fn files_roundtrip_and_are_reproducible() {
    let cfg = SynthConfig { n_items: 300, n_users: 400, ..SynthConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let write = |tag: &str| {
        let syn = gen_catalog(&cfg).unwrap();
        let ds = gen_interactions(&cfg, &syn).unwrap();
        let (c, i) = (dir.path().join(format!("{tag}.jsonl")), dir.path().join(format!("{tag}.txt")));
        syn.catalog.save(&c).unwrap();
        ds.save(&i).unwrap();
        (syn, ds, c, i)
    };
    let (syn, ds, c1, i1) = write("a");
    let (_, _, c2, i2) = write("b");
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    assert_eq!(std::fs::read(&i1).unwrap(), std::fs::read(&i2).unwrap());
    assert_eq!(Catalog::load(&c1).unwrap(), syn.catalog);
    assert_eq!(InteractionDataset::load(&i1, 300).unwrap(), ds);
}
