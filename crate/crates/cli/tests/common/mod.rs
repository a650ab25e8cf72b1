#![allow(dead_code)]

use std::path::Path;

/// A pipeline small enough to run end to end in a few seconds.
pub const TINY: &str = r#"
seed = 3

[data]
n_items = 120
n_users = 200
n_clusters = 6
mean_seq_len = 8.0
max_seq_len = 20

[encoder]
d_token = 32
n_layers = 1
n_heads = 2
max_len = 32

[lora]
rank = 4

[scft]
epochs = 1
batch_size = 16

[reduce]
d_m = 16

[srs]
epochs = 2
batch_size = 64

[srs.backbone]
d = 16
n_blocks = 1
max_seq_len = 20

[rat]
epochs = 2
batch_size = 64

[eval]
num_negatives = 20
seeds = [1, 2]
"#;

pub fn write_tiny(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}
