//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use acdgcl_core::augment::{sample_view_pair, to_view_batch};
use acdgcl_core::{init_params, parse_tu_dataset, to_batch, GraphBatch, GraphDataset, ModelParams, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// MUTAG from `ACDGCL_DATA_DIR` or the workspace `data/` directory.
pub fn mutag() -> GraphDataset {
    let root = std::env::var_os("ACDGCL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let dir = if root.join("MUTAG_graph_indicator.txt").exists() { root } else { root.join("MUTAG") };
    parse_tu_dataset(&dir).expect("MUTAG dataset")
}

/// A default-sized model, the first `batch_size` graphs as a clean batch,
/// and two augmented views of them.
pub struct BatchFixture {
    pub params: ModelParams,
    pub clean: GraphBatch,
    pub view1: GraphBatch,
    pub view2: GraphBatch,
}

pub fn batch_fixture(dataset: &GraphDataset, batch_size: usize) -> BatchFixture {
    let cfg = TrainConfig::default();
    let classes = dataset.num_node_label_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(&cfg.model, classes, &mut rng).expect("valid model");
    let graphs = &dataset.graphs()[..batch_size.min(dataset.len())];
    let pairs: Vec<_> = graphs
        .iter()
        .map(|g| sample_view_pair(g, &cfg.augmentations, &mut rng).expect("valid family"))
        .collect();
    let v1: Vec<_> = pairs.iter().map(|p| &p.view1).collect();
    let v2: Vec<_> = pairs.iter().map(|p| &p.view2).collect();
    BatchFixture {
        params,
        clean: to_batch(graphs, classes).expect("batch"),
        view1: to_view_batch(&v1, classes).expect("batch"),
        view2: to_view_batch(&v2, classes).expect("batch"),
    }
}
