use std::path::PathBuf;

use acdgcl_core::eval::embed_dataset;
use acdgcl_core::{init_params, parse_tu_dataset, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mutag_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

#[test]
fn mutag_statistics() {
    let ds = parse_tu_dataset(mutag_dir()).unwrap();
    assert_eq!(ds.len(), 188);
    assert_eq!(ds.num_graph_classes(), 2);
    assert_eq!(ds.num_node_label_classes(), 7);
    let positives = ds.labels().iter().filter(|&&l| l == 1).count();
    assert_eq!(positives, 125);
    let nodes: usize = ds.graphs().iter().map(|g| g.num_nodes()).sum();
    let edges: usize = ds.graphs().iter().map(|g| g.num_edges()).sum();
    assert_eq!(nodes, 3371);
    assert_eq!(edges, 3721);
}

#[test]
fn mutag_embeds_with_default_model() {
    let ds = parse_tu_dataset(mutag_dir()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(&ModelConfig::default(), 7, &mut rng).unwrap();
    let table = embed_dataset(&params, &ds).unwrap();
    assert_eq!(table.embeddings().shape(), &[188, 32]);
    assert!(table.embeddings().is_finite());
}
