use std::sync::Arc;

use super::dataset::Graph;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Disjoint union of graphs prepared for message passing.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    /// One row per node; one-hot over node label classes (uniform rows for
    /// masked nodes).
    pub node_features: Tensor,
    /// Directed edge sources; every undirected edge appears in both directions.
    pub edge_src: Arc<[usize]>,
    pub edge_dst: Arc<[usize]>,
    /// Graph index of every node, non-decreasing.
    pub segment_ids: Arc<[usize]>,
    pub num_graphs: usize,
}

impl GraphBatch {
    pub fn num_nodes(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn edge_index(&self) -> Vec<(usize, usize)> {
        self.edge_src.iter().copied().zip(self.edge_dst.iter().copied()).collect()
    }

    /// Nodes per graph.
    pub fn graph_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_graphs];
        for &s in self.segment_ids.iter() {
            sizes[s] += 1;
        }
        sizes
    }
}

/// Batches graphs with one-hot node features.
pub fn to_batch(graphs: &[Graph], num_node_label_classes: usize) -> Result<GraphBatch> {
    build_batch(graphs.iter().map(|g| (g, None)), num_node_label_classes)
}

/// Batches graphs; nodes flagged in the optional mask get the uniform
/// feature row `1 / classes` instead of their one-hot label.
pub(crate) fn build_batch<'a>(
    items: impl IntoIterator<Item = (&'a Graph, Option<&'a [bool]>)>,
    classes: usize,
) -> Result<GraphBatch> {
    if classes == 0 {
        return Err(Error::invalid("need at least one node label class"));
    }
    let mut features = Vec::new();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut segments = Vec::new();
    let mut offset = 0;
    let mut num_graphs = 0;
    let uniform = 1.0 / classes as f64;
    for (gi, (g, mask)) in items.into_iter().enumerate() {
        for (v, &l) in g.node_labels().iter().enumerate() {
            if l >= classes {
                return Err(Error::invalid(format!(
                    "graph {gi}: node label {l} out of range for {classes} classes"
                )));
            }
            if mask.is_some_and(|m| m[v]) {
                features.extend(std::iter::repeat_n(uniform, classes));
            } else {
                features.extend((0..classes).map(|c| if c == l { 1.0 } else { 0.0 }));
            }
            segments.push(gi);
        }
        for &(u, v) in g.edges() {
            src.extend([u + offset, v + offset]);
            dst.extend([v + offset, u + offset]);
        }
        offset += g.num_nodes();
        num_graphs += 1;
    }
    if num_graphs == 0 {
        return Err(Error::invalid("cannot batch an empty list of graphs"));
    }
    Ok(GraphBatch {
        node_features: Tensor::new(vec![offset, classes], features)?,
        edge_src: src.into(),
        edge_dst: dst.into(),
        segment_ids: segments.into(),
        num_graphs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_isolated_node() {
        let g = Graph::new(1, [], vec![2], 0).unwrap();
        let b = to_batch(&[g], 3).unwrap();
        assert_eq!(b.node_features.data(), &[0.0, 0.0, 1.0]);
        assert!(b.edge_index().is_empty());
        assert_eq!(&*b.segment_ids, &[0]);
    }

    #[test]
    fn segments_follow_graph_sizes() {
        let a = Graph::new(2, [(0, 1)], vec![0, 0], 0).unwrap();
        let c = Graph::new(3, [(0, 1), (1, 2)], vec![0, 0, 0], 1).unwrap();
        let b = to_batch(&[a, c], 1).unwrap();
        assert_eq!(&*b.segment_ids, &[0, 0, 1, 1, 1]);
        assert_eq!(b.graph_sizes(), [2, 3]);
        assert!(b.edge_index().contains(&(3, 4)) && b.edge_index().contains(&(4, 3)));
    }

    #[test]
    fn triangle_has_six_directed_edges() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)], vec![0; 3], 0).unwrap();
        let b = to_batch(&[g], 1).unwrap();
        assert_eq!(b.edge_index().len(), 6);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let g = Graph::new(1, [], vec![5], 0).unwrap();
        assert!(to_batch(&[g], 3).is_err());
        assert!(to_batch(&[], 3).is_err());
    }
}
