use rayon::prelude::*;

use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{to_batch, GraphBatch, GraphDataset};
use crate::model::ModelParams;

const EMBED_CHUNK: usize = 64;

/// Invariant embeddings of every graph together with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    embeddings: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl EmbeddingTable {
    pub fn new(embeddings: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if embeddings.rank() != 2 || embeddings.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "embedding table",
                left: embeddings.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if !embeddings.is_finite() {
            return Err(Error::NonFinite { op: "embedding table" });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {l} >= {num_classes} classes")));
        }
        Ok(Self {
            embeddings,
            labels,
            num_classes,
        })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `z_inv` for every graph of a batch.
pub fn embed_batch(params: &ModelParams, batch: &GraphBatch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let model = params.bind(&mut tape);
    let z = model.encode(&mut tape, batch, None)?.z;
    let z_inv = model.extract_inv(&mut tape, z)?;
    Ok(tape.value(z_inv).clone())
}

/// Embeds each chunk with `f` in parallel and stacks the results in order.
pub(crate) fn embed_chunks<F>(n: usize, f: F) -> Result<Tensor>
where
    F: Fn(std::ops::Range<usize>) -> Result<Tensor> + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(EMBED_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| f(s..(s + EMBED_CHUNK).min(n)))
        .collect::<Result<Vec<_>>>()?;
    Tensor::vstack(&parts)
}

/// Deterministic, augmentation-free embedding of every graph.
pub fn embed_dataset(params: &ModelParams, dataset: &GraphDataset) -> Result<EmbeddingTable> {
    let classes = dataset.num_node_label_classes();
    if params.input_dim != classes {
        return Err(Error::ShapeMismatch {
            op: "embed_dataset",
            left: vec![params.input_dim],
            right: vec![classes],
        });
    }
    if dataset.is_empty() {
        return Err(Error::invalid("cannot embed an empty dataset"));
    }
    let graphs = dataset.graphs();
    let embeddings = embed_chunks(graphs.len(), |r| {
        embed_batch(params, &to_batch(&graphs[r], classes)?)
    })?;
    EmbeddingTable::new(embeddings, dataset.labels(), dataset.num_graph_classes())
}
