//! Graph classification datasets: TU-format parsing, batching and
//! cross-validation splits.

mod batch;
mod dataset;
mod folds;

pub(crate) use batch::build_batch;
pub use batch::{to_batch, GraphBatch};
pub use dataset::{parse_tu_dataset, write_tu_dataset, Graph, GraphDataset};
pub use folds::{kfold_split, FoldSplit};
