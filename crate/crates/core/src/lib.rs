//! Disentangled graph contrastive learning with cross-view reconstruction
//! and an adversarial view.
//!
//! The crate is organised bottom-up: [`diff`] provides tensors and a
//! reverse-mode tape, [`graph`] loads and batches TU-format datasets,
//! [`augment`] produces contrastive views, [`model`] and [`objective`]
//! define the network and its losses, [`train`] runs the min-max loop and
//! [`eval`] measures representations with a linear probe.

pub mod augment;
pub mod diagnostics;
pub mod diff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod objective;
pub mod train;

pub use augment::{AugmentationKind, AugmentationSpec};
pub use diff::{GradientMap, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use eval::{EvalReport, EmbeddingTable, SweepAxis, SweepMode};
pub use graph::{parse_tu_dataset, to_batch, Graph, GraphBatch, GraphDataset};
pub use model::{init_params, load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
pub use objective::{LossBreakdown, ReconMode};
pub use train::{train, PgdConfig, TrainConfig, TrainRun};
