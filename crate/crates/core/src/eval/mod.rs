//! Linear-probe evaluation of frozen embeddings, ablations and robustness
//! sweeps.

mod embed;
mod experiments;
mod probe;

pub use embed::{embed_batch, embed_dataset, EmbeddingTable};
pub use experiments::{
    ablation_csv, evaluate_params, probe_table, run_ablation, run_robustness_sweep, sweep_csv,
    train_and_evaluate, train_and_evaluate_many, AblationResult, AblationVariant,
    SeededEvaluation, SweepAxis, SweepMode, SweepRow,
};
pub use probe::{
    linear_probe, train_classifier, train_fold, EvalReport, FoldAccuracy, LinearClassifier,
};
