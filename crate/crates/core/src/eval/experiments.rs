use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{embed_batch, embed_chunks, embed_dataset, EmbeddingTable};
use super::probe::{linear_probe, EvalReport, FoldAccuracy};
use crate::augment::to_view_batch;
use crate::diff::Tape;
use crate::error::{Error, Result};
use crate::graph::{kfold_split, to_batch, GraphDataset};
use crate::model::ModelParams;
use crate::objective::ReconMode;
use crate::train::{pgd_maximize, train, EvalConfig, ProbeConfig, TrainConfig, TrainRun};

/// Probes `table` under every seed's fold split.
pub fn probe_table(table: &EmbeddingTable, eval: &EvalConfig, probe: &ProbeConfig) -> Result<Vec<FoldAccuracy>> {
    let mut out = Vec::new();
    for &seed in &eval.seeds {
        let folds = kfold_split(table.len(), eval.folds, seed)?;
        out.extend(linear_probe(table, &folds, seed, probe)?);
    }
    Ok(out)
}

/// Evaluates fixed parameters: one embedding pass, then every seed's folds.
pub fn evaluate_params(
    params: &ModelParams,
    dataset: &GraphDataset,
    eval: &EvalConfig,
    probe: &ProbeConfig,
) -> Result<EvalReport> {
    let table = embed_dataset(params, dataset)?;
    EvalReport::from_folds(probe_table(&table, eval, probe)?, None)
}

/// Result of training one model per seed and probing each.
#[derive(Clone, Debug)]
pub struct SeededEvaluation {
    pub report: EvalReport,
    /// One run per seed, in `config.eval.seeds` order.
    pub runs: Vec<TrainRun>,
}

/// Trains every `(config, seed)` pair in parallel; the model trained with
/// seed `s` is probed on the fold split drawn with seed `s`.
pub fn train_and_evaluate_many(configs: &[TrainConfig], dataset: &GraphDataset) -> Result<Vec<SeededEvaluation>> {
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.eval.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let cfg = TrainConfig {
                seed,
                ..configs[i].clone()
            };
            let run = train(&cfg, dataset)?;
            let table = embed_dataset(&run.params, dataset)?;
            let folds = kfold_split(table.len(), cfg.eval.folds, seed)?;
            let accs = linear_probe(&table, &folds, seed, &cfg.probe)?;
            Ok((i, run, accs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let mut runs = Vec::new();
        let mut folds = Vec::new();
        for (j, run, accs) in &results {
            if *j == i {
                runs.push(run.clone());
                folds.extend_from_slice(accs);
            }
        }
        out.push(SeededEvaluation {
            report: EvalReport::from_folds(folds, Some(cfg.to_json()))?,
            runs,
        });
    }
    Ok(out)
}

pub fn train_and_evaluate(config: &TrainConfig, dataset: &GraphDataset) -> Result<SeededEvaluation> {
    let mut all = train_and_evaluate_many(std::slice::from_ref(config), dataset)?;
    Ok(all.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    WithoutIntra,
    WithoutInter,
    WithoutAdv,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::WithoutIntra,
        AblationVariant::WithoutInter,
        AblationVariant::WithoutAdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::WithoutIntra => "without_intra",
            AblationVariant::WithoutInter => "without_inter",
            AblationVariant::WithoutAdv => "without_adv",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationVariant::Full => cfg.recon_mode = ReconMode::Full,
            AblationVariant::WithoutIntra => cfg.recon_mode = ReconMode::WithoutIntra,
            AblationVariant::WithoutInter => cfg.recon_mode = ReconMode::WithoutInter,
            AblationVariant::WithoutAdv => {
                cfg.recon_mode = ReconMode::Full;
                cfg.lambda_a = 0.0;
            }
        }
        cfg
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub evaluation: SeededEvaluation,
}

/// Trains and probes the full model and its three ablations with the same
/// seeds.
pub fn run_ablation(config: &TrainConfig, dataset: &GraphDataset) -> Result<Vec<AblationResult>> {
    let configs: Vec<_> = AblationVariant::ALL.iter().map(|v| v.apply(config)).collect();
    let evals = train_and_evaluate_many(&configs, dataset)?;
    Ok(AblationVariant::ALL
        .iter()
        .zip(evals)
        .map(|(&variant, evaluation)| AblationResult { variant, evaluation })
        .collect())
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut out = String::from("variant,mean,std\n");
    for r in results {
        out.push_str(&format!("{},{},{}\n", r.variant, r.evaluation.report.mean, r.evaluation.report.std));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    AugRatio,
    Epsilon,
    AttackSteps,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::AugRatio => "aug_ratio",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::AttackSteps => "attack_steps",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::AugRatio => {
                for a in &mut cfg.augmentations {
                    a.ratio = value;
                }
            }
            SweepAxis::Epsilon => cfg.pgd.epsilon = value,
            SweepAxis::AttackSteps => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::invalid(format!(
                        "attack_steps must be a non-negative integer, got {value}"
                    )));
                }
                cfg.pgd.steps = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aug_ratio" => Ok(SweepAxis::AugRatio),
            "epsilon" => Ok(SweepAxis::Epsilon),
            "attack_steps" => Ok(SweepAxis::AttackSteps),
            other => Err(Error::invalid(format!(
                "unknown sweep axis {other:?}; expected aug_ratio, epsilon or attack_steps"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether each sweep value trains a fresh model or perturbs the inputs of
/// models trained once with the base config.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Retrain,
    Reevaluate,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub report: EvalReport,
}

/// Embeds `dataset` after the perturbation `axis = value` is applied at
/// inference time.
fn perturbed_table(
    params: &ModelParams,
    dataset: &GraphDataset,
    cfg: &TrainConfig,
    axis: SweepAxis,
    seed: u64,
) -> Result<EmbeddingTable> {
    let classes = dataset.num_node_label_classes();
    let graphs = dataset.graphs();
    let embeddings = match axis {
        SweepAxis::AugRatio => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let views = graphs
                .iter()
                .map(|g| {
                    let spec = cfg.augmentations[rng.gen_range(0..cfg.augmentations.len())];
                    spec.apply(g, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            embed_chunks(views.len(), |r| {
                let refs: Vec<_> = views[r].iter().collect();
                embed_batch(params, &to_view_batch(&refs, classes)?)
            })?
        }
        SweepAxis::Epsilon | SweepAxis::AttackSteps => embed_chunks(graphs.len(), |r| {
            let batch = to_batch(&graphs[r.clone()], classes)?;
            let clean = embed_batch(params, &batch)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ r.start as u64);
            let attack = pgd_maximize(&batch, params, &clean, &clean, cfg.temperature, &cfg.pgd, &mut rng)?;
            let mut tape = Tape::new();
            let model = params.bind(&mut tape);
            let delta = tape.leaf(attack.delta);
            let z = model.encode(&mut tape, &batch, Some(delta))?.z;
            let z_inv = model.extract_inv(&mut tape, z)?;
            Ok(tape.value(z_inv).clone())
        })?,
    };
    EmbeddingTable::new(embeddings, dataset.labels(), dataset.num_graph_classes())
}

/// Probe accuracy at each value of `axis`, sorted by value.
pub fn run_robustness_sweep(
    config: &TrainConfig,
    dataset: &GraphDataset,
    axis: SweepAxis,
    values: &[f64],
    mode: SweepMode,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    let configs = values
        .iter()
        .map(|&v| axis.apply(config, v))
        .collect::<Result<Vec<_>>>()?;
    match mode {
        SweepMode::Retrain => {
            let evals = train_and_evaluate_many(&configs, dataset)?;
            Ok(values
                .into_iter()
                .zip(evals)
                .map(|(value, e)| SweepRow { value, report: e.report })
                .collect())
        }
        SweepMode::Reevaluate => {
            let base = train_and_evaluate(config, dataset)?;
            values
                .into_iter()
                .zip(&configs)
                .map(|(value, cfg)| {
                    let mut folds = Vec::new();
                    for (run, &seed) in base.runs.iter().zip(&config.eval.seeds) {
                        let table = perturbed_table(&run.params, dataset, cfg, axis, seed)?;
                        let split = kfold_split(table.len(), cfg.eval.folds, seed)?;
                        folds.extend(linear_probe(&table, &split, seed, &cfg.probe)?);
                    }
                    Ok(SweepRow {
                        value,
                        report: EvalReport::from_folds(folds, Some(cfg.to_json()))?,
                    })
                })
                .collect()
        }
    }
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,mean,std\n");
    for r in rows {
        out.push_str(&format!("{axis},{},{},{}\n", r.value, r.report.mean, r.report.std));
    }
    out
}
