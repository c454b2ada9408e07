use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::config::TrainConfig;
use super::pgd::pgd_maximize;
use crate::augment::{sample_view_pair, to_view_batch};
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{to_batch, GraphDataset};
use crate::model::{init_params, save_checkpoint, ModelParams};
use crate::objective::{joint_var, l_adv, l_inv, l_recon, LossBreakdown, ReconInputs};

pub const METRICS_HEADER: &str = "epoch,l_inv,l_recon,l_adv,total,seconds";

/// Epoch means of the loss terms plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub batch_totals: Vec<f64>,
    pub pgd_calls: usize,
    /// Batches where the attack ended below its starting loss.
    pub pgd_non_ascent: usize,
    pub seconds: f64,
}

/// Final parameters and per-epoch history of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub initial: ModelParams,
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

impl TrainRun {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for e in &self.history {
            let l = &e.losses;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, l.l_inv, l.l_recon, l.l_adv, l.total, e.seconds
            );
        }
        out
    }

    /// Writes `metrics.csv` and `checkpoint.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join("metrics.csv");
        fs::write(&metrics, self.metrics_csv()).map_err(|e| Error::io(&metrics, e))?;
        save_checkpoint(dir.join("checkpoint.json"), &self.params, Some(self.config.to_json()))
    }
}

/// One pass over `dataset` in shuffled mini-batches. A trailing batch with
/// fewer than two graphs is skipped.
pub fn train_epoch<R: Rng + ?Sized>(
    dataset: &GraphDataset,
    params: &mut ModelParams,
    state: &mut AdamState,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<EpochStats> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let classes = dataset.num_node_label_classes();
    if params.input_dim != classes {
        return Err(Error::ShapeMismatch {
            op: "train_epoch",
            left: vec![params.input_dim],
            right: vec![classes],
        });
    }
    let adam = AdamConfig::new(config.learning_rate);
    let graphs = dataset.graphs();
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    order.shuffle(rng);

    let mut sums = [0.0f64; 4];
    let mut batch_totals = Vec::new();
    let mut pgd_calls = 0;
    let mut pgd_non_ascent = 0;
    for chunk in order.chunks(config.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let pairs = chunk
            .iter()
            .map(|&i| sample_view_pair(&graphs[i], &config.augmentations, rng))
            .collect::<Result<Vec<_>>>()?;
        let v1: Vec<_> = pairs.iter().map(|p| &p.view1).collect();
        let v2: Vec<_> = pairs.iter().map(|p| &p.view2).collect();
        let b1 = to_view_batch(&v1, classes)?;
        let b2 = to_view_batch(&v2, classes)?;

        let mut tape = Tape::new();
        let model = params.bind(&mut tape);
        let z1 = model.encode(&mut tape, &b1, None)?.z;
        let z2 = model.encode(&mut tape, &b2, None)?.z;
        let p1 = model.extract(&mut tape, z1)?;
        let p2 = model.extract(&mut tape, z2)?;
        let li = l_inv(&mut tape, p1.z_inv, p2.z_inv, config.temperature)?;
        let inputs = ReconInputs {
            z1,
            z2,
            z1_aug: p1.z_aug,
            z1_inv: p1.z_inv,
            z2_aug: p2.z_aug,
            z2_inv: p2.z_inv,
        };
        let lr = l_recon(&mut tape, &model, &inputs, config.recon_mode)?;
        let la = if config.lambda_a > 0.0 {
            let originals: Vec<_> = chunk.iter().map(|&i| graphs[i].clone()).collect();
            let batch = to_batch(&originals, classes)?;
            let attack = pgd_maximize(
                &batch,
                params,
                tape.value(p1.z_inv),
                tape.value(p2.z_inv),
                config.temperature,
                &config.pgd,
                rng,
            )?;
            pgd_calls += 1;
            if attack.final_loss < attack.initial_loss {
                pgd_non_ascent += 1;
            }
            let delta = tape.leaf(attack.delta);
            let z_adv = model.encode(&mut tape, &batch, Some(delta))?.z;
            let z_adv_inv = model.extract_inv(&mut tape, z_adv)?;
            l_adv(&mut tape, p1.z_inv, p2.z_inv, z_adv_inv, config.temperature)?
        } else {
            tape.leaf(Tensor::scalar(0.0))
        };
        let total = joint_var(&mut tape, li, lr, la, config.lambda_r, config.lambda_a)?;

        let grads = tape.backward(total)?.collect(&model.vars)?;
        adam_step(params, &grads, state, &adam)?;

        for (s, v) in sums.iter_mut().zip([li, lr, la, total]) {
            *s += tape.value(v).item()?;
        }
        batch_totals.push(tape.value(total).item()?);
    }
    let n = batch_totals.len();
    if n == 0 {
        return Err(Error::invalid("no batch with at least two graphs"));
    }
    let mean = |s: f64| s / n as f64;
    Ok(EpochStats {
        epoch: 0,
        losses: LossBreakdown {
            l_inv: mean(sums[0]),
            l_recon: mean(sums[1]),
            l_adv: mean(sums[2]),
            total: mean(sums[3]),
            lambda_r: config.lambda_r,
            lambda_a: config.lambda_a,
            temperature: Some(config.temperature),
        },
        batch_totals,
        pgd_calls,
        pgd_non_ascent,
        seconds: 0.0,
    })
}

/// Initializes a model from `config.seed` and trains it for `config.epochs`.
pub fn train(config: &TrainConfig, dataset: &GraphDataset) -> Result<TrainRun> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial = init_params(&config.model, dataset.num_node_label_classes(), &mut rng)?;
    let mut params = initial.clone();
    let mut state = AdamState::new(&params);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut stats = train_epoch(dataset, &mut params, &mut state, config, &mut rng)?;
        stats.epoch = epoch;
        if config.record_time {
            stats.seconds = start.elapsed().as_secs_f64();
        }
        history.push(stats);
    }
    Ok(TrainRun {
        config: config.clone(),
        initial,
        params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::model::ModelConfig;

    pub(crate) fn toy_dataset(n: usize) -> GraphDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let graphs = (0..n)
            .map(|i| {
                let nodes = rng.gen_range(4..9);
                let mut edges: Vec<(usize, usize)> = (1..nodes).map(|v| (rng.gen_range(0..v), v)).collect();
                if i % 2 == 0 {
                    edges.push((0, nodes - 1));
                }
                let labels = (0..nodes).map(|_| rng.gen_range(0..3)).collect();
                Graph::new(nodes, edges, labels, i % 2).unwrap()
            })
            .collect();
        GraphDataset::new("toy", graphs, 3, 2).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 6,
            learning_rate: 5e-3,
            model: ModelConfig {
                num_layers: 2,
                hidden_dim: 8,
                embed_dim: 8,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adversarial_gate() {
        let ds = toy_dataset(13);
        let mut cfg = small_config();
        cfg.lambda_a = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = init_params(&cfg.model, 3, &mut rng).unwrap();
        let mut s = AdamState::new(&p);
        let stats = train_epoch(&ds, &mut p, &mut s, &cfg, &mut rng).unwrap();
        assert_eq!(stats.pgd_calls, 0);
        assert_eq!(stats.losses.l_adv, 0.0);
        // 13 graphs in batches of 6: 6, 6 and a dropped single.
        assert_eq!(stats.batch_totals.len(), 2);

        cfg.lambda_a = 0.5;
        let stats = train_epoch(&ds, &mut p, &mut s, &cfg, &mut rng).unwrap();
        assert_eq!(stats.pgd_calls, 2);
        assert!(stats.losses.l_adv > 0.0);
    }

    #[test]
    fn epoch_mean_is_mean_of_batches() {
        let ds = toy_dataset(20);
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = init_params(&cfg.model, 3, &mut rng).unwrap();
        let mut s = AdamState::new(&p);
        let stats = train_epoch(&ds, &mut p, &mut s, &cfg, &mut rng).unwrap();
        let mean = stats.batch_totals.iter().sum::<f64>() / stats.batch_totals.len() as f64;
        assert!((mean - stats.losses.total).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let ds = toy_dataset(8);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let run = train(&cfg, &ds).unwrap();
        assert_eq!(run.params, run.initial);
        assert_eq!(run.metrics_csv(), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn plain_contrastive_training_lowers_loss() {
        let ds = toy_dataset(20);
        let cfg = TrainConfig {
            epochs: 10,
            lambda_r: 0.0,
            lambda_a: 0.0,
            ..small_config()
        };
        let run = train(&cfg, &ds).unwrap();
        let first = run.history[0].losses.total;
        let last = run.history[9].losses.total;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn batch_size_one_is_rejected() {
        let ds = toy_dataset(4);
        let cfg = TrainConfig {
            batch_size: 1,
            ..small_config()
        };
        assert!(train(&cfg, &ds).is_err());
    }

    #[test]
    fn writes_metrics_and_checkpoint() {
        let ds = toy_dataset(8);
        let run = train(&small_config(), &ds).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        run.write(tmp.path()).unwrap();
        let csv = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let back = crate::model::load_checkpoint(tmp.path().join("checkpoint.json")).unwrap();
        assert_eq!(back, run.params);
    }
}
