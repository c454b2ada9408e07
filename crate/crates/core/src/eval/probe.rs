use serde::{Deserialize, Serialize};

use super::embed::EmbeddingTable;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::graph::FoldSplit;
use crate::train::ProbeConfig;

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    /// `[features, classes]`
    pub weights: Tensor,
    pub bias: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearClassifier {
    fn standardize(&self, row: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (row[j] - self.mean[j]) / self.scale[j];
        }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let c = self.bias.len();
        out.copy_from_slice(&self.bias);
        for (j, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let w = &self.weights.data()[j * c..(j + 1) * c];
            for k in 0..c {
                out[k] += v * w[k];
            }
        }
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let d = self.mean.len();
        let mut z = vec![0.0; d];
        let mut logits = vec![0.0; self.bias.len()];
        (0..x.rows())
            .map(|i| {
                self.standardize(x.row(i), &mut z);
                self.logits(&z, &mut logits);
                let mut best = 0;
                for k in 1..logits.len() {
                    if logits[k] > logits[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Full-batch gradient descent from zero weights.
pub fn train_classifier(
    x: &Tensor,
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LinearClassifier> {
    cfg.validate()?;
    let (n, d) = (x.rows(), x.row_width());
    if n != labels.len() || n == 0 {
        return Err(Error::ShapeMismatch {
            op: "train_classifier",
            left: x.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::invalid(format!(
            "training fold contains a single class ({})",
            labels[0]
        )));
    }
    let c = num_classes;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            scale[j] += (x.row(i)[j] - mean[j]).powi(2);
        }
    }
    for s in &mut scale {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let mut clf = LinearClassifier {
        weights: Tensor::zeros(&[d, c]),
        bias: vec![0.0; c],
        mean,
        scale,
    };
    let mut xs = vec![0.0; n * d];
    for i in 0..n {
        clf.standardize(x.row(i), &mut xs[i * d..(i + 1) * d]);
    }

    let mut p = vec![0.0; c];
    let mut gw = vec![0.0; d * c];
    let mut gb = vec![0.0; c];
    for _ in 0..cfg.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            clf.logits(row, &mut p);
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in &mut p {
                *v = (*v - max).exp();
                z += *v;
            }
            for (k, v) in p.iter_mut().enumerate() {
                *v /= z;
                if k == labels[i] {
                    *v -= 1.0;
                }
                gb[k] += *v;
            }
            for (j, &xv) in row.iter().enumerate() {
                for k in 0..c {
                    gw[j * c + k] += xv * p[k];
                }
            }
        }
        let w = clf.weights.data_mut();
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= cfg.learning_rate * (g / n as f64 + cfg.l2 * *wi);
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * g / n as f64;
        }
    }
    Ok(clf)
}

fn select_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let d = x.row_width();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), d], data)
}

/// Trains a classifier on `train` rows only; nothing else is read.
pub fn train_fold(table: &EmbeddingTable, train: &[usize], cfg: &ProbeConfig) -> Result<LinearClassifier> {
    let x = select_rows(table.embeddings(), train)?;
    let y: Vec<usize> = train.iter().map(|&i| table.labels()[i]).collect();
    train_classifier(&x, &y, table.num_classes(), cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub seed: u64,
    pub fold: usize,
    pub accuracy: f64,
}

/// Held-out accuracy of every fold of `folds`.
pub fn linear_probe(
    table: &EmbeddingTable,
    folds: &FoldSplit,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<Vec<FoldAccuracy>> {
    if folds.n() != table.len() {
        return Err(Error::invalid(format!(
            "fold split covers {} items but the table has {}",
            folds.n(),
            table.len()
        )));
    }
    (0..folds.k())
        .map(|fold| {
            let clf = train_fold(table, &folds.train_indices(fold), cfg)?;
            let test = folds.test_indices(fold);
            let x = select_rows(table.embeddings(), test)?;
            let pred = clf.predict(&x);
            let correct = pred
                .iter()
                .zip(test)
                .filter(|(p, &i)| **p == table.labels()[i])
                .count();
            Ok(FoldAccuracy {
                seed,
                fold,
                accuracy: correct as f64 / test.len() as f64,
            })
        })
        .collect()
}

/// Cross-validated accuracies with their summary statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldAccuracy>,
    pub mean: f64,
    /// Across per-seed means when several seeds are present, otherwise
    /// across folds. Population form.
    pub std: f64,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl EvalReport {
    pub fn from_folds(folds: Vec<FoldAccuracy>, config: Option<serde_json::Value>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::invalid("report needs at least one fold"));
        }
        let (mean, std, seeds) = summarize(&folds);
        Ok(Self {
            folds,
            mean,
            std,
            seeds,
            config,
        })
    }

    /// Mean and std recomputed from the per-fold accuracies.
    pub fn recompute(&self) -> (f64, f64) {
        let (m, s, _) = summarize(&self.folds);
        (m, s)
    }

    pub fn folds_csv(&self) -> String {
        let mut out = String::from("seed,fold,accuracy\n");
        for f in &self.folds {
            out.push_str(&format!("{},{},{}\n", f.seed, f.fold, f.accuracy));
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn summarize(folds: &[FoldAccuracy]) -> (f64, f64, Vec<u64>) {
    let mut seeds: Vec<u64> = folds.iter().map(|f| f.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean, fold_std) = mean_std(&accs);
    let std = if seeds.len() > 1 {
        let per_seed: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let a: Vec<f64> = folds.iter().filter(|f| f.seed == s).map(|f| f.accuracy).collect();
                mean_std(&a).0
            })
            .collect();
        mean_std(&per_seed).1
    } else {
        fold_std
    };
    (mean, std, seeds)
}
