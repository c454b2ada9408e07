//! GIN encoder, the disentangling extractor pair and the reconstructor.

mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};

use crate::diff::{Parameters, Tape, Tensor, Var, VarMap};
use crate::error::{Error, Result};
use crate::graph::GraphBatch;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// GIN layers in the encoder.
    pub num_layers: usize,
    /// Width of node embeddings and of the graph embedding `z`.
    pub hidden_dim: usize,
    /// Width of the disentangled embeddings.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            hidden_dim: 32,
            embed_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Every parameter name with its shape, in initialization order.
    pub fn param_shapes(&self, input_dim: usize) -> Vec<(String, Vec<usize>)> {
        let (h, d) = (self.hidden_dim, self.embed_dim);
        let mut out = Vec::new();
        for l in 0..self.num_layers {
            let fan_in = if l == 0 { input_dim } else { h };
            out.push((format!("gin.{l}.w1"), vec![fan_in, h]));
            out.push((format!("gin.{l}.b1"), vec![h]));
            out.push((format!("gin.{l}.w2"), vec![h, h]));
            out.push((format!("gin.{l}.b2"), vec![h]));
            out.push((format!("gin.{l}.eps"), vec![1]));
        }
        for head in ["aug", "inv"] {
            out.push((format!("{head}.w1"), vec![h, h]));
            out.push((format!("{head}.b1"), vec![h]));
            out.push((format!("{head}.w2"), vec![h, d]));
            out.push((format!("{head}.b2"), vec![d]));
        }
        out.push(("recon.w1".into(), vec![d, h]));
        out.push(("recon.b1".into(), vec![h]));
        out.push(("recon.w2".into(), vec![h, h]));
        out.push(("recon.b2".into(), vec![h]));
        out
    }
}

/// All trainable tensors of the model, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub input_dim: usize,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Checks names, shapes and finiteness against `config`.
    pub fn from_tensors(
        config: ModelConfig,
        input_dim: usize,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes(input_dim);
        if expected.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    left: shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { op: "load parameter" });
            }
        }
        Ok(Self {
            config,
            input_dim,
            tensors,
        })
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            config: self.config.clone(),
            vars: tape.register(&self.tensors),
        }
    }
}

impl Parameters for ModelParams {
    fn named(&self) -> Vec<(&str, &Tensor)> {
        self.tensors.named()
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }
}

/// Glorot-uniform weights, zero biases and zero GIN epsilons.
pub fn init_params<R: Rng + ?Sized>(
    config: &ModelConfig,
    input_dim: usize,
    rng: &mut R,
) -> Result<ModelParams> {
    config.validate()?;
    if input_dim == 0 {
        return Err(Error::invalid("input dimension must be positive"));
    }
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.param_shapes(input_dim) {
        let t = if shape.len() == 2 {
            let s = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let n = shape[0] * shape[1];
            let data = (0..n).map(|_| rng.gen_range(-s..=s)).collect();
            Tensor::new(shape, data)?
        } else {
            Tensor::zeros(&shape)
        };
        tensors.insert(name, t);
    }
    ModelParams::from_tensors(config.clone(), input_dim, tensors)
}

/// Encoder outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// First-layer node embeddings, before any perturbation is added.
    pub hidden1: Var,
    /// Sum-pooled graph embeddings of the last layer.
    pub z: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DisentangledPair {
    pub z_aug: Var,
    pub z_inv: Var,
}

/// Model parameters recorded on a specific tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub config: ModelConfig,
    pub vars: VarMap,
}

impl BoundModel {
    fn p(&self, name: &str) -> Result<Var> {
        self.vars.get(name)
    }

    /// GIN neighborhood aggregation `(1 + eps) * x_v + sum_{u in N(v)} x_u`.
    pub fn aggregate(&self, tape: &mut Tape, x: Var, batch: &GraphBatch, layer: usize) -> Result<Var> {
        let eps = self.p(&format!("gin.{layer}.eps"))?;
        let messages = tape.gather_rows(x, batch.edge_src.clone())?;
        let summed = tape.segment_sum(messages, batch.edge_dst.clone(), batch.num_nodes())?;
        let scaled = tape.mul(x, eps)?;
        let own = tape.add(x, scaled)?;
        tape.add(own, summed)
    }

    fn mlp(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let w1 = self.p(&format!("{prefix}.w1"))?;
        let b1 = self.p(&format!("{prefix}.b1"))?;
        let w2 = self.p(&format!("{prefix}.w2"))?;
        let b2 = self.p(&format!("{prefix}.b2"))?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, w2)?;
        tape.add(h, b2)
    }

    fn gin_layer(&self, tape: &mut Tape, x: Var, batch: &GraphBatch, layer: usize) -> Result<Var> {
        let pre = self.aggregate(tape, x, batch, layer)?;
        self.mlp(tape, pre, &format!("gin.{layer}"))
    }

    /// First GIN layer applied to the batch's node features.
    pub fn hidden1(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let x = tape.leaf(batch.node_features.clone());
        self.gin_layer(tape, x, batch, 0)
    }

    /// Layers `2..=L` and the sum readout, starting from first-layer output `h`.
    pub fn encode_from_hidden1(&self, tape: &mut Tape, batch: &GraphBatch, h: Var) -> Result<Var> {
        let mut h = h;
        for layer in 1..self.config.num_layers {
            h = self.gin_layer(tape, h, batch, layer)?;
        }
        tape.segment_sum(h, batch.segment_ids.clone(), batch.num_graphs)
    }

    /// Runs the encoder; `delta`, when given, is added to the first-layer
    /// output before the remaining layers.
    pub fn encode(&self, tape: &mut Tape, batch: &GraphBatch, delta: Option<Var>) -> Result<EncoderOutput> {
        let hidden1 = self.hidden1(tape, batch)?;
        let h = match delta {
            None => hidden1,
            Some(d) => {
                if tape.shape(d) != tape.shape(hidden1) {
                    return Err(Error::ShapeMismatch {
                        op: "encode delta",
                        left: tape.shape(hidden1).to_vec(),
                        right: tape.shape(d).to_vec(),
                    });
                }
                tape.add(hidden1, d)?
            }
        };
        let z = self.encode_from_hidden1(tape, batch, h)?;
        Ok(EncoderOutput { hidden1, z })
    }

    /// Augmentation-dependent and augmentation-invariant embeddings of `z`.
    pub fn extract(&self, tape: &mut Tape, z: Var) -> Result<DisentangledPair> {
        Ok(DisentangledPair {
            z_aug: self.mlp(tape, z, "aug")?,
            z_inv: self.mlp(tape, z, "inv")?,
        })
    }

    pub fn extract_inv(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.mlp(tape, z, "inv")
    }

    /// `g_r(z_aug ⊙ z_inv)`, mapping back to the encoder width.
    pub fn reconstruct(&self, tape: &mut Tape, z_aug: Var, z_inv: Var) -> Result<Var> {
        if tape.shape(z_aug) != tape.shape(z_inv) {
            return Err(Error::ShapeMismatch {
                op: "reconstruct",
                left: tape.shape(z_aug).to_vec(),
                right: tape.shape(z_inv).to_vec(),
            });
        }
        let fused = tape.mul(z_aug, z_inv)?;
        self.mlp(tape, fused, "recon")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{to_batch, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> ModelParams {
        init_params(&ModelConfig::default(), 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn parameter_count_matches_layer_shapes() {
        let (f, h, d) = (7, 32, 32);
        let cfg = ModelConfig::default();
        let p = init_params(&cfg, f, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let first = f * h + h + h * h + h + 1;
        let later = 2 * (h * h + h + h * h + h + 1);
        let heads = 2 * (h * h + h + h * d + d);
        let recon = d * h + h + h * h + h;
        assert_eq!(p.param_count(), first + later + heads + recon);
        assert_eq!(p.param_count(), 11875);
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        assert_eq!(params(4), params(4));
        assert_ne!(params(4), params(5));
        let p = params(4);
        for (name, t) in p.tensors() {
            if t.rank() == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                let s = (6.0 / (t.shape()[0] + t.shape()[1]) as f64).sqrt();
                assert!(t.max_abs() <= s, "{name}");
            }
        }
    }

    #[test]
    fn isolated_node_sees_only_itself() {
        let p = params(1);
        let g = Graph::new(1, [], vec![1], 0).unwrap();
        let batch = to_batch(&[g], 3).unwrap();
        let mut tape = Tape::new();
        let m = p.bind(&mut tape);
        let h1 = m.hidden1(&mut tape, &batch).unwrap();

        let mut t2 = Tape::new();
        let m2 = p.bind(&mut t2);
        let x = t2.leaf(batch.node_features.clone());
        let direct = m2.mlp(&mut t2, x, "gin.0").unwrap();
        assert_eq!(tape.value(h1), t2.value(direct));
    }

    #[test]
    fn aggregation_adds_neighbor_to_scaled_self() {
        let mut p = params(1);
        p.tensor_mut("gin.0.eps").unwrap().data_mut()[0] = 0.5;
        let g = Graph::new(2, [(0, 1)], vec![0, 2], 0).unwrap();
        let batch = to_batch(&[g], 3).unwrap();
        let mut tape = Tape::new();
        let m = p.bind(&mut tape);
        let x = tape.leaf(batch.node_features.clone());
        let pre = m.aggregate(&mut tape, x, &batch, 0).unwrap();
        // node 1: 1.5 * [0,0,1] + [1,0,0]
        assert_eq!(tape.value(pre).row(1), &[1.0, 0.0, 1.5]);
        assert_eq!(tape.value(pre).row(0), &[1.5, 0.0, 1.0]);
    }

    #[test]
    fn zero_delta_matches_no_delta() {
        let p = params(2);
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)], vec![0, 1, 2, 0], 0).unwrap();
        let batch = to_batch(&[g], 3).unwrap();
        let mut tape = Tape::new();
        let m = p.bind(&mut tape);
        let plain = m.encode(&mut tape, &batch, None).unwrap();
        let zero = tape.leaf(Tensor::zeros(&[4, 32]));
        let with = m.encode(&mut tape, &batch, Some(zero)).unwrap();
        assert_eq!(tape.value(plain.z), tape.value(with.z));

        let wrong = tape.leaf(Tensor::zeros(&[3, 32]));
        assert!(m.encode(&mut tape, &batch, Some(wrong)).is_err());
    }

    #[test]
    fn extractor_and_reconstructor_shapes() {
        let p = params(3);
        let mut tape = Tape::new();
        let m = p.bind(&mut tape);
        let z = tape.leaf(Tensor::zeros(&[5, 32]));
        let pair = m.extract(&mut tape, z).unwrap();
        assert_eq!(tape.shape(pair.z_aug), &[5, 32]);
        // Zero input, zero biases => zero output.
        assert_eq!(tape.value(pair.z_inv).max_abs(), 0.0);
        let r = m.reconstruct(&mut tape, pair.z_aug, pair.z_inv).unwrap();
        assert_eq!(tape.shape(r), &[5, 32]);
        let short = tape.leaf(Tensor::zeros(&[4, 32]));
        assert!(m.reconstruct(&mut tape, pair.z_aug, short).is_err());
    }

    #[test]
    fn fusion_is_elementwise_product() {
        let cfg = ModelConfig {
            num_layers: 1,
            hidden_dim: 2,
            embed_dim: 2,
        };
        let mut p = init_params(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // Make g_r the identity on non-negative inputs.
        *p.tensor_mut("recon.w1").unwrap() = Tensor::identity(2);
        *p.tensor_mut("recon.w2").unwrap() = Tensor::identity(2);
        let mut tape = Tape::new();
        let m = p.bind(&mut tape);
        let a = tape.leaf(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[[3.0, 4.0]]).unwrap());
        let r = m.reconstruct(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(r).data(), &[3.0, 8.0]);

        let zero = tape.leaf(Tensor::zeros(&[1, 2]));
        *p.tensor_mut("recon.b2").unwrap() = Tensor::vector(vec![0.5, -0.5]);
        let m = p.bind(&mut tape);
        let r0 = m.reconstruct(&mut tape, zero, b).unwrap();
        assert_eq!(tape.value(r0).data(), &[0.5, -0.5]);
    }
}
