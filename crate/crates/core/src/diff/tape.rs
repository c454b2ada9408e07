use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    L2NormSq(usize),
    Concat(Vec<usize>, usize),
    BroadcastTo(usize, Vec<usize>),
    Transpose(usize),
    SegmentSum(usize, Arc<[usize]>, usize),
    GatherRows(usize, Arc<[usize]>),
    LogSumExpRows(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::L2NormSq(_) => "l2_norm_sq",
            Op::Concat(..) => "concat",
            Op::BroadcastTo(..) => "broadcast",
            Op::Transpose(_) => "transpose",
            Op::SegmentSum(..) => "segment_sum",
            Op::GatherRows(..) => "gather_rows",
            Op::LogSumExpRows(_) => "log_sum_exp_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive operations supporting reverse-mode
/// differentiation. Inputs always precede the operations that consume them.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Gradients are available for every leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        self.var(self.nodes.len() - 1)
    }

    /// Records each named tensor as a leaf, in name order.
    pub fn register(&mut self, tensors: &BTreeMap<String, Tensor>) -> VarMap {
        VarMap(
            tensors
                .iter()
                .map(|(k, t)| (k.clone(), self.leaf(t.clone())))
                .collect(),
        )
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable recorded on another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn var(&self, index: usize) -> Var {
        Var { tape: self.id, index }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape == self.id && v.index < self.nodes.len() {
            Ok(v.index)
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = forward(&op, |i| &self.nodes[i].value)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(self.var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::MatMul(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Div(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let op = Op::Scale(self.idx(a)?, c);
        self.push(op)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let op = Op::Relu(self.idx(a)?);
        self.push(op)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let op = Op::Exp(self.idx(a)?);
        self.push(op)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let op = Op::Log(self.idx(a)?);
        self.push(op)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let op = Op::Sqrt(self.idx(a)?);
        self.push(op)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let op = Op::Sum(self.idx(a)?);
        self.push(op)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let op = Op::Mean(self.idx(a)?);
        self.push(op)
    }

    /// Sums along `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let op = Op::SumAxis(self.idx(a)?, axis);
        self.push(op)
    }

    pub fn l2_norm_sq(&mut self, a: Var) -> Result<Var> {
        let op = Op::L2NormSq(self.idx(a)?);
        self.push(op)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>>>()?;
        self.push(Op::Concat(idx, axis))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let op = Op::BroadcastTo(self.idx(a)?, shape.to_vec());
        self.push(op)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let op = Op::Transpose(self.idx(a)?);
        self.push(op)
    }

    /// Sums leading-axis slices of `a` into `num_segments` buckets.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var> {
        let op = Op::SegmentSum(self.idx(a)?, segments, num_segments);
        self.push(op)
    }

    /// Selects leading-axis slices of `a` by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let op = Op::GatherRows(self.idx(a)?, index);
        self.push(op)
    }

    /// Row-wise `log(sum(exp(x)))` of a matrix, returned as a column.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let op = Op::LogSumExpRows(self.idx(a)?);
        self.push(op)
    }

    /// Recomputes every recorded value from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => forward(op, |i| &values[i])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        let root_value = &self.nodes[root].value;
        if !root_value.is_scalar() {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |j: usize| &self.nodes[j].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(val(*a), val(*b), &g);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Add(a, b) => {
                    let out = node.value.shape();
                    accumulate(&mut grads[*a], kernels::reduce_to(&g, out, val(*a).shape()));
                    accumulate(&mut grads[*b], kernels::reduce_to(&g, out, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    let out = node.value.shape();
                    accumulate(&mut grads[*a], kernels::reduce_to(&g, out, val(*a).shape()));
                    let gb = kernels::reduce_to(&g, out, val(*b).shape()).map(|v| -v);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Mul(a, b) => {
                    let (ga, gb) = kernels::mul_backward(val(*a), val(*b), &g);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Div(a, b) => {
                    let (ga, gb) = kernels::div_backward(val(*a), val(*b), &g);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads[*a], g.map(|v| v * c)),
                Op::Relu(a) => {
                    let x = val(*a);
                    let d = zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads[*a], d);
                }
                Op::Exp(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y);
                    accumulate(&mut grads[*a], d);
                }
                Op::Log(a) => {
                    let d = zip_map(&g, val(*a), |gv, x| gv / x);
                    accumulate(&mut grads[*a], d);
                }
                Op::Sqrt(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv / (2.0 * y));
                    accumulate(&mut grads[*a], d);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads[*a], Tensor::full(val(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    let gv = g.data()[0] / x.numel() as f64;
                    accumulate(&mut grads[*a], Tensor::full(x.shape(), gv));
                }
                Op::SumAxis(a, _) => {
                    let d = kernels::broadcast(&g, val(*a).shape())
                        .expect("kept axis broadcasts back to the input shape");
                    accumulate(&mut grads[*a], d);
                }
                Op::BroadcastTo(a, _) => {
                    let d = kernels::reduce_to(&g, node.value.shape(), val(*a).shape());
                    accumulate(&mut grads[*a], d);
                }
                Op::L2NormSq(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads[*a], val(*a).map(|x| 2.0 * x * gv));
                }
                Op::Concat(parts, axis) => {
                    let shapes: Vec<&[usize]> = parts.iter().map(|&p| val(p).shape()).collect();
                    for (p, piece) in parts.iter().zip(kernels::split(&g, &shapes, *axis)) {
                        accumulate(&mut grads[*p], piece);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads[*a], kernels::transpose(&g)),
                Op::SegmentSum(a, segments, _) => {
                    let d = kernels::gather_rows(&g, segments);
                    accumulate(&mut grads[*a], d);
                }
                Op::GatherRows(a, index) => {
                    let d = kernels::segment_sum(&g, index, val(*a).rows());
                    accumulate(&mut grads[*a], d);
                }
                Op::LogSumExpRows(a) => {
                    let d = kernels::log_sum_exp_rows_backward(val(*a), &node.value, &g);
                    accumulate(&mut grads[*a], d);
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn forward<'a>(op: &Op, val: impl Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    match op {
        Op::Leaf => unreachable!("leaves are not recomputed"),
        Op::MatMul(a, b) => kernels::matmul(val(*a), val(*b)),
        Op::Add(a, b) => kernels::binary("add", val(*a), val(*b), |x, y| x + y),
        Op::Sub(a, b) => kernels::binary("sub", val(*a), val(*b), |x, y| x - y),
        Op::Mul(a, b) => kernels::binary("mul", val(*a), val(*b), |x, y| x * y),
        Op::Div(a, b) => kernels::binary("div", val(*a), val(*b), |x, y| x / y),
        Op::Scale(a, c) => Ok(val(*a).map(|x| x * c)),
        Op::Relu(a) => Ok(val(*a).map(|x| x.max(0.0))),
        Op::Exp(a) => Ok(val(*a).map(f64::exp)),
        Op::Log(a) => Ok(val(*a).map(f64::ln)),
        Op::Sqrt(a) => Ok(val(*a).map(f64::sqrt)),
        Op::Sum(a) => Ok(Tensor::scalar(val(*a).data().iter().sum())),
        Op::Mean(a) => {
            let x = val(*a);
            if x.numel() == 0 {
                return Err(Error::invalid("mean of an empty tensor"));
            }
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
        }
        Op::SumAxis(a, axis) => kernels::sum_axis(val(*a), *axis),
        Op::L2NormSq(a) => Ok(Tensor::scalar(val(*a).data().iter().map(|x| x * x).sum())),
        Op::Concat(parts, axis) => {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| val(p)).collect();
            kernels::concat(&ts, *axis)
        }
        Op::BroadcastTo(a, shape) => {
            let x = val(*a);
            kernels::broadcast(x, shape).ok_or_else(|| Error::ShapeMismatch {
                op: "broadcast",
                left: x.shape().to_vec(),
                right: shape.clone(),
            })
        }
        Op::Transpose(a) => {
            let x = val(*a);
            if x.rank() != 2 {
                return Err(Error::invalid(format!(
                    "transpose needs a matrix, got shape {:?}",
                    x.shape()
                )));
            }
            Ok(kernels::transpose(x))
        }
        Op::SegmentSum(a, segments, num) => {
            let x = val(*a);
            check_index("segment_sum", x, segments, Some(*num))?;
            Ok(kernels::segment_sum(x, segments, *num))
        }
        Op::GatherRows(a, index) => {
            let x = val(*a);
            check_index("gather_rows", x, index, None)?;
            Ok(kernels::gather_rows(x, index))
        }
        Op::LogSumExpRows(a) => kernels::log_sum_exp_rows(val(*a)),
    }
}

fn check_index(
    op: &'static str,
    x: &Tensor,
    index: &[usize],
    segments: Option<usize>,
) -> Result<()> {
    if x.rank() == 0 {
        return Err(Error::invalid(format!("{op} needs at least one axis")));
    }
    match segments {
        Some(num) => {
            if index.len() != x.rows() {
                return Err(Error::ShapeMismatch {
                    op,
                    left: x.shape().to_vec(),
                    right: vec![index.len()],
                });
            }
            if let Some(&bad) = index.iter().find(|&&s| s >= num) {
                return Err(Error::invalid(format!(
                    "{op}: segment id {bad} out of range for {num} segments"
                )));
            }
        }
        None => {
            if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::invalid(format!(
                    "{op}: row {bad} out of range for {} rows",
                    x.rows()
                )));
            }
        }
    }
    Ok(())
}

/// Result of a reverse pass: the gradient of the loss with respect to every
/// recorded value.
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(Error::ForeignVar);
        }
        Ok(self.grads[v.index]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.index])))
    }

    pub fn collect(&self, vars: &VarMap) -> Result<GradientMap> {
        vars.0
            .iter()
            .map(|(k, &v)| Ok((k.clone(), self.wrt(v)?)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map(GradientMap)
    }
}

/// Named variables, typically model parameters registered on a tape.
#[derive(Clone, Debug, Default)]
pub struct VarMap(BTreeMap<String, Var>);

impl VarMap {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

/// Gradient per named parameter, with shapes matching the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap(BTreeMap<String, Tensor>);

impl GradientMap {
    pub fn new(grads: BTreeMap<String, Tensor>) -> Self {
        Self(grads)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest absolute gradient entry across all parameters.
    pub fn max_abs(&self) -> f64 {
        self.0.values().fold(0.0, |m, t| m.max(t.max_abs()))
    }
}
