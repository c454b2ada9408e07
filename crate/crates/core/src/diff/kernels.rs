//! Raw forward and backward kernels behind the tape primitives.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat index of the element of an
/// `in_shape` tensor that broadcasts onto it.
fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        let d = if i >= pad { in_shape[i - pad] } else { 1 };
        strides[i] = if d == 1 { 0 } else { s };
        s *= d;
    }
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        map.push(offset);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            offset += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    map
}

pub(crate) fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    })?;
    let ma = broadcast_map(a.shape(), &out);
    let mb = broadcast_map(b.shape(), &out);
    let (da, db) = (a.data(), b.data());
    let data = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
    Ok(Tensor::from_parts(out, data))
}

/// Sums a gradient of shape `out_shape` down to the broadcast source shape.
pub(crate) fn reduce_to(g: &Tensor, out_shape: &[usize], in_shape: &[usize]) -> Tensor {
    if out_shape == in_shape {
        return g.clone();
    }
    let map = broadcast_map(in_shape, out_shape);
    let mut acc = vec![0.0; in_shape.iter().product()];
    for (&i, &gv) in map.iter().zip(g.data()) {
        acc[i] += gv;
    }
    Tensor::from_parts(in_shape.to_vec(), acc)
}

/// Broadcasts `x` to `shape`, or `None` when the shapes are incompatible.
pub(crate) fn broadcast(x: &Tensor, shape: &[usize]) -> Option<Tensor> {
    let out = broadcast_shape(x.shape(), shape)?;
    if out != shape {
        return None;
    }
    if x.shape() == shape {
        return Some(x.clone());
    }
    let d = x.data();
    let data = broadcast_map(x.shape(), shape).iter().map(|&i| d[i]).collect();
    Some(Tensor::from_parts(shape.to_vec(), data))
}

pub(crate) fn mul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    if a.shape() == b.shape() {
        let ga = g.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let gb = g.data().iter().zip(a.data()).map(|(x, y)| x * y).collect();
        return (
            Tensor::from_parts(a.shape().to_vec(), ga),
            Tensor::from_parts(b.shape().to_vec(), gb),
        );
    }
    let ma = broadcast_map(a.shape(), g.shape());
    let mb = broadcast_map(b.shape(), g.shape());
    let mut ga = vec![0.0; a.numel()];
    let mut gb = vec![0.0; b.numel()];
    for ((&i, &j), &gv) in ma.iter().zip(&mb).zip(g.data()) {
        ga[i] += gv * b.data()[j];
        gb[j] += gv * a.data()[i];
    }
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

pub(crate) fn div_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let ma = broadcast_map(a.shape(), g.shape());
    let mb = broadcast_map(b.shape(), g.shape());
    let mut ga = vec![0.0; a.numel()];
    let mut gb = vec![0.0; b.numel()];
    for ((&i, &j), &gv) in ma.iter().zip(&mb).zip(g.data()) {
        let bv = b.data()[j];
        ga[i] += gv / bv;
        gb[j] -= gv * a.data()[i] / (bv * bv);
    }
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Ok(Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n)))
}

pub(crate) fn transpose(x: &Tensor) -> Tensor {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let d = x.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], out)
}

pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let bt = transpose(b);
    let at = transpose(a);
    let ga = matmul_raw(g.data(), bt.data(), m, n, k);
    let gb = matmul_raw(at.data(), g.data(), k, m, n);
    (
        Tensor::from_parts(vec![m, k], ga),
        Tensor::from_parts(vec![k, n], gb),
    )
}

pub(crate) fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::invalid(format!(
            "sum_axis: axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    let d = x.data();
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[o * inner + i] += d[base + i];
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    Ok(Tensor::from_parts(out_shape, out))
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::invalid(format!(
            "concat: axis {axis} out of range for shape {:?}",
            first.shape()
        )));
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for p in parts {
        let compatible = p.rank() == rank
            && p
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        out_shape[axis] += p.shape()[axis];
    }
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Inverse of [`concat`]: slices `g` back into pieces of the given shapes.
pub(crate) fn split(g: &Tensor, shapes: &[&[usize]], axis: usize) -> Vec<Tensor> {
    let outer: usize = g.shape()[..axis].iter().product();
    let inner: usize = g.shape()[axis + 1..].iter().product();
    let mut pieces: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (s, piece) in shapes.iter().zip(pieces.iter_mut()) {
            let chunk = s[axis] * inner;
            piece.extend_from_slice(&g.data()[pos..pos + chunk]);
            pos += chunk;
        }
    }
    shapes
        .iter()
        .zip(pieces)
        .map(|(s, d)| Tensor::from_parts(s.to_vec(), d))
        .collect()
}

pub(crate) fn segment_sum(x: &Tensor, segments: &[usize], num: usize) -> Tensor {
    let w = x.row_width();
    let mut out = vec![0.0; num * w];
    for (r, &s) in segments.iter().enumerate() {
        let src = &x.data()[r * w..(r + 1) * w];
        for (o, v) in out[s * w..(s + 1) * w].iter_mut().zip(src) {
            *o += v;
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = num;
    Tensor::from_parts(shape, out)
}

pub(crate) fn gather_rows(x: &Tensor, index: &[usize]) -> Tensor {
    let w = x.row_width();
    let mut out = Vec::with_capacity(index.len() * w);
    for &i in index {
        out.extend_from_slice(&x.data()[i * w..(i + 1) * w]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = index.len();
    Tensor::from_parts(shape, out)
}

pub(crate) fn log_sum_exp_rows(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[1] == 0 {
        return Err(Error::invalid(format!(
            "log_sum_exp_rows needs a non-empty matrix, got shape {:?}",
            x.shape()
        )));
    }
    let rows = x.shape()[0];
    let out = (0..rows)
        .map(|i| {
            let r = x.row(i);
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        })
        .collect();
    Ok(Tensor::from_parts(vec![rows, 1], out))
}

pub(crate) fn log_sum_exp_rows_backward(x: &Tensor, y: &Tensor, g: &Tensor) -> Tensor {
    let cols = x.shape()[1];
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.shape()[0] {
        let (yi, gi) = (y.data()[i], g.data()[i]);
        out.extend(x.row(i).iter().map(|v| gi * (v - yi).exp()));
    }
    debug_assert_eq!(out.len(), x.shape()[0] * cols);
    Tensor::from_parts(x.shape().to_vec(), out)
}
