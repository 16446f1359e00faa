//! Composite operations built from the tape primitives. Because each is a
//! composition, all of them are differentiable to any order.

use std::sync::Arc;

use super::error::{Result, TensorError};
use super::tensor::{Tensor, NO_SOURCE};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_axis(x: &Tensor, axis: usize, op: &'static str) -> Result<()> {
    if axis >= x.rank() {
        return Err(TensorError::invalid(
            op,
            format!("axis {axis} out of range for shape {:?}", x.shape()),
        ));
    }
    Ok(())
}

/// Sum over `axis`, removing it.
pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis(x, axis, "sum")?;
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut index = Vec::with_capacity(x.len());
    for o in 0..outer {
        for _ in 0..n {
            for i in 0..inner {
                index.push(o * inner + i);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    x.scatter_add(Arc::new(index), out_shape)
}

pub fn sum_all(x: &Tensor) -> Result<Tensor> {
    x.scatter_add(Arc::new(vec![0; x.len()]), Vec::new())
}

pub fn mean_all(x: &Tensor) -> Result<Tensor> {
    sum_all(x)?.scale(1.0 / x.len() as f64)
}

pub fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis(x, axis, "mean")?;
    let n = x.shape()[axis] as f64;
    sum_axis(x, axis)?.scale(1.0 / n)
}

/// Numpy-style broadcast (trailing-aligned) of `x` to `shape`.
pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if x.shape() == shape {
        return Ok(x.clone());
    }
    let xs = x.shape();
    if xs.len() > shape.len() {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast",
            lhs: xs.to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let offset = shape.len() - xs.len();
    for (i, &d) in xs.iter().enumerate() {
        if d != 1 && d != shape[offset + i] {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                lhs: xs.to_vec(),
                rhs: shape.to_vec(),
            });
        }
    }
    let src_strides = strides(xs);
    let total: usize = shape.iter().product();
    let mut index = Vec::with_capacity(total);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..total {
        let mut src = 0;
        for (i, &d) in xs.iter().enumerate() {
            if d != 1 {
                src += counter[offset + i] * src_strides[i];
            }
        }
        index.push(src);
        for ax in (0..shape.len()).rev() {
            counter[ax] += 1;
            if counter[ax] < shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    x.gather(Arc::new(index), shape.to_vec())
}

/// Sum over `axis` keeping it with extent 1.
pub fn sum_keep(x: &Tensor, axis: usize) -> Result<Tensor> {
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    sum_axis(x, axis)?.reshape(&shape)
}

pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let xs = x.shape();
    let mut seen = vec![false; xs.len()];
    if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::invalid(
            "permute",
            format!("invalid permutation {perm:?} for shape {xs:?}"),
        ));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
    let src_strides = strides(xs);
    let total = x.len();
    let mut index = Vec::with_capacity(total);
    let mut counter = vec![0usize; out_shape.len()];
    for _ in 0..total {
        let src: usize = counter
            .iter()
            .zip(perm)
            .map(|(&c, &p)| c * src_strides[p])
            .sum();
        index.push(src);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    x.gather(Arc::new(index), out_shape)
}

pub fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    if r < 2 {
        return Err(TensorError::invalid("transpose", "rank must be at least 2"));
    }
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 2, r - 1);
    permute(x, &perm)
}

/// Elements `start..end` along `axis`.
pub fn slice_axis(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    check_axis(x, axis, "slice")?;
    let shape = x.shape();
    if start >= end || end > shape[axis] {
        return Err(TensorError::invalid(
            "slice",
            format!("range {start}..{end} invalid for extent {}", shape[axis]),
        ));
    }
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut index = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        for t in start..end {
            for i in 0..inner {
                index.push((o * n + t) * inner + i);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = end - start;
    x.gather(Arc::new(index), out_shape)
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
    check_axis(first, axis, "concat")?;
    let base = first.shape();
    let mut total_axis = 0;
    for x in xs {
        let s = x.shape();
        let ok = s.len() == base.len()
            && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: base.to_vec(),
                rhs: s.to_vec(),
            });
        }
        total_axis += s[axis];
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let mut out_shape = base.to_vec();
    out_shape[axis] = total_axis;
    let mut acc: Option<Tensor> = None;
    let mut offset = 0;
    for x in xs {
        let n = x.shape()[axis];
        let mut index = Vec::with_capacity(x.len());
        for o in 0..outer {
            for t in 0..n {
                for i in 0..inner {
                    index.push((o * total_axis + offset + t) * inner + i);
                }
            }
        }
        let placed = x.scatter_add(Arc::new(index), out_shape.clone())?;
        acc = Some(match acc {
            Some(a) => a.add(&placed)?,
            None => placed,
        });
        offset += n;
    }
    Ok(acc.expect("at least one input"))
}

fn max_along(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let d = x.data();
    let mut out = vec![f64::NEG_INFINITY; outer * inner];
    for o in 0..outer {
        for t in 0..n {
            for i in 0..inner {
                let v = d[(o * n + t) * inner + i];
                let slot = &mut out[o * inner + i];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
    let mut s = shape.to_vec();
    s[axis] = 1;
    Tensor::new(s, out).expect("shape consistent")
}

/// Softmax along `axis`, with max-subtraction. The shift is treated as a
/// constant, which leaves every derivative unchanged.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis(x, axis, "softmax")?;
    let shift = broadcast_to(&max_along(x, axis), x.shape())?;
    let e = x.sub(&shift)?.exp()?;
    let s = broadcast_to(&sum_keep(&e, axis)?, x.shape())?;
    e.div(&s)
}

pub const LAYER_NORM_VAR_FLOOR: f64 = 1e-5;

/// Normalizes each slice formed by axes `begin_axis..` to zero mean and unit
/// variance. The variance is floored at [`LAYER_NORM_VAR_FLOOR`].
pub fn layer_norm(x: &Tensor, begin_axis: usize) -> Result<Tensor> {
    if begin_axis >= x.rank() {
        return Err(TensorError::invalid(
            "layer_norm",
            format!("begin axis {begin_axis} out of range for {:?}", x.shape()),
        ));
    }
    let shape = x.shape().to_vec();
    let outer: usize = shape[..begin_axis].iter().product();
    let inner: usize = shape[begin_axis..].iter().product();
    let flat = x.reshape(&[outer, inner])?;
    let mean = broadcast_to(&sum_keep(&flat, 1)?.scale(1.0 / inner as f64)?, &[outer, inner])?;
    let centered = flat.sub(&mean)?;
    let var = sum_keep(&centered.square()?, 1)?
        .scale(1.0 / inner as f64)?
        .clamp_min(LAYER_NORM_VAR_FLOOR)?;
    let std = broadcast_to(&var.sqrt()?, &[outer, inner])?;
    centered.div(&std)?.reshape(&shape)
}

/// Euclidean norm along `axis`, removing it. The derivative at a zero vector
/// is taken as zero.
pub fn l2_norm(x: &Tensor, axis: usize) -> Result<Tensor> {
    sum_axis(&x.square()?, axis)?.sqrt()
}

/// `x: [.., in] · w: [in, out] + b: [out]`.
pub fn dense(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add(&broadcast_to(b, y.shape())?),
        None => Ok(y),
    }
}

/// Builds the im2col gather index for a `[B, C, L]` signal.
fn unfold_index(batch: usize, cin: usize, len: usize, k: usize, stride: usize, pad: usize) -> (Vec<usize>, usize) {
    let lout = (len + 2 * pad - k) / stride + 1;
    let mut index = Vec::with_capacity(batch * cin * k * lout);
    for b in 0..batch {
        for c in 0..cin {
            for kk in 0..k {
                for t in 0..lout {
                    let pos = (t * stride + kk) as isize - pad as isize;
                    if pos < 0 || pos as usize >= len {
                        index.push(NO_SOURCE);
                    } else {
                        index.push((b * cin + c) * len + pos as usize);
                    }
                }
            }
        }
    }
    (index, lout)
}

/// 1-D convolution along time. `x: [B, Cin, L]`, `w: [Cout, Cin, K]`, `b: [Cout]`.
pub fn conv1d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "conv1d",
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    if x.rank() != 3 || w.rank() != 3 || x.shape()[1] != w.shape()[1] || stride == 0 {
        return Err(mismatch());
    }
    let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    if len + 2 * padding < k {
        return Err(mismatch());
    }
    let (index, lout) = unfold_index(batch, cin, len, k, stride, padding);
    let cols = x.gather(Arc::new(index), vec![batch, cin * k, lout])?;
    let w2 = w.reshape(&[cout, cin * k])?;
    let y = w2.matmul(&cols)?;
    match b {
        Some(b) => {
            let bias = broadcast_to(&b.reshape(&[cout, 1])?, &[batch, cout, lout])?;
            y.add(&bias)
        }
        None => Ok(y),
    }
}

/// 1x1 convolution over channels: `w: [Cout, Cin]`, `x: [B, Cin, N]`.
pub fn conv1x1(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 || w.rank() != 2 || w.shape()[1] != x.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op: "conv1x1",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    w.matmul(x)
}

/// Nearest-neighbour resampling of `[B, C, L]` to `[B, C, out_len]`.
pub fn upsample_nearest(x: &Tensor, out_len: usize) -> Result<Tensor> {
    if x.rank() != 3 || out_len == 0 {
        return Err(TensorError::invalid(
            "upsample",
            format!("expected [B, C, L] and positive length, got {:?} -> {out_len}", x.shape()),
        ));
    }
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut index = Vec::with_capacity(b * c * out_len);
    for row in 0..b * c {
        for t in 0..out_len {
            index.push(row * l + t * l / out_len);
        }
    }
    x.gather(Arc::new(index), vec![b, c, out_len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tensor::gradients;
    use crate::diffcore::Tape;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let y = softmax(&Tensor::vector(vec![0.0, 0.0, 0.0]), 0).unwrap();
        assert!(close(y.data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn layer_norm_of_one_two_three() {
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = layer_norm(&x, 1).unwrap();
        // oracle: (x - 2) / sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        let want = [-1.0 / s, 0.0, 1.0 / s];
        assert!(close(y.data(), &want, 1e-12));
        assert!(close(y.data(), &[-1.224745, 0.0, 1.224745], 1e-6));
    }

    #[test]
    fn identity_kernel_conv_keeps_signal() {
        let x = Tensor::new(vec![1, 1, 5], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = Tensor::new(vec![1, 2, 4], vec![1., 2., 3., 4., -1., 0., 1., 2.]).unwrap();
        let w = Tensor::new(vec![1, 2, 3], vec![1., 0., -1., 0.5, 0.5, 0.5]).unwrap();
        let y = conv1d(&x, &w, Some(&Tensor::vector(vec![0.25])), 1, 1).unwrap();
        // direct evaluation with zero padding
        let xp = [[0., 1., 2., 3., 4., 0.], [0., -1., 0., 1., 2., 0.]];
        let wv = [[1., 0., -1.], [0.5, 0.5, 0.5]];
        let want: Vec<f64> = (0..4)
            .map(|t| {
                0.25 + (0..2)
                    .map(|c| (0..3).map(|k| wv[c][k] * xp[c][t + k]).sum::<f64>())
                    .sum::<f64>()
            })
            .collect();
        assert!(close(y.data(), &want, 1e-12));
    }

    #[test]
    fn strided_conv_output_length() {
        let x = Tensor::zeros(&[2, 3, 25]);
        let w = Tensor::zeros(&[4, 3, 5]);
        let y = conv1d(&x, &w, None, 2, 2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 13]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::new(vec![2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(vec![2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        assert_eq!(slice_axis(&c, 1, 1, 3).unwrap().data(), b.data());
    }

    #[test]
    fn broadcast_rejects_incompatible() {
        assert!(broadcast_to(&Tensor::zeros(&[3]), &[2, 2]).is_err());
        let y = broadcast_to(&Tensor::vector(vec![1., 2.]), &[2, 2]).unwrap();
        assert_eq!(y.data(), &[1., 2., 1., 2.]);
    }

    #[test]
    fn l2_norm_gradient_is_unit_direction() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![3.0, 4.0]));
        let n = l2_norm(&x, 0).unwrap();
        assert!((n.item() - 5.0).abs() < 1e-15);
        let g = gradients(&n, &[x], false).unwrap();
        assert!(close(g[0].data(), &[0.6, 0.8], 1e-15));
    }
}
