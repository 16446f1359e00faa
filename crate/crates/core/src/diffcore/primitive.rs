//! Uniform dispatch over the primitive set used by the networks.

use super::error::{Result, TensorError};
use super::ops;
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `[x, w]` or `[x, w, b]` with `x: [B, in]`, `w: [in, out]`.
    Dense,
    /// `[x, w]` or `[x, w, b]` with `x: [B, Cin, L]`, `w: [Cout, Cin, K]`.
    Conv1d { stride: usize, padding: usize },
    /// `[x, w]` with `w: [Cout, Cin]`.
    Conv1x1,
    /// Normalizes over all axes from `begin_axis` on.
    LayerNorm { begin_axis: usize },
    Softmax { axis: usize },
    LeakyRelu { slope: f64 },
    Tanh,
    Add,
    Mul,
    MatMul,
    Concat { axis: usize },
    Reshape { shape: Vec<usize> },
    /// `None` reduces every axis.
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    L2Norm { axis: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Dense => "dense",
            Primitive::Conv1d { .. } => "conv1d",
            Primitive::Conv1x1 => "conv1x1",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Softmax { .. } => "softmax",
            Primitive::LeakyRelu { .. } => "leaky_relu",
            Primitive::Tanh => "tanh",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Concat { .. } => "concat",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::L2Norm { .. } => "l2_norm",
        }
    }

    fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            Primitive::Dense | Primitive::Conv1d { .. } => 2..=3,
            Primitive::Conv1x1 | Primitive::Add | Primitive::Mul | Primitive::MatMul => 2..=2,
            Primitive::Concat { .. } => 1..=usize::MAX,
            _ => 1..=1,
        }
    }
}

/// Applies `kind` to `inputs`. A tape node is recorded whenever any input is
/// attached to a tape.
pub fn apply_primitive(kind: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    if !kind.arity().contains(&inputs.len()) {
        return Err(TensorError::invalid(
            kind.name(),
            format!("wrong number of inputs: {}", inputs.len()),
        ));
    }
    let x = inputs[0];
    match kind {
        Primitive::Dense => ops::dense(x, inputs[1], inputs.get(2).copied()),
        Primitive::Conv1d { stride, padding } => {
            ops::conv1d(x, inputs[1], inputs.get(2).copied(), *stride, *padding)
        }
        Primitive::Conv1x1 => ops::conv1x1(x, inputs[1]),
        Primitive::LayerNorm { begin_axis } => ops::layer_norm(x, *begin_axis),
        Primitive::Softmax { axis } => ops::softmax(x, *axis),
        Primitive::LeakyRelu { slope } => x.leaky_relu(*slope),
        Primitive::Tanh => x.tanh(),
        Primitive::Add => x.add(inputs[1]),
        Primitive::Mul => x.mul(inputs[1]),
        Primitive::MatMul => x.matmul(inputs[1]),
        Primitive::Concat { axis } => ops::concat(inputs, *axis),
        Primitive::Reshape { shape } => x.reshape(shape),
        Primitive::Sum { axis: None } => ops::sum_all(x),
        Primitive::Sum { axis: Some(a) } => ops::sum_axis(x, *a),
        Primitive::Mean { axis: None } => ops::mean_all(x),
        Primitive::Mean { axis: Some(a) } => ops::mean_axis(x, *a),
        Primitive::L2Norm { axis } => ops::l2_norm(x, *axis),
    }
}
