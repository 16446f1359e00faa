//! Dense f64 tensors with an optional link into a reverse-mode tape.
//!
//! Every backward rule is written in terms of the same primitives as the
//! forward pass. When [`gradients`] is asked to `create_graph`, the rules are
//! evaluated on tape-attached tensors, so the returned gradients can be
//! differentiated again (needed for gradient-norm penalties).

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use super::error::{Result, TensorError};

/// Index value meaning "no source element": gathers read zero, scatters skip.
pub const NO_SOURCE: usize = usize::MAX;

#[derive(Clone)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Tanh,
    Sqrt,
    LeakyRelu(f64),
    ClampMin(f64),
    /// `op(A)·op(B)` with optional transposes; `reduce` sums over the batch.
    MatMul { ta: bool, tb: bool, reduce: bool },
    Gather(Arc<Vec<usize>>),
    ScatterAdd(Arc<Vec<usize>>),
    Reshape,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Sqrt => "sqrt",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::ClampMin(_) => "clamp_min",
            Op::MatMul { .. } => "matmul",
            Op::Gather(_) => "gather",
            Op::ScatterAdd(_) => "scatter_add",
            Op::Reshape => "reshape",
        }
    }
}

struct Input {
    id: Option<usize>,
    value: Tensor,
}

struct Node {
    op: Op,
    inputs: Vec<Input>,
    output: Tensor,
}

/// Ordered record of operations. Node ids are assigned in creation order, so
/// every record's inputs precede it.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable leaf on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let detached = value.detach();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: detached.clone(),
        });
        Tensor {
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
            ..detached
        }
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    fn attach(&self, value: &Tensor, id: Option<usize>) -> Tensor {
        Tensor {
            shape: value.shape.clone(),
            data: value.data.clone(),
            node: id.map(|id| NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }
}

#[derive(Clone)]
struct NodeRef {
    tape: Tape,
    id: usize,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("attached", &self.node.is_some())
            .field("data", &self.data)
            .finish()
    }
}

/// Dot product with four partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::invalid(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        if numel(&shape) != data.len() {
            return Err(TensorError::invalid(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Self::from_parts(shape, Arc::new(data)))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Self {
        Tensor {
            shape,
            data,
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), Arc::new(vec![v]))
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Self::from_parts(vec![v.len()], Arc::new(v))
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_parts(shape.to_vec(), Arc::new(vec![v; numel(shape)]))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shared_data(&self) -> Arc<Vec<f64>> {
        self.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// The tape this tensor is recorded on, if any.
    pub fn tape(&self) -> Option<Tape> {
        self.node.as_ref().map(|n| n.tape.clone())
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn tape_of(inputs: &[&Tensor], op: &'static str) -> Result<Option<Tape>> {
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match tape {
                    None => tape = Some(&n.tape),
                    Some(existing) if !existing.same(&n.tape) => {
                        return Err(TensorError::ForeignTape(op))
                    }
                    _ => {}
                }
            }
        }
        Ok(tape.cloned())
    }

    fn record(op: Op, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Self::record_shared(op, inputs, shape, Arc::new(data))
    }

    fn record_shared(op: Op, inputs: &[&Tensor], shape: Vec<usize>, data: Arc<Vec<f64>>) -> Result<Tensor> {
        let out = Self::from_parts(shape, data);
        let Some(tape) = Self::tape_of(inputs, op.name())? else {
            return Ok(out);
        };
        let recorded: Vec<Input> = inputs
            .iter()
            .map(|t| Input {
                id: t.node.as_ref().map(|n| n.id),
                value: t.detach(),
            })
            .collect();
        let mut nodes = tape.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs: recorded,
            output: out.clone(),
        });
        drop(nodes);
        Ok(Tensor {
            node: Some(NodeRef { tape, id }),
            ..out
        })
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, op.name())?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::record(op, &[self, other], self.shape.clone(), data)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Self::record(op, &[self], self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary(Op::Scale(c), |a| a * c)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary(Op::AddScalar(c), |a| a + c)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        self.unary(Op::LeakyRelu(slope), |a| if a > 0.0 { a } else { slope * a })
    }

    /// `max(x, floor)` elementwise; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Result<Tensor> {
        self.unary(Op::ClampMin(floor), |a| if a > floor { a } else { floor })
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    /// Batched matrix product over the last two axes. Leading axes must agree,
    /// or one operand may be a plain matrix broadcast over the other's batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_ex(other, false, false, false)
    }

    /// `op(self)·op(other)` where `op` transposes the last two axes when the
    /// matching flag is set.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        self.matmul_ex(other, ta, tb, false)
    }

    /// General product; with `reduce` the per-batch products are summed into
    /// one `[m, n]` matrix.
    fn matmul_ex(&self, other: &Tensor, ta: bool, tb: bool, reduce: bool) -> Result<Tensor> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        };
        if self.rank() < 2 || other.rank() < 2 {
            return Err(mismatch());
        }
        let (ra, rb) = (self.rank(), other.rank());
        let (sa, sb) = (&self.shape, &other.shape);
        let (m, k) = if ta { (sa[ra - 1], sa[ra - 2]) } else { (sa[ra - 2], sa[ra - 1]) };
        let (k2, n) = if tb { (sb[rb - 1], sb[rb - 2]) } else { (sb[rb - 2], sb[rb - 1]) };
        if k != k2 {
            return Err(mismatch());
        }
        let batch_a = &sa[..ra - 2];
        let batch_b = &sb[..rb - 2];
        let batch: Vec<usize> = if batch_a == batch_b || batch_b.is_empty() {
            batch_a.to_vec()
        } else if batch_a.is_empty() {
            batch_b.to_vec()
        } else {
            return Err(mismatch());
        };
        let nb = numel(&batch);
        let a_stride = if batch_a.is_empty() { 0 } else { m * k };
        let b_stride = if batch_b.is_empty() { 0 } else { k * n };
        let mut out = vec![0.0; if reduce { m * n } else { nb * m * n }];
        let (a, b) = (self.data.as_slice(), other.data.as_slice());
        if n >= 16 {
            // axpy form: contiguous rows of op(B) and of the output
            let mut bt = if tb { vec![0.0; k * n] } else { Vec::new() };
            for bi in 0..nb {
                let ab = &a[bi * a_stride..bi * a_stride + m * k];
                let braw = &b[bi * b_stride..bi * b_stride + k * n];
                if tb && (bi == 0 || b_stride != 0) {
                    for j in 0..n {
                        for p in 0..k {
                            bt[p * n + j] = braw[j * k + p];
                        }
                    }
                }
                let bb: &[f64] = if tb { &bt } else { braw };
                let ob = if reduce {
                    &mut out[..]
                } else {
                    &mut out[bi * m * n..(bi + 1) * m * n]
                };
                for i in 0..m {
                    let orow = &mut ob[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = if ta { ab[p * m + i] } else { ab[i * k + p] };
                        if aip == 0.0 {
                            continue;
                        }
                        let brow = &bb[p * n..(p + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aip * bv;
                        }
                    }
                }
            }
        } else {
            // dot form for narrow outputs: rows of op(A) against columns of op(B)
            let mut at = if ta { vec![0.0; m * k] } else { Vec::new() };
            let mut bt = if tb { Vec::new() } else { vec![0.0; k * n] };
            for bi in 0..nb {
                let araw = &a[bi * a_stride..bi * a_stride + m * k];
                let braw = &b[bi * b_stride..bi * b_stride + k * n];
                if ta && (bi == 0 || a_stride != 0) {
                    for p in 0..k {
                        for i in 0..m {
                            at[i * k + p] = araw[p * m + i];
                        }
                    }
                }
                if !tb && (bi == 0 || b_stride != 0) {
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = braw[p * n + j];
                        }
                    }
                }
                let ab: &[f64] = if ta { &at } else { araw };
                let bb: &[f64] = if tb { braw } else { &bt };
                let ob = if reduce {
                    &mut out[..]
                } else {
                    &mut out[bi * m * n..(bi + 1) * m * n]
                };
                for i in 0..m {
                    let arow = &ab[i * k..(i + 1) * k];
                    for j in 0..n {
                        ob[i * n + j] += dot(arow, &bb[j * k..(j + 1) * k]);
                    }
                }
            }
        }
        let mut shape = if reduce { Vec::new() } else { batch };
        shape.push(m);
        shape.push(n);
        Self::record(Op::MatMul { ta, tb, reduce }, &[self, other], shape, out)
    }

    /// `out[i] = self[index[i]]`, zero where `index[i] == NO_SOURCE`.
    pub fn gather(&self, index: Arc<Vec<usize>>, out_shape: Vec<usize>) -> Result<Tensor> {
        if index.len() != numel(&out_shape) {
            return Err(TensorError::invalid(
                "gather",
                format!("{} indices for output shape {out_shape:?}", index.len()),
            ));
        }
        let src = self.data.as_slice();
        let mut data = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i == NO_SOURCE {
                data.push(0.0);
            } else if i < src.len() {
                data.push(src[i]);
            } else {
                return Err(TensorError::invalid(
                    "gather",
                    format!("index {i} out of range for shape {:?}", self.shape),
                ));
            }
        }
        Self::record(Op::Gather(index), &[self], out_shape, data)
    }

    /// `out[index[i]] += self[i]`; entries equal to `NO_SOURCE` are dropped.
    pub fn scatter_add(&self, index: Arc<Vec<usize>>, out_shape: Vec<usize>) -> Result<Tensor> {
        if index.len() != self.len() {
            return Err(TensorError::invalid(
                "scatter_add",
                format!("{} indices for input shape {:?}", index.len(), self.shape),
            ));
        }
        let n = numel(&out_shape);
        let mut data = vec![0.0; n];
        for (&i, &v) in index.iter().zip(self.data.iter()) {
            if i == NO_SOURCE {
                continue;
            }
            if i >= n {
                return Err(TensorError::invalid(
                    "scatter_add",
                    format!("index {i} out of range for output shape {out_shape:?}"),
                ));
            }
            data[i] += v;
        }
        Self::record(Op::ScatterAdd(index), &[self], out_shape, data)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        if shape == self.shape.as_slice() {
            return Ok(self.clone());
        }
        Self::record_shared(Op::Reshape, &[self], shape.to_vec(), self.data.clone())
    }
}

fn constant_like(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape.clone(), Arc::new(t.data.iter().map(|&v| f(v)).collect()))
}

/// Gradients of `output` w.r.t. each input, given the upstream gradient `g`.
fn backward_rule(
    op: &Op,
    inputs: &[Tensor],
    output: &Tensor,
    g: &Tensor,
    wanted: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let want = |i: usize| wanted.get(i).copied().unwrap_or(false);
    let grads = match op {
        Op::Leaf => vec![],
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), if want(1) { Some(g.neg()?) } else { None }],
        Op::Mul => vec![
            if want(0) { Some(g.mul(&inputs[1])?) } else { None },
            if want(1) { Some(g.mul(&inputs[0])?) } else { None },
        ],
        Op::Div => vec![
            if want(0) { Some(g.div(&inputs[1])?) } else { None },
            if want(1) {
                Some(g.mul(output)?.div(&inputs[1])?.neg()?)
            } else {
                None
            },
        ],
        Op::Scale(c) => vec![Some(g.scale(*c)?)],
        Op::AddScalar(_) | Op::Reshape => {
            vec![Some(if matches!(op, Op::Reshape) {
                g.reshape(inputs[0].shape())?
            } else {
                g.clone()
            })]
        }
        Op::Exp => vec![Some(g.mul(output)?)],
        Op::Log => vec![Some(g.div(&inputs[0])?)],
        Op::Tanh => vec![Some(g.sub(&g.mul(output)?.mul(output)?)?)],
        Op::Sqrt => {
            // d sqrt(x) = 0.5 / sqrt(x), taken as 0 at x = 0.
            let half = constant_like(output, |y| if y > 0.0 { 0.5 } else { 0.0 });
            let denom = output.clamp_min(f64::MIN_POSITIVE)?;
            vec![Some(g.mul(&half.div(&denom)?)?)]
        }
        Op::LeakyRelu(s) => {
            let s = *s;
            let mask = constant_like(&inputs[0], |a| if a > 0.0 { 1.0 } else { s });
            vec![Some(g.mul(&mask)?)]
        }
        Op::ClampMin(floor) => {
            let floor = *floor;
            let mask = constant_like(&inputs[0], |a| if a > floor { 1.0 } else { 0.0 });
            vec![Some(g.mul(&mask)?)]
        }
        Op::MatMul { ta, tb, .. } => {
            let (a, b, ta, tb) = (&inputs[0], &inputs[1], *ta, *tb);
            let ga = if want(0) {
                let r = a.rank() == 2 && (g.rank() > 2 || b.rank() > 2);
                Some(if ta { b.matmul_ex(g, tb, true, r)? } else { g.matmul_ex(b, false, !tb, r)? })
            } else {
                None
            };
            let gb = if want(1) {
                let r = b.rank() == 2 && (g.rank() > 2 || a.rank() > 2);
                Some(if tb { g.matmul_ex(a, true, ta, r)? } else { a.matmul_ex(g, !ta, false, r)? })
            } else {
                None
            };
            vec![ga, gb]
        }
        Op::Gather(index) => vec![Some(g.scatter_add(index.clone(), inputs[0].shape().to_vec())?)],
        Op::ScatterAdd(index) => vec![Some(g.gather(index.clone(), inputs[0].shape().to_vec())?)],
    };
    Ok(grads)
}

/// Reverse-mode gradients of a scalar `loss` with respect to `params`.
///
/// Parameters that do not influence the loss receive zeros. With
/// `create_graph` the backward pass is itself recorded, so the results can be
/// fed into a further call.
pub fn gradients(loss: &Tensor, params: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.len() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape.clone()));
    }
    let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let Some(root) = &loss.node else {
        return Ok(zeros());
    };
    let tape = root.tape.clone();
    let n = root.id + 1;

    let param_ids: Vec<Option<usize>> = params
        .iter()
        .map(|p| match &p.node {
            Some(r) if r.tape.same(&tape) && r.id < n => Some(r.id),
            _ => None,
        })
        .collect();
    if param_ids.iter().all(Option::is_none) {
        return Ok(zeros());
    }

    let mut needs = vec![false; n];
    for id in param_ids.iter().flatten() {
        needs[*id] = true;
    }
    {
        let nodes = tape.nodes.borrow();
        for id in 0..n {
            if !needs[id] {
                needs[id] = nodes[id]
                    .inputs
                    .iter()
                    .any(|inp| inp.id.is_some_and(|i| needs[i]));
            }
        }
    }
    if !needs[root.id] {
        return Ok(zeros());
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    grads[root.id] = Some(Tensor::ones(loss.shape()));
    for id in (0..n).rev() {
        if !needs[id] {
            continue;
        }
        let Some(g) = grads[id].clone() else { continue };
        let (op, inputs, output, input_ids) = {
            let nodes = tape.nodes.borrow();
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let ids: Vec<Option<usize>> = node.inputs.iter().map(|i| i.id).collect();
            let (inputs, output) = if create_graph {
                (
                    node.inputs
                        .iter()
                        .map(|i| tape.attach(&i.value, i.id))
                        .collect::<Vec<_>>(),
                    tape.attach(&node.output, Some(id)),
                )
            } else {
                (
                    node.inputs.iter().map(|i| i.value.clone()).collect(),
                    node.output.clone(),
                )
            };
            (node.op.clone(), inputs, output, ids)
        };
        let g = if create_graph { g } else { g.detach() };
        let wanted: Vec<bool> = input_ids.iter().map(|i| i.is_some_and(|i| needs[i])).collect();
        let input_grads = backward_rule(&op, &inputs, &output, &g, &wanted)?;
        for (slot, (ig, wanted)) in input_ids.iter().zip(input_grads.into_iter().zip(wanted)) {
            let (Some(i), Some(ig), true) = (slot, ig, wanted) else {
                continue;
            };
            grads[*i] = Some(match grads[*i].take() {
                Some(acc) => acc.add(&ig)?,
                None => ig,
            });
        }
        if !param_ids.contains(&Some(id)) {
            grads[id] = None;
        }
    }

    Ok(param_ids
        .iter()
        .zip(params)
        .map(|(id, p)| {
            id.and_then(|i| grads[i].clone())
                .map(|g| if create_graph { g } else { g.detach() })
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let sq = x.square().unwrap();
        let loss = sq.scatter_add(Arc::new(vec![0, 0]), vec![]).unwrap();
        let g = gradients(&loss, &[x], false).unwrap();
        assert_eq!(g[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let err = gradients(&x, &[x.clone()], false).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss(_)));
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let y = tape.leaf(&Tensor::vector(vec![3.0]));
        let loss = x.scatter_add(Arc::new(vec![0, 0]), vec![]).unwrap();
        let g = gradients(&loss, &[y], false).unwrap();
        assert_eq!(g[0].data(), &[0.0]);
    }

    #[test]
    fn second_derivative_of_cube() {
        // d/dx (d/dx x^3) = 6x
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0));
        let y = x.mul(&x).unwrap().mul(&x).unwrap();
        let dy = gradients(&y, &[x.clone()], true).unwrap();
        assert!((dy[0].item() - 12.0).abs() < 1e-12);
        let d2 = gradients(&dy[0], &[x], false).unwrap();
        assert!((d2[0].item() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_gradient_is_zero_at_origin() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(0.0));
        let y = x.sqrt().unwrap();
        let g = gradients(&y, &[x], false).unwrap();
        assert_eq!(g[0].item(), 0.0);
    }

    #[test]
    fn matmul_shape_mismatch_names_extents() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn broadcast_matmul_gradient_sums_batch() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap());
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = w.matmul(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        let loss = y.scatter_add(Arc::new(vec![0, 0]), vec![]).unwrap();
        let g = gradients(&loss, &[w], false).unwrap();
        assert_eq!(g[0].data(), &[4.0, 6.0]);
    }

    #[test]
    fn constants_do_not_record() {
        let tape = Tape::new();
        let a = Tensor::vector(vec![1.0]);
        let b = a.add(&a).unwrap();
        assert!(!b.is_attached());
        assert!(tape.is_empty());
    }
}
