//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A forward pass records one node per primitive application. The tape
//! borrows parameter tensors instead of cloning them, so recording is
//! cheap even with large embedding tables. `backward` walks the record
//! in reverse and returns per-parameter gradients; gradients reaching
//! an embedding table through `Lookup` stay sparse (per-row).

use std::borrow::Cow;
use std::collections::BTreeMap;

use thiserror::Error;

use super::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("backward on an empty tape")]
    EmptyTape,
    #[error("replay mismatch at node {node}")]
    ReplayMismatch { node: usize },
}

/// A learnable array: value plus an accumulated-gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub gradient: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let gradient = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            gradient,
        }
    }

    /// Resets the gradient buffer to exact zeros.
    pub fn zero_grad(&mut self) {
        self.gradient.data_mut().fill(0.0);
    }
}

/// The primitive operations the tape understands.
///
/// Shape contracts are enforced at application time; every violation
/// names the primitive and the offending shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `[m,k]x[k,n] -> [m,n]`, `[m,k]x[k] -> [m]`, or `[k]x[k,n] -> [n]`.
    MatMul,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// `1 - x` elementwise.
    OneMinus,
    /// Multiply by a fixed constant (the constant is not differentiated).
    Scale(f64),
    Sigmoid,
    Tanh,
    Relu,
    /// Stable softmax over `axis` (rank 1: axis 0; rank 2: axis 0 or 1).
    Softmax { axis: usize },
    /// Max over `axis` of a rank-2 tensor; ties go to the lowest index.
    MaxPool { axis: usize },
    /// Concatenate rank-1 tensors.
    Concat,
    /// Concatenate rank-2 tensors along columns (equal row counts).
    ConcatCols,
    /// Stack rank-1 tensors of equal length into a matrix.
    Stack,
    /// Row `row` of a rank-2 table.
    Lookup { row: usize },
    /// Reinterpret the row-major data with a new shape of equal size.
    Reshape { shape: Vec<usize> },
    /// Sum of all entries, as a scalar.
    Sum,
    /// Binary cross-entropy of `sigmoid(x)` against a fixed target,
    /// in the overflow-free formulation. Input and output are scalars.
    BceWithLogits { target: f64 },
    /// `[r,c] + [c]`: add a vector to every row.
    AddRowVec,
    /// Each row repeated `times` consecutive times: `[r,c] -> [r*times,c]`.
    RepeatRows { times: usize },
    /// Whole matrix stacked `times` times: `[r,c] -> [times*r,c]`.
    TileRows { times: usize },
    /// Vector broadcast to `rows` identical rows: `[c] -> [rows,c]`.
    BroadcastRow { rows: usize },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::OneMinus => "one_minus",
            Primitive::Scale(_) => "scale",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Softmax { .. } => "softmax",
            Primitive::MaxPool { .. } => "max_pool",
            Primitive::Concat => "concat",
            Primitive::ConcatCols => "concat_cols",
            Primitive::Stack => "stack",
            Primitive::Lookup { .. } => "lookup",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Sum => "sum",
            Primitive::BceWithLogits { .. } => "bce_with_logits",
            Primitive::AddRowVec => "add_row_vec",
            Primitive::RepeatRows { .. } => "repeat_rows",
            Primitive::TileRows { .. } => "tile_rows",
            Primitive::BroadcastRow { .. } => "broadcast_row",
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum NodeOp {
    /// External input. `param` names the parameter it was bound from.
    Leaf { param: Option<String> },
    Prim { kind: Primitive, inputs: Vec<VarId> },
}

#[derive(Debug)]
struct Node<'a> {
    op: NodeOp,
    value: Cow<'a, Tensor>,
}

/// Ordered record of one forward computation.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Default for Tape<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Drops all nodes but keeps the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an owned constant (no gradient).
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(NodeOp::Leaf { param: None }, Cow::Owned(value))
    }

    /// Records a borrowed tensor as a non-parameter leaf.
    pub fn input(&mut self, value: &'a Tensor) -> VarId {
        self.push(NodeOp::Leaf { param: None }, Cow::Borrowed(value))
    }

    /// Binds a parameter's current value; `backward` will report a
    /// gradient entry under the parameter's name.
    pub fn param(&mut self, p: &'a Parameter) -> VarId {
        self.push(
            NodeOp::Leaf {
                param: Some(p.name.clone()),
            },
            Cow::Borrowed(&p.value),
        )
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: NodeOp, value: Cow<'a, Tensor>) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    /// Applies a primitive and records it.
    pub fn apply(&mut self, kind: Primitive, inputs: &[VarId]) -> Result<VarId, TensorError> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| self.value(*id)).collect();
        let out = eval_primitive(&kind, &tensors)?;
        Ok(self.push(
            NodeOp::Prim {
                kind,
                inputs: inputs.to_vec(),
            },
            Cow::Owned(out),
        ))
    }

    /// Recomputes every recorded primitive from its recorded inputs and
    /// checks the results are bit-identical to the recorded values.
    pub fn replay(&self) -> Result<(), AutodiffError> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeOp::Prim { kind, inputs } = &node.op {
                let tensors: Vec<&Tensor> = inputs.iter().map(|id| self.value(*id)).collect();
                let recomputed = eval_primitive(kind, &tensors)?;
                let same = recomputed.shape() == node.value.shape()
                    && recomputed
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(AutodiffError::ReplayMismatch { node: i });
                }
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar output.
    ///
    /// Returns ∂output/∂parameter for every parameter leaf reachable
    /// from `output`; parameters not in the map have zero gradient.
    /// Repeated calls stay independent — accumulation happens when a
    /// map is applied to parameter buffers.
    pub fn backward(&self, output: VarId) -> Result<GradientMap, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let out_val = self.value(output);
        if !out_val.is_scalar() {
            return Err(AutodiffError::NonScalarOutput {
                shape: out_val.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<GradBuf>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(GradBuf::Dense(Tensor::scalar(1.0)));

        for i in (0..=output.0).rev() {
            let Some(buf) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                NodeOp::Leaf { .. } => {
                    grads[i] = Some(buf); // keep for parameter collection
                }
                NodeOp::Prim { kind, inputs } => {
                    let upstream = buf.into_dense(node.value.shape());
                    let in_vals: Vec<&Tensor> =
                        inputs.iter().map(|id| self.value(*id)).collect();
                    let contribs = vjp(kind, &in_vals, &node.value, &upstream);
                    for (slot, contrib) in inputs.iter().zip(contribs) {
                        match contrib {
                            GradContrib::Dense(t) => add_dense(&mut grads[slot.0], t),
                            GradContrib::Row { row, grad } => {
                                add_row(&mut grads[slot.0], row, grad)
                            }
                        }
                    }
                }
            }
        }

        let mut map = GradientMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeOp::Leaf { param: Some(name) } = &node.op {
                if let Some(buf) = grads[i].take() {
                    map.merge_entry(name, buf.into_entry(node.value.shape()));
                }
            }
        }
        Ok(map)
    }
}

// ---------------------------------------------------------------------------
// Gradient containers

/// Per-node gradient accumulator. Embedding tables only ever receive
/// row contributions, so those stay sparse.
enum GradBuf {
    Dense(Tensor),
    Rows { row_len: usize, rows: BTreeMap<usize, Vec<f64>> },
}

impl GradBuf {
    fn into_dense(self, shape: &[usize]) -> Tensor {
        match self {
            GradBuf::Dense(t) => t,
            GradBuf::Rows { row_len, rows } => {
                let mut t = Tensor::zeros(shape.to_vec());
                for (r, g) in rows {
                    let dst = &mut t.data_mut()[r * row_len..(r + 1) * row_len];
                    for (d, s) in dst.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                t
            }
        }
    }

    fn into_entry(self, shape: &[usize]) -> GradEntry {
        match self {
            GradBuf::Dense(t) => GradEntry::Dense(t),
            GradBuf::Rows { row_len, rows } => GradEntry::Rows {
                shape: shape.to_vec(),
                row_len,
                rows,
            },
        }
    }
}

fn add_dense(slot: &mut Option<GradBuf>, t: Tensor) {
    match slot.take() {
        None => *slot = Some(GradBuf::Dense(t)),
        Some(GradBuf::Dense(mut acc)) => {
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
            *slot = Some(GradBuf::Dense(acc));
        }
        Some(rows @ GradBuf::Rows { .. }) => {
            let mut acc = rows.into_dense(t.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
            *slot = Some(GradBuf::Dense(acc));
        }
    }
}

fn add_row(slot: &mut Option<GradBuf>, row: usize, grad: Vec<f64>) {
    match slot {
        None => {
            let mut rows = BTreeMap::new();
            let row_len = grad.len();
            rows.insert(row, grad);
            *slot = Some(GradBuf::Rows { row_len, rows });
        }
        Some(GradBuf::Rows { rows, .. }) => {
            rows.entry(row)
                .and_modify(|acc| {
                    for (a, b) in acc.iter_mut().zip(&grad) {
                        *a += b;
                    }
                })
                .or_insert(grad);
        }
        Some(GradBuf::Dense(t)) => {
            let cols = grad.len();
            let dst = &mut t.data_mut()[row * cols..(row + 1) * cols];
            for (d, s) in dst.iter_mut().zip(&grad) {
                *d += s;
            }
        }
    }
}

/// One parameter's gradient inside a [`GradientMap`].
#[derive(Debug, Clone)]
pub enum GradEntry {
    Dense(Tensor),
    /// Sparse per-row gradient for a rank-2 table.
    Rows {
        shape: Vec<usize>,
        row_len: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    entries: BTreeMap<String, GradEntry>,
}

impl GradientMap {
    pub fn new() -> Self {
        GradientMap::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&GradEntry> {
        self.entries.get(name)
    }

    fn merge_entry(&mut self, name: &str, entry: GradEntry) {
        match self.entries.get_mut(name) {
            None => {
                self.entries.insert(name.to_string(), entry);
            }
            Some(existing) => merge(existing, entry),
        }
    }

    /// Adds `other` into `self` entry by entry.
    pub fn add_assign(&mut self, other: GradientMap) {
        for (name, entry) in other.entries {
            self.merge_entry(&name, entry);
        }
    }

    /// Multiplies every gradient by `s`.
    pub fn scale(&mut self, s: f64) {
        for entry in self.entries.values_mut() {
            match entry {
                GradEntry::Dense(t) => t.data_mut().iter_mut().for_each(|v| *v *= s),
                GradEntry::Rows { rows, .. } => {
                    rows.values_mut()
                        .for_each(|g| g.iter_mut().for_each(|v| *v *= s));
                }
            }
        }
    }

    /// Materializes the gradient for `name` with the given shape
    /// (zero if the parameter was unreachable).
    pub fn dense(&self, name: &str, shape: &[usize]) -> Tensor {
        match self.entries.get(name) {
            None => Tensor::zeros(shape.to_vec()),
            Some(GradEntry::Dense(t)) => t.clone(),
            Some(GradEntry::Rows { row_len, rows, .. }) => {
                let mut t = Tensor::zeros(shape.to_vec());
                for (r, g) in rows {
                    let dst = &mut t.data_mut()[r * row_len..(r + 1) * row_len];
                    for (d, s) in dst.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                t
            }
        }
    }

    /// Euclidean norm over all entries, in deterministic name order.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for entry in self.entries.values() {
            match entry {
                GradEntry::Dense(t) => t.data().iter().for_each(|v| sq += v * v),
                GradEntry::Rows { rows, .. } => rows
                    .values()
                    .for_each(|g| g.iter().for_each(|v| sq += v * v)),
            }
        }
        sq.sqrt()
    }

    /// Adds every entry into the matching parameter's gradient buffer.
    pub fn accumulate_into<'p>(&self, params: impl IntoIterator<Item = &'p mut Parameter>) {
        for p in params {
            let Some(entry) = self.entries.get(&p.name) else { continue };
            match entry {
                GradEntry::Dense(t) => {
                    for (a, b) in p.gradient.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                GradEntry::Rows { row_len, rows, .. } => {
                    for (r, g) in rows {
                        let dst =
                            &mut p.gradient.data_mut()[r * row_len..(r + 1) * row_len];
                        for (d, s) in dst.iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

fn merge(acc: &mut GradEntry, other: GradEntry) {
    match (&mut *acc, other) {
        (GradEntry::Dense(a), GradEntry::Dense(b)) => {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        (GradEntry::Dense(a), GradEntry::Rows { row_len, rows, .. }) => {
            for (r, g) in rows {
                let dst = &mut a.data_mut()[r * row_len..(r + 1) * row_len];
                for (d, s) in dst.iter_mut().zip(&g) {
                    *d += s;
                }
            }
        }
        (GradEntry::Rows { rows, row_len, .. }, GradEntry::Rows { rows: other_rows, .. }) => {
            let row_len = *row_len;
            for (r, g) in other_rows {
                rows.entry(r)
                    .and_modify(|acc_row| {
                        for (a, b) in acc_row.iter_mut().zip(&g) {
                            *a += b;
                        }
                    })
                    .or_insert_with(|| {
                        debug_assert_eq!(g.len(), row_len);
                        g
                    });
            }
        }
        (entry @ GradEntry::Rows { .. }, GradEntry::Dense(mut b)) => {
            if let GradEntry::Rows { shape, row_len, rows } = entry {
                for (r, g) in rows.iter() {
                    let dst = &mut b.data_mut()[r * *row_len..(*r + 1) * *row_len];
                    for (d, s) in dst.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                debug_assert_eq!(shape.as_slice(), b.shape());
            }
            *entry = GradEntry::Dense(b);
        }
    }
}

// ---------------------------------------------------------------------------
// Forward kernels

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-free binary cross-entropy of `sigmoid(z)` against `y`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln()
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn bad_shape(op: &'static str, t: &Tensor, detail: impl Into<String>) -> TensorError {
    TensorError::BadShape {
        op,
        shape: t.shape().to_vec(),
        detail: detail.into(),
    }
}

fn expect_arity(kind: &Primitive, inputs: &[&Tensor], n: usize) -> Result<(), TensorError> {
    if inputs.len() != n {
        return Err(TensorError::BadShape {
            op: kind.name(),
            shape: vec![inputs.len()],
            detail: format!(" (expected {n} inputs, got {})", inputs.len()),
        });
    }
    Ok(())
}

/// Evaluates one primitive. Pure; shared by `apply` and `replay`.
pub(crate) fn eval_primitive(
    kind: &Primitive,
    inputs: &[&Tensor],
) -> Result<Tensor, TensorError> {
    match kind {
        Primitive::MatMul => {
            expect_arity(kind, inputs, 2)?;
            matmul(inputs[0], inputs[1])
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            expect_arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(kind.name(), a, b));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| match kind {
                    Primitive::Add => x + y,
                    Primitive::Sub => x - y,
                    _ => x * y,
                })
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Primitive::OneMinus => {
            expect_arity(kind, inputs, 1)?;
            unary(inputs[0], |v| 1.0 - v)
        }
        Primitive::Scale(c) => {
            expect_arity(kind, inputs, 1)?;
            let c = *c;
            unary(inputs[0], move |v| c * v)
        }
        Primitive::Sigmoid => {
            expect_arity(kind, inputs, 1)?;
            unary(inputs[0], sigmoid)
        }
        Primitive::Tanh => {
            expect_arity(kind, inputs, 1)?;
            unary(inputs[0], f64::tanh)
        }
        Primitive::Relu => {
            expect_arity(kind, inputs, 1)?;
            // f64::max would silently map NaN to 0 here.
            unary(inputs[0], |v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
        }
        Primitive::Softmax { axis } => {
            expect_arity(kind, inputs, 1)?;
            softmax(inputs[0], *axis)
        }
        Primitive::MaxPool { axis } => {
            expect_arity(kind, inputs, 1)?;
            max_pool(inputs[0], *axis).map(|(t, _)| t)
        }
        Primitive::Concat => {
            if inputs.is_empty() {
                return Err(TensorError::BadShape {
                    op: "concat",
                    shape: vec![],
                    detail: " (needs at least one input)".into(),
                });
            }
            let mut data = Vec::new();
            for t in inputs {
                if t.rank() != 1 {
                    return Err(bad_shape("concat", t, " (rank-1 inputs only)"));
                }
                data.extend_from_slice(t.data());
            }
            Ok(Tensor::vector(data))
        }
        Primitive::ConcatCols => {
            if inputs.is_empty() {
                return Err(TensorError::BadShape {
                    op: "concat_cols",
                    shape: vec![],
                    detail: " (needs at least one input)".into(),
                });
            }
            let rows = inputs[0].shape().first().copied().unwrap_or(0);
            let mut total_cols = 0;
            for t in inputs {
                if t.rank() != 2 || t.shape()[0] != rows {
                    return Err(shape_err("concat_cols", inputs[0], t));
                }
                total_cols += t.shape()[1];
            }
            let mut data = Vec::with_capacity(rows * total_cols);
            for r in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::new(vec![rows, total_cols], data)
        }
        Primitive::Stack => {
            if inputs.is_empty() {
                return Err(TensorError::BadShape {
                    op: "stack",
                    shape: vec![],
                    detail: " (needs at least one input)".into(),
                });
            }
            let len = inputs[0].numel();
            let mut data = Vec::with_capacity(inputs.len() * len);
            for t in inputs {
                if t.rank() != 1 || t.numel() != len {
                    return Err(shape_err("stack", inputs[0], t));
                }
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![inputs.len(), len], data)
        }
        Primitive::Lookup { row } => {
            expect_arity(kind, inputs, 1)?;
            let t = inputs[0];
            if t.rank() != 2 {
                return Err(bad_shape("lookup", t, " (rank-2 table required)"));
            }
            if *row >= t.shape()[0] {
                return Err(TensorError::IndexOutOfRange {
                    row: *row,
                    rows: t.shape()[0],
                });
            }
            Ok(Tensor::vector(t.row(*row).to_vec()))
        }
        Primitive::Reshape { shape } => {
            expect_arity(kind, inputs, 1)?;
            let t = inputs[0];
            if shape.iter().product::<usize>() != t.numel() {
                return Err(bad_shape(
                    "reshape",
                    t,
                    format!(" (cannot reshape to {shape:?})"),
                ));
            }
            Tensor::new(shape.clone(), t.data().to_vec())
        }
        Primitive::Sum => {
            expect_arity(kind, inputs, 1)?;
            Ok(Tensor::scalar(inputs[0].data().iter().sum()))
        }
        Primitive::BceWithLogits { target } => {
            expect_arity(kind, inputs, 1)?;
            let t = inputs[0];
            if !t.is_scalar() {
                return Err(bad_shape("bce_with_logits", t, " (scalar logit required)"));
            }
            Ok(Tensor::scalar(bce_with_logits(t.item(), *target)))
        }
        Primitive::AddRowVec => {
            expect_arity(kind, inputs, 2)?;
            let (m, v) = (inputs[0], inputs[1]);
            if m.rank() != 2 || v.rank() != 1 || m.shape()[1] != v.numel() {
                return Err(shape_err("add_row_vec", m, v));
            }
            let cols = m.shape()[1];
            let mut data = m.data().to_vec();
            for r in 0..m.shape()[0] {
                for c in 0..cols {
                    data[r * cols + c] += v.data()[c];
                }
            }
            Tensor::new(m.shape().to_vec(), data)
        }
        Primitive::RepeatRows { times } => {
            expect_arity(kind, inputs, 1)?;
            let t = inputs[0];
            if t.rank() != 2 || *times == 0 {
                return Err(bad_shape("repeat_rows", t, " (rank-2, times >= 1)"));
            }
            let cols = t.shape()[1];
            let mut data = Vec::with_capacity(t.numel() * times);
            for r in 0..t.shape()[0] {
                for _ in 0..*times {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::new(vec![t.shape()[0] * times, cols], data)
        }
        Primitive::TileRows { times } => {
            expect_arity(kind, inputs, 1)?;
            let t = inputs[0];
            if t.rank() != 2 || *times == 0 {
                return Err(bad_shape("tile_rows", t, " (rank-2, times >= 1)"));
            }
            let mut data = Vec::with_capacity(t.numel() * times);
            for _ in 0..*times {
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![t.shape()[0] * times, t.shape()[1]], data)
        }
        Primitive::BroadcastRow { rows } => {
            expect_arity(kind, inputs, 1)?;
            let t = inputs[0];
            if t.rank() != 1 || *rows == 0 {
                return Err(bad_shape("broadcast_row", t, " (rank-1, rows >= 1)"));
            }
            let mut data = Vec::with_capacity(t.numel() * rows);
            for _ in 0..*rows {
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![*rows, t.numel()], data)
        }
    }
}

fn unary(t: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor, TensorError> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            if k != k2 {
                return Err(shape_err("matmul", a, b));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let arow = a.row(i);
                for (l, &av) in arow.iter().enumerate().take(k) {
                    let brow = b.row(l);
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        }
        (2, 1) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            if k != b.numel() {
                return Err(shape_err("matmul", a, b));
            }
            let mut out = vec![0.0; m];
            for (i, o) in out.iter_mut().enumerate() {
                *o = a.row(i).iter().zip(b.data()).map(|(x, y)| x * y).sum();
            }
            Ok(Tensor::vector(out))
        }
        (1, 2) => {
            let k = a.numel();
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            if k != k2 {
                return Err(shape_err("matmul", a, b));
            }
            let mut out = vec![0.0; n];
            for (l, &av) in a.data().iter().enumerate() {
                for (o, &bv) in out.iter_mut().zip(b.row(l)) {
                    *o += av * bv;
                }
            }
            Ok(Tensor::vector(out))
        }
        _ => Err(shape_err("matmul", a, b)),
    }
}

fn softmax(t: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    let mut out = t.data().to_vec();
    match (t.rank(), axis) {
        (1, 0) => {
            softmax_slice(&mut out);
            Ok(Tensor::vector(out))
        }
        (2, 1) => {
            let cols = t.shape()[1];
            for r in 0..t.shape()[0] {
                softmax_slice(&mut out[r * cols..(r + 1) * cols]);
            }
            Tensor::new(t.shape().to_vec(), out)
        }
        (2, 0) => {
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            for c in 0..cols {
                let mut col: Vec<f64> = (0..rows).map(|r| out[r * cols + c]).collect();
                softmax_slice(&mut col);
                for (r, v) in col.into_iter().enumerate() {
                    out[r * cols + c] = v;
                }
            }
            Tensor::new(t.shape().to_vec(), out)
        }
        _ => Err(bad_shape("softmax", t, format!(" (axis {axis})"))),
    }
}

fn softmax_slice(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

/// Returns the pooled tensor and the flat argmax index per output slot.
fn max_pool(t: &Tensor, axis: usize) -> Result<(Tensor, Vec<usize>), TensorError> {
    if t.rank() != 2 {
        return Err(bad_shape("max_pool", t, " (rank-2 required)"));
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    match axis {
        1 => {
            let mut out = Vec::with_capacity(rows);
            let mut args = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = t.row(r);
                let (mut best, mut arg) = (row[0], 0);
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        arg = c;
                    }
                }
                out.push(best);
                args.push(r * cols + arg);
            }
            Ok((Tensor::vector(out), args))
        }
        0 => {
            let mut out = Vec::with_capacity(cols);
            let mut args = Vec::with_capacity(cols);
            for c in 0..cols {
                let (mut best, mut arg) = (t.data()[c], 0);
                for r in 1..rows {
                    let v = t.data()[r * cols + c];
                    if v > best {
                        best = v;
                        arg = r;
                    }
                }
                out.push(best);
                args.push(arg * cols + c);
            }
            Ok((Tensor::vector(out), args))
        }
        _ => Err(bad_shape("max_pool", t, format!(" (axis {axis})"))),
    }
}

// ---------------------------------------------------------------------------
// Backward kernels

enum GradContrib {
    Dense(Tensor),
    Row { row: usize, grad: Vec<f64> },
}

/// Vector-Jacobian product of one primitive: upstream gradient in,
/// one contribution per input out.
fn vjp(kind: &Primitive, inputs: &[&Tensor], output: &Tensor, g: &Tensor) -> Vec<GradContrib> {
    match kind {
        Primitive::MatMul => vjp_matmul(inputs[0], inputs[1], g),
        Primitive::Add => vec![
            GradContrib::Dense(g.clone()),
            GradContrib::Dense(g.clone()),
        ],
        Primitive::Sub => {
            let mut neg = g.clone();
            neg.data_mut().iter_mut().for_each(|v| *v = -*v);
            vec![GradContrib::Dense(g.clone()), GradContrib::Dense(neg)]
        }
        Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = zip_map(g, b, |gv, bv| gv * bv);
            let db = zip_map(g, a, |gv, av| gv * av);
            vec![GradContrib::Dense(da), GradContrib::Dense(db)]
        }
        Primitive::OneMinus => {
            let mut d = g.clone();
            d.data_mut().iter_mut().for_each(|v| *v = -*v);
            vec![GradContrib::Dense(d)]
        }
        Primitive::Scale(c) => {
            let mut d = g.clone();
            d.data_mut().iter_mut().for_each(|v| *v *= c);
            vec![GradContrib::Dense(d)]
        }
        Primitive::Sigmoid => {
            let d = zip_map(g, output, |gv, s| gv * s * (1.0 - s));
            vec![GradContrib::Dense(d)]
        }
        Primitive::Tanh => {
            let d = zip_map(g, output, |gv, t| gv * (1.0 - t * t));
            vec![GradContrib::Dense(d)]
        }
        Primitive::Relu => {
            let d = zip_map(g, inputs[0], |gv, x| if x > 0.0 { gv } else { 0.0 });
            vec![GradContrib::Dense(d)]
        }
        Primitive::Softmax { axis } => {
            let y = output;
            let mut d = Tensor::zeros(y.shape().to_vec());
            match (y.rank(), axis) {
                (1, 0) => softmax_vjp_slice(y.data(), g.data(), d.data_mut()),
                (2, 1) => {
                    let cols = y.shape()[1];
                    for r in 0..y.shape()[0] {
                        let span = r * cols..(r + 1) * cols;
                        softmax_vjp_slice(
                            &y.data()[span.clone()],
                            &g.data()[span.clone()],
                            &mut d.data_mut()[span],
                        );
                    }
                }
                (2, 0) => {
                    let (rows, cols) = (y.shape()[0], y.shape()[1]);
                    for c in 0..cols {
                        let ys: Vec<f64> = (0..rows).map(|r| y.data()[r * cols + c]).collect();
                        let gs: Vec<f64> = (0..rows).map(|r| g.data()[r * cols + c]).collect();
                        let mut ds = vec![0.0; rows];
                        softmax_vjp_slice(&ys, &gs, &mut ds);
                        for (r, v) in ds.into_iter().enumerate() {
                            d.data_mut()[r * cols + c] = v;
                        }
                    }
                }
                _ => unreachable!("validated at apply time"),
            }
            vec![GradContrib::Dense(d)]
        }
        Primitive::MaxPool { axis } => {
            let (_, args) = max_pool(inputs[0], *axis).expect("validated at apply time");
            let mut d = Tensor::zeros(inputs[0].shape().to_vec());
            for (slot, &flat) in args.iter().enumerate() {
                d.data_mut()[flat] += g.data()[slot];
            }
            vec![GradContrib::Dense(d)]
        }
        Primitive::Concat => {
            let mut out = Vec::with_capacity(inputs.len());
            let mut offset = 0;
            for t in inputs {
                let n = t.numel();
                out.push(GradContrib::Dense(Tensor::vector(
                    g.data()[offset..offset + n].to_vec(),
                )));
                offset += n;
            }
            out
        }
        Primitive::ConcatCols => {
            let rows = inputs[0].shape()[0];
            let total_cols: usize = inputs.iter().map(|t| t.shape()[1]).sum();
            let mut out = Vec::with_capacity(inputs.len());
            let mut offset = 0;
            for t in inputs {
                let cols = t.shape()[1];
                let mut d = Tensor::zeros(t.shape().to_vec());
                for r in 0..rows {
                    let src = &g.data()[r * total_cols + offset..r * total_cols + offset + cols];
                    d.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(src);
                }
                out.push(GradContrib::Dense(d));
                offset += cols;
            }
            out
        }
        Primitive::Stack => {
            let len = inputs[0].numel();
            (0..inputs.len())
                .map(|i| {
                    GradContrib::Dense(Tensor::vector(
                        g.data()[i * len..(i + 1) * len].to_vec(),
                    ))
                })
                .collect()
        }
        Primitive::Lookup { row } => vec![GradContrib::Row {
            row: *row,
            grad: g.data().to_vec(),
        }],
        Primitive::Reshape { .. } => {
            let d = Tensor::new(inputs[0].shape().to_vec(), g.data().to_vec())
                .expect("same numel");
            vec![GradContrib::Dense(d)]
        }
        Primitive::Sum => {
            let gv = g.item();
            let mut d = Tensor::zeros(inputs[0].shape().to_vec());
            d.data_mut().fill(gv);
            vec![GradContrib::Dense(d)]
        }
        Primitive::BceWithLogits { target } => {
            let z = inputs[0].item();
            let d = g.item() * (sigmoid(z) - target);
            vec![GradContrib::Dense(Tensor::scalar(d))]
        }
        Primitive::AddRowVec => {
            let (rows, cols) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let mut dv = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    dv[c] += g.data()[r * cols + c];
                }
            }
            vec![
                GradContrib::Dense(g.clone()),
                GradContrib::Dense(Tensor::vector(dv)),
            ]
        }
        Primitive::RepeatRows { times } => {
            let (rows, cols) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let mut d = Tensor::zeros(vec![rows, cols]);
            for r in 0..rows {
                for t in 0..*times {
                    let src = &g.data()[(r * times + t) * cols..(r * times + t + 1) * cols];
                    let dst = &mut d.data_mut()[r * cols..(r + 1) * cols];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
            vec![GradContrib::Dense(d)]
        }
        Primitive::TileRows { times } => {
            let (rows, cols) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let mut d = Tensor::zeros(vec![rows, cols]);
            for t in 0..*times {
                for r in 0..rows {
                    let src = &g.data()[(t * rows + r) * cols..(t * rows + r + 1) * cols];
                    let dst = &mut d.data_mut()[r * cols..(r + 1) * cols];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
            vec![GradContrib::Dense(d)]
        }
        Primitive::BroadcastRow { rows } => {
            let cols = inputs[0].numel();
            let mut dv = vec![0.0; cols];
            for r in 0..*rows {
                for c in 0..cols {
                    dv[c] += g.data()[r * cols + c];
                }
            }
            vec![GradContrib::Dense(Tensor::vector(dv))]
        }
    }
}

fn vjp_matmul(a: &Tensor, b: &Tensor, g: &Tensor) -> Vec<GradContrib> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            // dA = g . B^T
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for l in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g.data()[i * n + j] * b.data()[l * n + j];
                    }
                    da[i * k + l] = s;
                }
            }
            // dB = A^T . g
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                let gr = &g.data()[i * n..(i + 1) * n];
                for l in 0..k {
                    let av = a.data()[i * k + l];
                    let dbr = &mut db[l * n..(l + 1) * n];
                    for (o, &gv) in dbr.iter_mut().zip(gr) {
                        *o += av * gv;
                    }
                }
            }
            vec![
                GradContrib::Dense(Tensor::new(vec![m, k], da).unwrap()),
                GradContrib::Dense(Tensor::new(vec![k, n], db).unwrap()),
            ]
        }
        (2, 1) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for l in 0..k {
                    da[i * k + l] = g.data()[i] * b.data()[l];
                }
            }
            let mut db = vec![0.0; k];
            for i in 0..m {
                let gv = g.data()[i];
                for (o, &av) in db.iter_mut().zip(a.row(i)) {
                    *o += gv * av;
                }
            }
            vec![
                GradContrib::Dense(Tensor::new(vec![m, k], da).unwrap()),
                GradContrib::Dense(Tensor::vector(db)),
            ]
        }
        (1, 2) => {
            let k = a.numel();
            let n = b.shape()[1];
            let mut da = vec![0.0; k];
            for (l, o) in da.iter_mut().enumerate() {
                *o = b.row(l).iter().zip(g.data()).map(|(bv, gv)| bv * gv).sum();
            }
            let mut db = vec![0.0; k * n];
            for l in 0..k {
                let av = a.data()[l];
                let dbr = &mut db[l * n..(l + 1) * n];
                for (o, &gv) in dbr.iter_mut().zip(g.data()) {
                    *o = av * gv;
                }
            }
            vec![
                GradContrib::Dense(Tensor::vector(da)),
                GradContrib::Dense(Tensor::new(vec![k, n], db).unwrap()),
            ]
        }
        _ => unreachable!("validated at apply time"),
    }
}

fn softmax_vjp_slice(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(yv, gv)| yv * gv).sum();
    for ((o, &yv), &gv) in out.iter_mut().zip(y).zip(g) {
        *o = yv * (gv - dot);
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .unwrap()
}
