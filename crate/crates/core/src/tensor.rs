//! Dense n-dimensional `f64` tensors with reverse-mode automatic
//! differentiation.
//!
//! Every operation builds a node in an implicit computation graph (a Wengert
//! tape realized as `Rc` links back to the operands). Calling
//! [`Tensor::backward`] on a scalar walks the graph once in reverse
//! topological order and accumulates `d(root)/d(leaf)` into every leaf that
//! was created with `requires_grad`.
//!
//! Tensors are immutable after construction; an optimizer produces *new* leaf
//! tensors rather than mutating old ones. The only interior mutability is the
//! gradient buffer itself.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Epsilon guarding the `l2norm` backward rule at the origin.
pub const L2NORM_EPS: f64 = 1e-12;

/// The recorded operation that produced a node, together with handles to its
/// operands. Operand values double as the saved intermediates for the
/// backward rules.
#[derive(Clone)]
enum Op {
    Leaf,
    Matmul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    Tanh(Tensor),
    Sigmoid(Tensor),
    Sqrt(Tensor),
    Recip(Tensor),
    Sum(Tensor, usize),
    Mean(Tensor, usize),
    Var(Tensor, usize),
    Concat(Vec<Tensor>, usize),
    SliceRows(Tensor, usize),
    Reshape(Tensor),
    AddRow(Tensor, Tensor),
    MulRow(Tensor, Tensor),
    L2Norm(Tensor),
    RowL2Norm(Tensor),
    RowLogSumExp(Tensor),
    GatherRows(Tensor, Vec<usize>),
    RowSoftmaxCrossEntropy(Tensor, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sqrt(..) => "sqrt",
            Op::Recip(..) => "recip",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Var(..) => "var",
            Op::Concat(..) => "concat",
            Op::SliceRows(..) => "slice_rows",
            Op::Reshape(..) => "reshape",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::L2Norm(..) => "l2norm",
            Op::RowL2Norm(..) => "row_l2norm",
            Op::RowLogSumExp(..) => "row_log_sum_exp",
            Op::GatherRows(..) => "gather_rows",
            Op::RowSoftmaxCrossEntropy(..) => "row_softmax_cross_entropy",
        }
    }

    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::AddRow(a, b) | Op::MulRow(a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Sqrt(x)
            | Op::Recip(x)
            | Op::Sum(x, _)
            | Op::Mean(x, _)
            | Op::Var(x, _)
            | Op::SliceRows(x, _)
            | Op::Reshape(x)
            | Op::L2Norm(x)
            | Op::RowL2Norm(x)
            | Op::RowLogSumExp(x)
            | Op::GatherRows(x, _)
            | Op::RowSoftmaxCrossEntropy(x, _) => vec![x],
            Op::Concat(parts, _) => parts.iter().collect(),
        }
    }

    fn take_parents(&mut self) -> Vec<Tensor> {
        match std::mem::replace(self, Op::Leaf) {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::AddRow(a, b) | Op::MulRow(a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Sqrt(x)
            | Op::Recip(x)
            | Op::Sum(x, _)
            | Op::Mean(x, _)
            | Op::Var(x, _)
            | Op::SliceRows(x, _)
            | Op::Reshape(x)
            | Op::L2Norm(x)
            | Op::RowL2Norm(x)
            | Op::RowLogSumExp(x)
            | Op::GatherRows(x, _)
            | Op::RowSoftmaxCrossEntropy(x, _) => vec![x],
            Op::Concat(parts, _) => parts,
        }
    }
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: RefCell<Op>,
}

impl Drop for Node {
    // Long op chains (BLSTM unrolled over hundreds of frames) would otherwise
    // recurse once per node when the graph is released.
    fn drop(&mut self) {
        let mut stack = self.op.borrow_mut().take_parents();
        while let Some(t) = stack.pop() {
            if let Some(node) = Rc::into_inner(t.node) {
                stack.extend(node.op.borrow_mut().take_parents());
            }
        }
    }
}

/// Handle to a node in the computation graph. Cloning is cheap (reference
/// count bump); the underlying values are shared and immutable.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, op={}, requires_grad={}",
            self.node.id,
            self.node.shape,
            self.node.op.borrow().name(),
            self.node.requires_grad
        )?;
        if self.numel() <= 8 {
            write!(f, ", values={:?}", self.node.values)?;
        }
        write!(f, ")")
    }
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{op} produced non-finite value {} at flat index {idx}",
            values[idx]
        )));
    }
    Ok(())
}

fn register(op: Op, shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
    debug_assert_eq!(shape.iter().product::<usize>(), values.len());
    check_finite(op.name(), &values)?;
    let requires_grad = op.parents().iter().any(|p| p.requires_grad());
    Ok(Tensor {
        node: Rc::new(Node {
            id: next_id(),
            shape,
            values,
            requires_grad,
            grad: RefCell::new(None),
            op: RefCell::new(op),
        }),
    })
}

/// Decompose a shape around `axis` into (outer, extent, inner) so that the
/// flat index of element `(o, a, i)` is `(o * extent + a) * inner + i`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Correctly rounded summation (Shewchuk partials, as in CPython's
/// `math.fsum`). The result depends only on the multiset of addends, which
/// makes reductions bitwise invariant under permutation of the reduced axis.
fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    let mut n = match partials.len() {
        0 => return 0.0,
        n => n - 1,
    };
    let mut total = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        n -= 1;
        let x = total;
        let y = partials[n];
        total = x + y;
        lo = y - (total - x);
        if lo != 0.0 {
            break;
        }
    }
    // Half-ulp residue: round to even against the next partial's sign.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = total + y;
        if y == x - total {
            total = x;
        }
    }
    total
}

/// Iterator over one reduced slice: elements `(o, 0..extent, i)`.
fn axis_slice<'a>(
    vals: &'a [f64],
    extent: usize,
    inner: usize,
    o: usize,
    i: usize,
) -> impl Iterator<Item = f64> + 'a {
    (0..extent).map(move |a| vals[(o * extent + a) * inner + i])
}

/// Mean along a reduced slice via correctly rounded summation.
fn slice_mean(vals: &[f64], extent: usize, inner: usize, o: usize, i: usize) -> f64 {
    fsum(axis_slice(vals, extent, inner, o, i)) / extent as f64
}

fn slice_is_constant(vals: &[f64], extent: usize, inner: usize, o: usize, i: usize) -> bool {
    let first = vals[(o * extent) * inner + i];
    axis_slice(vals, extent, inner, o, i).all(|v| v == first)
}

impl Tensor {
    // ── Constructors ────────────────────────────────────────────────

    fn leaf(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        check_finite("leaf", &values)?;
        Ok(Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                values,
                requires_grad,
                grad: RefCell::new(None),
                op: RefCell::new(Op::Leaf),
            }),
        })
    }

    /// Build a constant tensor. Errors if the value count does not match the
    /// shape or any value is non-finite.
    pub fn from_values(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape, values, false)
    }

    /// Build a trainable leaf: `backward` will populate its gradient buffer.
    pub fn parameter(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape, values, true)
    }

    /// Rank-0 scalar.
    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::from_values(vec![], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_values(shape, vec![0.0; numel]).expect("zeros is always valid")
    }

    /// 2-D tensor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::DegenerateInput("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("from_rows: ragged rows".into()));
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_values(vec![rows.len(), cols], values)
    }

    pub fn eye(n: usize) -> Tensor {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Tensor::from_values(vec![n, n], values).expect("eye is always valid")
    }

    // ── Accessors ───────────────────────────────────────────────────

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.node.values
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// The single value of a scalar (or any one-element) tensor.
    ///
    /// Panics when the tensor holds more than one element; that is a
    /// programming error, not a data error.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item() called on tensor with shape {:?}",
            self.shape()
        );
        self.node.values[0]
    }

    /// Current accumulated gradient, if `backward` has populated one.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    /// Clear the gradient buffer (used between optimizer steps).
    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    fn is_scalar_like(&self) -> bool {
        self.numel() == 1
    }

    // ── Elementwise ops ─────────────────────────────────────────────

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (shape, values) = broadcast_zip("add", self, rhs, |a, b| a + b)?;
        register(Op::Add(self.clone(), rhs.clone()), shape, values)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let (shape, values) = broadcast_zip("sub", self, rhs, |a, b| a - b)?;
        register(Op::Sub(self.clone(), rhs.clone()), shape, values)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (shape, values) = broadcast_zip("mul", self, rhs, |a, b| a * b)?;
        register(Op::Mul(self.clone(), rhs.clone()), shape, values)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::Numeric(format!("scale by non-finite constant {c}")));
        }
        let values = self.values().iter().map(|v| v * c).collect();
        register(Op::Scale(self.clone(), c), self.shape().to_vec(), values)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let values = self.values().iter().map(|&v| v.max(0.0)).collect();
        register(Op::Relu(self.clone()), self.shape().to_vec(), values)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let values = self.values().iter().map(|v| v.tanh()).collect();
        register(Op::Tanh(self.clone()), self.shape().to_vec(), values)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let values = self
            .values()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        register(Op::Sigmoid(self.clone()), self.shape().to_vec(), values)
    }

    /// Elementwise square root. The backward rule divides by the output, so
    /// it is undefined at exact zeros; callers add a positive floor first.
    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(&v) = self.values().iter().find(|&&v| v < 0.0) {
            return Err(Error::Numeric(format!("sqrt of negative value {v}")));
        }
        let values = self.values().iter().map(|v| v.sqrt()).collect();
        register(Op::Sqrt(self.clone()), self.shape().to_vec(), values)
    }

    /// Elementwise reciprocal.
    pub fn recip(&self) -> Result<Tensor> {
        let values: Vec<f64> = self.values().iter().map(|v| 1.0 / v).collect();
        register(Op::Recip(self.clone()), self.shape().to_vec(), values)
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum(&self, axis: usize) -> Result<Tensor> {
        let (shape, values) = self.reduce("sum", axis, |slice_sum, _n| slice_sum)?;
        register(Op::Sum(self.clone(), axis), shape, values)
    }

    pub fn mean(&self, axis: usize) -> Result<Tensor> {
        let (shape, values) = self.reduce("mean", axis, |slice_sum, n| slice_sum / n as f64)?;
        register(Op::Mean(self.clone(), axis), shape, values)
    }

    /// Population variance along `axis` (divide by the count, not count−1).
    /// Constant slices give exact zero; results are bitwise invariant under
    /// permutation along the reduced axis.
    pub fn var(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("var", axis)?;
        let (outer, extent, inner) = axis_split(self.shape(), axis);
        let vals = self.values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                if slice_is_constant(vals, extent, inner, o, i) {
                    continue;
                }
                let m = slice_mean(vals, extent, inner, o, i);
                let v = fsum(axis_slice(vals, extent, inner, o, i).map(|x| {
                    let d = x - m;
                    d * d
                }));
                out[o * inner + i] = (v / extent as f64).max(0.0);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        register(Op::Var(self.clone(), axis), shape, out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&self) -> Result<Tensor> {
        self.reshape(vec![self.numel()])?.sum(0)
    }

    fn check_axis(&self, op: &str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::Dimension(format!(
                "{op}: axis {axis} out of range for rank {}",
                self.rank()
            )));
        }
        if self.numel() == 0 {
            return Err(Error::DegenerateInput(format!("{op}: empty tensor")));
        }
        Ok(())
    }

    fn reduce(
        &self,
        op: &str,
        axis: usize,
        finish: impl Fn(f64, usize) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        self.check_axis(op, axis)?;
        let (outer, extent, inner) = axis_split(self.shape(), axis);
        let vals = self.values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                out[o * inner + i] = finish(fsum(axis_slice(vals, extent, inner, o, i)), extent);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok((shape, out))
    }

    // ── Structural ops ──────────────────────────────────────────────

    /// Concatenate along `axis`; all inputs must agree on every other axis.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::DegenerateInput("concat of zero tensors".into()));
        }
        let rank = parts[0].rank();
        if axis >= rank {
            return Err(Error::Dimension(format!(
                "concat: axis {axis} out of range for rank {rank}"
            )));
        }
        let mut axis_total = 0;
        for p in parts {
            if p.rank() != rank {
                return Err(Error::Dimension("concat: rank mismatch".into()));
            }
            for d in 0..rank {
                if d != axis && p.shape()[d] != parts[0].shape()[d] {
                    return Err(Error::Dimension(format!(
                        "concat: off-axis dim {d} mismatch ({} vs {})",
                        p.shape()[d],
                        parts[0].shape()[d]
                    )));
                }
            }
            axis_total += p.shape()[axis];
        }
        let mut shape = parts[0].shape().to_vec();
        shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut values = vec![0.0; shape.iter().product()];
        let mut offset = 0;
        for p in parts {
            let extent = p.shape()[axis];
            for o in 0..outer {
                let src = &p.values()[o * extent * inner..(o + 1) * extent * inner];
                let dst_base = (o * axis_total + offset) * inner;
                values[dst_base..dst_base + extent * inner].copy_from_slice(src);
            }
            offset += extent;
        }
        register(Op::Concat(parts.to_vec(), axis), shape, values)
    }

    /// Contiguous row slice of a 2-D tensor: rows `start .. start+len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "slice_rows requires rank 2, got {:?}",
                self.shape()
            )));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        if len == 0 || start + len > rows {
            return Err(Error::Dimension(format!(
                "slice_rows: rows {start}..{} out of range for {rows}",
                start + len
            )));
        }
        let values = self.values()[start * cols..(start + len) * cols].to_vec();
        register(Op::SliceRows(self.clone(), start), vec![len, cols], values)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        register(Op::Reshape(self.clone()), shape, self.values().to_vec())
    }

    // ── Row-wise ops (matrix ⊕ vector) ─────────────────────────────

    /// Add a length-`c` vector to every row of an `[r × c]` matrix.
    pub fn add_row(&self, v: &Tensor) -> Result<Tensor> {
        let (r, c) = self.check_rowwise("add_row", v)?;
        let mut values = self.values().to_vec();
        for i in 0..r {
            for (out, vv) in values[i * c..(i + 1) * c].iter_mut().zip(v.values()) {
                *out += vv;
            }
        }
        register(Op::AddRow(self.clone(), v.clone()), vec![r, c], values)
    }

    /// Multiply every row of an `[r × c]` matrix elementwise by a length-`c`
    /// vector.
    pub fn mul_row(&self, v: &Tensor) -> Result<Tensor> {
        let (r, c) = self.check_rowwise("mul_row", v)?;
        let mut values = self.values().to_vec();
        for i in 0..r {
            for (out, vv) in values[i * c..(i + 1) * c].iter_mut().zip(v.values()) {
                *out *= vv;
            }
        }
        register(Op::MulRow(self.clone(), v.clone()), vec![r, c], values)
    }

    fn check_rowwise(&self, op: &str, v: &Tensor) -> Result<(usize, usize)> {
        if self.rank() != 2 || v.rank() != 1 || self.shape()[1] != v.shape()[0] {
            return Err(Error::Dimension(format!(
                "{op}: need [r × c] matrix and [c] vector, got {:?} and {:?}",
                self.shape(),
                v.shape()
            )));
        }
        Ok((self.shape()[0], self.shape()[1]))
    }

    // ── Matrix multiply ─────────────────────────────────────────────

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(Error::Dimension(format!(
                "matmul requires rank-2 operands, got {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {:?} × {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let values = matmul_vals(self.values(), rhs.values(), m, k, n);
        register(Op::Matmul(self.clone(), rhs.clone()), vec![m, n], values)
    }

    // ── Norms and loss building blocks ──────────────────────────────

    /// Euclidean norm over all elements, as a scalar.
    pub fn l2norm(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::DegenerateInput("l2norm of empty tensor".into()));
        }
        let n = self.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        register(Op::L2Norm(self.clone()), vec![], vec![n])
    }

    /// Per-row Euclidean norm of an `[r × c]` matrix, giving `[r]`.
    pub fn row_l2norm(&self) -> Result<Tensor> {
        let (r, c) = self.check_matrix("row_l2norm")?;
        let values = (0..r)
            .map(|i| {
                self.values()[i * c..(i + 1) * c]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        register(Op::RowL2Norm(self.clone()), vec![r], values)
    }

    /// Per-row `log Σ exp` of an `[r × c]` matrix, computed with
    /// max-subtraction, giving `[r]`.
    pub fn row_log_sum_exp(&self) -> Result<Tensor> {
        let (r, c) = self.check_matrix("row_log_sum_exp")?;
        let values = (0..r)
            .map(|i| {
                let row = &self.values()[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        register(Op::RowLogSumExp(self.clone()), vec![r], values)
    }

    /// Pick one element per row: `out[i] = self[i, indices[i]]`, giving `[r]`.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = self.check_matrix("gather_rows")?;
        if indices.len() != r {
            return Err(Error::Dimension(format!(
                "gather_rows: {} indices for {} rows",
                indices.len(),
                r
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&ix| ix >= c) {
            return Err(Error::Contract(format!(
                "gather_rows: index {bad} out of range for {c} columns"
            )));
        }
        let values = indices
            .iter()
            .enumerate()
            .map(|(i, &j)| self.values()[i * c + j])
            .collect();
        register(
            Op::GatherRows(self.clone(), indices.to_vec()),
            vec![r],
            values,
        )
    }

    /// Per-row softmax cross-entropy at the labeled class, computed with
    /// max-subtraction folded into every term:
    /// `ce_i = ln Σ_j exp(x_ij − m_i) − (x_i,label_i − m_i)`.
    ///
    /// Folding the row maximum into both terms makes the result exactly
    /// invariant to adding a representable constant to a whole row.
    pub fn row_softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (r, c) = self.check_matrix("row_softmax_cross_entropy")?;
        if labels.len() != r {
            return Err(Error::Dimension(format!(
                "row_softmax_cross_entropy: {} labels for {} rows",
                labels.len(),
                r
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let values = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let row = &self.values()[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - (row[label] - m)
            })
            .collect();
        register(
            Op::RowSoftmaxCrossEntropy(self.clone(), labels.to_vec()),
            vec![r],
            values,
        )
    }

    fn check_matrix(&self, op: &str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "{op} requires rank 2, got {:?}",
                self.shape()
            )));
        }
        Ok((self.shape()[0], self.shape()[1]))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar root. Populates (accumulates into)
    /// the gradient buffer of every `requires_grad` leaf reachable from the
    /// root. Non-leaf gradients are scratch and are discarded.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.reverse_topo();
        let mut scratch: HashMap<u64, Vec<f64>> = HashMap::new();
        scratch.insert(self.id(), vec![1.0]);
        for t in &order {
            let g = match scratch.remove(&t.id()) {
                Some(g) => g,
                None => continue,
            };
            if let Some(idx) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at node id={} op={} (flat index {idx})",
                    g[idx],
                    t.id(),
                    t.node.op.borrow().name()
                )));
            }
            let op = t.node.op.borrow();
            if let Op::Leaf = &*op {
                let mut slot = t.node.grad.borrow_mut();
                match slot.as_mut() {
                    Some(buf) => {
                        for (b, gv) in buf.iter_mut().zip(&g) {
                            *b += gv;
                        }
                    }
                    None => *slot = Some(g),
                }
                continue;
            }
            propagate(t, &op, &g, &mut scratch);
        }
        Ok(())
    }

    /// Nodes reachable from `self` through `requires_grad` paths, ordered so
    /// every node precedes its operands.
    fn reverse_topo(&self) -> Vec<Tensor> {
        enum Frame {
            Enter(Tensor),
            Exit(Tensor),
        }
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !visited.insert(t.id()) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in t.node.op.borrow().parents() {
                        if p.requires_grad() && !visited.contains(&p.id()) {
                            stack.push(Frame::Enter(p.clone()));
                        }
                    }
                }
                Frame::Exit(t) => order.push(t),
            }
        }
        order.reverse();
        order
    }
}

/// Accumulate `contribution` into the scratch gradient of `parent` (skipped
/// entirely when the parent does not require grad).
fn accumulate(scratch: &mut HashMap<u64, Vec<f64>>, parent: &Tensor, contribution: Vec<f64>) {
    if !parent.requires_grad() {
        return;
    }
    debug_assert_eq!(contribution.len(), parent.numel());
    match scratch.entry(parent.id()) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (dst, src) in e.get_mut().iter_mut().zip(&contribution) {
                *dst += src;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(contribution);
        }
    }
}

/// Gradient of a broadcast binary op with respect to one operand: either the
/// elementwise contribution itself, or its total when the operand was a
/// broadcast scalar.
fn reduce_for(parent: &Tensor, contribution: Vec<f64>) -> Vec<f64> {
    if contribution.len() == parent.numel() {
        contribution
    } else {
        debug_assert_eq!(parent.numel(), 1);
        vec![contribution.iter().sum()]
    }
}

fn propagate(t: &Tensor, op: &Op, g: &[f64], scratch: &mut HashMap<u64, Vec<f64>>) {
    match op {
        Op::Leaf => unreachable!("leaf handled by caller"),
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                accumulate(scratch, a, matmul_bt_vals(g, b.values(), m, n, k));
            }
            if b.requires_grad() {
                accumulate(scratch, b, matmul_at_vals(a.values(), g, m, k, n));
            }
        }
        Op::Add(a, b) => {
            accumulate(scratch, a, reduce_for(a, g.to_vec()));
            accumulate(scratch, b, reduce_for(b, g.to_vec()));
        }
        Op::Sub(a, b) => {
            accumulate(scratch, a, reduce_for(a, g.to_vec()));
            accumulate(scratch, b, reduce_for(b, g.iter().map(|v| -v).collect()));
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                let contrib = zip_broadcast(g, b.values());
                accumulate(scratch, a, reduce_for(a, contrib));
            }
            if b.requires_grad() {
                let contrib = zip_broadcast(g, a.values());
                accumulate(scratch, b, reduce_for(b, contrib));
            }
        }
        Op::Scale(x, c) => {
            accumulate(scratch, x, g.iter().map(|v| v * c).collect());
        }
        Op::Relu(x) => {
            let contrib = x
                .values()
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(scratch, x, contrib);
        }
        Op::Tanh(x) => {
            let y = t.values();
            accumulate(
                scratch,
                x,
                y.iter().zip(g).map(|(&yv, &gv)| gv * (1.0 - yv * yv)).collect(),
            );
        }
        Op::Sigmoid(x) => {
            let y = t.values();
            accumulate(
                scratch,
                x,
                y.iter().zip(g).map(|(&yv, &gv)| gv * yv * (1.0 - yv)).collect(),
            );
        }
        Op::Sqrt(x) => {
            let y = t.values();
            accumulate(
                scratch,
                x,
                y.iter().zip(g).map(|(&yv, &gv)| gv / (2.0 * yv)).collect(),
            );
        }
        Op::Recip(x) => {
            let y = t.values();
            accumulate(
                scratch,
                x,
                y.iter().zip(g).map(|(&yv, &gv)| -gv * yv * yv).collect(),
            );
        }
        Op::Sum(x, axis) => {
            let (outer, extent, inner) = axis_split(x.shape(), *axis);
            let mut contrib = vec![0.0; x.numel()];
            for o in 0..outer {
                for a in 0..extent {
                    let base = (o * extent + a) * inner;
                    for i in 0..inner {
                        contrib[base + i] = g[o * inner + i];
                    }
                }
            }
            accumulate(scratch, x, contrib);
        }
        Op::Mean(x, axis) => {
            let (outer, extent, inner) = axis_split(x.shape(), *axis);
            let scale = 1.0 / extent as f64;
            let mut contrib = vec![0.0; x.numel()];
            for o in 0..outer {
                for a in 0..extent {
                    let base = (o * extent + a) * inner;
                    for i in 0..inner {
                        contrib[base + i] = g[o * inner + i] * scale;
                    }
                }
            }
            accumulate(scratch, x, contrib);
        }
        Op::Var(x, axis) => {
            // d var/d x = 2 (x − mean) / n along the reduced axis; zero on
            // constant slices (matching the exact-zero forward).
            let (outer, extent, inner) = axis_split(x.shape(), *axis);
            let vals = x.values();
            let mut contrib = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    if slice_is_constant(vals, extent, inner, o, i) {
                        continue;
                    }
                    let m = slice_mean(vals, extent, inner, o, i);
                    let gv = g[o * inner + i];
                    for a in 0..extent {
                        let idx = (o * extent + a) * inner + i;
                        contrib[idx] = gv * 2.0 * (vals[idx] - m) / extent as f64;
                    }
                }
            }
            accumulate(scratch, x, contrib);
        }
        Op::Concat(parts, axis) => {
            let axis_total = t.shape()[*axis];
            let (outer, _, inner) = axis_split(t.shape(), *axis);
            let mut offset = 0;
            for p in parts {
                let extent = p.shape()[*axis];
                if p.requires_grad() {
                    let mut contrib = vec![0.0; p.numel()];
                    for o in 0..outer {
                        let src_base = (o * axis_total + offset) * inner;
                        let dst_base = o * extent * inner;
                        contrib[dst_base..dst_base + extent * inner]
                            .copy_from_slice(&g[src_base..src_base + extent * inner]);
                    }
                    accumulate(scratch, p, contrib);
                }
                offset += extent;
            }
        }
        Op::SliceRows(x, start) => {
            let cols = x.shape()[1];
            let mut contrib = vec![0.0; x.numel()];
            contrib[start * cols..start * cols + g.len()].copy_from_slice(g);
            accumulate(scratch, x, contrib);
        }
        Op::Reshape(x) => {
            accumulate(scratch, x, g.to_vec());
        }
        Op::AddRow(x, v) => {
            if x.requires_grad() {
                accumulate(scratch, x, g.to_vec());
            }
            if v.requires_grad() {
                let c = v.numel();
                let mut contrib = vec![0.0; c];
                for row in g.chunks_exact(c) {
                    for (dst, gv) in contrib.iter_mut().zip(row) {
                        *dst += gv;
                    }
                }
                accumulate(scratch, v, contrib);
            }
        }
        Op::MulRow(x, v) => {
            let c = v.numel();
            if x.requires_grad() {
                let mut contrib = g.to_vec();
                for row in contrib.chunks_exact_mut(c) {
                    for (dst, vv) in row.iter_mut().zip(v.values()) {
                        *dst *= vv;
                    }
                }
                accumulate(scratch, x, contrib);
            }
            if v.requires_grad() {
                let mut contrib = vec![0.0; c];
                for (row_g, row_x) in g.chunks_exact(c).zip(x.values().chunks_exact(c)) {
                    for i in 0..c {
                        contrib[i] += row_g[i] * row_x[i];
                    }
                }
                accumulate(scratch, v, contrib);
            }
        }
        Op::L2Norm(x) => {
            let norm = t.values()[0];
            let gv = g[0];
            let denom = norm + L2NORM_EPS;
            accumulate(
                scratch,
                x,
                x.values().iter().map(|&xv| gv * xv / denom).collect(),
            );
        }
        Op::RowL2Norm(x) => {
            let c = x.shape()[1];
            let mut contrib = vec![0.0; x.numel()];
            for (i, (row, out)) in x
                .values()
                .chunks_exact(c)
                .zip(contrib.chunks_exact_mut(c))
                .enumerate()
            {
                let denom = t.values()[i] + L2NORM_EPS;
                let gv = g[i];
                for (dst, &xv) in out.iter_mut().zip(row) {
                    *dst = gv * xv / denom;
                }
            }
            accumulate(scratch, x, contrib);
        }
        Op::RowLogSumExp(x) => {
            // d lse/d x_j = softmax(x)_j, recomputed stably.
            let c = x.shape()[1];
            let mut contrib = vec![0.0; x.numel()];
            for (i, (row, out)) in x
                .values()
                .chunks_exact(c)
                .zip(contrib.chunks_exact_mut(c))
                .enumerate()
            {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                let gv = g[i];
                for (dst, &xv) in out.iter_mut().zip(row) {
                    *dst = gv * (xv - m).exp() / z;
                }
            }
            accumulate(scratch, x, contrib);
        }
        Op::GatherRows(x, indices) => {
            let c = x.shape()[1];
            let mut contrib = vec![0.0; x.numel()];
            for (i, &j) in indices.iter().enumerate() {
                contrib[i * c + j] = g[i];
            }
            accumulate(scratch, x, contrib);
        }
        Op::RowSoftmaxCrossEntropy(x, labels) => {
            // d ce/d x_j = softmax(x)_j − [j == label].
            let c = x.shape()[1];
            let mut contrib = vec![0.0; x.numel()];
            for (i, (row, out)) in x
                .values()
                .chunks_exact(c)
                .zip(contrib.chunks_exact_mut(c))
                .enumerate()
            {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                let gv = g[i];
                for (j, (dst, &xv)) in out.iter_mut().zip(row).enumerate() {
                    let softmax = (xv - m).exp() / z;
                    *dst = gv * (softmax - if j == labels[i] { 1.0 } else { 0.0 });
                }
            }
            accumulate(scratch, x, contrib);
        }
    }
}

/// Elementwise product where one side may be a single broadcast scalar.
fn zip_broadcast(g: &[f64], other: &[f64]) -> Vec<f64> {
    if other.len() == 1 {
        g.iter().map(|v| v * other[0]).collect()
    } else if g.len() == other.len() {
        g.iter().zip(other).map(|(a, b)| a * b).collect()
    } else {
        // g comes from the broadcast output, other is the full-size operand:
        // the output shape always matches the larger operand.
        debug_assert_eq!(g.len(), 1);
        other.iter().map(|v| v * g[0]).collect()
    }
}

fn broadcast_zip(
    op: &str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if a.shape() == b.shape() {
        let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
        Ok((a.shape().to_vec(), values))
    } else if b.is_scalar_like() {
        let y = b.values()[0];
        Ok((
            a.shape().to_vec(),
            a.values().iter().map(|&x| f(x, y)).collect(),
        ))
    } else if a.is_scalar_like() {
        let x = a.values()[0];
        Ok((
            b.shape().to_vec(),
            b.values().iter().map(|&y| f(x, y)).collect(),
        ))
    } else {
        Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} are neither equal nor scalar-broadcastable",
            a.shape(),
            b.shape()
        )))
    }
}

/// C[m×n] = A[m×k] · B[k×n].
pub(crate) fn matmul_vals(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m×k] = A[m×n] · Bᵀ where B is [k×n].
fn matmul_bt_vals(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            c[i * k + p] = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// C[k×n] = Aᵀ · B where A is [m×k], B is [m×n].
fn matmul_at_vals(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let c = Tensor::eye(2).matmul(&a).unwrap();
        assert_eq!(c.values(), a.values());
    }

    #[test]
    fn matmul_hand_case() {
        let a = t2(&[&[1.0, 2.0]]);
        let b = t2(&[&[3.0], &[4.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_sign_cases() {
        let x = Tensor::from_values(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().unwrap().values(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_symmetry_point() {
        let x = Tensor::scalar(0.0).unwrap();
        assert_eq!(x.sigmoid().unwrap().item(), 0.5);
    }

    #[test]
    fn mean_and_var_examples() {
        let x = t2(&[&[1.0, 3.0], &[5.0, 7.0]]);
        assert_eq!(x.mean(0).unwrap().values(), &[3.0, 5.0]);
        let c = Tensor::from_values(vec![3], vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(c.var(0).unwrap().values(), &[0.0]);
    }

    #[test]
    fn var_never_negative() {
        let x = Tensor::from_values(vec![4], vec![1e8, 1e8 + 1.0, 1e8, 1e8 + 1.0]).unwrap();
        assert!(x.var(0).unwrap().values()[0] >= 0.0);
    }

    #[test]
    fn concat_axis1_example() {
        let a = t2(&[&[1.0], &[2.0]]);
        let b = t2(&[&[3.0], &[4.0]]);
        let c = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.values(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn concat_single_is_identity() {
        let a = t2(&[&[1.0, 2.0]]);
        let c = Tensor::concat(std::slice::from_ref(&a), 0).unwrap();
        assert_eq!(c.values(), a.values());
        assert_eq!(c.shape(), a.shape());
    }

    #[test]
    fn concat_off_axis_mismatch() {
        let a = Tensor::zeros(vec![2, 2]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            Tensor::concat(&[a, b], 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn concat_gradient_routing_is_all_ones() {
        let a = Tensor::parameter(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::parameter(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        c.sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn l2norm_345() {
        let x = Tensor::from_values(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(x.l2norm().unwrap().item(), 5.0);
    }

    #[test]
    fn l2norm_zero_vector_gradient() {
        let x = Tensor::parameter(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let n = x.l2norm().unwrap();
        assert_eq!(n.item(), 0.0);
        n.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let w = Tensor::parameter(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        w.sum_all().unwrap().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_l2norm_unit_vector() {
        let w = Tensor::parameter(vec![2], vec![3.0, 4.0]).unwrap();
        w.l2norm().unwrap().backward().unwrap();
        let g = w.grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12);
        assert!((g[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let w = Tensor::parameter(vec![2], vec![1.0, 2.0]).unwrap();
        let s = w.sum_all().unwrap();
        s.backward().unwrap();
        s.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let w = Tensor::parameter(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(w.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_construction_rejected() {
        assert!(matches!(
            Tensor::from_values(vec![1], vec![f64::NAN]),
            Err(Error::Numeric(_))
        ));
        let big = Tensor::scalar(1e308).unwrap();
        assert!(matches!(big.add(&big), Err(Error::Numeric(_))));
    }

    #[test]
    fn scalar_broadcast() {
        let x = Tensor::from_values(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let c = Tensor::scalar(10.0).unwrap();
        assert_eq!(x.add(&c).unwrap().values(), &[11.0, 12.0, 13.0]);
        assert_eq!(c.sub(&x).unwrap().values(), &[9.0, 8.0, 7.0]);
        let y = Tensor::from_values(vec![2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(x.add(&y), Err(Error::Dimension(_))));
    }

    #[test]
    fn slice_rows_and_gradient() {
        let x = Tensor::parameter(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = x.slice_rows(1, 2).unwrap();
        assert_eq!(s.values(), &[3.0, 4.0, 5.0, 6.0]);
        s.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gather_rows_label_bounds() {
        let x = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(x.gather_rows(&[1, 0]).unwrap().values(), &[2.0, 3.0]);
        assert!(matches!(x.gather_rows(&[2, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn row_log_sum_exp_stability() {
        let x = t2(&[&[1000.0, 1000.0]]);
        let l = x.row_log_sum_exp().unwrap();
        assert!((l.values()[0] - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let mut x = Tensor::parameter(vec![4], vec![0.1; 4]).unwrap();
        for _ in 0..200_000 {
            x = x.scale(1.0).unwrap();
        }
        drop(x); // must not blow the stack
    }

    #[test]
    fn deep_chain_backward() {
        let w = Tensor::parameter(vec![2], vec![0.5, -0.5]).unwrap();
        let mut x = w.clone();
        for _ in 0..50_000 {
            x = x.scale(1.0000001).unwrap();
        }
        x.sum_all().unwrap().backward().unwrap();
        let g = w.grad().unwrap();
        assert!((g[0] - 1.0000001f64.powi(50_000)).abs() < 1e-9);
    }
}
