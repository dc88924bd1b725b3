use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use super::params::{ParamBlock, ParamVector};
use super::real::Real;

/// Handle of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("{op:?} expects {expected} inputs and {expected_consts} constants, got {got} and {got_consts}")]
    Arity {
        op: OpKind,
        expected: usize,
        got: usize,
        expected_consts: usize,
        got_consts: usize,
    },
    #[error("{op:?}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: OpKind,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op:?} produced a non-finite value at element {index}")]
    NonFinite { op: OpKind, index: usize },
    #[error("node {0} is not on this tape")]
    MissingNode(usize),
    #[error("backward() needs a scalar output, node has shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("{0}")]
    Invalid(String),
}

/// Primitive operations a tape can record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sigmoid,
    Relu,
    Abs,
    Sqrt,
    Square,
    /// `log(1 + exp(beta x)) / beta`; constant: beta.
    Softplus,
    /// constants: lower, upper.
    Clamp,
    /// constant: factor.
    Scale,
    /// constant: offset.
    Shift,
    /// inputs: x (n x in), w (out x in), b (1 x out).
    Affine,
    Sum,
    Mean,
    /// Per-row sum: (n x k) -> (n x 1).
    SumCols,
    /// constants: start row, row count.
    SliceRows,
    /// Exclusive prefix sum within contiguous segments of a column vector;
    /// constants: segment offsets.
    SegmentCumsum,
    /// Sum within contiguous segments; constants: segment offsets.
    SegmentSum,
    /// `out[index[i]] += x[i]`; constants: output length followed by indices.
    ScatterAdd,
}

impl OpKind {
    fn arity(self) -> usize {
        use OpKind::*;
        match self {
            Add | Sub | Mul | Div | Max => 2,
            Affine => 3,
            _ => 1,
        }
    }
}

impl FromStr for OpKind {
    type Err = TapeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use OpKind::*;
        Ok(match s {
            "add" => Add,
            "sub" => Sub,
            "mul" => Mul,
            "div" => Div,
            "max" => Max,
            "neg" => Neg,
            "exp" => Exp,
            "log" => Log,
            "sin" => Sin,
            "cos" => Cos,
            "sigmoid" => Sigmoid,
            "relu" => Relu,
            "abs" => Abs,
            "sqrt" => Sqrt,
            "square" => Square,
            "softplus" => Softplus,
            "clamp" => Clamp,
            "scale" => Scale,
            "shift" => Shift,
            "affine" => Affine,
            "sum" => Sum,
            "mean" => Mean,
            "sum_cols" => SumCols,
            "slice_rows" => SliceRows,
            "segment_cumsum" => SegmentCumsum,
            "segment_sum" => SegmentSum,
            "scatter_add" => ScatterAdd,
            other => return Err(TapeError::UnknownOp(other.to_string())),
        })
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param { offset: usize },
    Unary(OpKind, NodeId),
    WithConst(OpKind, NodeId, f64),
    Clamp(NodeId, f64, f64),
    Binary(OpKind, NodeId, NodeId),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Reduce(OpKind, NodeId),
    SliceRows { src: NodeId, start: usize },
    Segment(OpKind, NodeId, Arc<[usize]>),
    ScatterAdd { src: NodeId, index: Arc<[usize]> },
}

#[derive(Clone, Debug)]
struct Node<F> {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<F>,
    /// Whether any differentiable leaf feeds this node.
    needs_grad: bool,
}

/// Append-only record of array-valued operations.
///
/// Every node holds a row-major `rows x cols` value computed eagerly when the
/// node is recorded. Inputs always precede outputs, so the tape is a
/// topologically ordered DAG by construction.
#[derive(Clone, Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

// `ln(1 + u)` rather than `ln_1p(u)`: the absolute error stays below one ulp
// of 1, which is all the downstream affine layers can see, at a third of the
// cost.
fn softplus<F: Real>(x: F, beta: F) -> F {
    let z = x * beta;
    (z.max(F::zero()) + (F::one() + (-z.abs()).exp()).ln()) / beta
}

/// `sigmoid(beta x)`, the derivative of [`softplus`].
fn softplus_slope<F: Real>(x: F, beta: F) -> F {
    let z = x * beta;
    let e = (-z.abs()).exp();
    if z >= F::zero() {
        F::one() / (F::one() + e)
    } else {
        e / (F::one() + e)
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].value
    }

    /// First element of a node, typically a scalar result.
    pub fn scalar_value(&self, id: NodeId) -> F {
        self.nodes[id.0].value[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn check(&self, id: NodeId) -> Result<(), TapeError> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TapeError::MissingNode(id.0))
        }
    }

    fn push(&mut self, op: Op, kind: OpKind, rows: usize, cols: usize, value: Vec<F>) -> Result<NodeId, TapeError> {
        debug_assert_eq!(value.len(), rows * cols);
        if let Some(index) = value.iter().position(|v| !v.is_finite()) {
            return Err(TapeError::NonFinite { op: kind, index });
        }
        let needs_grad = op_inputs(&op).iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn leaf(&mut self, op: Op, rows: usize, cols: usize, value: Vec<F>, needs_grad: bool) -> NodeId {
        assert_eq!(value.len(), rows * cols, "leaf shape does not match data");
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Differentiable leaf of the given shape.
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<F>) -> NodeId {
        self.leaf(Op::Input, rows, cols, value, true)
    }

    /// Leaf that is never differentiated; [`Gradients::wrt`] reports zeros.
    pub fn constant_input(&mut self, rows: usize, cols: usize, value: Vec<F>) -> NodeId {
        self.leaf(Op::Input, rows, cols, value, false)
    }

    pub fn constant(&mut self, x: f64) -> NodeId {
        self.input(1, 1, vec![F::from_f64(x)])
    }

    /// Non-differentiable scalar.
    pub fn fixed(&mut self, x: f64) -> NodeId {
        self.constant_input(1, 1, vec![F::from_f64(x)])
    }

    /// Non-differentiable column vector from `f64` data.
    pub fn fixed_column(&mut self, data: &[f64]) -> NodeId {
        self.constant_input(data.len(), 1, data.iter().map(|&v| F::from_f64(v)).collect())
    }

    /// Column vector leaf from `f64` data.
    pub fn column(&mut self, data: &[f64]) -> NodeId {
        self.input(data.len(), 1, data.iter().map(|&v| F::from_f64(v)).collect())
    }

    /// Leaf bound to a block of a parameter vector; its adjoint is routed back
    /// to the block's range by [`Gradients::accumulate_params`].
    pub fn param(&mut self, params: &ParamVector, block: &ParamBlock) -> NodeId {
        let value = params.block_values(block).iter().map(|&v| F::from_f64(v)).collect();
        self.leaf(Op::Param { offset: block.offset }, block.rows, block.cols, value, true)
    }

    /// Generic entry point used by serialized graphs and tests.
    pub fn record(&mut self, kind: OpKind, inputs: &[NodeId], consts: &[f64]) -> Result<NodeId, TapeError> {
        use OpKind::*;
        let arity_err = |expected_consts: usize| TapeError::Arity {
            op: kind,
            expected: kind.arity(),
            got: inputs.len(),
            expected_consts,
            got_consts: consts.len(),
        };
        let want_consts = match kind {
            Softplus | Scale | Shift => Some(1),
            Clamp | SliceRows => Some(2),
            SegmentCumsum | SegmentSum | ScatterAdd => None,
            _ => Some(0),
        };
        if inputs.len() != kind.arity() || want_consts.is_some_and(|n| n != consts.len()) {
            return Err(arity_err(want_consts.unwrap_or(consts.len())));
        }
        for &i in inputs {
            self.check(i)?;
        }
        let idx = |v: f64| v as usize;
        match kind {
            Add | Sub | Mul | Div | Max => self.binary(kind, inputs[0], inputs[1]),
            Neg | Exp | Log | Sin | Cos | Sigmoid | Relu | Abs | Sqrt | Square => self.unary(kind, inputs[0]),
            Softplus => self.softplus(inputs[0], consts[0]),
            Scale => self.scale(inputs[0], consts[0]),
            Shift => self.shift(inputs[0], consts[0]),
            Clamp => self.clamp(inputs[0], consts[0], consts[1]),
            Affine => self.affine(inputs[0], inputs[1], inputs[2]),
            Sum => self.sum(inputs[0]),
            Mean => self.mean(inputs[0]),
            SumCols => self.sum_cols(inputs[0]),
            SliceRows => self.slice_rows(inputs[0], idx(consts[0]), idx(consts[1])),
            SegmentCumsum | SegmentSum => {
                let offsets: Vec<usize> = consts.iter().map(|&c| idx(c)).collect();
                self.segment(kind, inputs[0], offsets.into())
            }
            ScatterAdd => {
                let (n, index) = consts.split_first().ok_or_else(|| arity_err(1))?;
                let index: Vec<usize> = index.iter().map(|&c| idx(c)).collect();
                self.scatter_add(inputs[0], index.into(), idx(*n))
            }
        }
    }

    pub fn unary(&mut self, kind: OpKind, a: NodeId) -> Result<NodeId, TapeError> {
        use OpKind::*;
        self.check(a)?;
        let n = &self.nodes[a.0];
        let (rows, cols) = (n.rows, n.cols);
        let x = &n.value;
        let value: Vec<F> = match kind {
            Neg => x.iter().map(|&v| -v).collect(),
            Exp => x.iter().map(|&v| v.exp()).collect(),
            Log => x.iter().map(|&v| v.ln()).collect(),
            Sin => x.iter().map(|&v| v.sin()).collect(),
            Cos => x.iter().map(|&v| v.cos()).collect(),
            Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Relu => x.iter().map(|&v| v.max(F::zero())).collect(),
            Abs => x.iter().map(|&v| v.abs()).collect(),
            Sqrt => x.iter().map(|&v| v.sqrt()).collect(),
            Square => x.iter().map(|&v| v * v).collect(),
            other => return Err(TapeError::Invalid(format!("{other:?} is not unary"))),
        };
        self.push(Op::Unary(kind, a), kind, rows, cols, value)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Neg, a)
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Exp, a)
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Log, a)
    }
    pub fn sin(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Sin, a)
    }
    pub fn cos(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Cos, a)
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Sigmoid, a)
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Relu, a)
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Abs, a)
    }
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Sqrt, a)
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(OpKind::Square, a)
    }

    pub fn softplus(&mut self, a: NodeId, beta: f64) -> Result<NodeId, TapeError> {
        self.check(a)?;
        if !(beta > 0.0) {
            return Err(TapeError::Invalid("softplus beta must be positive".into()));
        }
        let b = F::from_f64(beta);
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&v| softplus(v, b)).collect();
        let (rows, cols) = (n.rows, n.cols);
        self.push(
            Op::WithConst(OpKind::Softplus, a, beta),
            OpKind::Softplus,
            rows,
            cols,
            value,
        )
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.check(a)?;
        let k = F::from_f64(c);
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&v| v * k).collect();
        let (rows, cols) = (n.rows, n.cols);
        self.push(Op::WithConst(OpKind::Scale, a, c), OpKind::Scale, rows, cols, value)
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.check(a)?;
        let k = F::from_f64(c);
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&v| v + k).collect();
        let (rows, cols) = (n.rows, n.cols);
        self.push(Op::WithConst(OpKind::Shift, a, c), OpKind::Shift, rows, cols, value)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId, TapeError> {
        self.check(a)?;
        if lo > hi {
            return Err(TapeError::Invalid(format!("clamp bounds {lo} > {hi}")));
        }
        let (l, h) = (F::from_f64(lo), F::from_f64(hi));
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&v| v.max(l).min(h)).collect();
        let (rows, cols) = (n.rows, n.cols);
        self.push(Op::Clamp(a, lo, hi), OpKind::Clamp, rows, cols, value)
    }

    /// Elementwise binary op; shapes must match or one side must be 1x1.
    pub fn binary(&mut self, kind: OpKind, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        use OpKind::*;
        self.check(a)?;
        self.check(b)?;
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let sa = (na.rows, na.cols);
        let sb = (nb.rows, nb.cols);
        let (rows, cols) = if sa == sb || sb == (1, 1) {
            sa
        } else if sa == (1, 1) {
            sb
        } else {
            return Err(TapeError::Shape {
                op: kind,
                lhs: sa,
                rhs: sb,
            });
        };
        let len = rows * cols;
        let f: fn(F, F) -> F = match kind {
            Add => |x, y| x + y,
            Sub => |x, y| x - y,
            Mul => |x, y| x * y,
            Div => |x, y| x / y,
            Max => |x, y| if x >= y { x } else { y },
            other => return Err(TapeError::Invalid(format!("{other:?} is not binary"))),
        };
        let (xa, xb) = (&na.value, &nb.value);
        let value: Vec<F> = match (xa.len() == len, xb.len() == len) {
            (true, true) => xa.iter().zip(xb).map(|(&x, &y)| f(x, y)).collect(),
            (true, false) => {
                let y = xb[0];
                xa.iter().map(|&x| f(x, y)).collect()
            }
            (false, true) => {
                let x = xa[0];
                xb.iter().map(|&y| f(x, y)).collect()
            }
            (false, false) => vec![f(xa[0], xb[0])],
        };
        self.push(Op::Binary(kind, a, b), kind, rows, cols, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(OpKind::Add, a, b)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(OpKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(OpKind::Mul, a, b)
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(OpKind::Div, a, b)
    }
    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary(OpKind::Max, a, b)
    }

    /// Fused dense layer `x * w^T + b` with x: (n x in), w: (out x in), b: (1 x out).
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (nx, nw, nb) = (&self.nodes[x.0], &self.nodes[w.0], &self.nodes[b.0]);
        let (n, k) = (nx.rows, nx.cols);
        let out = nw.rows;
        if nw.cols != k {
            return Err(TapeError::Shape {
                op: OpKind::Affine,
                lhs: (n, k),
                rhs: (nw.rows, nw.cols),
            });
        }
        if nb.rows * nb.cols != out {
            return Err(TapeError::Shape {
                op: OpKind::Affine,
                lhs: (nw.rows, nw.cols),
                rhs: (nb.rows, nb.cols),
            });
        }
        let mut value = Vec::with_capacity(n * out);
        for _ in 0..n {
            value.extend_from_slice(&nb.value);
        }
        if n > 0 && k > 0 && out > 0 {
            // SAFETY: dimensions and strides match the slice lengths checked above.
            unsafe {
                F::gemm(
                    n,
                    k,
                    out,
                    F::one(),
                    nx.value.as_ptr(),
                    k as isize,
                    1,
                    nw.value.as_ptr(),
                    1,
                    k as isize,
                    F::one(),
                    value.as_mut_ptr(),
                    out as isize,
                    1,
                );
            }
        }
        self.push(Op::Affine { x, w, b }, OpKind::Affine, n, out, value)
    }

    fn reduce(&mut self, kind: OpKind, a: NodeId) -> Result<NodeId, TapeError> {
        self.check(a)?;
        let n = &self.nodes[a.0];
        let (rows, cols, value) = match kind {
            OpKind::Sum => (1, 1, vec![n.value.iter().copied().sum()]),
            OpKind::Mean => {
                let len = n.value.len().max(1);
                let s: F = n.value.iter().copied().sum();
                (1, 1, vec![s / F::from_f64(len as f64)])
            }
            OpKind::SumCols => {
                let v = if n.cols == 0 {
                    vec![F::zero(); n.rows]
                } else {
                    n.value.chunks(n.cols).map(|r| r.iter().copied().sum()).collect()
                };
                (n.rows, 1, v)
            }
            other => return Err(TapeError::Invalid(format!("{other:?} is not a reduction"))),
        };
        self.push(Op::Reduce(kind, a), kind, rows, cols, value)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.reduce(OpKind::Sum, a)
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.reduce(OpKind::Mean, a)
    }
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.reduce(OpKind::SumCols, a)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        self.check(a)?;
        let n = &self.nodes[a.0];
        if start + len > n.rows {
            return Err(TapeError::Invalid(format!(
                "slice {start}..{} out of {} rows",
                start + len,
                n.rows
            )));
        }
        let cols = n.cols;
        let value = n.value[start * cols..(start + len) * cols].to_vec();
        self.push(Op::SliceRows { src: a, start }, OpKind::SliceRows, len, cols, value)
    }

    fn check_segments(&self, a: NodeId, offsets: &[usize]) -> Result<(), TapeError> {
        let n = &self.nodes[a.0];
        let ok = n.cols == 1
            && offsets.first() == Some(&0)
            && offsets.last() == Some(&n.rows)
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if ok {
            Ok(())
        } else {
            Err(TapeError::Invalid(format!(
                "segment offsets must run from 0 to {} over a column vector",
                n.rows
            )))
        }
    }

    /// Segment-wise exclusive cumulative sum or segment sum of a column vector.
    pub fn segment(&mut self, kind: OpKind, a: NodeId, offsets: Arc<[usize]>) -> Result<NodeId, TapeError> {
        self.check(a)?;
        self.check_segments(a, &offsets)?;
        let x = &self.nodes[a.0].value;
        let (rows, value) = match kind {
            OpKind::SegmentCumsum => {
                let mut v = vec![F::zero(); x.len()];
                for w in offsets.windows(2) {
                    let mut acc = F::zero();
                    for i in w[0]..w[1] {
                        v[i] = acc;
                        acc = acc + x[i];
                    }
                }
                (x.len(), v)
            }
            OpKind::SegmentSum => {
                let v: Vec<F> = offsets
                    .windows(2)
                    .map(|w| x[w[0]..w[1]].iter().copied().sum())
                    .collect();
                (offsets.len() - 1, v)
            }
            other => return Err(TapeError::Invalid(format!("{other:?} is not a segment op"))),
        };
        self.push(Op::Segment(kind, a, offsets), kind, rows, 1, value)
    }

    pub fn segment_cumsum(&mut self, a: NodeId, offsets: Arc<[usize]>) -> Result<NodeId, TapeError> {
        self.segment(OpKind::SegmentCumsum, a, offsets)
    }

    pub fn segment_sum(&mut self, a: NodeId, offsets: Arc<[usize]>) -> Result<NodeId, TapeError> {
        self.segment(OpKind::SegmentSum, a, offsets)
    }

    /// `out[index[i]] += x[i]` into a fresh column of length `len`.
    pub fn scatter_add(&mut self, a: NodeId, index: Arc<[usize]>, len: usize) -> Result<NodeId, TapeError> {
        self.check(a)?;
        let x = &self.nodes[a.0].value;
        if index.len() != x.len() || index.iter().any(|&i| i >= len) {
            return Err(TapeError::Invalid("scatter index out of range".into()));
        }
        let mut v = vec![F::zero(); len];
        for (&i, &xi) in index.iter().zip(x) {
            v[i] = v[i] + xi;
        }
        self.push(Op::ScatterAdd { src: a, index }, OpKind::ScatterAdd, len, 1, v)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<F>, TapeError> {
        self.check(output)?;
        let shape = self.shape(output);
        if shape != (1, 1) {
            return Err(TapeError::NotScalar(shape));
        }
        let mut adj: Vec<Option<Vec<F>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(vec![F::one()]);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Gradients { adj })
    }

    fn propagate(&self, i: usize, g: &[F], adj: &mut [Option<Vec<F>>]) {
        use OpKind::*;
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param { .. } => {}
            Op::Unary(kind, a) => {
                if !self.wants(*a) {
                    return;
                }
                let x = &self.nodes[a.0].value;
                let ga = slot(adj, *a, x.len());
                let two = F::from_f64(2.0);
                let half = F::from_f64(0.5);
                for k in 0..x.len() {
                    let d = match kind {
                        Neg => -F::one(),
                        Exp => y[k],
                        Log => F::one() / x[k],
                        Sin => x[k].cos(),
                        Cos => -x[k].sin(),
                        Sigmoid => y[k] * (F::one() - y[k]),
                        Relu => {
                            if x[k] > F::zero() {
                                F::one()
                            } else {
                                F::zero()
                            }
                        }
                        Abs => {
                            if x[k] > F::zero() {
                                F::one()
                            } else if x[k] < F::zero() {
                                -F::one()
                            } else {
                                F::zero()
                            }
                        }
                        Sqrt => {
                            if y[k] > F::zero() {
                                half / y[k]
                            } else {
                                F::zero()
                            }
                        }
                        Square => two * x[k],
                        _ => unreachable!(),
                    };
                    ga[k] = ga[k] + g[k] * d;
                }
            }
            Op::WithConst(kind, a, c) => {
                if !self.wants(*a) {
                    return;
                }
                let ga = slot(adj, *a, y.len());
                let c = F::from_f64(*c);
                match kind {
                    Softplus => {
                        let x = &self.nodes[a.0].value;
                        for k in 0..y.len() {
                            ga[k] = ga[k] + g[k] * softplus_slope(x[k], c);
                        }
                    }
                    Scale => {
                        for k in 0..y.len() {
                            ga[k] = ga[k] + g[k] * c;
                        }
                    }
                    Shift => {
                        for k in 0..y.len() {
                            ga[k] = ga[k] + g[k];
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::Clamp(a, lo, hi) => {
                if !self.wants(*a) {
                    return;
                }
                let x = &self.nodes[a.0].value;
                let (l, h) = (F::from_f64(*lo), F::from_f64(*hi));
                let ga = slot(adj, *a, x.len());
                for k in 0..x.len() {
                    if x[k] >= l && x[k] <= h {
                        ga[k] = ga[k] + g[k];
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let xa = &self.nodes[a.0].value;
                let xb = &self.nodes[b.0].value;
                let n = y.len();
                let (la, lb) = (xa.len(), xb.len());
                let at = |v: &Vec<F>, k: usize| if v.len() == n { v[k] } else { v[0] };
                let mut da = vec![F::zero(); la];
                let mut db = vec![F::zero(); lb];
                for k in 0..n {
                    let (u, v) = (at(xa, k), at(xb, k));
                    let (pa, pb) = match kind {
                        Add => (F::one(), F::one()),
                        Sub => (F::one(), -F::one()),
                        Mul => (v, u),
                        Div => (F::one() / v, -u / (v * v)),
                        Max => {
                            if u >= v {
                                (F::one(), F::zero())
                            } else {
                                (F::zero(), F::one())
                            }
                        }
                        _ => unreachable!(),
                    };
                    let ia = if la == n { k } else { 0 };
                    let ib = if lb == n { k } else { 0 };
                    da[ia] = da[ia] + g[k] * pa;
                    db[ib] = db[ib] + g[k] * pb;
                }
                if self.wants(*a) {
                    add_into(slot(adj, *a, la), &da);
                }
                if self.wants(*b) {
                    add_into(slot(adj, *b, lb), &db);
                }
            }
            Op::Affine { x, w, b } => {
                let (nx, nw) = (&self.nodes[x.0], &self.nodes[w.0]);
                let (n, k, out) = (nx.rows, nx.cols, nw.rows);
                if n == 0 {
                    return;
                }
                if self.wants(*b) {
                    let gb = slot(adj, *b, out);
                    for row in g.chunks(out) {
                        for j in 0..out {
                            gb[j] = gb[j] + row[j];
                        }
                    }
                }
                if k == 0 || out == 0 {
                    return;
                }
                if self.wants(*w) {
                    let gw = slot(adj, *w, out * k);
                    // SAFETY: gw is out x k, g is n x out, x is n x k.
                    unsafe {
                        F::gemm(
                            out,
                            n,
                            k,
                            F::one(),
                            g.as_ptr(),
                            1,
                            out as isize,
                            nx.value.as_ptr(),
                            k as isize,
                            1,
                            F::one(),
                            gw.as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if !self.wants(*x) {
                    return;
                }
                let gx = slot(adj, *x, n * k);
                // SAFETY: gx is n x k, g is n x out, w is out x k.
                unsafe {
                    F::gemm(
                        n,
                        out,
                        k,
                        F::one(),
                        g.as_ptr(),
                        out as isize,
                        1,
                        nw.value.as_ptr(),
                        k as isize,
                        1,
                        F::one(),
                        gx.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
            }
            Op::Reduce(kind, a) => {
                if !self.wants(*a) {
                    return;
                }
                let na = &self.nodes[a.0];
                let len = na.value.len();
                let ga = slot(adj, *a, len);
                match kind {
                    Sum => ga.iter_mut().for_each(|v| *v = *v + g[0]),
                    Mean => {
                        let s = g[0] / F::from_f64(len.max(1) as f64);
                        ga.iter_mut().for_each(|v| *v = *v + s);
                    }
                    SumCols => {
                        if na.cols > 0 {
                            for (r, row) in ga.chunks_mut(na.cols).enumerate() {
                                row.iter_mut().for_each(|v| *v = *v + g[r]);
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::SliceRows { src, start } => {
                if !self.wants(*src) {
                    return;
                }
                let ns = &self.nodes[src.0];
                let cols = ns.cols;
                let len = ns.value.len();
                let ga = slot(adj, *src, len);
                let base = start * cols;
                for k in 0..g.len() {
                    ga[base + k] = ga[base + k] + g[k];
                }
            }
            Op::Segment(kind, a, offsets) => {
                if !self.wants(*a) {
                    return;
                }
                let len = self.nodes[a.0].value.len();
                let ga = slot(adj, *a, len);
                match kind {
                    SegmentCumsum => {
                        // y[i] = sum_{j<i in segment} x[j]  =>  dx[j] = sum_{i>j} g[i]
                        for w in offsets.windows(2) {
                            let mut acc = F::zero();
                            for j in (w[0]..w[1]).rev() {
                                ga[j] = ga[j] + acc;
                                acc = acc + g[j];
                            }
                        }
                    }
                    SegmentSum => {
                        for (s, w) in offsets.windows(2).enumerate() {
                            for j in w[0]..w[1] {
                                ga[j] = ga[j] + g[s];
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::ScatterAdd { src, index } => {
                if !self.wants(*src) {
                    return;
                }
                let ga = slot(adj, *src, index.len());
                for (k, &i) in index.iter().enumerate() {
                    ga[k] = ga[k] + g[i];
                }
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Input | Op::Param { .. } => vec![],
        Op::Unary(_, a) | Op::WithConst(_, a, _) | Op::Clamp(a, _, _) | Op::Reduce(_, a) => {
            vec![*a]
        }
        Op::Binary(_, a, b) => vec![*a, *b],
        Op::Affine { x, w, b } => vec![*x, *w, *b],
        Op::SliceRows { src, .. } | Op::ScatterAdd { src, .. } => vec![*src],
        Op::Segment(_, a, _) => vec![*a],
    }
}

fn slot<F: Real>(adj: &mut [Option<Vec<F>>], id: NodeId, len: usize) -> &mut Vec<F> {
    adj[id.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    adj: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to a node; nodes the output does not depend on
    /// get zeros.
    pub fn wrt(&self, tape: &Tape<F>, id: NodeId) -> Vec<F> {
        match self.adj.get(id.0).and_then(|a| a.as_ref()) {
            Some(g) => g.clone(),
            None => vec![F::zero(); tape.value(id).len()],
        }
    }

    /// Add the adjoints of every parameter node into a dense gradient array
    /// indexed like the bound [`ParamVector`].
    pub fn accumulate_params(&self, tape: &Tape<F>, out: &mut [f64]) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Param { offset } = node.op {
                if let Some(Some(g)) = self.adj.get(i) {
                    for (k, &v) in g.iter().enumerate() {
                        out[offset + k] += v.to_f64();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &mut Tape<f64>, x: f64) -> NodeId {
        t.constant(x)
    }

    #[test]
    fn record_add_and_sigmoid() {
        let mut t = Tape::<f64>::new();
        let x = scalar(&mut t, 2.0);
        let y = scalar(&mut t, 3.0);
        let s = t.record(OpKind::Add, &[x, y], &[]).unwrap();
        assert_eq!(t.scalar_value(s), 5.0);
        let z = scalar(&mut t, 0.0);
        let sg = t.record("sigmoid".parse().unwrap(), &[z], &[]).unwrap();
        assert_eq!(t.scalar_value(sg), 0.5);
    }

    #[test]
    fn division_by_zero_is_guarded() {
        let mut t = Tape::<f64>::new();
        let x = scalar(&mut t, 1.0);
        let y = scalar(&mut t, 0.0);
        let err = t.record(OpKind::Div, &[x, y], &[]).unwrap_err();
        assert!(matches!(err, TapeError::NonFinite { op: OpKind::Div, .. }));
    }

    #[test]
    fn unknown_op_and_arity_errors() {
        assert!(matches!("frobnicate".parse::<OpKind>(), Err(TapeError::UnknownOp(_))));
        let mut t = Tape::<f64>::new();
        let x = scalar(&mut t, 1.0);
        assert!(matches!(t.record(OpKind::Add, &[x], &[]), Err(TapeError::Arity { .. })));
        assert!(matches!(
            t.record(OpKind::Scale, &[x], &[]),
            Err(TapeError::Arity { .. })
        ));
    }

    #[test]
    fn square_and_sigmoid_derivatives() {
        let mut t = Tape::<f64>::new();
        let x = scalar(&mut t, 3.0);
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x), vec![6.0]);

        let mut t = Tape::<f64>::new();
        let x = scalar(&mut t, 0.0);
        let y = t.sigmoid(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x), vec![0.25]);
    }

    #[test]
    fn dot_product_gradient_is_exact() {
        let xs = [0.3, -1.7, 2.5, 4.0];
        let ws = [1.1, 0.2, -0.9, 0.05];
        let mut t = Tape::<f64>::new();
        let x = t.column(&xs);
        let w = t.column(&ws);
        let p = t.mul(w, x).unwrap();
        let y = t.sum(p).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, w), xs.to_vec());
    }

    #[test]
    fn unreached_leaf_gets_zero() {
        let mut t = Tape::<f64>::new();
        let x = scalar(&mut t, 1.5);
        let unused = t.column(&[1.0, 2.0]);
        let y = t.exp(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, unused), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.column(&[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(TapeError::NotScalar((2, 1)))));
    }

    #[test]
    fn affine_matches_manual() {
        let mut t = Tape::<f64>::new();
        // x: 2x3, w: 2x3, b: 1x2
        let x = t.input(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]);
        let w = t.input(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let b = t.input(1, 2, vec![0.01, -0.02]);
        let y = t.affine(x, w, b).unwrap();
        let v = t.value(y);
        let expect = [
            1.0 * 0.1 + 2.0 * 0.2 + 3.0 * 0.3 + 0.01,
            -0.4 + 1.0 - 1.8 - 0.02,
            -0.1 + 0.1 + 0.6 + 0.01,
            0.4 + 0.25 - 1.2 - 0.02,
        ];
        for (a, e) in v.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_cumsum_is_exclusive_per_segment() {
        let mut t = Tape::<f64>::new();
        let x = t.column(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let c = t.segment_cumsum(x, Arc::from(vec![0, 3, 3, 5])).unwrap();
        assert_eq!(t.value(c), &[0.0, 1.0, 3.0, 0.0, 4.0]);
        let s = t.segment_sum(x, Arc::from(vec![0, 3, 3, 5])).unwrap();
        assert_eq!(t.value(s), &[6.0, 0.0, 9.0]);
    }
}
