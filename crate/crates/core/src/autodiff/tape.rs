use thiserror::Error;

use super::kernels;
use super::tensor::TensorBuf;
use crate::real::Real;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("NaN encountered while accumulating gradients for {op}")]
    NonFiniteGradient { op: &'static str },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}

type Result<V> = std::result::Result<V, TapeError>;

/// One recorded operation. The node it produced is implicit in its position.
#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Power(NodeId, T),
    Clamp(NodeId, T, T),
    Abs(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    CumsumExclusive(NodeId),
    Concat(Vec<NodeId>),
    GatherRows(NodeId, Vec<u32>),
    ScatterRows { src: NodeId, index: Vec<u32> },
    SliceCols(NodeId, usize, usize),
    ExpandLast(NodeId, usize),
    Reshape(NodeId),
    ShiftRows(NodeId),
    HwcToChw(NodeId),
    PadRect { src: NodeId, x0: usize, y0: usize, out_w: usize },
    BilinearSample { plane: NodeId, coords: Vec<[T; 2]> },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    MaxPool2d { x: NodeId, argmax: Vec<u32> },
}

struct Node<T> {
    value: TensorBuf<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Wengert list: append-only log of operations with their forward values.
///
/// Recording is single-writer; backward replays the log in strict reverse
/// order. Gradient buffers are created fresh per backward call, so
/// disconnected leaves read back as exact zeros.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<TensorBuf<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient buffer of a node, if any gradient reached it.
    pub fn of(&self, id: NodeId) -> Option<&TensorBuf<T>> {
        self.grads[id.idx()].as_ref()
    }

    /// Dense gradient, exact zeros when the node is unreachable from the root.
    pub fn dense(&self, tape: &Tape<T>, id: NodeId) -> TensorBuf<T> {
        match &self.grads[id.idx()] {
            Some(g) => g.clone(),
            None => TensorBuf::zeros(tape.value(id).shape.clone()),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<TensorBuf<T>> {
        self.grads[id.idx()].take()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &TensorBuf<T> {
        &self.nodes[id.idx()].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.idx()].value.shape
    }

    /// Registers an optimizable leaf; gradients will flow to it.
    pub fn param(&mut self, value: TensorBuf<T>) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Registers a frozen leaf; backward never allocates a gradient for
    /// anything that depends only on constants.
    pub fn constant(&mut self, value: TensorBuf<T>) -> NodeId {
        self.push_leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: T) -> NodeId {
        self.constant(TensorBuf::scalar(v))
    }

    fn push_leaf(&mut self, value: TensorBuf<T>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        id
    }

    fn push(&mut self, op: &'static str, node_op: Op<T>, value: TensorBuf<T>) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(TapeError::NonFinite { op });
        }
        let needs_grad = self.op_inputs(&node_op).iter().any(|&i| self.nodes[i.idx()].needs_grad);
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { value, op: node_op, needs_grad });
        Ok(id)
    }

    fn op_inputs(&self, op: &Op<T>) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Power(a, _)
            | Op::Clamp(a, _, _)
            | Op::Abs(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::CumsumExclusive(a)
            | Op::GatherRows(a, _)
            | Op::SliceCols(a, _, _)
            | Op::ExpandLast(a, _)
            | Op::Reshape(a)
            | Op::ShiftRows(a)
            | Op::HwcToChw(a)
            | Op::MaxPool2d { x: a, .. } => vec![*a],
            Op::ScatterRows { src, .. } => vec![*src],
            Op::PadRect { src, .. } => vec![*src],
            Op::BilinearSample { plane, .. } => vec![*plane],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Concat(v) => v.clone(),
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TapeError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.zip(a, b, |x, y| x + y);
        self.push("add", Op::Add(a, b), data)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self.zip(a, b, |x, y| x - y);
        self.push("sub", Op::Sub(a, b), data)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self.zip(a, b, |x, y| x * y);
        self.push("mul", Op::Mul(a, b), data)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let data = self.map(a, |x| x * c);
        self.push("scale", Op::Scale(a, c), data)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let data = self.map(a, |x| x + c);
        self.push("add_scalar", Op::AddScalar(a), data)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.map(a, kernels::sigmoid);
        self.push("sigmoid", Op::Sigmoid(a), data)
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.map(a, kernels::softplus);
        self.push("softplus", Op::Softplus(a), data)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.map(a, |x| x.exp());
        self.push("exp", Op::Exp(a), data)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.map(a, |x| x.ln());
        self.push("log", Op::Log(a), data)
    }

    pub fn power(&mut self, a: NodeId, p: T) -> Result<NodeId> {
        let two = T::from_f64(2.0);
        let data = if p == two {
            self.map(a, |x| x * x)
        } else if p == -T::one() {
            self.map(a, |x| T::one() / x)
        } else {
            self.map(a, |x| x.powf(p))
        };
        self.push("power", Op::Power(a, p), data)
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId> {
        let data = self.map(a, |x| if x < lo { lo } else if x > hi { hi } else { x });
        self.push("clamp", Op::Clamp(a, lo, hi), data)
    }

    pub fn abs_val(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.map(a, |x| x.abs());
        self.push("abs", Op::Abs(a), data)
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(&self.value(a).data, &self.value(b).data, m, k, n);
        self.push("matmul", Op::Matmul(a, b), TensorBuf::new(vec![m, n], data))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TapeError::ShapeMismatch { op: "transpose", detail: format!("{s:?}") });
        }
        let (r, c) = (s[0], s[1]);
        let data = kernels::transpose(&self.value(a).data, r, c);
        self.push("transpose", Op::Transpose(a), TensorBuf::new(vec![c, r], data))
    }

    /// x[n,k] * w[k,m] + b[m]; x may carry any leading shape with k columns.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sw.len() != 2 || sb.len() != 1 || sw[1] != sb[0] || sx.is_empty() || *sx.last().unwrap() != sw[0] {
            return Err(TapeError::ShapeMismatch {
                op: "affine",
                detail: format!("x {sx:?}, w {sw:?}, b {sb:?}"),
            });
        }
        let (n, k, m) = (self.value(x).rows(), sw[0], sw[1]);
        let mut shape: Vec<usize> = sx[..sx.len() - 1].to_vec();
        shape.push(m);
        let data = kernels::affine_fwd(&self.value(x).data, &self.value(w).data, &self.value(b).data, n, k, m);
        self.push("affine", Op::Affine { x, w, b }, TensorBuf::new(shape, data))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: T = self.value(a).data.iter().copied().sum();
        self.push("sum", Op::Sum(a), TensorBuf::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len().max(1);
        let s: T = self.value(a).data.iter().copied().sum();
        self.push("mean", Op::Mean(a), TensorBuf::scalar(s / T::from_usize(n)))
    }

    /// Sum over one axis of a rank-2 or rank-3 tensor.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || s.len() > 3 || s.len() < 2 {
            return Err(TapeError::ShapeMismatch {
                op: "sum_axis",
                detail: format!("axis {axis} of {s:?}"),
            });
        }
        let (outer, mid, inner) = axis_strides(&s, axis);
        let src = &self.value(a).data;
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d = *d + v;
                }
            }
        }
        let mut shape = s.clone();
        shape.remove(axis);
        self.push("sum_axis", Op::SumAxis(a, axis), TensorBuf::new(shape, out))
    }

    /// Exclusive prefix sum along the last axis.
    pub fn cumsum_exclusive(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let cols = t.cols();
        if cols == 0 {
            return Err(TapeError::Invalid { op: "cumsum_exclusive", detail: "empty rows".into() });
        }
        let rows = t.rows();
        let mut out = vec![T::zero(); t.len()];
        for r in 0..rows {
            let mut acc = T::zero();
            for j in 0..cols {
                out[r * cols + j] = acc;
                acc += t.data[r * cols + j];
            }
        }
        let shape = t.shape.clone();
        self.push("cumsum_exclusive", Op::CumsumExclusive(a), TensorBuf::new(shape, out))
    }

    // ---- structure -----------------------------------------------------

    /// Concatenates along the first axis; trailing shapes must agree.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TapeError::Invalid { op: "concat", detail: "no inputs".into() });
        }
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(TapeError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs tail {:?}", s, tail),
                });
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * tail.iter().product::<usize>().max(1));
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        self.push("concat", Op::Concat(parts.to_vec()), TensorBuf::new(shape, data))
    }

    pub fn gather_rows(&mut self, a: NodeId, index: &[u32]) -> Result<NodeId> {
        let t = self.value(a);
        let s = &t.shape;
        if s.is_empty() {
            return Err(TapeError::ShapeMismatch { op: "gather_rows", detail: "scalar".into() });
        }
        let stride: usize = s[1..].iter().product();
        let n_rows = s[0];
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= n_rows) {
            return Err(TapeError::Invalid {
                op: "gather_rows",
                detail: format!("row {bad} out of {n_rows}"),
            });
        }
        let mut data = Vec::with_capacity(index.len() * stride);
        for &i in index {
            let b = i as usize * stride;
            data.extend_from_slice(&t.data[b..b + stride]);
        }
        let mut shape = vec![index.len()];
        shape.extend_from_slice(&s[1..]);
        self.push("gather_rows", Op::GatherRows(a, index.to_vec()), TensorBuf::new(shape, data))
    }

    /// Places row i of `src` at row `index[i]` of a zero buffer with
    /// `out_rows` rows. Duplicate targets accumulate.
    pub fn scatter_rows(&mut self, src: NodeId, index: &[u32], out_rows: usize) -> Result<NodeId> {
        let t = self.value(src);
        let s = &t.shape;
        if s.is_empty() || s[0] != index.len() {
            return Err(TapeError::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("src {:?} vs {} indices", s, index.len()),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= out_rows) {
            return Err(TapeError::Invalid {
                op: "scatter_rows",
                detail: format!("row {bad} out of {out_rows}"),
            });
        }
        let stride: usize = s[1..].iter().product();
        let mut data = vec![T::zero(); out_rows * stride];
        for (r, &i) in index.iter().enumerate() {
            let dst = &mut data[i as usize * stride..(i as usize + 1) * stride];
            for (d, &v) in dst.iter_mut().zip(&t.data[r * stride..(r + 1) * stride]) {
                *d = *d + v;
            }
        }
        let mut shape = vec![out_rows];
        shape.extend_from_slice(&s[1..]);
        self.push(
            "scatter_rows",
            Op::ScatterRows { src, index: index.to_vec() },
            TensorBuf::new(shape, data),
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let t = self.value(a);
        let cols = t.cols();
        if t.rank() < 2 || from >= to || to > cols {
            return Err(TapeError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("[{from},{to}) of {:?}", t.shape),
            });
        }
        let rows = t.rows();
        let width = to - from;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * cols + from..r * cols + to]);
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = width;
        self.push("slice_cols", Op::SliceCols(a, from, to), TensorBuf::new(shape, data))
    }

    /// Replicates every element n times along a new trailing axis.
    pub fn expand_last(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.len() * n);
        for &v in &t.data {
            for _ in 0..n {
                data.push(v);
            }
        }
        let mut shape = t.shape.clone();
        shape.push(n);
        self.push("expand_last", Op::ExpandLast(a, n), TensorBuf::new(shape, data))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(TapeError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", t.shape, shape),
            });
        }
        let data = t.data.clone();
        self.push("reshape", Op::Reshape(a), TensorBuf::new(shape, data))
    }

    /// Adds a fixed offset to every element of row i. The offsets are
    /// attributes, not nodes; used for numerically stable log-sum-exp.
    pub fn shift_rows(&mut self, a: NodeId, offsets: Vec<T>) -> Result<NodeId> {
        let t = self.value(a);
        let rows = t.rows();
        let cols = t.cols();
        if offsets.len() != rows {
            return Err(TapeError::ShapeMismatch {
                op: "shift_rows",
                detail: format!("{} offsets for {} rows", offsets.len(), rows),
            });
        }
        let mut data = t.data.clone();
        for r in 0..rows {
            let o = offsets[r];
            for v in &mut data[r * cols..(r + 1) * cols] {
                *v = *v + o;
            }
        }
        let shape = t.shape.clone();
        self.push("shift_rows", Op::ShiftRows(a), TensorBuf::new(shape, data))
    }

    pub fn hwc_to_chw(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 3 {
            return Err(TapeError::ShapeMismatch { op: "hwc_to_chw", detail: format!("{:?}", t.shape) });
        }
        let (h, w, c) = (t.shape[0], t.shape[1], t.shape[2]);
        let mut data = vec![T::zero(); t.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = t.data[(y * w + x) * c + ch];
                }
            }
        }
        self.push("hwc_to_chw", Op::HwcToChw(a), TensorBuf::new(vec![c, h, w], data))
    }

    /// Embeds an [h,w,c] block at (x0,y0) inside a zeroed [out_h,out_w,c].
    pub fn pad_rect(&mut self, src: NodeId, x0: usize, y0: usize, out_h: usize, out_w: usize) -> Result<NodeId> {
        let t = self.value(src);
        if t.rank() != 3 {
            return Err(TapeError::ShapeMismatch { op: "pad_rect", detail: format!("{:?}", t.shape) });
        }
        let (h, w, c) = (t.shape[0], t.shape[1], t.shape[2]);
        if y0 + h > out_h || x0 + w > out_w {
            return Err(TapeError::Invalid {
                op: "pad_rect",
                detail: format!("{h}x{w} at ({x0},{y0}) overflows {out_h}x{out_w}"),
            });
        }
        let mut data = vec![T::zero(); out_h * out_w * c];
        for y in 0..h {
            let dst = ((y0 + y) * out_w + x0) * c;
            data[dst..dst + w * c].copy_from_slice(&t.data[y * w * c..(y + 1) * w * c]);
        }
        self.push(
            "pad_rect",
            Op::PadRect { src, x0, y0, out_w },
            TensorBuf::new(vec![out_h, out_w, c], data),
        )
    }

    // ---- spatial -------------------------------------------------------

    /// Bilinear lookup into a [r,r,c] feature plane at normalized coords.
    pub fn bilinear_sample(&mut self, plane: NodeId, coords: Vec<[T; 2]>) -> Result<NodeId> {
        let t = self.value(plane);
        if t.rank() != 3 || t.shape[0] != t.shape[1] || t.shape[0] < 2 {
            return Err(TapeError::ShapeMismatch {
                op: "bilinear_sample",
                detail: format!("plane {:?}", t.shape),
            });
        }
        let (r, c) = (t.shape[0], t.shape[2]);
        let n = coords.len();
        let data = kernels::bilinear_fwd(&t.data, r, c, &coords);
        self.push(
            "bilinear_sample",
            Op::BilinearSample { plane, coords },
            TensorBuf::new(vec![n, c], data),
        )
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 4 || sb.len() != 1 || sx[0] != sw[1] || sw[0] != sb[0] {
            return Err(TapeError::ShapeMismatch {
                op: "conv2d",
                detail: format!("x {sx:?}, w {sw:?}, b {sb:?}"),
            });
        }
        let (ci, h, wd) = (sx[0], sx[1], sx[2]);
        let (co, kh, kw) = (sw[0], sw[2], sw[3]);
        let oh = kernels::conv2d_out_dim(h, kh, stride, pad);
        let ow = kernels::conv2d_out_dim(wd, kw, stride, pad);
        let data = kernels::conv2d_fwd(
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
            ci,
            h,
            wd,
            co,
            kh,
            kw,
            stride,
            pad,
        );
        self.push(
            "conv2d",
            Op::Conv2d { x, w, b, stride, pad },
            TensorBuf::new(vec![co, oh, ow], data),
        )
    }

    pub fn max_pool2d(&mut self, x: NodeId, size: usize, stride: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] < size || s[2] < size {
            return Err(TapeError::ShapeMismatch { op: "max_pool2d", detail: format!("{s:?}") });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (data, argmax) = kernels::maxpool2d_fwd(&self.value(x).data, c, h, w, size, stride);
        let oh = (h - size) / stride + 1;
        let ow = (w - size) / stride + 1;
        self.push(
            "max_pool2d",
            Op::MaxPool2d { x, argmax },
            TensorBuf::new(vec![c, oh, ow], data),
        )
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar root. Returns per-node gradients;
    /// unreachable nodes read back as exact zeros.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(TapeError::NonScalarRoot { shape: root_val.shape.clone() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.idx()] = Some(vec![T::one()]);

        for i in (0..self.nodes.len()).rev() {
            if i > root.idx() {
                continue;
            }
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let d_out = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(i, &d_out, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(d_out);
            }
        }

        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|data| TensorBuf::new(self.nodes[i].value.shape.clone(), data)))
            .collect();
        Ok(Gradients { grads: out })
    }

    fn accum(
        &self,
        grads: &mut [Option<Vec<T>>],
        id: NodeId,
        contribution: impl FnOnce() -> Vec<T>,
        op: &'static str,
    ) -> Result<()> {
        if !self.nodes[id.idx()].needs_grad {
            return Ok(());
        }
        let c = contribution();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(TapeError::NonFiniteGradient { op });
        }
        match &mut grads[id.idx()] {
            Some(g) => {
                for (gv, cv) in g.iter_mut().zip(&c) {
                    *gv += *cv;
                }
            }
            None => grads[id.idx()] = Some(c),
        }
        Ok(())
    }

    #[allow(clippy::too_many_lines)]
    fn backward_op(&self, i: usize, d_out: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |id: NodeId| -> &[T] { &self.nodes[id.idx()].value.data };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, || d_out.to_vec(), "add")?;
                self.accum(grads, *b, || d_out.to_vec(), "add")?;
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, || d_out.to_vec(), "sub")?;
                self.accum(grads, *b, || d_out.iter().map(|&g| -g).collect(), "sub")?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.accum(grads, *a, || d_out.iter().zip(bv).map(|(&g, &y)| g * y).collect(), "mul")?;
                self.accum(grads, *b, || d_out.iter().zip(av).map(|(&g, &x)| g * x).collect(), "mul")?;
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accum(grads, *a, || d_out.iter().map(|&g| g * c).collect(), "scale")?;
            }
            Op::AddScalar(a) => {
                self.accum(grads, *a, || d_out.to_vec(), "add_scalar")?;
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                self.accum(
                    grads,
                    *a,
                    || d_out.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
                    "sigmoid",
                )?;
            }
            Op::Softplus(a) => {
                let x = val(*a);
                self.accum(
                    grads,
                    *a,
                    || d_out.iter().zip(x).map(|(&g, &x)| g * kernels::sigmoid(x)).collect(),
                    "softplus",
                )?;
            }
            Op::Exp(a) => {
                let y = &node.value.data;
                self.accum(grads, *a, || d_out.iter().zip(y).map(|(&g, &y)| g * y).collect(), "exp")?;
            }
            Op::Log(a) => {
                let x = val(*a);
                self.accum(grads, *a, || d_out.iter().zip(x).map(|(&g, &x)| g / x).collect(), "log")?;
            }
            Op::Power(a, p) => {
                let (p, x) = (*p, val(*a));
                let two = T::from_f64(2.0);
                self.accum(
                    grads,
                    *a,
                    || {
                        if p == two {
                            d_out.iter().zip(x).map(|(&g, &x)| g * two * x).collect()
                        } else if p == -T::one() {
                            d_out.iter().zip(x).map(|(&g, &x)| -g / (x * x)).collect()
                        } else {
                            d_out.iter().zip(x).map(|(&g, &x)| g * p * x.powf(p - T::one())).collect()
                        }
                    },
                    "power",
                )?;
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi, x) = (*lo, *hi, val(*a));
                self.accum(
                    grads,
                    *a,
                    || {
                        d_out
                            .iter()
                            .zip(x)
                            .map(|(&g, &x)| if x < lo || x > hi { T::zero() } else { g })
                            .collect()
                    },
                    "clamp",
                )?;
            }
            Op::Abs(a) => {
                let x = val(*a);
                self.accum(
                    grads,
                    *a,
                    || {
                        d_out
                            .iter()
                            .zip(x)
                            .map(|(&g, &x)| {
                                if x > T::zero() {
                                    g
                                } else if x < T::zero() {
                                    -g
                                } else {
                                    T::zero()
                                }
                            })
                            .collect()
                    },
                    "abs",
                )?;
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                self.accum(
                    grads,
                    *a,
                    || {
                        let bt = kernels::transpose(bv, k, n);
                        kernels::matmul(d_out, &bt, m, n, k)
                    },
                    "matmul",
                )?;
                self.accum(grads, *b, || kernels::matmul_tn(av, d_out, m, k, n), "matmul")?;
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                self.accum(grads, *a, || kernels::transpose(d_out, s[1], s[0]), "transpose")?;
            }
            Op::Affine { x, w, b } => {
                let sw = self.shape(*w);
                let (k, m) = (sw[0], sw[1]);
                let n = self.nodes[x.idx()].value.rows();
                let (xv, wv) = (val(*x), val(*w));
                self.accum(
                    grads,
                    *x,
                    || {
                        let wt = kernels::transpose(wv, k, m);
                        kernels::matmul(d_out, &wt, n, m, k)
                    },
                    "affine",
                )?;
                self.accum(grads, *w, || kernels::matmul_tn(xv, d_out, n, k, m), "affine")?;
                self.accum(
                    grads,
                    *b,
                    || {
                        let mut db = vec![T::zero(); m];
                        for row in d_out.chunks_exact(m) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        db
                    },
                    "affine",
                )?;
            }
            Op::Sum(a) => {
                let g = d_out[0];
                let n = self.nodes[a.idx()].value.len();
                self.accum(grads, *a, || vec![g; n], "sum")?;
            }
            Op::Mean(a) => {
                let n = self.nodes[a.idx()].value.len();
                let g = d_out[0] / T::from_usize(n.max(1));
                self.accum(grads, *a, || vec![g; n], "mean")?;
            }
            Op::SumAxis(a, axis) => {
                let s = self.shape(*a).to_vec();
                let (outer, mid, inner) = axis_strides(&s, *axis);
                self.accum(
                    grads,
                    *a,
                    || {
                        let mut d = vec![T::zero(); outer * mid * inner];
                        for o in 0..outer {
                            let g_row = &d_out[o * inner..(o + 1) * inner];
                            for m in 0..mid {
                                let base = (o * mid + m) * inner;
                                d[base..base + inner].copy_from_slice(g_row);
                            }
                        }
                        d
                    },
                    "sum_axis",
                )?;
            }
            Op::CumsumExclusive(a) => {
                let t = &self.nodes[a.idx()].value;
                let (rows, cols) = (t.rows(), t.cols());
                self.accum(
                    grads,
                    *a,
                    || {
                        // d_x[j] = sum of d_out over strictly later positions.
                        let mut d = vec![T::zero(); rows * cols];
                        for r in 0..rows {
                            let mut acc = T::zero();
                            for j in (0..cols).rev() {
                                d[r * cols + j] = acc;
                                acc += d_out[r * cols + j];
                            }
                        }
                        d
                    },
                    "cumsum_exclusive",
                )?;
            }
            Op::Concat(parts) => {
                let mut offset = 0usize;
                for &p in parts {
                    let len = self.nodes[p.idx()].value.len();
                    let slice = d_out[offset..offset + len].to_vec();
                    self.accum(grads, p, || slice, "concat")?;
                    offset += len;
                }
            }
            Op::GatherRows(a, index) => {
                let t = &self.nodes[a.idx()].value;
                let stride: usize = t.shape[1..].iter().product();
                self.accum(
                    grads,
                    *a,
                    || {
                        let mut d = vec![T::zero(); t.len()];
                        for (r, &i) in index.iter().enumerate() {
                            let dst = &mut d[i as usize * stride..(i as usize + 1) * stride];
                            for (dv, &g) in dst.iter_mut().zip(&d_out[r * stride..(r + 1) * stride]) {
                                *dv += g;
                            }
                        }
                        d
                    },
                    "gather_rows",
                )?;
            }
            Op::ScatterRows { src, index, .. } => {
                let t = &self.nodes[src.idx()].value;
                let stride: usize = t.shape[1..].iter().product();
                self.accum(
                    grads,
                    *src,
                    || {
                        let mut d = vec![T::zero(); t.len()];
                        for (r, &i) in index.iter().enumerate() {
                            let s = &d_out[i as usize * stride..(i as usize + 1) * stride];
                            d[r * stride..(r + 1) * stride].copy_from_slice(s);
                        }
                        d
                    },
                    "scatter_rows",
                )?;
            }
            Op::SliceCols(a, from, to) => {
                let t = &self.nodes[a.idx()].value;
                let (rows, cols, width) = (t.rows(), t.cols(), to - from);
                self.accum(
                    grads,
                    *a,
                    || {
                        let mut d = vec![T::zero(); t.len()];
                        for r in 0..rows {
                            d[r * cols + from..r * cols + to]
                                .copy_from_slice(&d_out[r * width..(r + 1) * width]);
                        }
                        d
                    },
                    "slice_cols",
                )?;
            }
            Op::ExpandLast(a, n) => {
                let len = self.nodes[a.idx()].value.len();
                self.accum(
                    grads,
                    *a,
                    || {
                        let mut d = vec![T::zero(); len];
                        for (k, &g) in d_out.iter().enumerate() {
                            d[k / n] += g;
                        }
                        d
                    },
                    "expand_last",
                )?;
            }
            Op::Reshape(a) | Op::ShiftRows(a) => {
                self.accum(grads, *a, || d_out.to_vec(), "reshape")?;
            }
            Op::HwcToChw(a) => {
                let s = self.shape(*a);
                let (h, w, c) = (s[0], s[1], s[2]);
                self.accum(
                    grads,
                    *a,
                    || {
                        let mut d = vec![T::zero(); h * w * c];
                        for ch in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    d[(y * w + x) * c + ch] = d_out[(ch * h + y) * w + x];
                                }
                            }
                        }
                        d
                    },
                    "hwc_to_chw",
                )?;
            }
            Op::PadRect { src, x0, y0, out_w, .. } => {
                let s = self.shape(*src);
                let (h, w, c) = (s[0], s[1], s[2]);
                self.accum(
                    grads,
                    *src,
                    || {
                        let mut d = vec![T::zero(); h * w * c];
                        for y in 0..h {
                            let from = ((y0 + y) * out_w + x0) * c;
                            d[y * w * c..(y + 1) * w * c].copy_from_slice(&d_out[from..from + w * c]);
                        }
                        d
                    },
                    "pad_rect",
                )?;
            }
            Op::BilinearSample { plane, coords } => {
                let t = &self.nodes[plane.idx()].value;
                let (r, c) = (t.shape[0], t.shape[2]);
                self.accum(
                    grads,
                    *plane,
                    || {
                        let mut d = vec![T::zero(); t.len()];
                        kernels::bilinear_bwd(d_out, r, c, coords, &mut d);
                        d
                    },
                    "bilinear_sample",
                )?;
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (sx, sw) = (self.shape(*x).to_vec(), self.shape(*w).to_vec());
                let (ci, h, wd) = (sx[0], sx[1], sx[2]);
                let (co, kh, kw) = (sw[0], sw[2], sw[3]);
                let mut d_x = vec![T::zero(); ci * h * wd];
                let mut d_w = vec![T::zero(); co * ci * kh * kw];
                let mut d_b = vec![T::zero(); co];
                kernels::conv2d_bwd(
                    d_out,
                    val(*x),
                    val(*w),
                    ci,
                    h,
                    wd,
                    co,
                    kh,
                    kw,
                    *stride,
                    *pad,
                    &mut d_x,
                    &mut d_w,
                    &mut d_b,
                );
                self.accum(grads, *x, || d_x, "conv2d")?;
                self.accum(grads, *w, || d_w, "conv2d")?;
                self.accum(grads, *b, || d_b, "conv2d")?;
            }
            Op::MaxPool2d { x, argmax, .. } => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let oh_ow = argmax.len() / c;
                self.accum(
                    grads,
                    *x,
                    || {
                        let mut d = vec![T::zero(); c * h * w];
                        for ch in 0..c {
                            for o in 0..oh_ow {
                                let g = d_out[ch * oh_ow + o];
                                d[ch * h * w + argmax[ch * oh_ow + o] as usize] += g;
                            }
                        }
                        d
                    },
                    "max_pool2d",
                )?;
            }
        }
        Ok(())
    }

    fn map(&self, a: NodeId, f: impl Fn(T) -> T) -> TensorBuf<T> {
        let t = self.value(a);
        TensorBuf::new(t.shape.clone(), t.data.iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> TensorBuf<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        TensorBuf::new(
            ta.shape.clone(),
            ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        )
    }
}

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> TensorBuf<f64> {
        TensorBuf::new(shape, data)
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(vec![3], vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let root = tape.sum(sq).unwrap();
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.of(x).unwrap().data, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(TensorBuf::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.of(x).unwrap().item(), 0.25);
    }

    #[test]
    fn disconnected_leaf_gradient_is_bitwise_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(vec![2], vec![1.0, 2.0]));
        let unused = tape.param(t64(vec![2], vec![5.0, 6.0]));
        let root = tape.sum(x).unwrap();
        let grads = tape.backward(root).unwrap();
        assert!(grads.of(unused).is_none());
        let dense = grads.dense(&tape, unused);
        assert!(dense.data.iter().all(|v| v.to_bits() == 0.0f64.to_bits()));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(vec![2], vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TapeError::NonScalarRoot { .. })));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t64(vec![2], vec![1.0, 2.0]));
        let b = tape.param(t64(vec![3], vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(a, b), Err(TapeError::ShapeMismatch { .. })));
        assert!(matches!(tape.matmul(a, b), Err(TapeError::ShapeMismatch { .. })));
    }

    #[test]
    fn nan_output_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(TensorBuf::scalar(-1.0));
        assert!(matches!(tape.log(x), Err(TapeError::NonFinite { .. })));
    }

    #[test]
    fn matmul_identity_case() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let id = tape.constant(t64(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let y = tape.matmul(a, id).unwrap();
        assert_eq!(tape.value(y).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softplus_value_is_ln_two_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(TensorBuf::scalar(0.0));
        let y = tape.softplus(x).unwrap();
        assert!((tape.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn linearity_of_backward() {
        // backward(a*f + b*g) == a*backward(f) + b*backward(g)
        let build = |with_combo: bool, a: f64, b: f64| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::<f64>::new();
            let x = tape.param(t64(vec![3], vec![0.3, -0.7, 1.2]));
            let f = {
                let sq = tape.mul(x, x).unwrap();
                tape.sum(sq).unwrap()
            };
            let g = {
                let s = tape.sigmoid(x).unwrap();
                tape.sum(s).unwrap()
            };
            let root = if with_combo {
                let fa = tape.scale(f, a).unwrap();
                let gb = tape.scale(g, b).unwrap();
                tape.add(fa, gb).unwrap()
            } else {
                f
            };
            let combo = tape.backward(root).unwrap().dense(&tape, x).data;
            let gf = tape.backward(f).unwrap().dense(&tape, x).data;
            let gg = tape.backward(g).unwrap().dense(&tape, x).data;
            let lin: Vec<f64> = gf.iter().zip(&gg).map(|(&u, &v)| a * u + b * v).collect();
            (combo, lin)
        };
        let (combo, lin) = build(true, 2.5, -1.25);
        for (c, l) in combo.iter().zip(&lin) {
            assert!((c - l).abs() <= 1e-15 * (1.0 + l.abs()), "{c} vs {l}");
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.param(TensorBuf::from_f64(vec![4], &[0.1, 0.2, 0.3, 0.4]));
            let s = tape.sigmoid(x).unwrap();
            let e = tape.exp(s).unwrap();
            let m = tape.mean(e).unwrap();
            tape.value(m).item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn scatter_then_gather_roundtrip() {
        let mut tape = Tape::<f64>::new();
        let src = tape.param(t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let scattered = tape.scatter_rows(src, &[3, 1], 5).unwrap();
        assert_eq!(
            tape.value(scattered).data,
            vec![0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0]
        );
        let back = tape.gather_rows(scattered, &[3, 1]).unwrap();
        assert_eq!(tape.value(back).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn cumsum_exclusive_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let c = tape.cumsum_exclusive(x).unwrap();
        assert_eq!(tape.value(c).data, vec![0.0, 1.0, 3.0, 6.0]);
    }
}
