//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] is an append-only list of nodes; each builder runs the forward
//! computation eagerly and records the operation for the backward pass.
//! [`Tape::backward`] walks the nodes in reverse, accumulating gradients for
//! every node that (transitively) depends on a parameter leaf.
//!
//! The op set is exactly what the encoders and objectives need: dense matrix
//! algebra, ReLU, row softmax / L2 normalization, column max pooling,
//! embedding gathers, a fixed-geometry strided convolution, pooling, and
//! fused numerically-stable loss heads. Losses are fused ops rather than
//! compositions so the softmax/log-sum-exp stabilization lives in one place.
//!
//! Determinism: forward and backward are plain loops over contiguous data in
//! index order; there is no hashing, no threading, and no operation
//! reordering, so results are bit-identical for identical inputs on any
//! platform.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{log_sum_exp, Matrix};
use crate::{Error, Result};

/// Convolution geometry: kernel 3x3, stride 2, zero padding 1. These are
/// fixed for the image tower; only channel counts and the input plane vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    /// Input channels.
    pub in_ch: usize,
    /// Output channels.
    pub out_ch: usize,
    /// Input plane height.
    pub in_h: usize,
    /// Input plane width.
    pub in_w: usize,
}

/// Kernel side length of every convolution.
pub const CONV_KERNEL: usize = 3;
/// Stride of every convolution.
pub const CONV_STRIDE: usize = 2;
/// Zero padding of every convolution.
pub const CONV_PAD: usize = 1;

impl ConvGeometry {
    /// Output plane height: `floor((h + 2*pad - kernel) / stride) + 1`.
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * CONV_PAD - CONV_KERNEL) / CONV_STRIDE + 1
    }

    /// Output plane width.
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * CONV_PAD - CONV_KERNEL) / CONV_STRIDE + 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `(n x d) + (1 x d)`, the bias broadcast.
    AddRowBroadcast(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    L2NormalizeRows(NodeId),
    /// Column-wise max over rows: `(n x d) -> (1 x d)`. Gradient flows to the
    /// first (lowest-index) maximizing row per column.
    MaxCols(NodeId),
    MeanAll(NodeId),
    GatherRows {
        table: NodeId,
        indices: Vec<usize>,
    },
    SliceCols {
        input: NodeId,
        start: usize,
        end: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// Stacks `1 x d` rows into `k x d`; sources may repeat.
    StackRows(Vec<NodeId>),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geo: ConvGeometry,
    },
    /// `(c x h*w) -> (1 x c)`: mean over each channel plane.
    GlobalAvgPool(NodeId),
    /// Per-row cross entropy against the diagonal: `out_i = lse(row_i) - x[i, i]`.
    CrossEntropyDiag(NodeId),
    /// Per-row cross entropy against integer targets.
    CrossEntropyRows {
        logits: NodeId,
        targets: Vec<usize>,
    },
    /// Per-row binary cross entropy with logits against float targets.
    BceWithLogits {
        logits: NodeId,
        targets: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Gradients of one backward pass, indexed by [`NodeId`]. Nodes with no path
/// to a parameter have no entry.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer of `id`, if the node participated in the backward
    /// pass.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    /// An empty tape.
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!((v.rows(), v.cols()), (1, 1), "node is not a scalar");
        v.data()[0]
    }

    /// A constant leaf: gradients are not tracked through it.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// A parameter leaf: the backward pass accumulates its gradient.
    pub fn parameter(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, needs)
    }

    /// Elementwise sum of same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).add(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, needs)
    }

    /// Adds a `1 x d` bias row to every row of an `n x d` node.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            let brow = &self.nodes[bias.0].value;
            for c in 0..value.cols() {
                let v = value.get(r, c) + brow.get(0, c);
                value.set(r, c, v);
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        self.push(Op::AddRowBroadcast(a, bias), value, needs)
    }

    /// Elementwise product of same-shape nodes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows(), av.cols()), (bv.rows(), bv.cols()));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Matrix::from_vec(av.rows(), av.cols(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, needs)
    }

    /// Multiplication by a compile-time-known scalar.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).scale(factor);
        let needs = self.needs(a);
        self.push(Op::Scale(a, factor), value, needs)
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Matrix::from_vec(av.rows(), av.cols(), data);
        let needs = self.needs(a);
        self.push(Op::Relu(a), value, needs)
    }

    /// Transpose.
    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(Op::Transpose(a), value, needs)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut value = av.clone();
        for r in 0..value.rows() {
            let row = value.row_slice_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = libm::exp(*x - m);
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let needs = self.needs(a);
        self.push(Op::SoftmaxRows(a), value, needs)
    }

    /// Row-wise L2 normalization. Fails on any zero-norm row, which is a
    /// hard error for embedding spaces: cosine similarity is undefined there.
    pub fn l2_normalize_rows(&mut self, a: NodeId, what: &str) -> Result<NodeId> {
        let av = self.value(a);
        let mut value = av.clone();
        for r in 0..value.rows() {
            let n = av.row_norm(r);
            if n == 0.0 {
                return Err(Error::ZeroNorm {
                    what: alloc::format!("{what} row {r}"),
                });
            }
            for x in value.row_slice_mut(r) {
                *x /= n;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Op::L2NormalizeRows(a), value, needs))
    }

    /// Column-wise max over rows: `(n x d) -> (1 x d)`.
    pub fn max_cols(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        assert!(av.rows() > 0, "max_cols over empty matrix");
        let mut out = vec![f64::NEG_INFINITY; av.cols()];
        for r in 0..av.rows() {
            for (c, o) in out.iter_mut().enumerate() {
                let x = av.get(r, c);
                if x > *o {
                    *o = x;
                }
            }
        }
        let value = Matrix::from_vec(1, av.cols(), out);
        let needs = self.needs(a);
        self.push(Op::MaxCols(a), value, needs)
    }

    /// Mean of all elements: `-> 1 x 1`.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        assert!(!av.is_empty(), "mean of empty matrix");
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        let needs = self.needs(a);
        self.push(Op::MeanAll(a), Matrix::from_vec(1, 1, vec![m]), needs)
    }

    /// Gathers rows of `table` at `indices` (duplicates allowed); the
    /// embedding lookup.
    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> NodeId {
        let tv = self.value(table);
        let cols = tv.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            assert!(i < tv.rows(), "gather index {i} out of table");
            data.extend_from_slice(tv.row_slice(i));
        }
        let value = Matrix::from_vec(indices.len(), cols, data);
        let needs = self.needs(table);
        self.push(Op::GatherRows { table, indices }, value, needs)
    }

    /// Column slice `[start, end)`.
    pub fn slice_cols(&mut self, input: NodeId, start: usize, end: usize) -> NodeId {
        let iv = self.value(input);
        assert!(start < end && end <= iv.cols(), "bad column slice");
        let mut data = Vec::with_capacity(iv.rows() * (end - start));
        for r in 0..iv.rows() {
            data.extend_from_slice(&iv.row_slice(r)[start..end]);
        }
        let value = Matrix::from_vec(iv.rows(), end - start, data);
        let needs = self.needs(input);
        self.push(Op::SliceCols { input, start, end }, value, needs)
    }

    /// Concatenates nodes along columns.
    pub fn concat_cols(&mut self, inputs: Vec<NodeId>) -> NodeId {
        assert!(!inputs.is_empty());
        let rows = self.value(inputs[0]).rows();
        let total: usize = inputs.iter().map(|&i| self.value(i).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &inputs {
                let v = self.value(i);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let value = Matrix::from_vec(rows, total, data);
        let needs = inputs.iter().any(|&i| self.needs(i));
        self.push(Op::ConcatCols(inputs), value, needs)
    }

    /// Stacks `1 x d` nodes into a `k x d` matrix. The same node may appear
    /// several times; its gradient accumulates over occurrences.
    pub fn stack_rows(&mut self, inputs: Vec<NodeId>) -> NodeId {
        assert!(!inputs.is_empty());
        let cols = self.value(inputs[0]).cols();
        let mut data = Vec::with_capacity(inputs.len() * cols);
        for &i in &inputs {
            let v = self.value(i);
            assert_eq!(v.rows(), 1, "stack_rows expects row vectors");
            assert_eq!(v.cols(), cols, "stack_rows width mismatch");
            data.extend_from_slice(v.row_slice(0));
        }
        let value = Matrix::from_vec(inputs.len(), cols, data);
        let needs = inputs.iter().any(|&i| self.needs(i));
        self.push(Op::StackRows(inputs), value, needs)
    }

    /// 3x3 stride-2 pad-1 convolution. `input` is `(in_ch x in_h*in_w)`,
    /// `weight` is `(out_ch x in_ch*9)`, `bias` is `(1 x out_ch)`; the result
    /// is `(out_ch x out_h*out_w)`.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, geo: ConvGeometry) -> NodeId {
        {
            let iv = self.value(input);
            let wv = self.value(weight);
            let bv = self.value(bias);
            assert_eq!((iv.rows(), iv.cols()), (geo.in_ch, geo.in_h * geo.in_w));
            assert_eq!(
                (wv.rows(), wv.cols()),
                (geo.out_ch, geo.in_ch * CONV_KERNEL * CONV_KERNEL)
            );
            assert_eq!((bv.rows(), bv.cols()), (1, geo.out_ch));
        }
        let (out_h, out_w) = (geo.out_h(), geo.out_w());
        let mut out = vec![0.0; geo.out_ch * out_h * out_w];
        {
            let x = self.value(input).data();
            let w = self.value(weight).data();
            let b = self.value(bias).data();
            for oc in 0..geo.out_ch {
                let w_oc = &w[oc * geo.in_ch * 9..(oc + 1) * geo.in_ch * 9];
                let out_plane = &mut out[oc * out_h * out_w..(oc + 1) * out_h * out_w];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = b[oc];
                        for ic in 0..geo.in_ch {
                            let x_plane = &x[ic * geo.in_h * geo.in_w..(ic + 1) * geo.in_h * geo.in_w];
                            let w_ic = &w_oc[ic * 9..ic * 9 + 9];
                            for ky in 0..CONV_KERNEL {
                                let iy = (oy * CONV_STRIDE + ky) as i64 - CONV_PAD as i64;
                                if iy < 0 || iy >= geo.in_h as i64 {
                                    continue;
                                }
                                let x_row = &x_plane[iy as usize * geo.in_w..(iy as usize + 1) * geo.in_w];
                                for kx in 0..CONV_KERNEL {
                                    let ix = (ox * CONV_STRIDE + kx) as i64 - CONV_PAD as i64;
                                    if ix < 0 || ix >= geo.in_w as i64 {
                                        continue;
                                    }
                                    acc += w_ic[ky * 3 + kx] * x_row[ix as usize];
                                }
                            }
                        }
                        out_plane[oy * out_w + ox] = acc;
                    }
                }
            }
        }
        let value = Matrix::from_vec(geo.out_ch, out_h * out_w, out);
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                geo,
            },
            value,
            needs,
        )
    }

    /// Global average pooling over channel planes: `(c x h*w) -> (1 x c)`.
    pub fn global_avg_pool(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        assert!(av.cols() > 0, "empty pooling plane");
        let mut out = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            out.push(av.row_slice(r).iter().sum::<f64>() / av.cols() as f64);
        }
        let value = Matrix::from_vec(1, av.rows(), out);
        let needs = self.needs(a);
        self.push(Op::GlobalAvgPool(a), value, needs)
    }

    /// Per-row cross entropy whose target is the diagonal entry:
    /// `out_i = logsumexp(row_i) - x[i, i]`, over a square logit matrix.
    pub fn cross_entropy_diag(&mut self, logits: NodeId) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), lv.cols(), "diagonal cross entropy needs square logits");
        let mut out = Vec::with_capacity(lv.rows());
        for r in 0..lv.rows() {
            out.push(log_sum_exp(lv.row_slice(r)) - lv.get(r, r));
        }
        let value = Matrix::from_vec(lv.rows(), 1, out);
        let needs = self.needs(logits);
        self.push(Op::CrossEntropyDiag(logits), value, needs)
    }

    /// Per-row cross entropy against integer class targets.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per row");
        let mut out = Vec::with_capacity(lv.rows());
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < lv.cols(), "target {t} out of range");
            out.push(log_sum_exp(lv.row_slice(r)) - lv.get(r, t));
        }
        let value = Matrix::from_vec(lv.rows(), 1, out);
        let needs = self.needs(logits);
        self.push(Op::CrossEntropyRows { logits, targets }, value, needs)
    }

    /// Per-row binary cross entropy with logits, using the overflow-free
    /// form `max(z, 0) - z*t + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Vec<f64>) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.cols(), 1, "bce expects an n x 1 logit column");
        assert_eq!(lv.rows(), targets.len(), "one target per logit");
        let mut out = Vec::with_capacity(lv.rows());
        for (r, &t) in targets.iter().enumerate() {
            let z = lv.get(r, 0);
            out.push(z.max(0.0) - z * t + libm::log(1.0 + libm::exp(-libm::fabs(z))));
        }
        let value = Matrix::from_vec(lv.rows(), 1, out);
        let needs = self.needs(logits);
        self.push(Op::BceWithLogits { logits, targets }, value, needs)
    }

    /// Runs the backward pass from a scalar output node.
    pub fn backward(&self, output: NodeId) -> Gradients {
        let out_val = self.value(output);
        assert_eq!(
            (out_val.rows(), out_val.cols()),
            (1, 1),
            "backward starts from a scalar"
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            // Re-store: callers may want gradients of interior nodes too.
            grads[idx] = Some(gout);
            let gout = grads[idx].as_ref().unwrap().clone();
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let g = Matrix::from_vec(node.value.rows(), node.value.cols(), gout);
                    if self.needs(*a) {
                        let ga = g.matmul(&bv.transpose());
                        accumulate(&mut grads[a.0], ga.data());
                    }
                    if self.needs(*b) {
                        let gb = av.transpose().matmul(&g);
                        accumulate(&mut grads[b.0], gb.data());
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], &gout);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], &gout);
                    }
                }
                Op::AddRowBroadcast(a, bias) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], &gout);
                    }
                    if self.needs(*bias) {
                        let cols = self.value(*bias).cols();
                        let mut gb = vec![0.0; cols];
                        for (i, g) in gout.iter().enumerate() {
                            gb[i % cols] += g;
                        }
                        accumulate(&mut grads[bias.0], &gb);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let ga: Vec<f64> = gout.iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                        accumulate(&mut grads[a.0], &ga);
                    }
                    if self.needs(*b) {
                        let gb: Vec<f64> = gout.iter().zip(av.data()).map(|(g, x)| g * x).collect();
                        accumulate(&mut grads[b.0], &gb);
                    }
                }
                Op::Scale(a, factor) => {
                    if self.needs(*a) {
                        let ga: Vec<f64> = gout.iter().map(|g| g * factor).collect();
                        accumulate(&mut grads[a.0], &ga);
                    }
                }
                Op::Relu(a) => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let ga: Vec<f64> = gout
                            .iter()
                            .zip(av.data())
                            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[a.0], &ga);
                    }
                }
                Op::Transpose(a) => {
                    if self.needs(*a) {
                        let g = Matrix::from_vec(node.value.rows(), node.value.cols(), gout);
                        accumulate(&mut grads[a.0], g.transpose().data());
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.needs(*a) {
                        let y = &node.value;
                        let mut ga = vec![0.0; y.len()];
                        for r in 0..y.rows() {
                            let yrow = y.row_slice(r);
                            let grow = &gout[r * y.cols()..(r + 1) * y.cols()];
                            let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                            for c in 0..y.cols() {
                                ga[r * y.cols() + c] = yrow[c] * (grow[c] - dot);
                            }
                        }
                        accumulate(&mut grads[a.0], &ga);
                    }
                }
                Op::L2NormalizeRows(a) => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let y = &node.value;
                        let mut ga = vec![0.0; y.len()];
                        for r in 0..y.rows() {
                            let norm = av.row_norm(r);
                            let yrow = y.row_slice(r);
                            let grow = &gout[r * y.cols()..(r + 1) * y.cols()];
                            let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                            for c in 0..y.cols() {
                                ga[r * y.cols() + c] = (grow[c] - yrow[c] * dot) / norm;
                            }
                        }
                        accumulate(&mut grads[a.0], &ga);
                    }
                }
                Op::MaxCols(a) => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let mut ga = vec![0.0; av.len()];
                        for c in 0..av.cols() {
                            let mut best_r = 0;
                            let mut best = f64::NEG_INFINITY;
                            for r in 0..av.rows() {
                                let x = av.get(r, c);
                                if x > best {
                                    best = x;
                                    best_r = r;
                                }
                            }
                            ga[best_r * av.cols() + c] = gout[c];
                        }
                        accumulate(&mut grads[a.0], &ga);
                    }
                }
                Op::MeanAll(a) => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let g = gout[0] / av.len() as f64;
                        let ga = vec![g; av.len()];
                        accumulate(&mut grads[a.0], &ga);
                    }
                }
                Op::GatherRows { table, indices } => {
                    if self.needs(*table) {
                        let tv = self.value(*table);
                        let cols = tv.cols();
                        let mut gt = vec![0.0; tv.len()];
                        for (r, &i) in indices.iter().enumerate() {
                            for c in 0..cols {
                                gt[i * cols + c] += gout[r * cols + c];
                            }
                        }
                        accumulate(&mut grads[table.0], &gt);
                    }
                }
                Op::SliceCols { input, start, end } => {
                    if self.needs(*input) {
                        let iv = self.value(*input);
                        let width = end - start;
                        let mut gi = vec![0.0; iv.len()];
                        for r in 0..iv.rows() {
                            for c in 0..width {
                                gi[r * iv.cols() + start + c] = gout[r * width + c];
                            }
                        }
                        accumulate(&mut grads[input.0], &gi);
                    }
                }
                Op::ConcatCols(inputs) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &inp in inputs {
                        let w = self.value(inp).cols();
                        if self.needs(inp) {
                            let mut gi = vec![0.0; rows * w];
                            for r in 0..rows {
                                gi[r * w..(r + 1) * w]
                                    .copy_from_slice(&gout[r * total + offset..r * total + offset + w]);
                            }
                            accumulate(&mut grads[inp.0], &gi);
                        }
                        offset += w;
                    }
                }
                Op::StackRows(inputs) => {
                    let cols = node.value.cols();
                    for (r, &inp) in inputs.iter().enumerate() {
                        if self.needs(inp) {
                            accumulate(&mut grads[inp.0], &gout[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geo,
                } => {
                    self.conv2d_backward(*input, *weight, *bias, *geo, &gout, &mut grads);
                }
                Op::GlobalAvgPool(a) => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let plane = av.cols() as f64;
                        let mut ga = vec![0.0; av.len()];
                        for r in 0..av.rows() {
                            let g = gout[r] / plane;
                            for c in 0..av.cols() {
                                ga[r * av.cols() + c] = g;
                            }
                        }
                        accumulate(&mut grads[a.0], &ga);
                    }
                }
                Op::CrossEntropyDiag(logits) => {
                    if self.needs(*logits) {
                        let lv = self.value(*logits);
                        let n = lv.rows();
                        let mut gl = vec![0.0; lv.len()];
                        for r in 0..n {
                            let row = lv.row_slice(r);
                            let lse = log_sum_exp(row);
                            for c in 0..n {
                                let p = libm::exp(row[c] - lse);
                                let delta = if c == r { 1.0 } else { 0.0 };
                                gl[r * n + c] = gout[r] * (p - delta);
                            }
                        }
                        accumulate(&mut grads[logits.0], &gl);
                    }
                }
                Op::CrossEntropyRows { logits, targets } => {
                    if self.needs(*logits) {
                        let lv = self.value(*logits);
                        let cols = lv.cols();
                        let mut gl = vec![0.0; lv.len()];
                        for (r, &t) in targets.iter().enumerate() {
                            let row = lv.row_slice(r);
                            let lse = log_sum_exp(row);
                            for c in 0..cols {
                                let p = libm::exp(row[c] - lse);
                                let delta = if c == t { 1.0 } else { 0.0 };
                                gl[r * cols + c] = gout[r] * (p - delta);
                            }
                        }
                        accumulate(&mut grads[logits.0], &gl);
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    if self.needs(*logits) {
                        let lv = self.value(*logits);
                        let mut gl = vec![0.0; lv.len()];
                        for (r, &t) in targets.iter().enumerate() {
                            let z = lv.get(r, 0);
                            let sig = 1.0 / (1.0 + libm::exp(-z));
                            gl[r] = gout[r] * (sig - t);
                        }
                        accumulate(&mut grads[logits.0], &gl);
                    }
                }
            }
        }
        Gradients { grads }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geo: ConvGeometry,
        gout: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (out_h, out_w) = (geo.out_h(), geo.out_w());
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let need_x = self.needs(input);
        let need_w = self.needs(weight);
        let need_b = self.needs(bias);
        let mut gx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
        let mut gw = if need_w { vec![0.0; w.len()] } else { Vec::new() };
        let mut gb = if need_b { vec![0.0; geo.out_ch] } else { Vec::new() };

        for oc in 0..geo.out_ch {
            let g_plane = &gout[oc * out_h * out_w..(oc + 1) * out_h * out_w];
            if need_b {
                gb[oc] += g_plane.iter().sum::<f64>();
            }
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let g = g_plane[oy * out_w + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..geo.in_ch {
                        let x_base = ic * geo.in_h * geo.in_w;
                        let w_base = oc * geo.in_ch * 9 + ic * 9;
                        for ky in 0..CONV_KERNEL {
                            let iy = (oy * CONV_STRIDE + ky) as i64 - CONV_PAD as i64;
                            if iy < 0 || iy >= geo.in_h as i64 {
                                continue;
                            }
                            for kx in 0..CONV_KERNEL {
                                let ix = (ox * CONV_STRIDE + kx) as i64 - CONV_PAD as i64;
                                if ix < 0 || ix >= geo.in_w as i64 {
                                    continue;
                                }
                                let xi = x_base + iy as usize * geo.in_w + ix as usize;
                                let wi = w_base + ky * 3 + kx;
                                if need_w {
                                    gw[wi] += g * x[xi];
                                }
                                if need_x {
                                    gx[xi] += g * w[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        if need_x {
            accumulate(&mut grads[input.0], &gx);
        }
        if need_w {
            accumulate(&mut grads[weight.0], &gw);
        }
        if need_b {
            accumulate(&mut grads[bias.0], &gb);
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.len(), delta.len());
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}
