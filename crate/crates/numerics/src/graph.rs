//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its forward value and enough state to
//! run its vector-Jacobian product. [`Graph::backward`] walks the tape in
//! reverse from a scalar loss and adds parameter gradients into a
//! [`ParamStore`].
//!
//! Shape violations inside raw ops are programming errors and panic with the
//! op name; user-facing shape checks live in [`crate::layers`].

use std::collections::HashMap;

use crate::error::{NumericsError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Norms below this are treated as zero by the normalising ops.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    ScaleRows(NodeId, NodeId),
    ScaleBy(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Recip(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, xhat: Vec<f64>, rstd: Vec<f64> },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Vec<f64> },
    ConcatRows(Vec<NodeId>),
    SliceRows { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    Reshape(NodeId),
    Fsmn { x: NodeId, w: NodeId },
    Embedding { table: NodeId, ids: Vec<usize> },
    Cif { h: NodeId, alpha: NodeId, weights: Vec<f64>, cum: Vec<f64> },
    ReplaceRows { a: NodeId, b: NodeId, rows: Vec<usize> },
    Sum(NodeId),
    Mean(NodeId),
    L2NormalizeRows { x: NodeId, norms: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording tape for one forward/backward computation.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    param_nodes: HashMap<ParamId, NodeId>,
    leaf_grads: HashMap<usize, Vec<f64>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// `c = a * b + beta * c` on row/column-strided views; `c` is row-major `[m, n]`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every strided access matrixmultiply makes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Width of the rows a row-wise op works on; a vector is a single row.
fn row_width(t: &Tensor) -> usize {
    if t.rank() <= 1 {
        t.len()
    } else {
        t.cols()
    }
}

fn dims2(t: &Tensor, op: &str) -> (usize, usize) {
    assert_eq!(t.rank(), 2, "{op}: expected a matrix, got shape {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            param_nodes: HashMap::new(),
            leaf_grads: HashMap::new(),
        }
    }

    /// While disabled, new nodes never require gradients.
    pub fn set_grad_enabled(&mut self, enabled: bool) {
        self.grad_enabled = enabled;
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is kept and readable through [`Graph::grad`].
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.tensor.clone(),
            op: Op::Param(id),
            requires_grad: p.trainable,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    /// Gradient of an [`Graph::input`] leaf after [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.leaf_grads.get(&id.0).map(Vec::as_slice)
    }

    // ---- forward ops ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = dims2(self.value(a), "matmul");
        let (k2, n) = dims2(self.value(b), "matmul");
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k as isize, 1), self.value(b).data(), (n as isize, 1), 0.0, &mut out);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = dims2(self.value(a), "matmul_nt");
        let (n, k2) = dims2(self.value(b), "matmul_nt");
        assert_eq!(k, k2, "matmul_nt: inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k as isize, 1), self.value(b).data(), (1, k as isize), 0.0, &mut out);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMulNt(a, b), &[a, b])
    }

    fn zip_same(&mut self, a: NodeId, b: NodeId, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "{name}: shapes differ");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(t, op, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of `x: [m, n]`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (m, n) = dims2(self.value(x), "add_row");
        assert_eq!(self.value(bias).len(), n, "add_row: bias length");
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        let t = Tensor::new(vec![m, n], data).unwrap();
        self.push(t, Op::AddRow(x, bias), &[x, bias])
    }

    /// Multiplies every row of `x: [m, n]` elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, x: NodeId, scale: NodeId) -> NodeId {
        let (m, n) = dims2(self.value(x), "mul_row");
        assert_eq!(self.value(scale).len(), n, "mul_row: scale length");
        let s = self.value(scale).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(s).for_each(|(v, ss)| *v *= ss);
        }
        let t = Tensor::new(vec![m, n], data).unwrap();
        self.push(t, Op::MulRow(x, scale), &[x, scale])
    }

    /// Scales row `i` of `x: [m, n]` by `s[i]`.
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (m, n) = dims2(self.value(x), "scale_rows");
        assert_eq!(self.value(s).len(), m, "scale_rows: one scale per row");
        let sv = self.value(s).data();
        let mut data = self.value(x).data().to_vec();
        for (row, &f) in data.chunks_mut(n).zip(sv) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        let t = Tensor::new(vec![m, n], data).unwrap();
        self.push(t, Op::ScaleRows(x, s), &[x, s])
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).len(), 1, "scale_by: scalar factor");
        let f = self.value(s).item();
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * f).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).unwrap();
        self.push(t, Op::ScaleBy(x, s), &[x, s])
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).unwrap();
        self.push(t, op, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.map(x, |v| 1.0 / v, Op::Recip(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::abs, Op::Abs(x))
    }

    /// Row-wise softmax of a matrix (a vector is treated as one row).
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let n = row_width(vx);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(vx.shape().to_vec(), data).unwrap();
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Row-wise standardisation without affine terms.
    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> NodeId {
        let (m, n) = dims2(self.value(x), "layer_norm");
        let mut xhat = self.value(x).data().to_vec();
        let mut rstd = Vec::with_capacity(m);
        for row in xhat.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            rstd.push(r);
        }
        let t = Tensor::new(vec![m, n], xhat.clone()).unwrap();
        self.push(t, Op::LayerNorm { x, xhat, rstd }, &[x])
    }

    /// Summed negative log-likelihood of `targets` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let (m, v) = dims2(self.value(logits), "cross_entropy");
        assert_eq!(m, targets.len(), "cross_entropy: one target per row");
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(v).zip(targets) {
            assert!(t < v, "cross_entropy: target {t} out of range {v}");
            softmax_in_place(row);
            loss -= row[t].max(f64::MIN_POSITIVE).ln();
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss), op, &[logits])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), n, "concat_rows: column mismatch");
            m += v.rows();
            data.extend_from_slice(v.data());
        }
        let t = Tensor::new(vec![m, n], data).unwrap();
        self.push(t, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = dims2(self.value(x), "slice_rows");
        assert!(start + len <= m, "slice_rows: {start}+{len} > {m}");
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(vec![len, n], data).unwrap();
        self.push(t, Op::SliceRows { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            assert_eq!(v.rows(), m, "concat_cols: row mismatch");
            for i in 0..m {
                data[i * n + off..i * n + off + w].copy_from_slice(v.row(i));
            }
            off += w;
        }
        let t = Tensor::new(vec![m, n], data).unwrap();
        self.push(t, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = dims2(self.value(x), "slice_cols");
        assert!(start + len <= n, "slice_cols: {start}+{len} > {n}");
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], data).unwrap();
        self.push(t, Op::SliceCols { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let t = self.value(x).clone().reshaped(shape.to_vec()).expect("reshape: element count");
        self.push(t, Op::Reshape(x), &[x])
    }

    /// Depthwise FIR filter over the time axis: `y[t,c] = sum_k w[k,c] * x[t+k-K/2, c]`
    /// with zero padding; `w: [K, d]`, `K` odd.
    pub fn fsmn(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let (t_len, d) = dims2(self.value(x), "fsmn");
        let (k, d2) = dims2(self.value(w), "fsmn");
        assert_eq!(d, d2, "fsmn: channel mismatch");
        assert!(k % 2 == 1, "fsmn: kernel must be odd");
        let half = k / 2;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; t_len * d];
        for t in 0..t_len {
            let orow = &mut out[t * d..(t + 1) * d];
            for tap in 0..k {
                let src = t as isize + tap as isize - half as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let src = src as usize;
                let xrow = &xv[src * d..(src + 1) * d];
                let wrow = &wv[tap * d..(tap + 1) * d];
                for c in 0..d {
                    orow[c] += wrow[c] * xrow[c];
                }
            }
        }
        let t = Tensor::new(vec![t_len, d], out).unwrap();
        self.push(t, Op::Fsmn { x, w }, &[x, w])
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let (v, d) = dims2(self.value(table), "embedding");
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding: id {id} out of range {v}");
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data).unwrap();
        self.push(t, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Continuous integrate-and-fire with unit threshold.
    ///
    /// Fire `j` collects the portion of cumulative weight mass lying in
    /// `[j, j+1)`: its vector is `sum_t w[j,t] h[t]` with
    /// `w[j,t] = |[S_{t-1}, S_t] ∩ [j, j+1]|`, `S_t` the running sum of `alpha`.
    /// Emits exactly `fires` rows; the last may be partial.
    pub fn cif(&mut self, h: NodeId, alpha: NodeId, fires: usize) -> NodeId {
        let (t_len, d) = dims2(self.value(h), "cif");
        assert_eq!(self.value(alpha).len(), t_len, "cif: one weight per frame");
        let av = self.value(alpha).data();
        let mut cum = Vec::with_capacity(t_len + 1);
        cum.push(0.0);
        let mut s = 0.0;
        for &a in av {
            s += a;
            cum.push(s);
        }
        let weights = cif_weights(&cum, fires);
        let mut out = vec![0.0; fires * d];
        gemm(fires, t_len, d, &weights, (t_len as isize, 1), self.value(h).data(), (d as isize, 1), 0.0, &mut out);
        let t = Tensor::new(vec![fires, d], out).unwrap();
        self.push(t, Op::Cif { h, alpha, weights, cum }, &[h, alpha])
    }

    /// Copy of `a` with the listed rows taken from `b` instead.
    pub fn replace_rows(&mut self, a: NodeId, b: NodeId, rows: &[usize]) -> NodeId {
        let (m, n) = dims2(self.value(a), "replace_rows");
        assert_eq!(self.value(b).shape(), self.value(a).shape(), "replace_rows: shapes differ");
        let mut data = self.value(a).data().to_vec();
        let bv = self.value(b).data();
        for &r in rows {
            assert!(r < m, "replace_rows: row {r} out of range");
            data[r * n..(r + 1) * n].copy_from_slice(&bv[r * n..(r + 1) * n]);
        }
        let t = Tensor::new(vec![m, n], data).unwrap();
        self.push(t, Op::ReplaceRows { a, b, rows: rows.to_vec() }, &[a, b])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Scales each row to unit L2 norm; rows with norm below [`ZERO_NORM`] become zero.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let n = row_width(vx);
        let mut data = vx.data().to_vec();
        let mut norms = Vec::with_capacity(vx.rows());
        for row in data.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < ZERO_NORM {
                row.fill(0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            norms.push(norm);
        }
        let t = Tensor::new(vx.shape().to_vec(), data).unwrap();
        self.push(t, Op::L2NormalizeRows { x, norms }, &[x])
    }

    // ---- backward ----

    /// Back-propagates from a scalar `loss`, adding gradients of trainable
    /// parameters into `store` and keeping gradients of input leaves.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.leaf_grads.clear();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    self.leaf_grads.insert(i, g);
                }
                Op::Param(pid) => {
                    let p = store.get_mut(*pid);
                    p.grad.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                op => self.backprop_op(op, &self.nodes[i].value, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn backprop_op(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! with_grad {
            ($id:expr, |$ga:ident| $body:expr) => {
                if let Some($ga) = grad_buf(nodes, grads, $id) {
                    $body
                }
            };
        }
        let val = |id: NodeId| &nodes[id.0].value;

        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                with_grad!(*a, |ga| gemm(m, n, k, g, (n as isize, 1), val(*b).data(), (1, n as isize), 1.0, ga));
                with_grad!(*b, |gb| gemm(k, m, n, val(*a).data(), (1, k as isize), g, (n as isize, 1), 1.0, gb));
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[0];
                with_grad!(*a, |ga| gemm(m, n, k, g, (n as isize, 1), val(*b).data(), (k as isize, 1), 1.0, ga));
                with_grad!(*b, |gb| gemm(n, m, k, g, (1, n as isize), val(*a).data(), (k as isize, 1), 1.0, gb));
            }
            Op::Add(a, b) => {
                with_grad!(*a, |ga| add_into(ga, g));
                with_grad!(*b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |ga| add_into(ga, g));
                with_grad!(*b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                with_grad!(*a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                });
                with_grad!(*b, |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * va[i];
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let n = val(*bias).len();
                with_grad!(*x, |gx| add_into(gx, g));
                with_grad!(*bias, |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::MulRow(x, s) => {
                let n = val(*s).len();
                let (xv, sv) = (val(*x).data(), val(*s).data());
                with_grad!(*x, |gx| {
                    for (i, gi) in g.iter().enumerate() {
                        gx[i] += gi * sv[i % n];
                    }
                });
                with_grad!(*s, |gs| {
                    for (i, gi) in g.iter().enumerate() {
                        gs[i % n] += gi * xv[i];
                    }
                });
            }
            Op::ScaleRows(x, s) => {
                let n = val(*x).cols();
                let (xv, sv) = (val(*x).data(), val(*s).data());
                with_grad!(*x, |gx| {
                    for (i, gi) in g.iter().enumerate() {
                        gx[i] += gi * sv[i / n];
                    }
                });
                with_grad!(*s, |gs| {
                    for (r, (grow, xrow)) in g.chunks(n).zip(xv.chunks(n)).enumerate() {
                        gs[r] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::ScaleBy(x, s) => {
                let f = val(*s).item();
                let xv = val(*x).data();
                with_grad!(*x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * f));
                with_grad!(*s, |gs| gs[0] += g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>());
            }
            Op::Scale(x, c) => with_grad!(*x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * c)),
            Op::AddScalar(x) => with_grad!(*x, |gx| add_into(gx, g)),
            Op::Recip(x) => {
                let ov = out.data();
                with_grad!(*x, |gx| {
                    for i in 0..g.len() {
                        gx[i] -= g[i] * ov[i] * ov[i];
                    }
                });
            }
            Op::Relu(x) => {
                let ov = out.data();
                with_grad!(*x, |gx| {
                    for i in 0..g.len() {
                        if ov[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let ov = out.data();
                with_grad!(*x, |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * ov[i] * (1.0 - ov[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let ov = out.data();
                with_grad!(*x, |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - ov[i] * ov[i]);
                    }
                });
            }
            Op::Abs(x) => {
                let xv = val(*x).data();
                with_grad!(*x, |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * xv[i].signum() * f64::from(xv[i] != 0.0);
                    }
                });
            }
            Op::Softmax(x) => {
                let n = row_width(out);
                with_grad!(*x, |gx| {
                    for ((gxr, gr), yr) in gx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gxr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, xhat, rstd } => {
                let n = out.cols();
                with_grad!(*x, |gx| {
                    for (r, ((gxr, gr), xr)) in gx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let mean_g = gr.iter().sum::<f64>() / n as f64;
                        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gxr[j] += rstd[r] * (gr[j] - mean_g - xr[j] * mean_gx);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = val(*logits).cols();
                let s = g[0];
                with_grad!(*logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            gl[r * v + j] += s * probs[r * v + j];
                        }
                        gl[r * v + t] -= s;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    with_grad!(p, |gp| add_into(gp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let n = out.cols();
                with_grad!(*x, |gx| add_into(&mut gx[start * n..start * n + g.len()], g));
            }
            Op::ConcatCols(parts) => {
                let n = out.cols();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    with_grad!(p, |gp| {
                        for (i, row) in gp.chunks_mut(w).enumerate() {
                            add_into(row, &g[i * n + off..i * n + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let w = out.cols();
                let n = val(*x).cols();
                with_grad!(*x, |gx| {
                    for (i, grow) in g.chunks(w).enumerate() {
                        add_into(&mut gx[i * n + start..i * n + start + w], grow);
                    }
                });
            }
            Op::Reshape(x) => with_grad!(*x, |gx| add_into(gx, g)),
            Op::Fsmn { x, w } => {
                let (t_len, d) = (val(*x).shape()[0], val(*x).shape()[1]);
                let k = val(*w).shape()[0];
                let half = k / 2;
                let (xv, wv) = (val(*x).data(), val(*w).data());
                let taps = |t: usize, tap: usize| -> Option<usize> {
                    let src = t as isize + tap as isize - half as isize;
                    (src >= 0 && src < t_len as isize).then_some(src as usize)
                };
                with_grad!(*x, |gx| {
                    for t in 0..t_len {
                        for tap in 0..k {
                            if let Some(src) = taps(t, tap) {
                                for c in 0..d {
                                    gx[src * d + c] += wv[tap * d + c] * g[t * d + c];
                                }
                            }
                        }
                    }
                });
                with_grad!(*w, |gw| {
                    for t in 0..t_len {
                        for tap in 0..k {
                            if let Some(src) = taps(t, tap) {
                                for c in 0..d {
                                    gw[tap * d + c] += xv[src * d + c] * g[t * d + c];
                                }
                            }
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = val(*table).cols();
                with_grad!(*table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Cif { h, alpha, weights, cum } => {
                let (t_len, d) = (val(*h).shape()[0], val(*h).shape()[1]);
                let fires = out.rows();
                with_grad!(*h, |gh| gemm(t_len, fires, d, weights, (1, t_len as isize), g, (d as isize, 1), 1.0, gh));
                with_grad!(*alpha, |ga| {
                    // d loss / d w[j,t] = <g_j, h_t>
                    let mut gw = vec![0.0; fires * t_len];
                    gemm(fires, d, t_len, g, (d as isize, 1), val(*h).data(), (1, d as isize), 0.0, &mut gw);
                    // d w[j,t]/d S_t = 1 when S_t is the interval's upper end,
                    // d w[j,t]/d S_{t-1} = -1 when S_{t-1} is its lower end.
                    let mut g_cum = vec![0.0; t_len + 1];
                    for j in 0..fires {
                        let (lo, hi) = (j as f64, (j + 1) as f64);
                        for t in 0..t_len {
                            if weights[j * t_len + t] <= 0.0 {
                                continue;
                            }
                            let gjt = gw[j * t_len + t];
                            if cum[t + 1] < hi {
                                g_cum[t + 1] += gjt;
                            }
                            if cum[t] > lo {
                                g_cum[t] -= gjt;
                            }
                        }
                    }
                    // S_t = sum_{s<=t} alpha_s
                    let mut acc = 0.0;
                    for t in (0..t_len).rev() {
                        acc += g_cum[t + 1];
                        ga[t] += acc;
                    }
                });
            }
            Op::ReplaceRows { a, b, rows } => {
                let n = out.cols();
                with_grad!(*a, |ga| {
                    add_into(ga, g);
                    for &r in rows {
                        for j in 0..n {
                            ga[r * n + j] -= g[r * n + j];
                        }
                    }
                });
                with_grad!(*b, |gb| {
                    for &r in rows {
                        add_into(&mut gb[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Sum(x) => with_grad!(*x, |gx| gx.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let scale = g[0] / val(*x).len() as f64;
                with_grad!(*x, |gx| gx.iter_mut().for_each(|v| *v += scale));
            }
            Op::L2NormalizeRows { x, norms } => {
                let n = row_width(out);
                with_grad!(*x, |gx| {
                    for (r, ((gxr, gr), yr)) in gx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)).enumerate() {
                        if norms[r] < ZERO_NORM {
                            continue;
                        }
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gxr[j] += (gr[j] - yr[j] * dot) / norms[r];
                        }
                    }
                });
            }
        }
    }
}

/// Zero-initialised gradient buffer for `id`, or `None` if it needs no gradient.
fn grad_buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.len()]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Dense `[fires, T]` integrate-and-fire weights from the cumulative sums
/// `cum = [0, S_1, ..., S_T]`.
pub fn cif_weights(cum: &[f64], fires: usize) -> Vec<f64> {
    let t_len = cum.len() - 1;
    let mut w = vec![0.0; fires * t_len];
    for t in 0..t_len {
        let (lo, hi) = (cum[t], cum[t + 1]);
        if hi <= lo {
            continue;
        }
        let first = lo.floor().max(0.0) as usize;
        let mut j = first;
        while j < fires && (j as f64) < hi {
            let overlap = hi.min((j + 1) as f64) - lo.max(j as f64);
            if overlap > 0.0 {
                w[j * t_len + t] = overlap;
            }
            j += 1;
        }
    }
    w
}
