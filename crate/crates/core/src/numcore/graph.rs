use std::sync::Arc;

use super::tensor::Tensor;
use super::{NumError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Gelu(NodeId),
    Relu(NodeId),
    Sqrt(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    GatherRows { src: NodeId, idx: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    RepeatRow(NodeId, usize),
    SliceCols { src: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    RowSum(NodeId),
    DivCol(NodeId, NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
}

struct Node {
    value: Arc<Vec<f64>>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// One step's computation graph (a tape). Nodes are appended during the
/// forward pass; [`Graph::backward`] sweeps the tape in reverse and
/// accumulates gradients into every node that requires them.
///
/// A graph is a single-execution-context object: build, backward, harvest,
/// drop. It holds no locks.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a trainable leaf sharing the tensor's storage.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.push_leaf(t.storage(), t.shape().to_vec(), true)
    }

    /// Inserts a non-trainable leaf sharing the tensor's storage.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push_leaf(t.storage(), t.shape().to_vec(), false)
    }

    /// Inserts a non-trainable leaf from raw values.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    fn push_leaf(&mut self, value: Arc<Vec<f64>>, shape: Vec<usize>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, shape, op: Op::Leaf, requires_grad, grad: None });
        id
    }

    fn push(&mut self, op: &'static str, value: Vec<f64>, shape: Vec<usize>, node_op: Op, requires_grad: bool) -> Result<NodeId> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(NumError::NonFinite { op });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value: Arc::new(value), shape, op: node_op, requires_grad, grad: None });
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    /// Gradient accumulated at `id` by the latest `backward`, if any.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn dims2(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        match self.nodes[id.0].shape[..] {
            [r, c] => Ok((r, c)),
            ref s => Err(NumError::ShapeMismatch {
                op,
                detail: format!("expected a matrix, got shape {:?}", s),
            }),
        }
    }

    fn req(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- elementwise and arithmetic ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        node_op: Op,
    ) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(NumError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            });
        }
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(self.nodes[b.0].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a, b]);
        self.push(op, value, shape, node_op, rg)
    }

    /// Broadcast add of a row vector: `[n, d] + [1, d]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2("add_row", a)?;
        let (rr, rc) = self.dims2("add_row", row)?;
        if rr != 1 || rc != d {
            return Err(NumError::ShapeMismatch {
                op: "add_row",
                detail: format!("row shape [{rr}, {rc}] does not broadcast over [{n}, {d}]"),
            });
        }
        let av = &self.nodes[a.0].value;
        let rv = &self.nodes[row.0].value;
        let mut value = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                value[i * d + j] = av[i * d + j] + rv[j];
            }
        }
        let rg = self.req(&[a, row]);
        self.push("add_row", value, vec![n, d], Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x * k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a]);
        self.push("scale", value, shape, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x + k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a]);
        self.push("add_scalar", value, shape, Op::AddScalar(a), rg)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a]);
        self.push("gelu", value, shape, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a]);
        self.push("relu", value, shape, Op::Relu(a), rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.sqrt()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.req(&[a]);
        self.push("sqrt", value, shape, Op::Sqrt(a), rg)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m}, {k}] x [{k2}, {n}]"),
            });
        }
        let value = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        let rg = self.req(&[a, b]);
        self.push("matmul", value, vec![m, n], Op::Matmul(a, b), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2("transpose", a)?;
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                value[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.req(&[a]);
        self.push("transpose", value, vec![n, m], Op::Transpose(a), rg)
    }

    // ---- normalization and attention pieces ----

    /// Row-wise softmax over the last axis of a matrix.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2("softmax", a)?;
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; n * d];
        for i in 0..n {
            let row = &av[i * d..(i + 1) * d];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..d {
                let e = (row[j] - max).exp();
                value[i * d + j] = e;
                sum += e;
            }
            for j in 0..d {
                value[i * d + j] /= sum;
            }
        }
        let rg = self.req(&[a]);
        self.push("softmax", value, vec![n, d], Op::SoftmaxRows(a), rg)
    }

    /// Layer normalization over the last axis with affine parameters:
    /// per row, `(x - mean) / sqrt(var + eps) * gamma + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (n, d) = self.dims2("layer_norm", x)?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            let numel = self.nodes[p.0].value.len();
            if numel != d {
                return Err(NumError::ShapeMismatch {
                    op: "layer_norm",
                    detail: format!("{name} has {numel} values, last axis is {d}"),
                });
            }
        }
        if eps <= 0.0 {
            return Err(NumError::InvalidArgument {
                op: "layer_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut value = vec![0.0; n * d];
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                value[i * d + j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let rg = self.req(&[x, gamma, beta]);
        self.push("layer_norm", value, vec![n, d], Op::LayerNorm { x, gamma, beta, eps }, rg)
    }

    // ---- row/column selection ----

    /// Gathers rows of a matrix by index; indices may repeat or reorder.
    pub fn gather_rows(&mut self, src: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (n, d) = self.dims2("gather_rows", src)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(NumError::InvalidArgument {
                op: "gather_rows",
                detail: format!("row index {bad} out of range for {n} rows"),
            });
        }
        let sv = &self.nodes[src.0].value;
        let mut value = vec![0.0; idx.len() * d];
        for (out_i, &src_i) in idx.iter().enumerate() {
            value[out_i * d..(out_i + 1) * d].copy_from_slice(&sv[src_i * d..(src_i + 1) * d]);
        }
        let rg = self.req(&[src]);
        self.push("gather_rows", value, vec![idx.len(), d], Op::GatherRows { src, idx: idx.to_vec() }, rg)
    }

    /// Vertically stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumError::InvalidArgument { op: "concat_rows", detail: "no inputs".into() });
        }
        let (_, d) = self.dims2("concat_rows", parts[0])?;
        let mut total_rows = 0;
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != d {
                return Err(NumError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts differ: {d} vs {c}"),
                });
            }
            total_rows += r;
        }
        let mut value = Vec::with_capacity(total_rows * d);
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let rg = self.req(parts);
        self.push("concat_rows", value, vec![total_rows, d], Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Repeats a `[1, d]` row `n` times into `[n, d]`.
    pub fn repeat_row(&mut self, row: NodeId, n: usize) -> Result<NodeId> {
        let (r, d) = self.dims2("repeat_row", row)?;
        if r != 1 {
            return Err(NumError::ShapeMismatch {
                op: "repeat_row",
                detail: format!("expected a single row, got {r}"),
            });
        }
        let rv = self.nodes[row.0].value.clone();
        let mut value = Vec::with_capacity(n * d);
        for _ in 0..n {
            value.extend_from_slice(&rv);
        }
        let rg = self.req(&[row]);
        self.push("repeat_row", value, vec![n, d], Op::RepeatRow(row, n), rg)
    }

    /// Selects a contiguous column range `[start, start + len)`.
    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, d) = self.dims2("slice_cols", src)?;
        if start + len > d {
            return Err(NumError::InvalidArgument {
                op: "slice_cols",
                detail: format!("columns [{start}, {}) out of range for width {d}", start + len),
            });
        }
        let sv = &self.nodes[src.0].value;
        let mut value = vec![0.0; n * len];
        for i in 0..n {
            value[i * len..(i + 1) * len].copy_from_slice(&sv[i * d + start..i * d + start + len]);
        }
        let rg = self.req(&[src]);
        self.push("slice_cols", value, vec![n, len], Op::SliceCols { src, start, len }, rg)
    }

    /// Horizontally stacks matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumError::InvalidArgument { op: "concat_cols", detail: "no inputs".into() });
        }
        let (n, _) = self.dims2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != n {
                return Err(NumError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {n} vs {r}"),
                });
            }
            widths.push(c);
            total += c;
        }
        let mut value = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let pv = &self.nodes[p.0].value;
            for i in 0..n {
                value[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = self.req(parts);
        self.push("concat_cols", value, vec![n, total], Op::ConcatCols(parts.to_vec()), rg)
    }

    // ---- reductions ----

    /// Sums each row of `[n, d]` into `[n, 1]`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2("row_sum", a)?;
        let av = &self.nodes[a.0].value;
        let value: Vec<f64> = (0..n).map(|i| av[i * d..(i + 1) * d].iter().sum()).collect();
        let rg = self.req(&[a]);
        self.push("row_sum", value, vec![n, 1], Op::RowSum(a), rg)
    }

    /// Divides each row of `[n, d]` by the matching entry of `[n, 1]`.
    pub fn div_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2("div_col", a)?;
        let (cn, cc) = self.dims2("div_col", col)?;
        if cn != n || cc != 1 {
            return Err(NumError::ShapeMismatch {
                op: "div_col",
                detail: format!("divisor shape [{cn}, {cc}] does not match [{n}, 1]"),
            });
        }
        let av = &self.nodes[a.0].value;
        let cv = &self.nodes[col.0].value;
        let mut value = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                value[i * d + j] = av[i * d + j] / cv[i];
            }
        }
        let rg = self.req(&[a, col]);
        self.push("div_col", value, vec![n, d], Op::DivCol(a, col), rg)
    }

    /// Mean over all elements, yielding a `[1]` scalar node.
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.req(&[a]);
        self.push("mean_all", vec![mean], vec![1], Op::MeanAll(a), rg)
    }

    /// Sum over all elements, yielding a `[1]` scalar node.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let sum = v.iter().sum::<f64>();
        let rg = self.req(&[a]);
        self.push("sum_all", vec![sum], vec![1], Op::SumAll(a), rg)
    }

    // ---- backward ----

    /// Reverse sweep seeding `d(root)/d(root) = 1`.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        self.backward_with_injected(root, &[])
    }

    /// Reverse sweep with additional gradients injected at interior nodes
    /// before propagation. Used by the distributed worker to fold the
    /// coordinator's alignment gradient into its local reconstruction
    /// backward pass.
    pub fn backward_with_injected(&mut self, root: NodeId, injected: &[(NodeId, &[f64])]) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(NumError::InvalidArgument {
                op: "backward",
                detail: "root must be a scalar node".into(),
            });
        }
        for node in &mut self.nodes {
            node.grad = Some(vec![0.0; node.value.len()]);
        }
        self.nodes[root.0].grad.as_mut().unwrap()[0] = 1.0;
        for &(id, g) in injected {
            let slot = self.nodes[id.0].grad.as_mut().unwrap();
            if slot.len() != g.len() {
                return Err(NumError::ShapeMismatch {
                    op: "backward",
                    detail: format!("injected grad has {} values, node has {}", g.len(), slot.len()),
                });
            }
            for (s, &v) in slot.iter_mut().zip(g.iter()) {
                *s += v;
            }
        }

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let grad = self.nodes[i].grad.take().unwrap();
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &grad)?;
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn add_to_grad(&mut self, id: NodeId, contribution: impl Iterator<Item = f64>) {
        let slot = self.nodes[id.0].grad.as_mut().expect("grad allocated");
        for (s, v) in slot.iter_mut().zip(contribution) {
            *s += v;
        }
    }

    fn propagate(&mut self, node_idx: usize, op: &Op, g: &[f64]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_to_grad(a, g.iter().cloned());
                self.add_to_grad(b, g.iter().cloned());
            }
            Op::Sub(a, b) => {
                self.add_to_grad(a, g.iter().cloned());
                self.add_to_grad(b, g.iter().map(|&v| -v));
            }
            Op::Mul(a, b) => {
                let av = Arc::clone(&self.nodes[a.0].value);
                let bv = Arc::clone(&self.nodes[b.0].value);
                self.add_to_grad(a, g.iter().zip(bv.iter()).map(|(&gv, &y)| gv * y));
                self.add_to_grad(b, g.iter().zip(av.iter()).map(|(&gv, &x)| gv * x));
            }
            Op::AddRow(a, row) => {
                self.add_to_grad(a, g.iter().cloned());
                let d = self.nodes[row.0].value.len();
                let n = g.len() / d;
                let mut row_grad = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        row_grad[j] += g[i * d + j];
                    }
                }
                self.add_to_grad(row, row_grad.into_iter());
            }
            Op::Scale(a, k) => {
                self.add_to_grad(a, g.iter().map(|&v| v * k));
            }
            Op::AddScalar(a) => {
                self.add_to_grad(a, g.iter().cloned());
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let av = Arc::clone(&self.nodes[a.0].value);
                let bv = Arc::clone(&self.nodes[b.0].value);
                // dA = g @ B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                // dB = A^T @ g
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += av[i * k + p] * g[i * n + j];
                        }
                        db[p * n + j] = s;
                    }
                }
                self.add_to_grad(a, da.into_iter());
                self.add_to_grad(b, db.into_iter());
            }
            Op::Transpose(a) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                // g has shape [n, m]; transpose it back.
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = g[i * m + j];
                    }
                }
                self.add_to_grad(a, da.into_iter());
            }
            Op::Gelu(a) => {
                let av = Arc::clone(&self.nodes[a.0].value);
                self.add_to_grad(a, g.iter().zip(av.iter()).map(|(&gv, &x)| gv * gelu_grad(x)));
            }
            Op::Relu(a) => {
                let av = Arc::clone(&self.nodes[a.0].value);
                self.add_to_grad(a, g.iter().zip(av.iter()).map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 }));
            }
            Op::Sqrt(a) => {
                let out = Arc::clone(&self.nodes[node_idx].value);
                self.add_to_grad(a, g.iter().zip(out.iter()).map(|(&gv, &s)| gv / (2.0 * s)));
            }
            Op::SoftmaxRows(a) => {
                let (n, d) = (self.nodes[node_idx].shape[0], self.nodes[node_idx].shape[1]);
                let s = Arc::clone(&self.nodes[node_idx].value);
                let mut da = vec![0.0; n * d];
                for i in 0..n {
                    let srow = &s[i * d..(i + 1) * d];
                    let grow = &g[i * d..(i + 1) * d];
                    let dot: f64 = srow.iter().zip(grow.iter()).map(|(&sv, &gv)| sv * gv).sum();
                    for j in 0..d {
                        da[i * d + j] = srow[j] * (grow[j] - dot);
                    }
                }
                self.add_to_grad(a, da.into_iter());
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (n, d) = (self.nodes[node_idx].shape[0], self.nodes[node_idx].shape[1]);
                let xv = Arc::clone(&self.nodes[x.0].value);
                let gv = Arc::clone(&self.nodes[gamma.0].value);
                let mut dx = vec![0.0; n * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for i in 0..n {
                    let row = &xv[i * d..(i + 1) * d];
                    let grow = &g[i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    // x_hat and dL/dx_hat for this row
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    let mut xhat = vec![0.0; d];
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * inv_std;
                        dxhat[j] = grow[j] * gv[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for j in 0..d {
                        dx[i * d + j] = inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                self.add_to_grad(x, dx.into_iter());
                self.add_to_grad(gamma, dgamma.into_iter());
                self.add_to_grad(beta, dbeta.into_iter());
            }
            Op::GatherRows { src, ref idx } => {
                let d = self.nodes[node_idx].shape[1];
                let src_len = self.nodes[src.0].value.len();
                let mut dsrc = vec![0.0; src_len];
                for (out_i, &src_i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dsrc[src_i * d + j] += g[out_i * d + j];
                    }
                }
                self.add_to_grad(src, dsrc.into_iter());
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    let part_grad: Vec<f64> = g[offset..offset + len].to_vec();
                    self.add_to_grad(p, part_grad.into_iter());
                    offset += len;
                }
            }
            Op::RepeatRow(row, n) => {
                let d = self.nodes[row.0].value.len();
                let mut drow = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        drow[j] += g[i * d + j];
                    }
                }
                self.add_to_grad(row, drow.into_iter());
            }
            Op::SliceCols { src, start, len } => {
                let (n, d) = (self.nodes[src.0].shape[0], self.nodes[src.0].shape[1]);
                let mut dsrc = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..len {
                        dsrc[i * d + start + j] = g[i * len + j];
                    }
                }
                self.add_to_grad(src, dsrc.into_iter());
            }
            Op::ConcatCols(ref parts) => {
                let n = self.nodes[node_idx].shape[0];
                let total = self.nodes[node_idx].shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].shape[1];
                    let mut dp = vec![0.0; n * w];
                    for i in 0..n {
                        dp[i * w..(i + 1) * w].copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    self.add_to_grad(p, dp.into_iter());
                    offset += w;
                }
            }
            Op::RowSum(a) => {
                let (n, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let mut da = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        da[i * d + j] = g[i];
                    }
                }
                self.add_to_grad(a, da.into_iter());
            }
            Op::DivCol(a, col) => {
                let (n, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let cv = Arc::clone(&self.nodes[col.0].value);
                let out = Arc::clone(&self.nodes[node_idx].value);
                let mut da = vec![0.0; n * d];
                let mut dcol = vec![0.0; n];
                for i in 0..n {
                    for j in 0..d {
                        da[i * d + j] = g[i * d + j] / cv[i];
                        dcol[i] -= g[i * d + j] * out[i * d + j] / cv[i];
                    }
                }
                self.add_to_grad(a, da.into_iter());
                self.add_to_grad(col, dcol.into_iter());
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len();
                let share = g[0] / n as f64;
                self.add_to_grad(a, std::iter::repeat_n(share, n));
            }
            Op::SumAll(a) => {
                let n = self.nodes[a.0].value.len();
                self.add_to_grad(a, std::iter::repeat_n(g[0], n));
            }
        }
        Ok(())
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

// Tanh approximation of GELU.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}
