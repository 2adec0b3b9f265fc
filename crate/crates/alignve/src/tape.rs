//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive records one node holding the forward value and the ids of
//! its inputs. `backward` walks the nodes in reverse, accumulating gradients
//! with `+=` so tensors used more than once (shared parameters) receive the
//! sum of their contributions. A tape is confined to one thread and is
//! rebuilt per example.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { lhs: NodeId, rhs: NodeId },
    Transpose { input: NodeId },
    Add { lhs: NodeId, rhs: NodeId },
    AddRowBias { lhs: NodeId, bias: NodeId },
    Mul { lhs: NodeId, rhs: NodeId },
    Scale { input: NodeId, factor: f64 },
    Relu { input: NodeId },
    SoftmaxRows { input: NodeId },
    LayerNorm { input: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    ConcatCols { parts: Vec<NodeId> },
    Reshape { input: NodeId },
    AdaptivePool { input: NodeId, out_h: usize, out_w: usize, mode: PoolMode },
    Sum { input: NodeId },
    CrossEntropy { logits: NodeId, label: usize },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by tape node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Vec<T>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `tensor`, as a tensor of the same
    /// shape. Leaves that never influenced the loss get zeros. Returns `None`
    /// for tensors that were never registered on the tape.
    pub fn wrt(&self, tensor: &Tensor<T>) -> Option<Tensor<T>> {
        let id = tensor.node()?;
        let data = self.grads.get(id.0)?.clone();
        Some(
            Tensor::new(self.shapes[id.0].clone(), data)
                .expect("gradient buffers match node shapes"),
        )
    }
}

/// Half-open element range covered by output bin `i` of an adaptive pooling
/// from `in_size` to `out_size` elements. Bins are never empty and may reuse
/// elements when `out_size > in_size`.
pub fn pool_bin(i: usize, in_size: usize, out_size: usize) -> (usize, usize) {
    let start = i * in_size / out_size;
    let end = ((i + 1) * in_size).div_ceil(out_size);
    (start, end)
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::ZERO;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf and returns it linked to the tape.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Tensor<T> {
        let grad = tensor.requires_grad();
        self.push(tensor.detached(), Op::Leaf, grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Tensor<T> {
        let id = NodeId(self.nodes.len());
        let out = if requires_grad {
            value.with_grad().attach(id)
        } else {
            value.attach(id)
        };
        self.nodes.push(Node {
            value: out.clone(),
            op,
            requires_grad,
        });
        out
    }

    /// Resolves an op input to a node id. Tensors that require gradients must
    /// already be on the tape; plain constants are registered on the fly.
    fn input_id(&mut self, t: &Tensor<T>) -> Result<NodeId> {
        match t.node() {
            Some(id) if id.0 < self.nodes.len() => Ok(id),
            Some(_) => Err(Error::DetachedTensor),
            None if t.requires_grad() => Err(Error::DetachedTensor),
            None => Ok(self.leaf(t.clone()).node().expect("leaf is attached")),
        }
    }

    fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ── Primitives ──────────────────────────────────────────────────

    /// C[i][j] = Σ_k A[i][k] · B[k][j].
    pub fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if !a.is_matrix() || !b.is_matrix() || a.cols() != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let ia = self.input_id(a)?;
        let ib = self.input_id(b)?;
        let data = matmul_raw(self.value(ia).data(), self.value(ib).data(), m, k, n);
        let grad = self.needs_grad(&[ia, ib]);
        Ok(self.push(
            Tensor::new(vec![m, n], data)?,
            Op::MatMul { lhs: ia, rhs: ib },
            grad,
        ))
    }

    pub fn transpose(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        if !a.is_matrix() {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: a.shape().to_vec(),
                reason: "expected a 2-D tensor".into(),
            });
        }
        let (r, c) = (a.rows(), a.cols());
        let ia = self.input_id(a)?;
        let data = transpose_raw(self.value(ia).data(), r, c);
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose { input: ia }, grad))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let ia = self.input_id(a)?;
        let ib = self.input_id(b)?;
        let data: Vec<T> = self
            .value(ia)
            .data()
            .iter()
            .zip(self.value(ib).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let grad = self.needs_grad(&[ia, ib]);
        Ok(self.push(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::Add { lhs: ia, rhs: ib },
            grad,
        ))
    }

    /// Adds a length-q bias vector to every row of a p×q matrix.
    pub fn add_row_bias(&mut self, a: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        if !a.is_matrix() || bias.shape() != [a.cols()] {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                left: a.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let (p, q) = (a.rows(), a.cols());
        let ia = self.input_id(a)?;
        let ib = self.input_id(bias)?;
        let mut data = self.value(ia).data().to_vec();
        let bdata = self.value(ib).data();
        for i in 0..p {
            for j in 0..q {
                data[i * q + j] += bdata[j];
            }
        }
        let grad = self.needs_grad(&[ia, ib]);
        Ok(self.push(
            Tensor::new(vec![p, q], data)?,
            Op::AddRowBias { lhs: ia, bias: ib },
            grad,
        ))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let ia = self.input_id(a)?;
        let ib = self.input_id(b)?;
        let data: Vec<T> = self
            .value(ia)
            .data()
            .iter()
            .zip(self.value(ib).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let grad = self.needs_grad(&[ia, ib]);
        Ok(self.push(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::Mul { lhs: ia, rhs: ib },
            grad,
        ))
    }

    pub fn scale(&mut self, a: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
        let ia = self.input_id(a)?;
        let f = T::from_f64(factor);
        let data: Vec<T> = self.value(ia).data().iter().map(|&x| x * f).collect();
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::Scale { input: ia, factor },
            grad,
        ))
    }

    /// Elementwise max(x, 0). The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let ia = self.input_id(a)?;
        let data: Vec<T> = self
            .value(ia)
            .data()
            .iter()
            .map(|&x| if x > T::ZERO { x } else { T::ZERO })
            .collect();
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::Relu { input: ia },
            grad,
        ))
    }

    /// Row-wise softmax of a p×q matrix, computed with per-row max
    /// subtraction so large logits stay finite.
    pub fn softmax_rows(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        if !a.is_matrix() {
            return Err(Error::InvalidShape {
                op: "softmax_rows",
                shape: a.shape().to_vec(),
                reason: "expected a 2-D tensor".into(),
            });
        }
        let (p, q) = (a.rows(), a.cols());
        let ia = self.input_id(a)?;
        let x = self.value(ia).data();
        let mut data = vec![T::ZERO; p * q];
        for i in 0..p {
            let row = &x[i * q..(i + 1) * q];
            let mut max = row[0];
            for &v in row {
                max = max.max(v);
            }
            let mut sum = T::ZERO;
            for j in 0..q {
                let e = (row[j] - max).exp();
                data[i * q + j] = e;
                sum += e;
            }
            for j in 0..q {
                data[i * q + j] /= sum;
            }
        }
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(
            Tensor::new(vec![p, q], data)?,
            Op::SoftmaxRows { input: ia },
            grad,
        ))
    }

    /// Per-row normalization (x − μ) / sqrt(σ² + eps) · gamma + beta with the
    /// biased (divide-by-q) variance.
    pub fn layer_norm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        if eps <= 0.0 {
            return Err(Error::Config("layer_norm eps must be positive".into()));
        }
        if !x.is_matrix() || gamma.shape() != [x.cols()] || beta.shape() != [x.cols()] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: x.shape().to_vec(),
                right: gamma.shape().to_vec(),
            });
        }
        let (p, q) = (x.rows(), x.cols());
        let ix = self.input_id(x)?;
        let ig = self.input_id(gamma)?;
        let ib = self.input_id(beta)?;
        let xv = self.value(ix).data();
        let gv = self.value(ig).data();
        let bv = self.value(ib).data();
        let qf = T::from_f64(q as f64);
        let epst = T::from_f64(eps);
        let mut data = vec![T::ZERO; p * q];
        for i in 0..p {
            let row = &xv[i * q..(i + 1) * q];
            let mean = row.iter().copied().sum::<T>() / qf;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                / qf;
            let inv_std = T::ONE / (var + epst).sqrt();
            for j in 0..q {
                data[i * q + j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let grad = self.needs_grad(&[ix, ig, ib]);
        Ok(self.push(
            Tensor::new(vec![p, q], data)?,
            Op::LayerNorm {
                input: ix,
                gamma: ig,
                beta: ib,
                eps,
            },
            grad,
        ))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis,
    /// in argument order.
    pub fn concat_cols(&mut self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            op: "concat_cols",
            shape: vec![],
            reason: "needs at least one input".into(),
        })?;
        let rows = first.rows();
        let mut ids = Vec::with_capacity(parts.len());
        let mut cols = 0;
        for p in parts {
            if !p.is_matrix() || p.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            cols += p.cols();
            ids.push(self.input_id(p)?);
        }
        let mut data = vec![T::ZERO; rows * cols];
        let mut offset = 0;
        for &id in &ids {
            let part = self.value(id);
            let pc = part.cols();
            for i in 0..rows {
                data[i * cols + offset..i * cols + offset + pc]
                    .copy_from_slice(&part.data()[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let grad = self.needs_grad(&ids);
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatCols { parts: ids },
            grad,
        ))
    }

    pub fn reshape(&mut self, a: &Tensor<T>, shape: Vec<usize>) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != a.numel() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape,
                reason: format!("element count differs from input {:?}", a.shape()),
            });
        }
        let ia = self.input_id(a)?;
        let data = self.value(ia).data().to_vec();
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape { input: ia }, grad))
    }

    /// Adaptive 2-D pooling of an m×n matrix into out_h×out_w bins. Bin (i,j)
    /// covers rows [⌊i·m/out_h⌋, ⌈(i+1)·m/out_h⌉) and the analogous column
    /// range; bins reuse elements when the output is larger than the input.
    /// Average pooling spreads gradient uniformly over the bin; max pooling
    /// routes it to the first maximal element in row-major bin order.
    pub fn adaptive_pool(
        &mut self,
        a: &Tensor<T>,
        out_h: usize,
        out_w: usize,
        mode: PoolMode,
    ) -> Result<Tensor<T>> {
        if !a.is_matrix() {
            return Err(Error::InvalidShape {
                op: "adaptive_pool",
                shape: a.shape().to_vec(),
                reason: "expected a 2-D tensor".into(),
            });
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidShape {
                op: "adaptive_pool",
                shape: vec![out_h, out_w],
                reason: "output bins must be positive".into(),
            });
        }
        let (m, n) = (a.rows(), a.cols());
        let ia = self.input_id(a)?;
        let x = self.value(ia).data();
        let mut data = vec![T::ZERO; out_h * out_w];
        for i in 0..out_h {
            let (r0, r1) = pool_bin(i, m, out_h);
            for j in 0..out_w {
                let (c0, c1) = pool_bin(j, n, out_w);
                data[i * out_w + j] = match mode {
                    PoolMode::Avg => {
                        let mut acc = T::ZERO;
                        for r in r0..r1 {
                            for c in c0..c1 {
                                acc += x[r * n + c];
                            }
                        }
                        acc / T::from_f64(((r1 - r0) * (c1 - c0)) as f64)
                    }
                    PoolMode::Max => {
                        let mut best = x[r0 * n + c0];
                        for r in r0..r1 {
                            for c in c0..c1 {
                                best = best.max(x[r * n + c]);
                            }
                        }
                        best
                    }
                };
            }
        }
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(
            Tensor::new(vec![out_h, out_w], data)?,
            Op::AdaptivePool {
                input: ia,
                out_h,
                out_w,
                mode,
            },
            grad,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let ia = self.input_id(a)?;
        let total: T = self.value(ia).data().iter().copied().sum();
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(Tensor::scalar(total), Op::Sum { input: ia }, grad))
    }

    /// −log softmax(logits)[label], computed with max subtraction. Accepts a
    /// length-C vector or a 1×C matrix.
    pub fn cross_entropy(&mut self, logits: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
        let classes = match logits.shape() {
            [c] => *c,
            [1, c] => *c,
            other => {
                return Err(Error::InvalidShape {
                    op: "cross_entropy",
                    shape: other.to_vec(),
                    reason: "expected a logit vector".into(),
                })
            }
        };
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let ia = self.input_id(logits)?;
        let x = self.value(ia).data();
        let mut max = x[0];
        for &v in x {
            max = max.max(v);
        }
        let log_sum = x.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = -(x[label] - max - log_sum);
        let grad = self.needs_grad(&[ia]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: ia, label },
            grad,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar loss.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        let loss_id = loss.node().ok_or(Error::DetachedTensor)?;
        if loss_id.0 >= self.nodes.len() {
            return Err(Error::DetachedTensor);
        }
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }

        let mut grads: Vec<Vec<T>> = self
            .nodes
            .iter()
            .map(|n| vec![T::ZERO; n.value.numel()])
            .collect();
        grads[loss_id.0][0] = T::ONE;

        for idx in (0..=loss_id.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.step_backward(idx, &g, &mut grads);
            grads[idx] = g;
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn step_backward(&self, idx: usize, g: &[T], grads: &mut [Vec<T>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}

            Op::MatMul { lhs, rhs } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                let bt = transpose_raw(b.data(), k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                accumulate(&mut grads[lhs.0], &da);
                let at = transpose_raw(a.data(), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                accumulate(&mut grads[rhs.0], &db);
            }

            Op::Transpose { input } => {
                let out = self.value(NodeId(idx));
                let dt = transpose_raw(g, out.rows(), out.cols());
                accumulate(&mut grads[input.0], &dt);
            }

            Op::Add { lhs, rhs } => {
                accumulate(&mut grads[lhs.0], g);
                accumulate(&mut grads[rhs.0], g);
            }

            Op::AddRowBias { lhs, bias } => {
                accumulate(&mut grads[lhs.0], g);
                let a = self.value(*lhs);
                let (p, q) = (a.rows(), a.cols());
                let db = &mut grads[bias.0];
                for i in 0..p {
                    for j in 0..q {
                        db[j] += g[i * q + j];
                    }
                }
            }

            Op::Mul { lhs, rhs } => {
                let bdata = self.value(*rhs).data().to_vec();
                let adata = self.value(*lhs).data().to_vec();
                let da: Vec<T> = g.iter().zip(&bdata).map(|(&gi, &bi)| gi * bi).collect();
                accumulate(&mut grads[lhs.0], &da);
                let db: Vec<T> = g.iter().zip(&adata).map(|(&gi, &ai)| gi * ai).collect();
                accumulate(&mut grads[rhs.0], &db);
            }

            Op::Scale { input, factor } => {
                let f = T::from_f64(*factor);
                let dx: Vec<T> = g.iter().map(|&gi| gi * f).collect();
                accumulate(&mut grads[input.0], &dx);
            }

            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx: Vec<T> = g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > T::ZERO { gi } else { T::ZERO })
                    .collect();
                accumulate(&mut grads[input.0], &dx);
            }

            Op::SoftmaxRows { input } => {
                let s = self.value(NodeId(idx));
                let (p, q) = (s.rows(), s.cols());
                let sd = s.data();
                let mut dx = vec![T::ZERO; p * q];
                for i in 0..p {
                    let mut dot = T::ZERO;
                    for j in 0..q {
                        dot += g[i * q + j] * sd[i * q + j];
                    }
                    for j in 0..q {
                        dx[i * q + j] = sd[i * q + j] * (g[i * q + j] - dot);
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }

            Op::LayerNorm {
                input,
                gamma,
                beta,
                eps,
            } => {
                let x = self.value(*input);
                let (p, q) = (x.rows(), x.cols());
                let xd = x.data();
                let gd = self.value(*gamma).data().to_vec();
                let qf = T::from_f64(q as f64);
                let epst = T::from_f64(*eps);
                let mut dx = vec![T::ZERO; p * q];
                let mut dgamma = vec![T::ZERO; q];
                let mut dbeta = vec![T::ZERO; q];
                for i in 0..p {
                    let row = &xd[i * q..(i + 1) * q];
                    let grow = &g[i * q..(i + 1) * q];
                    let mean = row.iter().copied().sum::<T>() / qf;
                    let var = row
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<T>()
                        / qf;
                    let inv_std = T::ONE / (var + epst).sqrt();
                    let xhat: Vec<T> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                    let mut dxhat = vec![T::ZERO; q];
                    let mut sum_dxhat = T::ZERO;
                    let mut sum_dxhat_xhat = T::ZERO;
                    for j in 0..q {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        dxhat[j] = grow[j] * gd[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    for j in 0..q {
                        dx[i * q + j] =
                            inv_std / qf * (qf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                accumulate(&mut grads[input.0], &dx);
                accumulate(&mut grads[gamma.0], &dgamma);
                accumulate(&mut grads[beta.0], &dbeta);
            }

            Op::ConcatCols { parts } => {
                let out = self.value(NodeId(idx));
                let (rows, cols) = (out.rows(), out.cols());
                let mut offset = 0;
                for part in parts {
                    let pc = self.value(*part).cols();
                    let mut dp = vec![T::ZERO; rows * pc];
                    for i in 0..rows {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&g[i * cols + offset..i * cols + offset + pc]);
                    }
                    accumulate(&mut grads[part.0], &dp);
                    offset += pc;
                }
            }

            Op::Reshape { input } => {
                accumulate(&mut grads[input.0], g);
            }

            Op::AdaptivePool {
                input,
                out_h,
                out_w,
                mode,
            } => {
                let x = self.value(*input);
                let (m, n) = (x.rows(), x.cols());
                let xd = x.data();
                let mut dx = vec![T::ZERO; m * n];
                for i in 0..*out_h {
                    let (r0, r1) = pool_bin(i, m, *out_h);
                    for j in 0..*out_w {
                        let (c0, c1) = pool_bin(j, n, *out_w);
                        let go = g[i * out_w + j];
                        match mode {
                            PoolMode::Avg => {
                                let w = go / T::from_f64(((r1 - r0) * (c1 - c0)) as f64);
                                for r in r0..r1 {
                                    for c in c0..c1 {
                                        dx[r * n + c] += w;
                                    }
                                }
                            }
                            PoolMode::Max => {
                                let (mut br, mut bc) = (r0, c0);
                                for r in r0..r1 {
                                    for c in c0..c1 {
                                        if xd[r * n + c] > xd[br * n + bc] {
                                            br = r;
                                            bc = c;
                                        }
                                    }
                                }
                                dx[br * n + bc] += go;
                            }
                        }
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }

            Op::Sum { input } => {
                let g0 = g[0];
                for slot in grads[input.0].iter_mut() {
                    *slot += g0;
                }
            }

            Op::CrossEntropy { logits, label } => {
                let x = self.value(*logits).data();
                let mut max = x[0];
                for &v in x {
                    max = max.max(v);
                }
                let sum: T = x.iter().map(|&v| (v - max).exp()).sum();
                let g0 = g[0];
                let dl = &mut grads[logits.0];
                for (c, slot) in dl.iter_mut().enumerate() {
                    let p = (x[c] - max).exp() / sum;
                    let target = if c == *label { T::ONE } else { T::ZERO };
                    *slot += g0 * (p - target);
                }
            }
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Scalar>(target: &mut [T], src: &[T]) {
    debug_assert_eq!(target.len(), src.len());
    for (t, s) in target.iter_mut().zip(src) {
        *t += *s;
    }
}
