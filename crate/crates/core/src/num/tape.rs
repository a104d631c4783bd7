use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::{matmul_acc, transpose, Real, Tensor};
use super::{NumError, NumResult};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Stable identity of a tracked parameter, independent of any tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

enum Op<T: Real> {
    /// Leaf holding a constant or a tracked parameter.
    Leaf { param: Option<ParamId> },
    /// `alpha * a @ b`, optionally with `b` transposed.
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
        alpha: T,
    },
    /// Elementwise add, or row-broadcast bias add when `b` is `[n]`.
    Add { a: NodeId, b: NodeId },
    /// Elementwise product of same-shape tensors.
    Mul { a: NodeId, b: NodeId },
    /// Row softmax over a per-row live prefix; entries at or past the
    /// limit get probability 0.
    Softmax {
        x: NodeId,
        limits: Option<Arc<Vec<usize>>>,
    },
    /// Per-row layer normalization with learned gain and bias.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        // cached per-row (mean, inv_std) from forward
        stats: Vec<(f64, f64)>,
    },
    /// Tanh-approximation GELU.
    Gelu { x: NodeId },
    /// Select rows of `table` by index; duplicates accumulate in backward.
    GatherRows {
        table: NodeId,
        indices: Arc<Vec<usize>>,
    },
    /// Stack 2-D nodes with equal column counts on top of each other.
    ConcatRows { parts: Vec<NodeId> },
    /// Place 2-D nodes with equal row counts side by side.
    ConcatCols { parts: Vec<NodeId> },
    /// Contiguous column slice of a 2-D node.
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    /// Contiguous row slice of a 2-D node.
    SliceRows {
        x: NodeId,
        start: usize,
        len: usize,
    },
    /// Fused causal multi-head attention over a batch folded into rows:
    /// q/k/v are `[batch * n_tok, d_model]`, heads split the feature dim,
    /// and `limits` gives each row's attention prefix (shared across the
    /// batch). Softmaxed weights are cached for the backward pass.
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        n_tok: usize,
        limits: Arc<Vec<usize>>,
        att: Vec<T>,
    },
    /// Mean squared error over unmasked rows of `pred` against a constant
    /// target; scalar output. `live` counts the elements averaged over.
    MseMean {
        pred: NodeId,
        target: Tensor<T>,
        row_mask: Arc<Vec<bool>>,
        live: usize,
    },
}

struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Wengert tape: ops are recorded in execution order (parents always precede
/// children), values are computed eagerly, and `backward` replays the record
/// once in reverse.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradient of a scalar node with respect to every tracked parameter.
#[derive(Debug)]
pub struct Gradients<T: Real> {
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `p`; parameters the loss never touched get zeros.
    pub fn get(&self, p: ParamId, shape: &[usize]) -> Tensor<T> {
        self.by_param
            .get(&p)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
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

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> NodeId {
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

    /// Register a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf { param: None }, value, false)
    }

    /// Register a tracked parameter (cheap: the tensor buffer is shared).
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf { param: Some(id) }, value, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NumResult<NodeId> {
        self.matmul_opts(a, b, false, T::ONE)
    }

    /// `alpha * a @ b^T` when `trans_b`, used for attention logits.
    pub fn matmul_opts(
        &mut self,
        a: NodeId,
        b: NodeId,
        trans_b: bool,
        alpha: T,
    ) -> NumResult<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, ka) = (av.rows(), av.cols());
        let (kb, n) = if trans_b {
            (bv.cols(), bv.rows())
        } else {
            (bv.rows(), bv.cols())
        };
        if ka != kb {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                expected: vec![m, ka],
                got: bv.shape().to_vec(),
            });
        }
        let mut out = vec![T::ZERO; m * n];
        if trans_b {
            let bt = transpose(bv.data(), bv.rows(), bv.cols());
            matmul_acc(&mut out, av.data(), &bt, m, ka, n, alpha);
        } else {
            matmul_acc(&mut out, av.data(), bv.data(), m, ka, n, alpha);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                trans_b,
                alpha,
            },
            Tensor::new(vec![m, n], out)?,
            needs,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NumResult<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let bias = bv.shape().len() == 1 && av.shape().len() == 2 && bv.cols() == av.cols();
        if !bias && av.shape() != bv.shape() {
            return Err(NumError::ShapeMismatch {
                op: "add",
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let n = av.cols();
        let data = if bias {
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bv.data()[i % n])
                .collect()
        } else {
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| x + y)
                .collect()
        };
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, Tensor::new(shape, data)?, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NumResult<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NumError::ShapeMismatch {
                op: "mul",
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, Tensor::new(shape, data)?, needs))
    }

    /// Row softmax over the first `limits[i]` entries of each row (the
    /// causal/live prefix); the remainder gets probability 0. Without
    /// limits the full row participates. Sums accumulate in f64.
    pub fn softmax_rows(&mut self, x: NodeId, limits: Option<Arc<Vec<usize>>>) -> NumResult<NodeId> {
        let xv = self.value(x);
        let (rows, n) = (xv.rows(), xv.cols());
        if let Some(l) = &limits {
            if l.len() != rows || l.iter().any(|&v| v > n) {
                return Err(NumError::ShapeMismatch {
                    op: "softmax limits",
                    expected: vec![rows],
                    got: vec![l.len()],
                });
            }
        }
        let mut out = vec![T::ZERO; rows * n];
        for i in 0..rows {
            let limit = limits.as_ref().map_or(n, |l| l[i]);
            if limit == 0 {
                continue; // fully masked row: all zeros
            }
            let row = &xv.data()[i * n..i * n + limit];
            let orow = &mut out[i * n..i * n + limit];
            let mut max = row[0];
            for &v in &row[1..] {
                if v > max {
                    max = v;
                }
            }
            let mut sum = 0.0f64;
            for j in 0..limit {
                let e = (row[j] - max).exp_fast();
                orow[j] = e;
                sum += e.to_f64();
            }
            let inv = T::from_f64(1.0 / sum);
            for v in orow.iter_mut() {
                *v = *v * inv;
            }
        }
        let shape = xv.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Softmax { x, limits }, Tensor::new(shape, out)?, needs))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> NumResult<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let n = xv.cols();
        if gv.numel() != n || bv.numel() != n {
            return Err(NumError::ShapeMismatch {
                op: "layer_norm",
                expected: vec![n],
                got: gv.shape().to_vec(),
            });
        }
        let rows = xv.rows();
        let mut out = vec![T::ZERO; rows * n];
        let mut stats = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = &xv.data()[i * n..(i + 1) * n];
            let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
            let var = row
                .iter()
                .map(|v| {
                    let d = v.to_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            stats.push((mean, inv_std));
            for j in 0..n {
                let xh = (row[j].to_f64() - mean) * inv_std;
                out[i * n + j] =
                    T::from_f64(xh * gv.data()[j].to_f64() + bv.data()[j].to_f64());
            }
        }
        let shape = xv.shape().to_vec();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
            Tensor::new(shape, out)?,
            needs,
        ))
    }

    pub fn gelu(&mut self, x: NodeId) -> NumResult<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu_f(v)).collect();
        let shape = xv.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Gelu { x }, Tensor::new(shape, data)?, needs))
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: Arc<Vec<usize>>) -> NumResult<NodeId> {
        let tv = self.value(table);
        let (rows, n) = (tv.rows(), tv.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumError::InvalidTape(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices.iter() {
            out.extend_from_slice(&tv.data()[i * n..(i + 1) * n]);
        }
        let needs = self.needs(table);
        let shape = vec![indices.len(), n];
        Ok(self.push(
            Op::GatherRows { table, indices },
            Tensor::new(shape, out)?,
            needs,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NumResult<NodeId> {
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != n {
                return Err(NumError::ShapeMismatch {
                    op: "concat_rows",
                    expected: vec![pv.rows(), n],
                    got: pv.shape().to_vec(),
                });
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            Tensor::new(vec![rows, n], data)?,
            needs,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NumResult<NodeId> {
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(NumError::ShapeMismatch {
                    op: "concat_cols",
                    expected: vec![rows, pv.cols()],
                    got: pv.shape().to_vec(),
                });
            }
            total_cols += pv.cols();
        }
        let mut data = vec![T::ZERO; rows * total_cols];
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let n = pv.cols();
            for i in 0..rows {
                data[i * total_cols + offset..i * total_cols + offset + n]
                    .copy_from_slice(&pv.data()[i * n..(i + 1) * n]);
            }
            offset += n;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            Tensor::new(vec![rows, total_cols], data)?,
            needs,
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NumResult<NodeId> {
        let xv = self.value(x);
        let (rows, n) = (xv.rows(), xv.cols());
        if start + len > n {
            return Err(NumError::ShapeMismatch {
                op: "slice_cols",
                expected: vec![rows, n],
                got: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&xv.data()[i * n + start..i * n + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::SliceCols { x, start, len },
            Tensor::new(vec![rows, len], out)?,
            needs,
        ))
    }

    /// Fused scaled-dot-product attention: per sample and head, logits are
    /// `q_i . k_j / sqrt(head_dim)` over the causal/live prefix `limits[i]`,
    /// softmaxed and applied to v. Equivalent to composing slice, matmul
    /// and softmax primitives per head, but in one op.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        n_tok: usize,
        limits: Arc<Vec<usize>>,
    ) -> NumResult<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = (qv.rows(), qv.cols());
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() {
            return Err(NumError::ShapeMismatch {
                op: "attention",
                expected: qv.shape().to_vec(),
                got: kv.shape().to_vec(),
            });
        }
        if rows % n_tok != 0 || d % heads != 0 || limits.len() != n_tok {
            return Err(NumError::InvalidTape(format!(
                "attention geometry: rows {rows}, n_tok {n_tok}, d {d}, heads {heads}"
            )));
        }
        if limits.iter().enumerate().any(|(i, &l)| l > i + 1) {
            return Err(NumError::InvalidTape(
                "attention limits must respect causality".into(),
            ));
        }
        let batch = rows / n_tok;
        let hd = d / heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());

        let mut att = vec![T::ZERO; batch * heads * n_tok * n_tok];
        let mut out = vec![T::ZERO; rows * d];
        // per-head transposed copies keep every inner loop contiguous
        let mut kt = vec![T::ZERO; hd * n_tok];
        let mut vt = vec![T::ZERO; hd * n_tok];
        for b in 0..batch {
            let base = b * n_tok;
            for h in 0..heads {
                let col = h * hd;
                for j in 0..n_tok {
                    let krow = &kv.data()[(base + j) * d + col..(base + j) * d + col + hd];
                    let vrow = &vv.data()[(base + j) * d + col..(base + j) * d + col + hd];
                    for c in 0..hd {
                        kt[c * n_tok + j] = krow[c];
                        vt[c * n_tok + j] = vrow[c];
                    }
                }
                for i in 0..n_tok {
                    let limit = limits[i];
                    if limit == 0 {
                        continue;
                    }
                    let qrow = &qv.data()[(base + i) * d + col..(base + i) * d + col + hd];
                    let arow = &mut att[((b * heads + h) * n_tok + i) * n_tok..][..limit];
                    // logits: wide accumulation over the prefix
                    for c in 0..hd {
                        let qc = scale * qrow[c];
                        let krow = &kt[c * n_tok..c * n_tok + limit];
                        for j in 0..limit {
                            arow[j] = arow[j] + qc * krow[j];
                        }
                    }
                    // softmax over the prefix, sum in f64
                    let mut max = arow[0];
                    for &s in &arow[1..] {
                        if s > max {
                            max = s;
                        }
                    }
                    let mut sum = 0.0f64;
                    for a in arow.iter_mut() {
                        *a = (*a - max).exp_fast();
                        sum += a.to_f64();
                    }
                    let inv = T::from_f64(1.0 / sum);
                    for a in arow.iter_mut() {
                        *a = *a * inv;
                    }
                    let orow = &mut out[(base + i) * d + col..(base + i) * d + col + hd];
                    for c in 0..hd {
                        orow[c] = dot(arow, &vt[c * n_tok..c * n_tok + limit]);
                    }
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            Op::Attention {
                q,
                k,
                v,
                heads,
                n_tok,
                limits,
                att,
            },
            Tensor::new(vec![rows, d], out)?,
            needs,
        ))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NumResult<NodeId> {
        let xv = self.value(x);
        let (rows, n) = (xv.rows(), xv.cols());
        if start + len > rows {
            return Err(NumError::ShapeMismatch {
                op: "slice_rows",
                expected: vec![rows, n],
                got: vec![start, len],
            });
        }
        let data = xv.data()[start * n..(start + len) * n].to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Op::SliceRows { x, start, len },
            Tensor::new(vec![len, n], data)?,
            needs,
        ))
    }

    /// Mean squared error between `pred` and a constant `target` over rows
    /// where `row_mask` is true. Scalar node; sum accumulates in f64.
    pub fn mse_mean(
        &mut self,
        pred: NodeId,
        target: Tensor<T>,
        row_mask: Arc<Vec<bool>>,
    ) -> NumResult<NodeId> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || row_mask.len() != pv.rows() {
            return Err(NumError::ShapeMismatch {
                op: "mse",
                expected: pv.shape().to_vec(),
                got: target.shape().to_vec(),
            });
        }
        let (rows, n) = (pv.rows(), pv.cols());
        let live = row_mask.iter().filter(|&&m| m).count() * n;
        if live == 0 {
            return Err(NumError::InvalidTape(
                "mse over an entirely masked target".into(),
            ));
        }
        let mut sum = 0.0f64;
        for i in 0..rows {
            if !row_mask[i] {
                continue;
            }
            for j in 0..n {
                let d = pv.data()[i * n + j].to_f64() - target.data()[i * n + j].to_f64();
                sum += d * d;
            }
        }
        let value = Tensor::scalar(T::from_f64(sum / live as f64));
        let needs = self.needs(pred);
        Ok(self.push(
            Op::MseMean {
                pred,
                target,
                row_mask,
                live,
            },
            value,
            needs,
        ))
    }

    /// Reverse pass from a scalar `loss` node with upstream seed 1.
    pub fn backward(&self, loss: NodeId) -> NumResult<Gradients<T>> {
        self.backward_seeded(loss, T::ONE)
    }

    /// Reverse pass with an explicit upstream seed (used to weight per-sample
    /// losses inside a batch). Visits each node exactly once.
    pub fn backward_seeded(&self, loss: NodeId, seed: T) -> NumResult<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        self.validate()?;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.accumulate_parents(idx, &gout, &mut grads);
            if let Op::Leaf { param: Some(_) } = self.nodes[idx].op {
                grads[idx] = Some(gout); // keep for collection
            }
        }

        let mut by_param = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = grads[idx].take() {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    by_param.insert(pid, t);
                }
            }
        }
        Ok(Gradients { by_param })
    }

    /// Parents must precede children; anything else is a structural defect.
    fn validate(&self) -> NumResult<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            let ok = match &node.op {
                Op::Leaf { .. } => true,
                Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => {
                    a.0 < idx && b.0 < idx
                }
                Op::Softmax { x, .. }
                | Op::Gelu { x }
                | Op::SliceCols { x, .. }
                | Op::SliceRows { x, .. } => x.0 < idx,
                Op::LayerNorm { x, gain, bias, .. } => x.0 < idx && gain.0 < idx && bias.0 < idx,
                Op::GatherRows { table, .. } => table.0 < idx,
                Op::ConcatRows { parts } | Op::ConcatCols { parts } => {
                    parts.iter().all(|p| p.0 < idx)
                }
                Op::Attention { q, k, v, .. } => q.0 < idx && k.0 < idx && v.0 < idx,
                Op::MseMean { pred, .. } => pred.0 < idx,
            };
            if !ok {
                return Err(NumError::InvalidTape(format!(
                    "node {idx} depends on a node at or after itself"
                )));
            }
        }
        Ok(())
    }

    fn accumulate_parents(&self, idx: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let add_into = |target: &mut Option<Vec<T>>, numel: usize, f: &mut dyn FnMut(&mut [T])| {
            let buf = target.get_or_insert_with(|| vec![T::ZERO; numel]);
            f(buf);
        };

        match &self.nodes[idx].op {
            Op::Leaf { .. } => {}
            Op::MatMul {
                a,
                b,
                trans_b,
                alpha,
            } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = if *trans_b { bv.rows() } else { bv.cols() };
                if self.needs(*a) {
                    // dA = alpha * dC @ B^T  (or dC @ B when b was transposed)
                    add_into(&mut grads[a.0], m * k, &mut |buf| {
                        if *trans_b {
                            matmul_acc(buf, gout, bv.data(), m, n, k, *alpha);
                        } else {
                            let bt = transpose(bv.data(), k, n);
                            matmul_acc(buf, gout, &bt, m, n, k, *alpha);
                        }
                    });
                }
                if self.needs(*b) {
                    add_into(&mut grads[b.0], bv.numel(), &mut |buf| {
                        if *trans_b {
                            // C = alpha A B^T  =>  dB = alpha dC^T @ A
                            let gt = transpose(gout, m, n);
                            matmul_acc(buf, &gt, av.data(), n, m, k, *alpha);
                        } else {
                            // dB = alpha A^T @ dC
                            let at = transpose(av.data(), m, k);
                            matmul_acc(buf, &at, gout, k, m, n, *alpha);
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    add_into(&mut grads[a.0], av.numel(), &mut |buf| {
                        for (g, &v) in buf.iter_mut().zip(gout) {
                            *g = *g + v;
                        }
                    });
                }
                if self.needs(*b) {
                    let n = bv.numel();
                    add_into(&mut grads[b.0], n, &mut |buf| {
                        if n == gout.len() {
                            for (g, &v) in buf.iter_mut().zip(gout) {
                                *g = *g + v;
                            }
                        } else {
                            // bias broadcast: sum over rows
                            for (i, &v) in gout.iter().enumerate() {
                                buf[i % n] = buf[i % n] + v;
                            }
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    add_into(&mut grads[a.0], av.numel(), &mut |buf| {
                        for ((g, &v), &y) in buf.iter_mut().zip(gout).zip(bv.data()) {
                            *g = *g + v * y;
                        }
                    });
                }
                if self.needs(*b) {
                    add_into(&mut grads[b.0], bv.numel(), &mut |buf| {
                        for ((g, &v), &x) in buf.iter_mut().zip(gout).zip(av.data()) {
                            *g = *g + v * x;
                        }
                    });
                }
            }
            Op::Softmax { x, limits } => {
                if self.needs(*x) {
                    let yv = self.value(NodeId(idx));
                    let (rows, n) = (yv.rows(), yv.cols());
                    add_into(&mut grads[x.0], rows * n, &mut |buf| {
                        for i in 0..rows {
                            let limit = limits.as_ref().map_or(n, |l| l[i]);
                            if limit == 0 {
                                continue;
                            }
                            let y = &yv.data()[i * n..i * n + limit];
                            let go = &gout[i * n..i * n + limit];
                            let mut dot = 0.0f64;
                            for j in 0..limit {
                                dot += (y[j] * go[j]).to_f64();
                            }
                            let dot = T::from_f64(dot);
                            let brow = &mut buf[i * n..i * n + limit];
                            for j in 0..limit {
                                brow[j] = brow[j] + y[j] * (go[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
                ..
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (rows, n) = (xv.rows(), xv.cols());
                if self.needs(*gain) {
                    add_into(&mut grads[gain.0], n, &mut |buf| {
                        for i in 0..rows {
                            let (mean, inv_std) = stats[i];
                            for j in 0..n {
                                let xh = (xv.data()[i * n + j].to_f64() - mean) * inv_std;
                                buf[j] = buf[j] + T::from_f64(gout[i * n + j].to_f64() * xh);
                            }
                        }
                    });
                }
                if self.needs(*bias) {
                    add_into(&mut grads[bias.0], n, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..n {
                                buf[j] = buf[j] + gout[i * n + j];
                            }
                        }
                    });
                }
                if self.needs(*x) {
                    add_into(&mut grads[x.0], rows * n, &mut |buf| {
                        for i in 0..rows {
                            let (mean, inv_std) = stats[i];
                            let mut sum_g = 0.0f64;
                            let mut sum_gx = 0.0f64;
                            for j in 0..n {
                                let go = gout[i * n + j].to_f64() * gv.data()[j].to_f64();
                                let xh = (xv.data()[i * n + j].to_f64() - mean) * inv_std;
                                sum_g += go;
                                sum_gx += go * xh;
                            }
                            let inv_n = 1.0 / n as f64;
                            for j in 0..n {
                                let go = gout[i * n + j].to_f64() * gv.data()[j].to_f64();
                                let xh = (xv.data()[i * n + j].to_f64() - mean) * inv_std;
                                let v = (go - sum_g * inv_n - xh * sum_gx * inv_n) * inv_std;
                                buf[i * n + j] = buf[i * n + j] + T::from_f64(v);
                            }
                        }
                    });
                }
            }
            Op::Gelu { x } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    add_into(&mut grads[x.0], xv.numel(), &mut |buf| {
                        for (i, &g) in gout.iter().enumerate() {
                            buf[i] = buf[i] + g * gelu_df(xv.data()[i]);
                        }
                    });
                }
            }
            Op::GatherRows { table, indices } => {
                if self.needs(*table) {
                    let tv = self.value(*table);
                    let n = tv.cols();
                    add_into(&mut grads[table.0], tv.numel(), &mut |buf| {
                        for (out_row, &src) in indices.iter().enumerate() {
                            for j in 0..n {
                                buf[src * n + j] = buf[src * n + j] + gout[out_row * n + j];
                            }
                        }
                    });
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pn = self.value(p).numel();
                    if self.needs(p) {
                        let slice = &gout[offset..offset + pn];
                        add_into(&mut grads[p.0], pn, &mut |buf| {
                            for (g, &v) in buf.iter_mut().zip(slice) {
                                *g = *g + v;
                            }
                        });
                    }
                    offset += pn;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = self.value(parts[0]).rows();
                let total_cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).cols();
                    if self.needs(p) {
                        add_into(&mut grads[p.0], rows * n, &mut |buf| {
                            for i in 0..rows {
                                for j in 0..n {
                                    buf[i * n + j] =
                                        buf[i * n + j] + gout[i * total_cols + offset + j];
                                }
                            }
                        });
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let (rows, n) = (xv.rows(), xv.cols());
                    add_into(&mut grads[x.0], rows * n, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..*len {
                                buf[i * n + start + j] =
                                    buf[i * n + start + j] + gout[i * len + j];
                            }
                        }
                    });
                }
            }
            Op::SliceRows { x, start, len } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let (rows, n) = (xv.rows(), xv.cols());
                    add_into(&mut grads[x.0], rows * n, &mut |buf| {
                        let dst = &mut buf[start * n..(start + len) * n];
                        for (g, &v) in dst.iter_mut().zip(gout) {
                            *g = *g + v;
                        }
                    });
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                n_tok,
                limits,
                att,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let rows = qv.rows();
                let d = qv.cols();
                let batch = rows / n_tok;
                let hd = d / heads;
                let scale = T::from_f64(1.0 / (hd as f64).sqrt());
                let numel = rows * d;

                // ensure all three grad buffers exist, then fill in one sweep
                for &p in [q, k, v].iter() {
                    if self.needs(*p) && grads[p.0].is_none() {
                        grads[p.0] = Some(vec![T::ZERO; numel]);
                    }
                }
                let nt = *n_tok;
                let mut datt = vec![T::ZERO; nt];
                let mut ds = vec![T::ZERO; nt];
                // transposed per-head scratch, reused across (batch, head)
                let mut kt = vec![T::ZERO; hd * nt];
                let mut vt = vec![T::ZERO; hd * nt];
                let mut dkt = vec![T::ZERO; hd * nt];
                let mut dvt = vec![T::ZERO; hd * nt];
                for b in 0..batch {
                    let base = b * nt;
                    for h in 0..*heads {
                        let col = h * hd;
                        for j in 0..nt {
                            let krow =
                                &kv.data()[(base + j) * d + col..(base + j) * d + col + hd];
                            let vrow =
                                &vv.data()[(base + j) * d + col..(base + j) * d + col + hd];
                            for c in 0..hd {
                                kt[c * nt + j] = krow[c];
                                vt[c * nt + j] = vrow[c];
                            }
                        }
                        dkt.fill(T::ZERO);
                        dvt.fill(T::ZERO);
                        for i in 0..nt {
                            let limit = limits[i];
                            if limit == 0 {
                                continue;
                            }
                            let arow = &att[((b * heads + h) * nt + i) * nt..][..limit];
                            let gorow = &gout[(base + i) * d + col..(base + i) * d + col + hd];

                            // d(att): wide accumulation over the prefix
                            datt[..limit].fill(T::ZERO);
                            for c in 0..hd {
                                let gc = gorow[c];
                                let vrow = &vt[c * nt..c * nt + limit];
                                let drow = &mut datt[..limit];
                                for j in 0..limit {
                                    drow[j] = drow[j] + gc * vrow[j];
                                }
                            }
                            // softmax backward over the prefix
                            let mut sdot = 0.0f64;
                            for j in 0..limit {
                                sdot += (arow[j] * datt[j]).to_f64();
                            }
                            let sdot = T::from_f64(sdot);
                            for j in 0..limit {
                                ds[j] = scale * (arow[j] * (datt[j] - sdot));
                            }

                            if self.needs(*v) {
                                for c in 0..hd {
                                    let gc = gorow[c];
                                    let dvrow = &mut dvt[c * nt..c * nt + limit];
                                    for j in 0..limit {
                                        dvrow[j] = dvrow[j] + gc * arow[j];
                                    }
                                }
                            }
                            if self.needs(*q) {
                                let gq = grads[q.0].as_mut().expect("q grad buffer");
                                let gqrow =
                                    &mut gq[(base + i) * d + col..(base + i) * d + col + hd];
                                for c in 0..hd {
                                    gqrow[c] =
                                        gqrow[c] + dot(&ds[..limit], &kt[c * nt..c * nt + limit]);
                                }
                            }
                            if self.needs(*k) {
                                let qrow = &qv.data()
                                    [(base + i) * d + col..(base + i) * d + col + hd];
                                for c in 0..hd {
                                    let qc = qrow[c];
                                    let dkrow = &mut dkt[c * nt..c * nt + limit];
                                    for j in 0..limit {
                                        dkrow[j] = dkrow[j] + qc * ds[j];
                                    }
                                }
                            }
                        }
                        // scatter the transposed accumulators back
                        if self.needs(*v) {
                            let gv = grads[v.0].as_mut().expect("v grad buffer");
                            for j in 0..nt {
                                let gvrow =
                                    &mut gv[(base + j) * d + col..(base + j) * d + col + hd];
                                for c in 0..hd {
                                    gvrow[c] = gvrow[c] + dvt[c * nt + j];
                                }
                            }
                        }
                        if self.needs(*k) {
                            let gk = grads[k.0].as_mut().expect("k grad buffer");
                            for j in 0..nt {
                                let gkrow =
                                    &mut gk[(base + j) * d + col..(base + j) * d + col + hd];
                                for c in 0..hd {
                                    gkrow[c] = gkrow[c] + dkt[c * nt + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::MseMean {
                pred,
                target,
                row_mask,
                live,
            } => {
                if self.needs(*pred) {
                    let pv = self.value(*pred);
                    let (rows, n) = (pv.rows(), pv.cols());
                    let scale = gout[0].to_f64() * 2.0 / *live as f64;
                    add_into(&mut grads[pred.0], rows * n, &mut |buf| {
                        for i in 0..rows {
                            if !row_mask[i] {
                                continue;
                            }
                            for j in 0..n {
                                let d = pv.data()[i * n + j].to_f64()
                                    - target.data()[i * n + j].to_f64();
                                buf[i * n + j] = buf[i * n + j] + T::from_f64(scale * d);
                            }
                        }
                    });
                }
            }
        }
    }
}

/// Dot product with eight fixed accumulation chains (deterministic order,
/// vectorizable without reassociation).
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len();
    let n8 = n - n % 8;
    let mut s = [T::ZERO; 8];
    let mut i = 0;
    while i < n8 {
        let av = &a[i..i + 8];
        let bv = &b[i..i + 8];
        for c in 0..8 {
            s[c] = s[c] + av[c] * bv[c];
        }
        i += 8;
    }
    let mut tail = T::ZERO;
    while i < n {
        tail = tail + a[i] * b[i];
        i += 1;
    }
    let q0 = (s[0] + s[1]) + (s[2] + s[3]);
    let q1 = (s[4] + s[5]) + (s[6] + s[7]);
    (q0 + q1) + tail
}

fn gelu_f<T: Real>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let half = T::from_f64(0.5);
    let k = T::from_f64(0.044715);
    half * x * (T::ONE + (c * (x + k * x * x * x)).tanh_fast())
}

fn gelu_df<T: Real>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let half = T::from_f64(0.5);
    let k = T::from_f64(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh_fast();
    let du = c * (T::ONE + T::from_f64(3.0 * 0.044715) * x * x);
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(tape: &mut Tape<f64>, v: f64) -> NodeId {
        tape.param(ParamId(0), Tensor::scalar(v))
    }

    #[test]
    fn square_has_gradient_two_x() {
        // f(x) = x^2 via mul, x = 3 -> df/dx = 6
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 3.0);
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0), &[1]).data()[0], 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut tape = Tape::new();
        let _x = scalar_param(&mut tape, 3.0);
        let c = tape.constant(Tensor::scalar(7.0));
        let c2 = tape.constant(Tensor::scalar(1.0));
        let y = tape.mul(c, c2).unwrap();
        let g = tape.backward(y).unwrap();
        // untouched parameter falls back to zeros
        assert_eq!(g.get(ParamId(0), &[1]).data()[0], 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(ParamId(0), Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, NumError::NonScalarLoss { .. }));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let y = tape.softmax_rows(x, None).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[3] + v[4] + v[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn limited_softmax_zeroes_the_tail() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 5.0, 1.0, 1.0, 1.0]).unwrap());
        let limits = Arc::new(vec![2usize, 0]);
        let y = tape.softmax_rows(x, Some(limits)).unwrap();
        let v = tape.value(y).data().to_vec();
        // row 0: softmax over the first two entries only
        assert_eq!(v[2], 0.0);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
        let expect = (1.0f64).exp() / ((1.0f64).exp() + (2.0f64).exp());
        assert!((v[0] - expect).abs() < 1e-12);
        // row 1 fully masked
        assert_eq!(&v[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gather_rows_accumulates_duplicates_in_backward() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(
            ParamId(0),
            Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        );
        let picked = tape
            .gather_rows(table, Arc::new(vec![1, 1, 0]))
            .unwrap();
        let target = Tensor::zeros(&[3, 2]);
        let loss = tape
            .mse_mean(picked, target, Arc::new(vec![true, true, true]))
            .unwrap();
        let g = tape.backward(loss).unwrap();
        let gt = g.get(ParamId(0), &[3, 2]);
        // row 1 selected twice: gradient contributions accumulate
        let expected_row1 = 2.0 * (2.0 / 6.0) * 3.0;
        assert!((gt.data()[2] - expected_row1).abs() < 1e-12);
        // row 2 never selected
        assert_eq!(gt.data()[4], 0.0);
        assert_eq!(gt.data()[5], 0.0);
    }
}
