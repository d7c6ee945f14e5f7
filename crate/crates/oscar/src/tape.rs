//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Tape`] records every operation of one forward pass; node ids are
//! indices into the tape, so inputs always precede the operations that
//! consume them and a single reverse sweep visits each node exactly once.
//! The tape is rebuilt from scratch for every forward pass: no graph
//! caching, no in-place mutation of any input buffer.
//!
//! [`finite_diff_grad`] is the independent gradient oracle used by the
//! test suites; it only ever calls the forward closure and never looks at
//! tape gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddConst { a: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Transpose { a: NodeId },
    SliceCols { a: NodeId, start: usize },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    GatherRows { a: NodeId, indices: Vec<usize> },
    AddRow { a: NodeId, row: NodeId },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    Gelu { a: NodeId },
    Softmax { a: NodeId, axis: usize },
    // the allow matrix is not stored: masked entries come out of the
    // forward pass with probability exactly 0, which already zeroes
    // their backward contribution
    MaskedSoftmaxRows { a: NodeId },
    CrossEntropySoft { logits: NodeId, targets: Vec<f64> },
    BceWithLogitsMean { logits: NodeId, targets: Vec<f64> },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Additive penalty for disallowed attention entries. exp() of any score
/// this far below the row max underflows to exactly 0.0 in f64, so masked
/// entries contribute nothing to forward or backward, bit-exactly.
const MASK_NEG: f64 = -1.0e9;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    /// Gradient of the last `backward` target w.r.t. this node, if backward ran.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let t = self.value(id);
        debug_assert_eq!(t.numel(), 1);
        t.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite op output");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        id
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }))
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x + c).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::AddConst { a })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "mul {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale { a, c })
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::Shape(format!("transpose rank {}", ta.rank())));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { a }))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.rank() != 2 || start + width > ta.cols() || width == 0 {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of {:?}",
                start + width,
                ta.shape()
            )));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&ta.data()[i * c + start..i * c + start + width]);
        }
        Ok(self.push(Tensor::new(vec![r, width], out)?, Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of nothing".into()));
        }
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != r {
                return Err(Error::Shape("concat_cols row mismatch".into()));
            }
            total += t.cols();
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = self.value(p);
                out.extend_from_slice(t.row(i));
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, total], out)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of nothing".into()));
        }
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != c {
                return Err(Error::Shape("concat_rows col mismatch".into()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Tensor::new(vec![rows, c], data)?,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Row gather from a rank-2 table; doubles as embedding lookup.
    /// Backward scatter-adds, so repeated indices accumulate.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::Shape(format!("gather_rows rank {}", ta.rank())));
        }
        let (n, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(indices.len() * c);
        for &idx in indices {
            if idx >= n {
                return Err(Error::Vocab(format!("row id {idx} out of range (table {n})")));
            }
            out.extend_from_slice(ta.row(idx));
        }
        Ok(self.push(
            Tensor::new(vec![indices.len(), c], out)?,
            Op::GatherRows {
                a,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Broadcast-add a length-C vector to every row of an R x C matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (ta, tr) = (self.value(a), self.value(row));
        if ta.rank() != 2 || tr.numel() != ta.cols() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                ta.shape(),
                tr.shape()
            )));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tr.data()[i % c])
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow { a, row }))
    }

    /// Row-wise layer normalization with affine parameters.
    /// Variance is the biased (1/C) estimate; eps is added to the variance.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (ta, tg, tb) = (self.value(a), self.value(gamma), self.value(beta));
        if ta.rank() != 2 || tg.numel() != ta.cols() || tb.numel() != ta.cols() {
            return Err(Error::Shape(format!(
                "layer_norm {:?} gamma {:?} beta {:?}",
                ta.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = ta.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                let y = (row[j] - mean) * inv_std;
                out[i * c + j] = tg.data()[j] * y + tb.data()[j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::LayerNorm { a, gamma, beta, eps },
        ))
    }

    /// Exact-erf GELU: x * Phi(x) with Phi the standard normal CDF.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * norm_cdf(x)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Gelu { a })
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if axis >= ta.rank() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} on rank {}",
                ta.rank()
            )));
        }
        let out = softmax_along(ta.data(), ta.shape(), axis);
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, axis }))
    }

    /// Row-wise softmax where disallowed entries first receive an additive
    /// -1e9(see [`MASK_NEG`]), which zeroes them out exactly.
    pub fn masked_softmax_rows(&mut self, a: NodeId, allow: Arc<Vec<bool>>) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.rank() != 2 || allow.len() != ta.numel() {
            return Err(Error::Shape(format!(
                "masked softmax {:?} with {} mask entries",
                ta.shape(),
                allow.len()
            )));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = ta.row(i);
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                let s = row[j] + if allow[i * c + j] { 0.0 } else { MASK_NEG };
                if s > max {
                    max = s;
                }
            }
            let mut sum = 0.0;
            for j in 0..c {
                let s = row[j] + if allow[i * c + j] { 0.0 } else { MASK_NEG };
                let e = (s - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::MaskedSoftmaxRows { a },
        ))
    }

    /// -sum(targets * log softmax(logits)) over a flat logits vector.
    /// One-hot targets reduce this to the negative log-likelihood.
    pub fn cross_entropy_soft(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let tl = self.value(logits);
        if tl.numel() != targets.len() {
            return Err(Error::Shape(format!(
                "cross entropy: {} logits vs {} targets",
                tl.numel(),
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::NonFinite("cross entropy targets".into()));
        }
        let x = tl.data();
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss: f64 = targets
            .iter()
            .zip(x)
            .map(|(t, v)| t * (lse - v))
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropySoft {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean over elements of the binary cross entropy between
    /// sigmoid(logit_i) and target_i, computed in the numerically
    /// stable softplus form.
    pub fn bce_with_logits_mean(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let tl = self.value(logits);
        if tl.numel() != targets.len() {
            return Err(Error::Shape(format!(
                "bce: {} logits vs {} targets",
                tl.numel(),
                targets.len()
            )));
        }
        let n = targets.len() as f64;
        let loss: f64 = tl
            .data()
            .iter()
            .zip(targets)
            .map(|(&l, &t)| l.max(0.0) - l * t + (1.0 + (-l.abs()).exp()).ln())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogitsMean {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll { a })
    }

    /// Reverse accumulation from a scalar loss. After this call every node
    /// carries a gradient; leaves not connected to the loss hold zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward target has {} elements, expected scalar",
                self.value(loss).numel()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|nd| vec![0.0; nd.value.numel()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..n).rev() {
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let ta = &self.nodes[a.0].value;
                    let tb = &self.nodes[b.0].value;
                    let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                    // dA = dC * B^T
                    let da = matmul_nt(&g, tb.data(), m, nn, k);
                    // dB = A^T * dC
                    let db = matmul_tn(ta.data(), &g, m, k, nn);
                    axpy(&mut grads[a.0], &da);
                    axpy(&mut grads[b.0], &db);
                }
                Op::Add { a, b } => {
                    axpy(&mut grads[a.0], &g);
                    axpy(&mut grads[b.0], &g);
                }
                Op::AddConst { a } => axpy(&mut grads[a.0], &g),
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(gi, bi)| gi * bi)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(gi, ai)| gi * ai)
                        .collect();
                    axpy(&mut grads[a.0], &da);
                    axpy(&mut grads[b.0], &db);
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    axpy(&mut grads[a.0], &da);
                }
                Op::Transpose { a } => {
                    let ta = &self.nodes[a.0].value;
                    let (r, c) = (ta.rows(), ta.cols());
                    // out is c x r; transpose g back to r x c
                    let mut da = vec![0.0; r * c];
                    for i2 in 0..c {
                        for j2 in 0..r {
                            da[j2 * c + i2] = g[i2 * r + j2];
                        }
                    }
                    axpy(&mut grads[a.0], &da);
                }
                Op::SliceCols { a, start } => {
                    let ta = &self.nodes[a.0].value;
                    let c = ta.cols();
                    let width = self.nodes[i].value.cols();
                    let ga = &mut grads[a.0];
                    for r2 in 0..ta.rows() {
                        for j2 in 0..width {
                            ga[r2 * c + start + j2] += g[r2 * width + j2];
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let r = self.nodes[i].value.rows();
                    let total = self.nodes[i].value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.cols();
                        let gp = &mut grads[p.0];
                        for r2 in 0..r {
                            for j2 in 0..pc {
                                gp[r2 * pc + j2] += g[r2 * total + offset + j2];
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let pn = self.nodes[p.0].value.numel();
                        axpy(&mut grads[p.0], &g[offset..offset + pn]);
                        offset += pn;
                    }
                }
                Op::GatherRows { a, indices } => {
                    let indices = indices.clone();
                    let c = self.nodes[a.0].value.cols();
                    let ga = &mut grads[a.0];
                    for (k2, &idx) in indices.iter().enumerate() {
                        for j2 in 0..c {
                            ga[idx * c + j2] += g[k2 * c + j2];
                        }
                    }
                }
                Op::AddRow { a, row } => {
                    let (a, row) = (*a, *row);
                    let c = self.nodes[a.0].value.cols();
                    axpy(&mut grads[a.0], &g);
                    let gr = &mut grads[row.0];
                    for (idx, gi) in g.iter().enumerate() {
                        gr[idx % c] += gi;
                    }
                }
                Op::LayerNorm { a, gamma, beta, eps } => {
                    let (a, gamma, beta, eps) = (*a, *gamma, *beta, *eps);
                    let ta = &self.nodes[a.0].value;
                    let tg = &self.nodes[gamma.0].value;
                    let (r, c) = (ta.rows(), ta.cols());
                    let cf = c as f64;
                    let mut da = vec![0.0; r * c];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for i2 in 0..r {
                        let row = ta.row(i2);
                        let mean = row.iter().sum::<f64>() / cf;
                        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cf;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j2 in 0..c {
                            let y = (row[j2] - mean) * inv_std;
                            let gj = g[i2 * c + j2] * tg.data()[j2];
                            dgamma[j2] += g[i2 * c + j2] * y;
                            dbeta[j2] += g[i2 * c + j2];
                            m1 += gj;
                            m2 += gj * y;
                        }
                        m1 /= cf;
                        m2 /= cf;
                        for j2 in 0..c {
                            let y = (row[j2] - mean) * inv_std;
                            let gj = g[i2 * c + j2] * tg.data()[j2];
                            da[i2 * c + j2] = (gj - m1 - y * m2) * inv_std;
                        }
                    }
                    axpy(&mut grads[a.0], &da);
                    axpy(&mut grads[gamma.0], &dgamma);
                    axpy(&mut grads[beta.0], &dbeta);
                }
                Op::Gelu { a } => {
                    let a = *a;
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(gi, &x)| gi * (norm_cdf(x) + x * norm_pdf(x)))
                        .collect();
                    axpy(&mut grads[a.0], &da);
                }
                Op::Softmax { a, axis } => {
                    let (a, axis) = (*a, *axis);
                    let y = &self.nodes[i].value;
                    let da = softmax_backward_along(&g, y.data(), y.shape(), axis);
                    axpy(&mut grads[a.0], &da);
                }
                Op::MaskedSoftmaxRows { a } => {
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut da = vec![0.0; r * c];
                    for i2 in 0..r {
                        let mut dot = 0.0;
                        for j2 in 0..c {
                            dot += g[i2 * c + j2] * y.data()[i2 * c + j2];
                        }
                        for j2 in 0..c {
                            let yj = y.data()[i2 * c + j2];
                            da[i2 * c + j2] = yj * (g[i2 * c + j2] - dot);
                        }
                    }
                    axpy(&mut grads[a.0], &da);
                }
                Op::CrossEntropySoft { logits, targets } => {
                    let logits = *logits;
                    let targets = targets.clone();
                    let x = self.nodes[logits.0].value.data();
                    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
                    let tsum: f64 = targets.iter().sum();
                    let gl = &mut grads[logits.0];
                    for (j2, &v) in x.iter().enumerate() {
                        let p = (v - max).exp() / sum;
                        gl[j2] += g[0] * (tsum * p - targets[j2]);
                    }
                }
                Op::BceWithLogitsMean { logits, targets } => {
                    let logits = *logits;
                    let targets = targets.clone();
                    let x = self.nodes[logits.0].value.data();
                    let n = targets.len() as f64;
                    let gl = &mut grads[logits.0];
                    for (j2, (&l, &t)) in x.iter().zip(&targets).enumerate() {
                        gl[j2] += g[0] * (sigmoid(l) - t) / n;
                    }
                }
                Op::SumAll { a } => {
                    let ga = &mut grads[a.0];
                    for v in ga.iter_mut() {
                        *v += g[0];
                    }
                }
                Op::MeanAll { a } => {
                    let num = self.nodes[a.0].value.numel() as f64;
                    let ga = &mut grads[a.0];
                    for v in ga.iter_mut() {
                        *v += g[0] / num;
                    }
                }
            }
            grads[i] = g;
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            let shape = node.value.shape().to_vec();
            node.grad = Some(Tensor::new(shape, g).expect("grad shape"));
        }
        Ok(())
    }
}

fn axpy(acc: &mut [f64], add: &[f64]) {
    debug_assert_eq!(acc.len(), add.len());
    for (a, b) in acc.iter_mut().zip(add) {
        *a += b;
    }
}

/// C[m,n] = A[m,k] * B[k,n]
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

/// C[m,k] = A[m,n] * B[k,n]^T
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            let mut s = 0.0;
            for p in 0..n {
                s += a[i * n + p] * b[j * n + p];
            }
            c[i * k + j] = s;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for p in 0..m {
        for i in 0..k {
            let av = a[p * k + i];
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

fn softmax_along(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for ii in 0..inner {
            let base = o * len * inner + ii;
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(data[base + l * inner]);
            }
            let mut sum = 0.0;
            for l in 0..len {
                let e = (data[base + l * inner] - max).exp();
                out[base + l * inner] = e;
                sum += e;
            }
            for l in 0..len {
                out[base + l * inner] /= sum;
            }
        }
    }
    out
}

fn softmax_backward_along(g: &[f64], y: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut da = vec![0.0; y.len()];
    for o in 0..outer {
        for ii in 0..inner {
            let base = o * len * inner + ii;
            let mut dot = 0.0;
            for l in 0..len {
                dot += g[base + l * inner] * y[base + l * inner];
            }
            for l in 0..len {
                let idx = base + l * inner;
                da[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    da
}

/// Central-difference gradients of `f` w.r.t. every coordinate of every
/// parameter: (f(p+eps) - f(p-eps)) / (2 eps). `f` must be deterministic
/// given its parameters. This is the test oracle; it never touches tape
/// gradients.
pub fn finite_diff_grad<F>(f: F, params: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = vec![0.0; params[pi].numel()];
        for ci in 0..params[pi].numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[ci] += eps;
            let fp = f(&plus)?;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[ci] -= eps;
            let fm = f(&minus)?;
            g[ci] = (fp - fm) / (2.0 * eps);
        }
        grads.push(Tensor::new(params[pi].shape().to_vec(), g)?);
    }
    Ok(grads)
}

/// Worst relative error between two gradients, with an absolute floor of
/// 1e-3 in the denominator so near-zero coordinates are compared on an
/// absolute scale (|a-n| < tol * 1e-3).
pub fn grad_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
