//! Reverse-mode differentiation on a linear tape.
//!
//! Each primitive records its inputs and output value; replaying adjoints in
//! reverse order populates gradients for every reachable leaf exactly once.
//! Only first-order derivatives are supported; a second backward pass from
//! the same tape is an explicit error outside test mode.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::attention::{logmax, logmax_grad, softmax, softmax_grad_literal};
use crate::error::{FctError, Result};
use crate::spectral::{half_len, irfft_adjoint_row, irfft_row, rfft_adjoint_row, rfft_row};
use crate::tensor::RealTensor;

/// Handle to one tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    AddRowVec,
    MulRowVec,
    Dft { n: usize },
    Idft { n: usize },
    PadCols { from: usize, to: usize },
    SliceCols { start: usize, len: usize },
    ConcatCols,
    Logmax,
    Softmax,
    LayerNorm { eps: f64 },
    Gelu,
    Reshape,
    Gather { idx: Arc<Vec<usize>>, in_len: usize },
    MeanRows,
    StackRows,
    CrossEntropyMean { labels: Arc<Vec<usize>> },
    SumAll,
}

struct Node {
    op: Op,
    inputs: Vec<VarId>,
    value: RealTensor,
}

/// Ordered record of primitive applications.
pub struct Tape {
    nodes: Vec<Node>,
    param_binding: Vec<(String, VarId)>,
    backward_done: bool,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<RealTensor>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&RealTensor> {
        self.grads[id.0].as_ref()
    }
}

const GELU_C: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * s * (1.0 + 3.0 * GELU_C * x * x)
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_binding: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &RealTensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<VarId>, value: RealTensor) -> VarId {
        self.nodes.push(Node { op, inputs, value });
        VarId(self.nodes.len() - 1)
    }

    /// Non-trainable input leaf.
    pub fn leaf(&mut self, value: RealTensor) -> VarId {
        self.push(Op::Leaf, vec![], value)
    }

    /// Trainable leaf bound to a named store entry.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<VarId> {
        let p = store
            .get(name)
            .ok_or_else(|| FctError::Config(format!("unknown parameter `{name}`")))?;
        let id = self.push(Op::Leaf, vec![], p.value.clone());
        self.param_binding.push((name.to_string(), id));
        Ok(id)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul, vec![a, b], v))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose, vec![a], v)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add, vec![a, b], v))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub, vec![a, b], v))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(FctError::DimMismatch {
                ctx: "tape mul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul, vec![a, b], v))
    }

    pub fn scale(&mut self, a: VarId, s: f64) -> VarId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(s), vec![a], v)
    }

    pub fn add_scalar(&mut self, a: VarId, s: f64) -> VarId {
        let v = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar, vec![a], v)
    }

    /// a[R x C] + v[C] broadcast over rows.
    pub fn add_row_vec(&mut self, a: VarId, vec_id: VarId) -> Result<VarId> {
        let (r, c) = (self.value(a).rows(), self.value(a).cols());
        if self.value(vec_id).len() != c {
            return Err(FctError::DimMismatch {
                ctx: "add_row_vec",
                left: self.value(a).shape().to_vec(),
                right: self.value(vec_id).shape().to_vec(),
            });
        }
        let vdat = self.value(vec_id).data().to_vec();
        let out = RealTensor::from_fn(self.value(a).shape(), |i| {
            self.value(a).data()[i] + vdat[i % c]
        });
        let _ = r;
        Ok(self.push(Op::AddRowVec, vec![a, vec_id], out))
    }

    /// a[R x C] * v[C] broadcast over rows.
    pub fn mul_row_vec(&mut self, a: VarId, vec_id: VarId) -> Result<VarId> {
        let c = self.value(a).cols();
        if self.value(vec_id).len() != c {
            return Err(FctError::DimMismatch {
                ctx: "mul_row_vec",
                left: self.value(a).shape().to_vec(),
                right: self.value(vec_id).shape().to_vec(),
            });
        }
        let vdat = self.value(vec_id).data().to_vec();
        let out = RealTensor::from_fn(self.value(a).shape(), |i| {
            self.value(a).data()[i] * vdat[i % c]
        });
        Ok(self.push(Op::MulRowVec, vec![a, vec_id], out))
    }

    /// Row-batched half-spectrum DFT: [R x N] -> [R x 2L], real bins then
    /// imaginary bins.
    pub fn dft(&mut self, a: VarId) -> Result<VarId> {
        let x = self.value(a);
        let (rows, n) = (x.rows(), x.cols());
        if n < 2 {
            return Err(FctError::Size(format!("tape dft needs N >= 2, got {n}")));
        }
        let l = half_len(n);
        let mut out = vec![0.0; rows * 2 * l];
        for r in 0..rows {
            let (re, im) = rfft_row(&x.data()[r * n..(r + 1) * n]);
            out[r * 2 * l..r * 2 * l + l].copy_from_slice(&re);
            out[r * 2 * l + l..(r + 1) * 2 * l].copy_from_slice(&im);
        }
        let v = RealTensor::new(vec![rows, 2 * l], out)?;
        Ok(self.push(Op::Dft { n }, vec![a], v))
    }

    /// Inverse of `dft` given packed [R x 2L] bins. Imaginary mass on the
    /// DC/Nyquist bins does not reach the output (those bins are real on the
    /// valid manifold), so its gradient is exactly zero.
    pub fn idft(&mut self, a: VarId, n: usize) -> Result<VarId> {
        let x = self.value(a);
        let l = half_len(n);
        if x.cols() != 2 * l {
            return Err(FctError::Size(format!(
                "idft expects {} packed bins for N={n}, got {}",
                2 * l,
                x.cols()
            )));
        }
        let rows = x.rows();
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &x.data()[r * 2 * l..(r + 1) * 2 * l];
            let sig = irfft_row(&row[..l], &row[l..], n);
            out[r * n..(r + 1) * n].copy_from_slice(&sig);
        }
        let v = RealTensor::new(vec![rows, n], out)?;
        Ok(self.push(Op::Idft { n }, vec![a], v))
    }

    /// Append zero columns up to `to`.
    pub fn pad_cols(&mut self, a: VarId, to: usize) -> Result<VarId> {
        let x = self.value(a);
        let (rows, from) = (x.rows(), x.cols());
        if to < from {
            return Err(FctError::Size(format!("pad_cols: {to} < {from}")));
        }
        let mut out = vec![0.0; rows * to];
        for r in 0..rows {
            out[r * to..r * to + from].copy_from_slice(&x.data()[r * from..(r + 1) * from]);
        }
        let v = RealTensor::new(vec![rows, to], out)?;
        Ok(self.push(Op::PadCols { from, to }, vec![a], v))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> Result<VarId> {
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        if start + len > cols {
            return Err(FctError::Size(format!(
                "slice_cols {start}..{} out of {cols}",
                start + len
            )));
        }
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&x.data()[r * cols + start..r * cols + start + len]);
        }
        let v = RealTensor::new(vec![rows, len], out)?;
        Ok(self.push(Op::SliceCols { start, len }, vec![a], v))
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (xa, xb) = (self.value(a), self.value(b));
        if xa.rows() != xb.rows() {
            return Err(FctError::DimMismatch {
                ctx: "concat_cols",
                left: xa.shape().to_vec(),
                right: xb.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (xa.rows(), xa.cols(), xb.cols());
        let mut out = vec![0.0; rows * (ca + cb)];
        for r in 0..rows {
            out[r * (ca + cb)..r * (ca + cb) + ca]
                .copy_from_slice(&xa.data()[r * ca..(r + 1) * ca]);
            out[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                .copy_from_slice(&xb.data()[r * cb..(r + 1) * cb]);
        }
        let v = RealTensor::new(vec![rows, ca + cb], out)?;
        Ok(self.push(Op::ConcatCols, vec![a, b], v))
    }

    pub fn logmax(&mut self, a: VarId) -> VarId {
        let v = logmax(self.value(a));
        self.push(Op::Logmax, vec![a], v)
    }

    pub fn softmax(&mut self, a: VarId) -> VarId {
        let v = softmax(self.value(a));
        self.push(Op::Softmax, vec![a], v)
    }

    /// Per-row LayerNorm over the last axis with gain/bias vectors.
    pub fn layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId, eps: f64) -> Result<VarId> {
        let t = self.value(x);
        let (rows, c) = (t.rows(), t.cols());
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(FctError::DimMismatch {
                ctx: "layer_norm",
                left: t.shape().to_vec(),
                right: self.value(gain).shape().to_vec(),
            });
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[r * c + j] = g[j] * (row[j] - mean) * inv + b[j];
            }
        }
        let v = RealTensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(Op::LayerNorm { eps }, vec![x, gain, bias], v))
    }

    pub fn gelu(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(gelu_scalar);
        self.push(Op::Gelu, vec![a], v)
    }

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape, vec![a], v))
    }

    /// out[i] = in[idx[i]]; the adjoint scatter-adds. Used for patch
    /// extraction and 2x2 merging rearrangements.
    pub fn gather(&mut self, a: VarId, idx: Arc<Vec<usize>>, shape: &[usize]) -> Result<VarId> {
        let x = self.value(a);
        let n: usize = shape.iter().product();
        if n != idx.len() {
            return Err(FctError::Size(format!(
                "gather shape {:?} vs {} indices",
                shape,
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.len()) {
            return Err(FctError::Size(format!("gather index {bad} out of {}", x.len())));
        }
        let data: Vec<f64> = idx.iter().map(|&i| x.data()[i]).collect();
        let in_len = x.len();
        let v = RealTensor::new(shape.to_vec(), data)?;
        Ok(self.push(Op::Gather { idx, in_len }, vec![a], v))
    }

    /// Column means over rows: [R x C] -> [1 x C].
    pub fn mean_rows(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let (rows, c) = (x.rows(), x.cols());
        let mut out = vec![0.0; c];
        for r in 0..rows {
            for j in 0..c {
                out[j] += x.data()[r * c + j];
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        let v = RealTensor::new(vec![1, c], out).expect("mean shape");
        self.push(Op::MeanRows, vec![a], v)
    }

    /// Stack k row vectors [1 x C] into [k x C].
    pub fn stack_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(FctError::Size("stack_rows of nothing".into()));
        }
        let c = self.value(parts[0]).cols();
        let mut out = Vec::with_capacity(parts.len() * c);
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c || t.rows() != 1 {
                return Err(FctError::DimMismatch {
                    ctx: "stack_rows",
                    left: t.shape().to_vec(),
                    right: vec![1, c],
                });
            }
            out.extend_from_slice(t.data());
        }
        let v = RealTensor::new(vec![parts.len(), c], out)?;
        Ok(self.push(Op::StackRows, parts.to_vec(), v))
    }

    /// Mean softmax cross-entropy over batch rows of logits.
    pub fn cross_entropy_mean(&mut self, logits: VarId, labels: Arc<Vec<usize>>) -> Result<VarId> {
        let x = self.value(logits);
        let (b, k) = (x.rows(), x.cols());
        if labels.len() != b {
            return Err(FctError::Size(format!("{} labels for {b} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
            return Err(FctError::Size(format!("label {bad} out of {k} classes")));
        }
        let mut loss = 0.0;
        for r in 0..b {
            let row = &x.data()[r * k..(r + 1) * k];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[r]];
        }
        let v = RealTensor::scalar(loss / b as f64);
        Ok(self.push(Op::CrossEntropyMean { labels }, vec![logits], v))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let v = RealTensor::scalar(self.value(a).sum());
        self.push(Op::SumAll, vec![a], v)
    }

    /// Error with the stage name if the node holds any non-finite value.
    pub fn check_finite(&self, id: VarId, stage: &str) -> Result<()> {
        if self.value(id).all_finite() {
            Ok(())
        } else {
            Err(FctError::NonFinite(stage.to_string()))
        }
    }

    /// Reverse sweep from a scalar loss. Populates one gradient per reachable
    /// node; a second call is rejected unless `allow_repeat` (test mode).
    pub fn backward(&mut self, loss: VarId) -> Result<Gradients> {
        self.backward_impl(loss, false)
    }

    pub fn backward_again_for_test(&mut self, loss: VarId) -> Result<Gradients> {
        self.backward_impl(loss, true)
    }

    fn backward_impl(&mut self, loss: VarId, allow_repeat: bool) -> Result<Gradients> {
        if self.backward_done && !allow_repeat {
            return Err(FctError::Config(
                "double backward unsupported: tape already replayed".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(FctError::Size(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<RealTensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(RealTensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            let mut contribs: Vec<(VarId, RealTensor)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Matmul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let ga = g.matmul(&self.nodes[b.0].value.transpose())?;
                    let gb = self.nodes[a.0].value.transpose().matmul(&g)?;
                    contribs.push((a, ga));
                    contribs.push((b, gb));
                }
                Op::Transpose => contribs.push((node.inputs[0], g.transpose())),
                Op::Add => {
                    contribs.push((node.inputs[0], g.clone()));
                    contribs.push((node.inputs[1], g));
                }
                Op::Sub => {
                    contribs.push((node.inputs[0], g.clone()));
                    contribs.push((node.inputs[1], g.scale(-1.0)));
                }
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    contribs.push((a, g.mul(&self.nodes[b.0].value)?));
                    contribs.push((b, g.mul(&self.nodes[a.0].value)?));
                }
                Op::Scale(s) => contribs.push((node.inputs[0], g.scale(*s))),
                Op::AddScalar => contribs.push((node.inputs[0], g)),
                Op::AddRowVec => {
                    let (a, vid) = (node.inputs[0], node.inputs[1]);
                    let c = self.nodes[a.0].value.cols();
                    let rows = self.nodes[a.0].value.rows();
                    let mut gv = vec![0.0; c];
                    for r in 0..rows {
                        for j in 0..c {
                            gv[j] += g.data()[r * c + j];
                        }
                    }
                    contribs.push((a, g));
                    contribs.push((
                        vid,
                        RealTensor::new(self.nodes[vid.0].value.shape().to_vec(), gv)?,
                    ));
                }
                Op::MulRowVec => {
                    let (a, vid) = (node.inputs[0], node.inputs[1]);
                    let av = &self.nodes[a.0].value;
                    let vv = &self.nodes[vid.0].value;
                    let (rows, c) = (av.rows(), av.cols());
                    let ga = RealTensor::from_fn(av.shape(), |i| g.data()[i] * vv.data()[i % c]);
                    let mut gv = vec![0.0; c];
                    for r in 0..rows {
                        for j in 0..c {
                            gv[j] += g.data()[r * c + j] * av.data()[r * c + j];
                        }
                    }
                    contribs.push((a, ga));
                    contribs.push((vid, RealTensor::new(vv.shape().to_vec(), gv)?));
                }
                Op::Dft { n } => {
                    let a = node.inputs[0];
                    let l = half_len(*n);
                    let rows = self.nodes[a.0].value.rows();
                    let mut out = vec![0.0; rows * n];
                    for r in 0..rows {
                        let row = &g.data()[r * 2 * l..(r + 1) * 2 * l];
                        let adj = rfft_adjoint_row(&row[..l], &row[l..], *n);
                        out[r * n..(r + 1) * n].copy_from_slice(&adj);
                    }
                    contribs.push((a, RealTensor::new(vec![rows, *n], out)?));
                }
                Op::Idft { n } => {
                    let a = node.inputs[0];
                    let l = half_len(*n);
                    let rows = self.nodes[a.0].value.rows();
                    let mut out = vec![0.0; rows * 2 * l];
                    for r in 0..rows {
                        let (gre, gim) = irfft_adjoint_row(&g.data()[r * n..(r + 1) * n]);
                        out[r * 2 * l..r * 2 * l + l].copy_from_slice(&gre);
                        out[r * 2 * l + l..(r + 1) * 2 * l].copy_from_slice(&gim);
                    }
                    contribs.push((a, RealTensor::new(vec![rows, 2 * l], out)?));
                }
                Op::PadCols { from, to } => {
                    let a = node.inputs[0];
                    let rows = self.nodes[a.0].value.rows();
                    let mut out = vec![0.0; rows * from];
                    for r in 0..rows {
                        out[r * from..(r + 1) * from]
                            .copy_from_slice(&g.data()[r * to..r * to + from]);
                    }
                    contribs.push((a, RealTensor::new(vec![rows, *from], out)?));
                }
                Op::SliceCols { start, len } => {
                    let a = node.inputs[0];
                    let av = &self.nodes[a.0].value;
                    let (rows, cols) = (av.rows(), av.cols());
                    let mut out = vec![0.0; rows * cols];
                    for r in 0..rows {
                        out[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    contribs.push((a, RealTensor::new(av.shape().to_vec(), out)?));
                }
                Op::ConcatCols => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let ca = self.nodes[a.0].value.cols();
                    let cb = self.nodes[b.0].value.cols();
                    let rows = self.nodes[a.0].value.rows();
                    let mut ga = vec![0.0; rows * ca];
                    let mut gb = vec![0.0; rows * cb];
                    for r in 0..rows {
                        ga[r * ca..(r + 1) * ca]
                            .copy_from_slice(&g.data()[r * (ca + cb)..r * (ca + cb) + ca]);
                        gb[r * cb..(r + 1) * cb]
                            .copy_from_slice(&g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    contribs.push((a, RealTensor::new(vec![rows, ca], ga)?));
                    contribs.push((b, RealTensor::new(vec![rows, cb], gb)?));
                }
                Op::Logmax => {
                    let a = node.inputs[0];
                    contribs.push((a, logmax_grad(&self.nodes[a.0].value, &g)));
                }
                Op::Softmax => {
                    // Eq. 12 evaluated literally: overflows on Fourier-scale
                    // rows instead of silently stabilizing (see attention.rs)
                    let x = &self.nodes[node.inputs[0].0].value;
                    contribs.push((node.inputs[0], softmax_grad_literal(x, &g)));
                }
                Op::LayerNorm { eps } => {
                    let (x, gain, bias) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                    let xv = &self.nodes[x.0].value;
                    let gv = &self.nodes[gain.0].value;
                    let (rows, c) = (xv.rows(), xv.cols());
                    let mut gx = vec![0.0; rows * c];
                    let mut ggain = vec![0.0; c];
                    let mut gbias = vec![0.0; c];
                    for r in 0..rows {
                        let row = &xv.data()[r * c..(r + 1) * c];
                        let grow = &g.data()[r * c..(r + 1) * c];
                        let mean = row.iter().sum::<f64>() / c as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> = grow
                            .iter()
                            .zip(gv.data())
                            .map(|(&gg, &w)| gg * w)
                            .collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dxhat_xhat = dxhat
                            .iter()
                            .zip(xhat.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / c as f64;
                        for j in 0..c {
                            gx[r * c + j] =
                                inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            ggain[j] += grow[j] * xhat[j];
                            gbias[j] += grow[j];
                        }
                    }
                    contribs.push((x, RealTensor::new(xv.shape().to_vec(), gx)?));
                    contribs.push((gain, RealTensor::new(gv.shape().to_vec(), ggain)?));
                    contribs.push((
                        bias,
                        RealTensor::new(self.nodes[bias.0].value.shape().to_vec(), gbias)?,
                    ));
                }
                Op::Gelu => {
                    let a = node.inputs[0];
                    let av = &self.nodes[a.0].value;
                    let ga =
                        RealTensor::from_fn(av.shape(), |i| g.data()[i] * gelu_grad_scalar(av.data()[i]));
                    contribs.push((a, ga));
                }
                Op::Reshape => {
                    let a = node.inputs[0];
                    contribs.push((a, g.reshape(self.nodes[a.0].value.shape())?));
                }
                Op::Gather { idx, in_len } => {
                    let a = node.inputs[0];
                    let mut out = vec![0.0; *in_len];
                    for (o, &src) in idx.iter().enumerate() {
                        out[src] += g.data()[o];
                    }
                    contribs.push((
                        a,
                        RealTensor::new(self.nodes[a.0].value.shape().to_vec(), out)?,
                    ));
                }
                Op::MeanRows => {
                    let a = node.inputs[0];
                    let av = &self.nodes[a.0].value;
                    let (rows, c) = (av.rows(), av.cols());
                    let ga = RealTensor::from_fn(av.shape(), |i| g.data()[i % c] / rows as f64);
                    let _ = rows;
                    contribs.push((a, ga));
                }
                Op::StackRows => {
                    let c = node.value.cols();
                    for (r, &p) in node.inputs.iter().enumerate() {
                        let slice = g.data()[r * c..(r + 1) * c].to_vec();
                        contribs.push((
                            p,
                            RealTensor::new(self.nodes[p.0].value.shape().to_vec(), slice)?,
                        ));
                    }
                }
                Op::CrossEntropyMean { labels } => {
                    let a = node.inputs[0];
                    let xv = &self.nodes[a.0].value;
                    let (b, k) = (xv.rows(), xv.cols());
                    let gscale = g.data()[0] / b as f64;
                    let p = softmax(xv);
                    let mut gx = p.data().to_vec();
                    for (r, &lab) in labels.iter().enumerate() {
                        gx[r * k + lab] -= 1.0;
                    }
                    for v in gx.iter_mut() {
                        *v *= gscale;
                    }
                    contribs.push((a, RealTensor::new(xv.shape().to_vec(), gx)?));
                }
                Op::SumAll => {
                    let a = node.inputs[0];
                    let ga = RealTensor::full(self.nodes[a.0].value.shape(), g.data()[0]);
                    contribs.push((a, ga));
                }
            }
            for (target, c) in contribs {
                match &mut grads[target.0] {
                    Some(existing) => *existing = existing.add(&c)?,
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Add the tape's parameter-leaf gradients into the store. Parameters
    /// the loss never reached keep their (zero-initialized) gradients.
    pub fn apply_grads(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (name, id) in &self.param_binding {
            if let Some(g) = grads.get(*id) {
                let p = store
                    .get_mut(name)
                    .ok_or_else(|| FctError::Config(format!("parameter `{name}` vanished")))?;
                p.grad = p.grad.add(g)?;
            }
        }
        Ok(())
    }
}

/// One named learnable tensor with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: RealTensor,
    pub grad: RealTensor,
    pub m: RealTensor,
    pub v: RealTensor,
}

impl Param {
    fn new(value: RealTensor) -> Self {
        let z = RealTensor::zeros(value.shape());
        Self {
            value,
            grad: z.clone(),
            m: z.clone(),
            v: z,
        }
    }
}

/// Named learnable parameters; iteration order is name-sorted and therefore
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    /// Optimizer step counter (bias correction state).
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: RealTensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(FctError::Config(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = RealTensor::zeros(p.value.shape());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Outcome of one central-difference comparison.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub coords_checked: usize,
    pub nonfinite_evals: usize,
}

impl FdReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.nonfinite_evals == 0 && self.max_rel_err <= rel_tol
    }
}

/// Central finite differences of a pure scalar function against an analytic
/// gradient. Per-coordinate step h = 1e-6 * max(1, |x_i|). Relative error is
/// measured against the max-norm of the two gradients, so coordinates with
/// near-zero gradient do not produce spurious blowups. `coords` restricts the
/// probe to a subset (None checks everything).
pub fn finite_diff_check(
    f: &mut dyn FnMut(&RealTensor) -> f64,
    point: &RealTensor,
    analytic: &RealTensor,
    coords: Option<&[usize]>,
) -> FdReport {
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut numeric = vec![0.0; coords.len()];
    let mut nonfinite = 0usize;
    for (slot, &i) in coords.iter().enumerate() {
        let h = 1e-6 * point.data()[i].abs().max(1.0);
        let mut xp = point.clone();
        xp.data_mut()[i] += h;
        let mut xm = point.clone();
        xm.data_mut()[i] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        if !fp.is_finite() || !fm.is_finite() {
            nonfinite += 1;
            continue;
        }
        numeric[slot] = (fp - fm) / (2.0 * h);
    }
    let scale = coords
        .iter()
        .map(|&i| analytic.data()[i].abs())
        .chain(numeric.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut max_rel = 0.0;
    let mut worst = 0;
    for (slot, &i) in coords.iter().enumerate() {
        let rel = (analytic.data()[i] - numeric[slot]).abs() / scale;
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    FdReport {
        max_rel_err: max_rel,
        worst_coord: worst,
        coords_checked: coords.len(),
        nonfinite_evals: nonfinite,
    }
}
