//! Define-by-run reverse-mode tape.
//!
//! A [`Tape`] records every operation of one forward computation as a node
//! holding its operands, shape and value. [`Tape::backward`] replays the
//! nodes in reverse, accumulating vector-Jacobian products into the inputs.
//! One tape = one computation graph; training builds a fresh tape per step.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::kernels;
use super::tensor::{ParamRegistry, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf { requires_grad: bool },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// a: [lead, rest], b: [rest] broadcast over the leading axis.
    MulBroadcast { a: NodeId, b: NodeId },
    /// x scaled by a scalar node.
    MulScalar { x: NodeId, s: NodeId },
    Scale { x: NodeId, c: f64 },
    Neg { x: NodeId },
    /// x + const, const broadcast over leading axes (suffix match).
    AddConst { x: NodeId, data: Arc<Vec<f64>> },
    /// x * const mask, same length as x.
    MulConst { x: NodeId, data: Arc<Vec<f64>> },
    ClampMin { x: NodeId, c: f64 },
    Recip { x: NodeId },
    Ln { x: NodeId },
    Relu { x: NodeId },
    /// Leaky rectifier with a learnable scalar slope node.
    Prelu { x: NodeId, slope: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    /// 2-D matrix product (m×k)·(k×n).
    Matmul { a: NodeId, b: NodeId },
    /// Batched 3-D matmul; with `transpose_b` the second operand is (B,n,k).
    Bmm { a: NodeId, b: NodeId, transpose_b: bool },
    /// x: [..., in] times w: [in, out] plus optional bias [out].
    Linear { x: NodeId, w: NodeId, bias: Option<NodeId> },
    /// x: [ch, n], w: [f, width] -> [ch, f, t], valid framing.
    Conv1d { x: NodeId, w: NodeId, stride: usize },
    /// x: [ch, f, t], w: [f, width] -> [ch, n_out].
    ConvT1d { x: NodeId, w: NodeId, stride: usize, n_out: usize },
    /// Normalization over the last axis with learnable gain/offset.
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    /// Softmax over the last axis.
    Softmax { x: NodeId },
    Permute { x: NodeId, perm: Vec<usize> },
    /// Same data, new shape (zero copy).
    Reshape { x: NodeId },
    /// (B, S, F) -> (B·heads, S, F/heads).
    SplitHeads { x: NodeId, heads: usize },
    /// Inverse of SplitHeads.
    MergeHeads { x: NodeId, heads: usize },
    /// [..., T] -> [..., chunk, n_chunks], zero-padded 50%-overlap style windows.
    Chunk { x: NodeId, chunk: usize, hop: usize },
    /// [..., chunk, n_chunks] -> [..., t_out]; overlap-add divided by the
    /// per-position overlap count, so it exactly inverts `Chunk`.
    OverlapAdd { x: NodeId, hop: usize, t_out: usize },
    /// Select row `idx` of the leading axis.
    Select0 { x: NodeId, idx: usize },
    /// Stack equally-shaped nodes along a new leading axis.
    Stack0 { xs: Vec<NodeId> },
    /// Sum of all elements -> scalar.
    Sum { x: NodeId },
    /// Sum of squares -> scalar.
    SumSq { x: NodeId },
    /// Inner product of two equally-sized nodes -> scalar.
    Dot { a: NodeId, b: NodeId },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Arc<Vec<f64>>,
    grad: Option<Vec<f64>>,
}

/// Statistics returned by [`Tape::backward`].
#[derive(Debug, Clone, Copy)]
pub struct BackwardStats {
    /// Trainable leaves that received a nonzero-path gradient.
    pub params_reached: usize,
    /// Trainable leaves on the tape.
    pub params_total: usize,
}

impl BackwardStats {
    /// True when the loss was disconnected from every trainable parameter.
    pub fn detached(&self) -> bool {
        self.params_total > 0 && self.params_reached == 0
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// Number of chunks produced by [`Tape::chunk`] for a frame count `t`.
pub fn chunk_count(t: usize, chunk: usize, hop: usize) -> usize {
    if t <= chunk {
        1
    } else {
        (t - chunk).div_ceil(hop) + 1
    }
}

/// Per-position overlap counts for compensated overlap-add.
fn overlap_counts(chunk: usize, hop: usize, n_chunks: usize) -> Vec<usize> {
    let t_pad = (n_chunks - 1) * hop + chunk;
    let mut counts = vec![0usize; t_pad];
    for n in 0..n_chunks {
        for c in counts[n * hop..n * hop + chunk].iter_mut() {
            *c += 1;
        }
    }
    counts
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node { op, shape, value: Arc::new(value), grad: None });
        NodeId(self.nodes.len() - 1)
    }

    fn push_shared(&mut self, op: Op, shape: Vec<usize>, value: Arc<Vec<f64>>) -> NodeId {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node { op, shape, value, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Add a constant (non-trainable) input node.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        assert_eq!(data.len(), numel(&shape), "input data does not match shape");
        self.push(Op::Leaf { requires_grad: false }, shape, data)
    }

    /// Add an input node sharing an existing buffer.
    pub fn input_shared(&mut self, shape: Vec<usize>, data: Arc<Vec<f64>>) -> NodeId {
        assert_eq!(data.len(), numel(&shape), "input data does not match shape");
        self.push_shared(Op::Leaf { requires_grad: false }, shape, data)
    }

    /// Place a registry parameter on the tape, caching by name so repeated
    /// uses share one leaf (gradients then accumulate across uses).
    pub fn param(&mut self, name: &str, registry: &ParamRegistry) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let t = registry
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let id = self.push(
            Op::Leaf { requires_grad: t.requires_grad() },
            t.shape().to_vec(),
            t.data().to_vec(),
        );
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Named parameter leaves placed so far.
    pub fn param_nodes(&self) -> &BTreeMap<String, NodeId> {
        &self.params
    }

    /// Collect gradients for every trainable parameter leaf, keyed by name.
    /// Parameters the loss never reached get zero gradients.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.params {
            let node = &self.nodes[id.0];
            if !matches!(node.op, Op::Leaf { requires_grad: true }) {
                continue;
            }
            let g = match &node.grad {
                Some(g) => g.clone(),
                None => vec![0.0; node.value.len()],
            };
            out.insert(name.clone(), Tensor::new(node.shape.clone(), g));
        }
        out
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn binary_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let v: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add { a, b }, self.nodes[a.0].shape.clone(), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b)?;
        let v: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(Op::Sub { a, b }, self.nodes[a.0].shape.clone(), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let v: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Mul { a, b }, self.nodes[a.0].shape.clone(), v))
    }

    /// a: [lead, rest...], b: [rest...]; multiplies b into every leading row.
    pub fn mul_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() + 1 || &sa[1..] != sb {
            return Err(shape_err("mul_broadcast", format!("{sa:?} vs {sb:?}")));
        }
        let rest = numel(sb);
        let mut v = self.value(a).to_vec();
        let bv = self.value(b);
        for row in v.chunks_mut(rest) {
            for (x, y) in row.iter_mut().zip(bv) {
                *x *= y;
            }
        }
        Ok(self.push(Op::MulBroadcast { a, b }, self.nodes[a.0].shape.clone(), v))
    }

    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if numel(self.shape(s)) != 1 {
            return Err(shape_err("mul_scalar", format!("scale has shape {:?}", self.shape(s))));
        }
        let sv = self.value(s)[0];
        let v: Vec<f64> = self.value(x).iter().map(|a| a * sv).collect();
        Ok(self.push(Op::MulScalar { x, s }, self.nodes[x.0].shape.clone(), v))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| a * c).collect();
        self.push(Op::Scale { x, c }, self.nodes[x.0].shape.clone(), v)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| -a).collect();
        self.push(Op::Neg { x }, self.nodes[x.0].shape.clone(), v)
    }

    /// Adds a constant broadcast over leading axes; `data` must match a
    /// suffix of `x`'s shape (commonly a per-(position, feature) table).
    pub fn add_const(&mut self, x: NodeId, data: Arc<Vec<f64>>) -> Result<NodeId> {
        let n = self.value(x).len();
        if data.is_empty() || n % data.len() != 0 {
            return Err(shape_err("add_const", format!("{} does not divide {n}", data.len())));
        }
        let mut v = self.value(x).to_vec();
        for row in v.chunks_mut(data.len()) {
            for (a, b) in row.iter_mut().zip(data.iter()) {
                *a += b;
            }
        }
        Ok(self.push(Op::AddConst { x, data }, self.nodes[x.0].shape.clone(), v))
    }

    /// Elementwise product with a constant mask of identical length.
    pub fn mul_const(&mut self, x: NodeId, data: Arc<Vec<f64>>) -> Result<NodeId> {
        if data.len() != self.value(x).len() {
            return Err(shape_err("mul_const", format!("{} vs {}", data.len(), self.value(x).len())));
        }
        let v: Vec<f64> = self.value(x).iter().zip(data.iter()).map(|(a, b)| a * b).collect();
        Ok(self.push(Op::MulConst { x, data }, self.nodes[x.0].shape.clone(), v))
    }

    pub fn clamp_min(&mut self, x: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| a.max(c)).collect();
        self.push(Op::ClampMin { x, c }, self.nodes[x.0].shape.clone(), v)
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| 1.0 / a).collect();
        self.push(Op::Recip { x }, self.nodes[x.0].shape.clone(), v)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| a.ln()).collect();
        self.push(Op::Ln { x }, self.nodes[x.0].shape.clone(), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| a.max(0.0)).collect();
        self.push(Op::Relu { x }, self.nodes[x.0].shape.clone(), v)
    }

    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        if numel(self.shape(slope)) != 1 {
            return Err(shape_err("prelu", format!("slope has shape {:?}", self.shape(slope))));
        }
        let a = self.value(slope)[0];
        let v: Vec<f64> = self.value(x).iter().map(|&x| if x > 0.0 { x } else { a * x }).collect();
        Ok(self.push(Op::Prelu { x, slope }, self.nodes[x.0].shape.clone(), v))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| a.tanh()).collect();
        self.push(Op::Tanh { x }, self.nodes[x.0].shape.clone(), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(x).iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect();
        self.push(Op::Sigmoid { x }, self.nodes[x.0].shape.clone(), v)
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut v = vec![0.0; m * n];
        kernels::matmul_nn(self.value(a), self.value(b), &mut v, m, k, n);
        Ok(self.push(Op::Matmul { a, b }, vec![m, n], v))
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", format!("{sa:?} · {sb:?}")));
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let k2 = if transpose_b { sb[2] } else { sb[1] };
        if k2 != k {
            return Err(shape_err("bmm", format!("inner dims {k} vs {k2}")));
        }
        let mut v = vec![0.0; bt * m * n];
        let (av, bv) = (self.value(a).to_vec(), self.value(b).to_vec());
        let b_sz = if transpose_b { n * k } else { k * n };
        v.par_chunks_mut(m * n).enumerate().for_each(|(i, out)| {
            let ai = &av[i * m * k..(i + 1) * m * k];
            let bi = &bv[i * b_sz..(i + 1) * b_sz];
            if transpose_b {
                kernels::matmul_nt(ai, bi, out, m, k, n);
            } else {
                kernels::matmul_nn(ai, bi, out, m, k, n);
            }
        });
        Ok(self.push(Op::Bmm { a, b, transpose_b }, vec![bt, m, n], v))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[0] {
            return Err(shape_err("linear", format!("x {sx:?} · w {sw:?}")));
        }
        let (fin, fout) = (sw[0], sw[1]);
        if let Some(b) = bias {
            if self.shape(b) != [fout] {
                return Err(shape_err("linear", format!("bias {:?}, expected [{fout}]", self.shape(b))));
            }
        }
        let rows = numel(sx) / fin;
        let mut v = vec![0.0; rows * fout];
        kernels::matmul_nn(self.value(x), self.value(w), &mut v, rows, fin, fout);
        if let Some(b) = bias {
            let bv = self.value(b);
            for row in v.chunks_mut(fout) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut out_shape = sx.to_vec();
        *out_shape.last_mut().unwrap() = fout;
        Ok(self.push(Op::Linear { x, w, bias }, out_shape, v))
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 {
            return Err(shape_err("conv1d", format!("x {sx:?}, w {sw:?}")));
        }
        let (ch, n) = (sx[0], sx[1]);
        let (f, width) = (sw[0], sw[1]);
        if n < width {
            return Err(shape_err("conv1d", format!("signal length {n} < kernel {width}")));
        }
        if stride == 0 || stride > width {
            return Err(shape_err("conv1d", format!("stride {stride} vs kernel {width}")));
        }
        let t = (n - width) / stride + 1;
        let mut v = vec![0.0; ch * f * t];
        kernels::conv1d(self.value(x), self.value(w), &mut v, ch, n, f, width, stride);
        Ok(self.push(Op::Conv1d { x, w, stride }, vec![ch, f, t], v))
    }

    pub fn conv1d_transpose(&mut self, x: NodeId, w: NodeId, stride: usize, n_out: usize) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(shape_err("conv1d_transpose", format!("x {sx:?}, w {sw:?}")));
        }
        let (ch, f, t) = (sx[0], sx[1], sx[2]);
        let width = sw[1];
        let mut v = vec![0.0; ch * n_out];
        kernels::conv1d_transpose(self.value(x), self.value(w), &mut v, ch, f, t, width, stride, n_out);
        Ok(self.push(Op::ConvT1d { x, w, stride, n_out }, vec![ch, n_out], v))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| shape_err("layer_norm", "scalar input".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("gamma {:?}, beta {:?}, feature dim {d}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let mut v = self.value(x).to_vec();
        v.par_chunks_mut(d).for_each(|row| {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for (i, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * rstd * g[i] + b[i];
            }
        });
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, sx, v))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| shape_err("softmax", "scalar input".into()))?;
        let mut v = self.value(x).to_vec();
        v.par_chunks_mut(d).for_each(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        });
        Ok(self.push(Op::Softmax { x }, sx, v))
    }

    // ── data movement ───────────────────────────────────────────────

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len() || perm.iter().any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("perm {perm:?} on shape {sx:?}")));
        }
        let (v, out_shape) = permuted_copy(self.value(x), &sx, perm);
        Ok(self.push(Op::Permute { x, perm: perm.to_vec() }, out_shape, v))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if numel(&shape) != numel(self.shape(x)) {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let value = Arc::clone(&self.nodes[x.0].value);
        Ok(self.push_shared(Op::Reshape { x }, shape, value))
    }

    pub fn split_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let sx = self.shape(x);
        if sx.len() != 3 || sx[2] % heads != 0 {
            return Err(shape_err("split_heads", format!("{sx:?} with {heads} heads")));
        }
        let (b, s, f) = (sx[0], sx[1], sx[2]);
        let dk = f / heads;
        let xv = self.value(x);
        let mut v = vec![0.0; b * s * f];
        for bi in 0..b {
            for h in 0..heads {
                for si in 0..s {
                    let src = (bi * s + si) * f + h * dk;
                    let dst = ((bi * heads + h) * s + si) * dk;
                    v[dst..dst + dk].copy_from_slice(&xv[src..src + dk]);
                }
            }
        }
        Ok(self.push(Op::SplitHeads { x, heads }, vec![b * heads, s, dk], v))
    }

    pub fn merge_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let sx = self.shape(x);
        if sx.len() != 3 || sx[0] % heads != 0 {
            return Err(shape_err("merge_heads", format!("{sx:?} with {heads} heads")));
        }
        let (bh, s, dk) = (sx[0], sx[1], sx[2]);
        let b = bh / heads;
        let f = dk * heads;
        let xv = self.value(x);
        let mut v = vec![0.0; b * s * f];
        for bi in 0..b {
            for h in 0..heads {
                for si in 0..s {
                    let src = ((bi * heads + h) * s + si) * dk;
                    let dst = (bi * s + si) * f + h * dk;
                    v[dst..dst + dk].copy_from_slice(&xv[src..src + dk]);
                }
            }
        }
        Ok(self.push(Op::MergeHeads { x, heads }, vec![b, s, f], v))
    }

    /// Windows the last axis into overlapping chunks, zero-padding the tail.
    pub fn chunk(&mut self, x: NodeId, chunk: usize, hop: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let t = *sx.last().ok_or_else(|| shape_err("chunk", "scalar input".into()))?;
        if chunk == 0 || hop == 0 || hop > chunk {
            return Err(shape_err("chunk", format!("chunk {chunk}, hop {hop}")));
        }
        let n_chunks = chunk_count(t, chunk, hop);
        let lead = numel(&sx) / t;
        let xv = self.value(x);
        let mut v = vec![0.0; lead * chunk * n_chunks];
        for l in 0..lead {
            let src = &xv[l * t..(l + 1) * t];
            let dst = &mut v[l * chunk * n_chunks..(l + 1) * chunk * n_chunks];
            for c in 0..chunk {
                for n in 0..n_chunks {
                    let pos = n * hop + c;
                    if pos < t {
                        dst[c * n_chunks + n] = src[pos];
                    }
                }
            }
        }
        let mut out_shape = sx;
        out_shape.pop();
        out_shape.push(chunk);
        out_shape.push(n_chunks);
        Ok(self.push(Op::Chunk { x, chunk, hop }, out_shape, v))
    }

    /// Compensated overlap-add over the trailing (chunk, n_chunks) axes,
    /// cropped to `t_out` frames. Exactly inverts [`Tape::chunk`].
    pub fn overlap_add(&mut self, x: NodeId, hop: usize, t_out: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(shape_err("overlap_add", format!("{sx:?}")));
        }
        let (chunk, n_chunks) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let t_pad = (n_chunks - 1) * hop + chunk;
        if t_out > t_pad {
            return Err(shape_err("overlap_add", format!("t_out {t_out} > padded {t_pad}")));
        }
        let counts = overlap_counts(chunk, hop, n_chunks);
        let lead = numel(&sx) / (chunk * n_chunks);
        let xv = self.value(x);
        let mut v = vec![0.0; lead * t_out];
        for l in 0..lead {
            let src = &xv[l * chunk * n_chunks..(l + 1) * chunk * n_chunks];
            let dst = &mut v[l * t_out..(l + 1) * t_out];
            let mut acc = vec![0.0; t_pad];
            for c in 0..chunk {
                for n in 0..n_chunks {
                    acc[n * hop + c] += src[c * n_chunks + n];
                }
            }
            for (t, d) in dst.iter_mut().enumerate() {
                *d = acc[t] / counts[t] as f64;
            }
        }
        let mut out_shape = sx;
        out_shape.pop();
        out_shape.pop();
        out_shape.push(t_out);
        Ok(self.push(Op::OverlapAdd { x, hop, t_out }, out_shape, v))
    }

    pub fn select0(&mut self, x: NodeId, idx: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.is_empty() || idx >= sx[0] {
            return Err(shape_err("select0", format!("index {idx} on shape {sx:?}")));
        }
        let rest = numel(&sx) / sx[0];
        let v = self.value(x)[idx * rest..(idx + 1) * rest].to_vec();
        Ok(self.push(Op::Select0 { x, idx }, sx[1..].to_vec(), v))
    }

    pub fn stack0(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(shape_err("stack0", "empty input list".into()));
        }
        let s0 = self.shape(xs[0]).to_vec();
        for &x in &xs[1..] {
            if self.shape(x) != s0 {
                return Err(shape_err("stack0", format!("{:?} vs {s0:?}", self.shape(x))));
            }
        }
        let rest = numel(&s0);
        let mut v = Vec::with_capacity(xs.len() * rest);
        for &x in xs {
            v.extend_from_slice(self.value(x));
        }
        let mut out_shape = vec![xs.len()];
        out_shape.extend_from_slice(&s0);
        Ok(self.push(Op::Stack0 { xs: xs.to_vec() }, out_shape, v))
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().sum();
        self.push(Op::Sum { x }, vec![], vec![v])
    }

    pub fn sum_sq(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|a| a * a).sum();
        self.push(Op::SumSq { x }, vec![], vec![v])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if numel(self.shape(a)) != numel(self.shape(b)) {
            return Err(shape_err("dot", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot { a, b }, vec![], vec![v]))
    }

    // ── backward ────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, contrib: &[f64]) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => node.grad = Some(contrib.to_vec()),
        }
    }

    fn accumulate_owned(&mut self, id: NodeId, contrib: Vec<f64>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(&contrib) {
                    *gi += ci;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    /// Reverse sweep from a scalar loss node. Gradients of trainable leaves
    /// survive the sweep; intermediate gradients are dropped as soon as
    /// their node has been processed.
    pub fn backward(&mut self, loss: NodeId) -> Result<BackwardStats> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if self.nodes[loss.0].grad.is_none() {
            self.nodes[loss.0].grad = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf { .. }) {
                continue;
            }
            let grad = self.nodes[i].grad.take().expect("grad present");
            let op = self.nodes[i].op.clone();
            self.backward_op(NodeId(i), &op, &grad);
        }
        let mut stats = BackwardStats { params_reached: 0, params_total: 0 };
        for node in &self.nodes {
            if matches!(node.op, Op::Leaf { requires_grad: true }) {
                stats.params_total += 1;
                if node.grad.is_some() {
                    stats.params_reached += 1;
                }
            }
        }
        Ok(stats)
    }

    fn backward_op(&mut self, out: NodeId, op: &Op, d: &[f64]) {
        match op {
            Op::Leaf { .. } => {}
            Op::Add { a, b } => {
                self.accumulate(*a, d);
                self.accumulate(*b, d);
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, d);
                let neg: Vec<f64> = d.iter().map(|x| -x).collect();
                self.accumulate_owned(*b, neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = d.iter().zip(self.value(*b)).map(|(d, b)| d * b).collect();
                let db: Vec<f64> = d.iter().zip(self.value(*a)).map(|(d, a)| d * a).collect();
                self.accumulate_owned(*a, da);
                self.accumulate_owned(*b, db);
            }
            Op::MulBroadcast { a, b } => {
                let rest = self.value(*b).len();
                let bv = self.value(*b);
                let av = self.value(*a);
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; rest];
                for (k, drow) in d.chunks(rest).enumerate() {
                    let arow = &av[k * rest..(k + 1) * rest];
                    let darow = &mut da[k * rest..(k + 1) * rest];
                    for i in 0..rest {
                        darow[i] = drow[i] * bv[i];
                        db[i] += drow[i] * arow[i];
                    }
                }
                self.accumulate_owned(*a, da);
                self.accumulate_owned(*b, db);
            }
            Op::MulScalar { x, s } => {
                let sv = self.value(*s)[0];
                let dx: Vec<f64> = d.iter().map(|d| d * sv).collect();
                let ds: f64 = d.iter().zip(self.value(*x)).map(|(d, x)| d * x).sum();
                self.accumulate_owned(*x, dx);
                self.accumulate(*s, &[ds]);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = d.iter().map(|d| d * c).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Neg { x } => {
                let dx: Vec<f64> = d.iter().map(|d| -d).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::AddConst { x, .. } => self.accumulate(*x, d),
            Op::MulConst { x, data } => {
                let dx: Vec<f64> = d.iter().zip(data.iter()).map(|(d, m)| d * m).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::ClampMin { x, c } => {
                let dx: Vec<f64> = d
                    .iter()
                    .zip(self.value(*x))
                    .map(|(d, &x)| if x > *c { *d } else { 0.0 })
                    .collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Recip { x } => {
                let y = Arc::clone(&self.nodes[out.0].value);
                let dx: Vec<f64> = d.iter().zip(y.iter()).map(|(d, y)| -d * y * y).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Ln { x } => {
                let dx: Vec<f64> = d.iter().zip(self.value(*x)).map(|(d, x)| d / x).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Relu { x } => {
                // Subgradient 0 at the kink.
                let dx: Vec<f64> = d
                    .iter()
                    .zip(self.value(*x))
                    .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                    .collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Prelu { x, slope } => {
                let a = self.value(*slope)[0];
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.len()];
                let mut ds = 0.0;
                for i in 0..xv.len() {
                    if xv[i] > 0.0 {
                        dx[i] = d[i];
                    } else if xv[i] < 0.0 {
                        dx[i] = d[i] * a;
                        ds += d[i] * xv[i];
                    }
                }
                self.accumulate_owned(*x, dx);
                self.accumulate(*slope, &[ds]);
            }
            Op::Tanh { x } => {
                let y = Arc::clone(&self.nodes[out.0].value);
                let dx: Vec<f64> = d.iter().zip(y.iter()).map(|(d, y)| d * (1.0 - y * y)).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Sigmoid { x } => {
                let y = Arc::clone(&self.nodes[out.0].value);
                let dx: Vec<f64> = d.iter().zip(y.iter()).map(|(d, y)| d * y * (1.0 - y)).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let mut da = vec![0.0; m * k];
                kernels::matmul_nt(d, self.value(*b), &mut da, m, n, k);
                let mut db = vec![0.0; k * n];
                kernels::matmul_tn(self.value(*a), d, &mut db, m, k, n);
                self.accumulate_owned(*a, da);
                self.accumulate_owned(*b, db);
            }
            Op::Bmm { a, b, transpose_b } => {
                let sa = self.shape(*a).to_vec();
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = d.len() / (bt * m);
                let b_sz = k * n;
                let av = Arc::clone(&self.nodes[a.0].value);
                let bv = Arc::clone(&self.nodes[b.0].value);
                let mut da = vec![0.0; bt * m * k];
                let mut db = vec![0.0; bt * b_sz];
                let tb = *transpose_b;
                da.par_chunks_mut(m * k)
                    .zip(db.par_chunks_mut(b_sz))
                    .enumerate()
                    .for_each(|(i, (dai, dbi))| {
                        let di = &d[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let bi = &bv[i * b_sz..(i + 1) * b_sz];
                        if tb {
                            // out = a·bᵀ, b stored n×k: da = d·b, db = dᵀ·a
                            kernels::matmul_nn(di, bi, dai, m, n, k);
                            kernels::matmul_tn(di, ai, dbi, m, n, k);
                        } else {
                            // out = a·b: da = d·bᵀ, db = aᵀ·d
                            kernels::matmul_nt(di, bi, dai, m, n, k);
                            kernels::matmul_tn(ai, di, dbi, m, k, n);
                        }
                    });
                self.accumulate_owned(*a, da);
                self.accumulate_owned(*b, db);
            }
            Op::Linear { x, w, bias } => {
                let (fin, fout) = (self.shape(*w)[0], self.shape(*w)[1]);
                let rows = d.len() / fout;
                let mut dx = vec![0.0; rows * fin];
                kernels::matmul_nt(d, self.value(*w), &mut dx, rows, fout, fin);
                let mut dw = vec![0.0; fin * fout];
                kernels::matmul_tn(self.value(*x), d, &mut dw, rows, fin, fout);
                self.accumulate_owned(*x, dx);
                self.accumulate_owned(*w, dw);
                if let Some(bn) = bias {
                    let mut db = vec![0.0; fout];
                    for row in d.chunks(fout) {
                        for (dbv, dv) in db.iter_mut().zip(row) {
                            *dbv += dv;
                        }
                    }
                    self.accumulate_owned(*bn, db);
                }
            }
            Op::Conv1d { x, w, stride } => {
                let sx = self.shape(*x).to_vec();
                let sw = self.shape(*w).to_vec();
                let (ch, n) = (sx[0], sx[1]);
                let (f, width) = (sw[0], sw[1]);
                let mut dx = vec![0.0; ch * n];
                kernels::conv1d_grad_input(d, self.value(*w), &mut dx, ch, n, f, width, *stride);
                let mut dw = vec![0.0; f * width];
                kernels::conv1d_grad_weight(d, self.value(*x), &mut dw, ch, n, f, width, *stride);
                self.accumulate_owned(*x, dx);
                self.accumulate_owned(*w, dw);
            }
            Op::ConvT1d { x, w, stride, n_out } => {
                let sx = self.shape(*x).to_vec();
                let sw = self.shape(*w).to_vec();
                let (ch, f, t) = (sx[0], sx[1], sx[2]);
                let width = sw[1];
                let mut dx = vec![0.0; ch * f * t];
                kernels::conv1d_transpose_grad_input(d, self.value(*w), &mut dx, ch, f, t, width, *stride, *n_out);
                let mut dw = vec![0.0; f * width];
                kernels::conv1d_transpose_grad_weight(d, self.value(*x), &mut dw, ch, f, t, width, *stride, *n_out);
                self.accumulate_owned(*x, dx);
                self.accumulate_owned(*w, dw);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let dcols = self.shape(*gamma)[0];
                let xv = Arc::clone(&self.nodes[x.0].value);
                let gv = self.value(*gamma).to_vec();
                let rows = xv.len() / dcols;
                let mut dx = vec![0.0; xv.len()];
                let mut dgamma = vec![0.0; dcols];
                let mut dbeta = vec![0.0; dcols];
                let inv_d = 1.0 / dcols as f64;
                for r in 0..rows {
                    let xr = &xv[r * dcols..(r + 1) * dcols];
                    let dr = &d[r * dcols..(r + 1) * dcols];
                    let mean = xr.iter().sum::<f64>() * inv_d;
                    let var = xr.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() * inv_d;
                    let rstd = 1.0 / (var + eps).sqrt();
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for i in 0..dcols {
                        let xhat = (xr[i] - mean) * rstd;
                        let gy = dr[i] * gv[i];
                        m1 += gy;
                        m2 += gy * xhat;
                        dgamma[i] += dr[i] * xhat;
                        dbeta[i] += dr[i];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    let dxr = &mut dx[r * dcols..(r + 1) * dcols];
                    for i in 0..dcols {
                        let xhat = (xr[i] - mean) * rstd;
                        dxr[i] = rstd * (dr[i] * gv[i] - m1 - xhat * m2);
                    }
                }
                self.accumulate_owned(*x, dx);
                self.accumulate_owned(*gamma, dgamma);
                self.accumulate_owned(*beta, dbeta);
            }
            Op::Softmax { x } => {
                let dcols = *self.shape(out).last().unwrap();
                let y = Arc::clone(&self.nodes[out.0].value);
                let mut dx = vec![0.0; y.len()];
                dx.par_chunks_mut(dcols).enumerate().for_each(|(r, dxr)| {
                    let yr = &y[r * dcols..(r + 1) * dcols];
                    let dr = &d[r * dcols..(r + 1) * dcols];
                    let dot: f64 = yr.iter().zip(dr).map(|(y, d)| y * d).sum();
                    for i in 0..dcols {
                        dxr[i] = yr[i] * (dr[i] - dot);
                    }
                });
                self.accumulate_owned(*x, dx);
            }
            Op::Permute { x, perm } => {
                let out_shape = self.shape(out).to_vec();
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (dx, _) = permuted_copy(d, &out_shape, &inv);
                self.accumulate_owned(*x, dx);
            }
            Op::Reshape { x } => self.accumulate(*x, d),
            Op::SplitHeads { x, heads } => {
                let sx = self.shape(*x).to_vec();
                let (b, s, f) = (sx[0], sx[1], sx[2]);
                let dk = f / heads;
                let mut dx = vec![0.0; b * s * f];
                for bi in 0..b {
                    for h in 0..*heads {
                        for si in 0..s {
                            let dst = (bi * s + si) * f + h * dk;
                            let src = ((bi * heads + h) * s + si) * dk;
                            dx[dst..dst + dk].copy_from_slice(&d[src..src + dk]);
                        }
                    }
                }
                self.accumulate_owned(*x, dx);
            }
            Op::MergeHeads { x, heads } => {
                let sx = self.shape(*x).to_vec();
                let (bh, s, dk) = (sx[0], sx[1], sx[2]);
                let b = bh / heads;
                let f = dk * heads;
                let mut dx = vec![0.0; bh * s * dk];
                for bi in 0..b {
                    for h in 0..*heads {
                        for si in 0..s {
                            let src = (bi * s + si) * f + h * dk;
                            let dst = ((bi * heads + h) * s + si) * dk;
                            dx[dst..dst + dk].copy_from_slice(&d[src..src + dk]);
                        }
                    }
                }
                self.accumulate_owned(*x, dx);
            }
            Op::Chunk { x, chunk, hop } => {
                let sx = self.shape(*x).to_vec();
                let t = *sx.last().unwrap();
                let n_chunks = chunk_count(t, *chunk, *hop);
                let lead = numel(&sx) / t;
                let mut dx = vec![0.0; numel(&sx)];
                for l in 0..lead {
                    let drow = &d[l * chunk * n_chunks..(l + 1) * chunk * n_chunks];
                    let dxrow = &mut dx[l * t..(l + 1) * t];
                    for c in 0..*chunk {
                        for n in 0..n_chunks {
                            let pos = n * hop + c;
                            if pos < t {
                                dxrow[pos] += drow[c * n_chunks + n];
                            }
                        }
                    }
                }
                self.accumulate_owned(*x, dx);
            }
            Op::OverlapAdd { x, hop, t_out } => {
                let sx = self.shape(*x).to_vec();
                let (chunk, n_chunks) = (sx[sx.len() - 2], sx[sx.len() - 1]);
                let counts = overlap_counts(chunk, *hop, n_chunks);
                let lead = numel(&sx) / (chunk * n_chunks);
                let mut dx = vec![0.0; numel(&sx)];
                for l in 0..lead {
                    let drow = &d[l * t_out..(l + 1) * t_out];
                    let dxrow = &mut dx[l * chunk * n_chunks..(l + 1) * chunk * n_chunks];
                    for c in 0..chunk {
                        for n in 0..n_chunks {
                            let pos = n * hop + c;
                            if pos < *t_out {
                                dxrow[c * n_chunks + n] = drow[pos] / counts[pos] as f64;
                            }
                        }
                    }
                }
                self.accumulate_owned(*x, dx);
            }
            Op::Select0 { x, idx } => {
                let rest = d.len();
                let mut dx = vec![0.0; numel(self.shape(*x))];
                dx[idx * rest..(idx + 1) * rest].copy_from_slice(d);
                self.accumulate_owned(*x, dx);
            }
            Op::Stack0 { xs } => {
                let rest = d.len() / xs.len();
                for (i, &x) in xs.iter().enumerate() {
                    self.accumulate(x, &d[i * rest..(i + 1) * rest]);
                }
            }
            Op::Sum { x } => {
                let dx = vec![d[0]; numel(self.shape(*x))];
                self.accumulate_owned(*x, dx);
            }
            Op::SumSq { x } => {
                let dx: Vec<f64> = self.value(*x).iter().map(|v| 2.0 * d[0] * v).collect();
                self.accumulate_owned(*x, dx);
            }
            Op::Dot { a, b } => {
                let da: Vec<f64> = self.value(*b).iter().map(|v| d[0] * v).collect();
                let db: Vec<f64> = self.value(*a).iter().map(|v| d[0] * v).collect();
                self.accumulate_owned(*a, da);
                self.accumulate_owned(*b, db);
            }
        }
    }
}

fn permuted_copy(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let ndim = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    if ndim == 0 {
        return (src.to_vec(), out_shape);
    }
    let in_strides = strides(shape);
    let move_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0; src.len()];
    let mut idx = vec![0usize; ndim];
    let mut src_off = 0usize;
    for o in out.iter_mut() {
        *o = src[src_off];
        for d in (0..ndim).rev() {
            idx[d] += 1;
            src_off += move_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src_off -= move_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_matches_definition() {
        let mut tape = Tape::new();
        let x = tape.input(vec![3], vec![-1.0, 0.0, 2.0]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_case() {
        let mut tape = Tape::new();
        let x = tape.input(vec![3], vec![0.0, 0.0, 0.0]);
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conv1d_valid_frame_count() {
        // F=4, W=32, H=16 on a length-64 signal -> 3 frames.
        let mut tape = Tape::new();
        let x = tape.input(vec![1, 64], vec![0.0; 64]);
        let w = tape.input(vec![4, 32], vec![0.0; 128]);
        let y = tape.conv1d(x, w, 16).unwrap();
        assert_eq!(tape.shape(y), &[1, 4, 3]);
    }

    #[test]
    fn conv1d_rejects_short_signal() {
        let mut tape = Tape::new();
        let x = tape.input(vec![1, 8], vec![0.0; 8]);
        let w = tape.input(vec![2, 16], vec![0.0; 32]);
        assert!(tape.conv1d(x, w, 4).is_err());
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = sum(w ⊙ x) -> dL/dw = x
        let mut reg = ParamRegistry::new();
        reg.insert("w", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).trainable());
        let mut tape = Tape::new();
        let w = tape.param("w", &reg).unwrap();
        let x = tape.input(vec![3], vec![3.0, 4.0, 5.0]);
        let p = tape.mul(w, x).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn relu_subgradient_zero_at_kink() {
        // loss = sum(relu(w)), w = [-1, 2] -> grad [0, 1]
        let mut reg = ParamRegistry::new();
        reg.insert("w", Tensor::new(vec![2], vec![-1.0, 2.0]).trainable());
        let mut tape = Tape::new();
        let w = tape.param("w", &reg).unwrap();
        let r = tape.relu(w);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.input(vec![2], vec![1.0, 2.0]);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn detached_graph_reports_zero_reach() {
        let mut reg = ParamRegistry::new();
        reg.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).trainable());
        let mut tape = Tape::new();
        let _w = tape.param("w", &reg).unwrap();
        let x = tape.input(vec![2], vec![1.0, 2.0]);
        let loss = tape.sum(x);
        let stats = tape.backward(loss).unwrap();
        assert!(stats.detached());
        // Zero gradients are still handed out for unreached parameters.
        let grads = tape.param_grads();
        assert_eq!(grads["w"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn permute_roundtrip_is_identity() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let x = tape.input(vec![2, 3, 4], data.clone());
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(back), data.as_slice());
    }

    #[test]
    fn chunk_dechunk_exact_inverse() {
        let mut tape = Tape::new();
        let t = 37;
        let data: Vec<f64> = (0..(8 * t)).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = tape.input(vec![8, t], data.clone());
        let c = tape.chunk(x, 10, 5).unwrap();
        let y = tape.overlap_add(c, 5, t).unwrap();
        for (a, b) in tape.value(y).iter().zip(&data) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_chunk_is_identity() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let x = tape.input(vec![1, 10], data.clone());
        let c = tape.chunk(x, 10, 5).unwrap();
        assert_eq!(tape.shape(c), &[1, 10, 1]);
        let y = tape.overlap_add(c, 5, 10).unwrap();
        assert_eq!(tape.value(y), data.as_slice());
    }

    #[test]
    fn split_merge_heads_roundtrip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 8).map(|i| i as f64).collect();
        let x = tape.input(vec![2, 3, 8], data.clone());
        let s = tape.split_heads(x, 4).unwrap();
        assert_eq!(tape.shape(s), &[8, 3, 2]);
        let m = tape.merge_heads(s, 4).unwrap();
        assert_eq!(tape.value(m), data.as_slice());
    }

    #[test]
    fn matmul_and_gradients() {
        let mut reg = ParamRegistry::new();
        reg.insert("a", Tensor::new(vec![1, 2], vec![1.0, 2.0]).trainable());
        reg.insert("b", Tensor::new(vec![2, 1], vec![3.0, 4.0]).trainable());
        let mut tape = Tape::new();
        let a = tape.param("a", &reg).unwrap();
        let b = tape.param("b", &reg).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[11.0]);
        let loss = tape.sum(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_op_and_dims() {
        let mut tape = Tape::new();
        let a = tape.input(vec![2, 3], vec![0.0; 6]);
        let b = tape.input(vec![2, 2], vec![0.0; 4]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains('2'), "{msg}");
    }

    #[test]
    fn gradient_accumulates_across_reuse() {
        // y = w·x1 + w·x2 -> dw = x1 + x2
        let mut reg = ParamRegistry::new();
        reg.insert("w", Tensor::new(vec![2], vec![1.0, 1.0]).trainable());
        let mut tape = Tape::new();
        let w = tape.param("w", &reg).unwrap();
        let x1 = tape.input(vec![2], vec![1.0, 2.0]);
        let x2 = tape.input(vec![2], vec![10.0, 20.0]);
        let p1 = tape.mul(w, x1).unwrap();
        let p2 = tape.mul(w, x2).unwrap();
        let s = tape.add(p1, p2).unwrap();
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[11.0, 22.0]);
    }
}
