//! Reverse-mode tape. Each differentiable op appends one node; the node
//! order is topological by construction, so the backward pass is a single
//! reverse sweep that visits every node exactly once.
//!
//! A tape is confined to one execution context. Model parameters live
//! outside as plain [`Tensor`] values and are re-inserted as leaves at the
//! start of every step.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Instrumentation counters. `backward_visits` asserts the visit-once
/// property; `attn_score_macs` is filled in by the attention layer and
/// grounds the cost comparison between self- and cross-attention.
#[derive(Clone, Debug, Default)]
pub struct TapeStats {
    pub backward_visits: u64,
    pub attn_score_macs: u64,
}

/// Recorded operation for one node. Inputs are node indices, which always
/// point backwards in the tape.
#[derive(Clone, Debug)]
pub enum Op<T: Element> {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddRowBias { x: usize, bias: usize },
    AddChannelBias { x: usize, bias: usize },
    Relu { x: usize },
    Gelu { x: usize },
    Abs { x: usize },
    MeanAll { x: usize },
    SumAll { x: usize },
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    Conv2d { x: usize, kernel: usize, stride: usize, padding: usize },
    UpsampleNearest2 { x: usize },
    EmbeddingLookup { table: usize, ids: Vec<usize> },
    CrossEntropyLogits { logits: usize, targets: Vec<usize>, probs: Vec<T> },
    Transpose { x: usize },
    Reshape { x: usize },
    SliceRows { x: usize, start: usize },
    ConcatRows { parts: Vec<usize> },
    SliceCols { x: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    /// Clamp to [0,1] with an identity (straight-through) gradient, so
    /// saturated pixels keep receiving signal.
    Clamp01 { x: usize },
    /// Forward emits caller-provided values bitwise; backward hands the
    /// incoming gradient to `latents` unchanged (the quantizer estimator).
    StraightThrough { latents: usize },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of executed differentiable operations.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    pub stats: TapeStats,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), stats: TapeStats::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of a node, populated by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Inserts a tensor as a leaf, keeping its requires_grad flag.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Inserts a non-differentiable constant leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf)
    }

    /// Copies a node's value into a fresh constant leaf: stop-gradient.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone().with_requires_grad(false);
        self.push(t, Op::Leaf)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?} at node {}",
            op,
            self.nodes.len()
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad())
    }

    fn out(&mut self, shape: &[usize], data: Vec<T>, rg: bool, op: Op<T>) -> Var {
        let t = Tensor::from_vec(shape, data).expect("op produced inconsistent shape").with_requires_grad(rg);
        self.push(t, op)
    }

    // ---- binary ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::dim(format!("matmul needs 2-d operands, got {sa:?} x {sb:?}")));
        }
        let (m, k, k2, n) = (sa[0], sa[1], sb[0], sb[1]);
        if k != k2 {
            return Err(Error::dim(format!("matmul inner dims disagree: {sa:?} x {sb:?}")));
        }
        let da = self.value(a).data();
        let db = self.value(b).data();
        let out = matmul_raw(da, db, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.out(&[m, n], out, rg, Op::Matmul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: impl Fn(usize, usize) -> Op<T>,
    ) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "elementwise op needs equal shapes, got {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let shape = self.value(a).shape().to_vec();
        let out: Vec<T> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.out(&shape, out, rg, op(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.value(x).shape().to_vec();
        let cc = T::from_f64(c);
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v * cc).collect();
        let rg = self.rg(&[x]);
        self.out(&shape, out, rg, Op::Scale { x: x.0, c })
    }

    /// `[n, d] + [d]`, bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sb = self.value(bias).shape();
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::dim(format!("row bias: x {sx:?} incompatible with bias {sb:?}")));
        }
        let (n, d) = (sx[0], sx[1]);
        let mut out = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] += b[j];
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.out(&sx, out, rg, Op::AddRowBias { x: x.0, bias: bias.0 }))
    }

    /// `[c, h, w] + [c]`, bias broadcast over each channel plane.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sb = self.value(bias).shape();
        if sx.len() != 3 || sb != [sx[0]] {
            return Err(Error::dim(format!("channel bias: x {sx:?} incompatible with bias {sb:?}")));
        }
        let (c, hw) = (sx[0], sx[1] * sx[2]);
        let mut out = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for ch in 0..c {
            for i in 0..hw {
                out[ch * hw + i] += b[ch];
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.out(&sx, out, rg, Op::AddChannelBias { x: x.0, bias: bias.0 }))
    }

    // ---- unary ops ----

    pub fn relu(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v.max(T::ZERO)).collect();
        let rg = self.rg(&[x]);
        self.out(&shape, out, rg, Op::Relu { x: x.0 })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out: Vec<T> = self.value(x).data().iter().map(|&v| gelu_fwd(v)).collect();
        let rg = self.rg(&[x]);
        self.out(&shape, out, rg, Op::Gelu { x: x.0 })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v.abs()).collect();
        let rg = self.rg(&[x]);
        self.out(&shape, out, rg, Op::Abs { x: x.0 })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let mut acc = T::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let mean = acc / T::from_f64(n as f64);
        let rg = self.rg(&[x]);
        self.out(&[1], vec![mean], rg, Op::MeanAll { x: x.0 })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = T::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let rg = self.rg(&[x]);
        self.out(&[1], vec![acc], rg, Op::SumAll { x: x.0 })
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v.max(T::ZERO).min(T::ONE)).collect();
        let rg = self.rg(&[x]);
        self.out(&shape, out, rg, Op::Clamp01 { x: x.0 })
    }

    // ---- normalization / attention plumbing ----

    /// Numerically stable softmax along `axis` (max-subtraction per slice).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mut hi = src[at(0)];
                for a in 1..len {
                    hi = hi.max(src[at(a)]);
                }
                let mut denom = T::ZERO;
                for a in 0..len {
                    let e = (src[at(a)] - hi).exp();
                    out[at(a)] = e;
                    denom += e;
                }
                for a in 0..len {
                    out[at(a)] = out[at(a)] / denom;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.out(&shape, out, rg, Op::Softmax { x: x.0, axis }))
    }

    /// Per-slice normalization over the last dimension, then affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let d = *shape.last().expect("tensor has rank >= 1");
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::dim(format!(
                "layer_norm: gamma/beta must be [{d}], got {:?}/{:?}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![T::ZERO; src.len()];
        let dd = T::from_f64(d as f64);
        let eps_t = T::from_f64(eps);
        for s in 0..src.len() / d {
            let row = &src[s * d..(s + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean / dd;
            let mut var = T::ZERO;
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var = var / dd;
            let inv_std = T::ONE / (var + eps_t).sqrt();
            for j in 0..d {
                out[s * d + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.out(&shape, out, rg, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps }))
    }

    // ---- convolutional ops ----

    /// Cross-correlation of `x: [c_in, h, w]` with `kernel: [c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        if sx.len() != 3 || sk.len() != 4 {
            return Err(Error::dim(format!("conv2d: need x [c,h,w] and kernel [o,i,k,k], got {sx:?}, {sk:?}")));
        }
        let (c_in, h, w) = (sx[0], sx[1], sx[2]);
        let (c_out, ck, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if ck != c_in || kh != kw {
            return Err(Error::dim(format!("conv2d: kernel {sk:?} incompatible with input {sx:?}")));
        }
        if kh % 2 == 0 {
            return Err(Error::dim(format!("conv2d: kernel size must be odd, got {kh}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be positive".to_string()));
        }
        let h_out = conv_extent(h, kh, stride, padding)?;
        let w_out = conv_extent(w, kw, stride, padding)?;
        let src = self.value(x).data();
        let ker = self.value(kernel).data();
        let mut out = vec![T::ZERO; c_out * h_out * w_out];
        for o in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = T::ZERO;
                    for i in 0..c_in {
                        for dy in 0..kh {
                            let y = (oy * stride + dy) as isize - padding as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            for dx in 0..kw {
                                let xx = (ox * stride + dx) as isize - padding as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                acc += ker[((o * c_in + i) * kh + dy) * kw + dx]
                                    * src[(i * h + y as usize) * w + xx as usize];
                            }
                        }
                    }
                    out[(o * h_out + oy) * w_out + ox] = acc;
                }
            }
        }
        let rg = self.rg(&[x, kernel]);
        Ok(self.out(&[c_out, h_out, w_out], out, rg, Op::Conv2d { x: x.0, kernel: kernel.0, stride, padding }))
    }

    /// Nearest-neighbor 2x upsampling of `[c, h, w]`; the decoder pairs this
    /// with a stride-1 conv instead of using transposed convolution.
    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 3 {
            return Err(Error::dim(format!("upsample: need [c,h,w], got {sx:?}")));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; c * 4 * h * w];
        let (h2, w2) = (2 * h, 2 * w);
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.out(&[c, h2, w2], out, rg, Op::UpsampleNearest2 { x: x.0 }))
    }

    // ---- token ops ----

    /// Row gather: `[v, d]` table indexed by `ids` -> `[n, d]`. Repeated ids
    /// sum their gradients.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.value(table).shape().to_vec();
        if st.len() != 2 {
            return Err(Error::dim(format!("embedding table must be 2-d, got {st:?}")));
        }
        if ids.is_empty() {
            return Err(Error::contract("embedding_lookup: empty id list"));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::index(format!("embedding id {bad} >= table rows {v}")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.out(&[ids.len(), d], out, rg, Op::EmbeddingLookup { table: table.0, ids: ids.to_vec() }))
    }

    /// Mean over rows of `-log softmax(logits)[target]`. The gradient is
    /// `(softmax - one_hot) / n`.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let sl = self.value(logits).shape().to_vec();
        if sl.len() != 2 {
            return Err(Error::dim(format!("cross_entropy: logits must be [n, v], got {sl:?}")));
        }
        let (n, v) = (sl[0], sl[1]);
        if targets.len() != n {
            return Err(Error::dim(format!("cross_entropy: {n} rows but {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::index(format!("cross_entropy target {bad} >= classes {v}")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::ZERO; n * v];
        let mut loss = T::ZERO;
        for r in 0..n {
            let row = &src[r * v..(r + 1) * v];
            let mut hi = row[0];
            for &x in row {
                hi = hi.max(x);
            }
            let mut denom = T::ZERO;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - hi).exp();
                probs[r * v + j] = e;
                denom += e;
            }
            for j in 0..v {
                probs[r * v + j] = probs[r * v + j] / denom;
            }
            // -log p[target] = log-sum-exp - logit[target]
            loss += denom.ln() + hi - row[targets[r]];
        }
        loss = loss / T::from_f64(n as f64);
        let rg = self.rg(&[logits]);
        Ok(self.out(
            &[1],
            vec![loss],
            rg,
            Op::CrossEntropyLogits { logits: logits.0, targets: targets.to_vec(), probs },
        ))
    }

    // ---- shape ops ----

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 2 {
            return Err(Error::dim(format!("transpose: need 2-d, got {sx:?}")));
        }
        let (m, n) = (sx[0], sx[1]);
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.out(&[n, m], out, rg, Op::Transpose { x: x.0 }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || numel != self.value(x).numel() {
            return Err(Error::dim(format!(
                "reshape: {:?} -> {shape:?} does not preserve element count",
                self.value(x).shape()
            )));
        }
        let out = self.value(x).data().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.out(shape, out, rg, Op::Reshape { x: x.0 }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 2 || len == 0 || start + len > sx[0] {
            return Err(Error::dim(format!("slice_rows: rows {start}..{} of {sx:?}", start + len)));
        }
        let d = sx[1];
        let out = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.out(&[len, d], out, rg, Op::SliceRows { x: x.0, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows: no parts"));
        }
        let d = self.value(parts[0]).shape().get(1).copied().ok_or_else(|| Error::dim("concat_rows: need 2-d parts"))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let sp = self.value(p).shape();
            if sp.len() != 2 || sp[1] != d {
                return Err(Error::dim(format!("concat_rows: widths disagree, {sp:?} vs width {d}")));
            }
            rows += sp[0];
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.out(&[rows, d], out, rg, Op::ConcatRows { parts: parts.iter().map(|v| v.0).collect() }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 2 || len == 0 || start + len > sx[1] {
            return Err(Error::dim(format!("slice_cols: cols {start}..{} of {sx:?}", start + len)));
        }
        let (n, d) = (sx[0], sx[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&src[i * d + start..i * d + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.out(&[n, len], out, rg, Op::SliceCols { x: x.0, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols: no parts"));
        }
        let n = self.value(parts[0]).shape().first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let sp = self.value(p).shape();
            if sp.len() != 2 || sp[0] != n {
                return Err(Error::dim(format!("concat_cols: row counts disagree, {sp:?} vs {n}")));
            }
            widths.push(sp[1]);
            total += sp[1];
        }
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                out.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.out(&[n, total], out, rg, Op::ConcatCols { parts: parts.iter().map(|v| v.0).collect() }))
    }

    /// Quantizer estimator: output equals `values` bitwise, gradient flows to
    /// `latents` unchanged.
    pub fn straight_through(&mut self, latents: Var, values: Tensor<T>) -> Result<Var> {
        if values.shape() != self.value(latents).shape() {
            return Err(Error::dim(format!(
                "straight_through: values {:?} vs latents {:?}",
                values.shape(),
                self.value(latents).shape()
            )));
        }
        let rg = self.rg(&[latents]);
        let t = values.with_requires_grad(rg);
        Ok(self.push(t, Op::StraightThrough { latents: latents.0 }))
    }

    // ---- backward ----

    /// Populates gradients for every requires-grad tensor reachable from
    /// `loss`; requires-grad tensors off the path keep zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = loss.0;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        for node in self.nodes[..=li].iter_mut() {
            if node.value.requires_grad() {
                node.value.alloc_zero_grad();
            } else {
                node.value.clear_grad();
            }
        }
        if !self.nodes[li].value.requires_grad() {
            // Loss does not depend on any differentiable leaf; nothing to do.
            return Ok(());
        }
        if let Some(g) = self.nodes[li].value.grad_buf_mut() {
            g[0] = T::ONE;
        }

        for idx in (0..=li).rev() {
            self.stats.backward_visits += 1;
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let grad = self.nodes[idx].value.grad().expect("grad allocated above").to_vec();
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &grad, &op);
        }
        Ok(())
    }

    fn accumulate(&mut self, node: usize, delta: &[T]) {
        if !self.nodes[node].value.requires_grad() {
            return;
        }
        let buf = self.nodes[node].value.grad_buf_mut().expect("grad allocated for requires_grad node");
        debug_assert_eq!(buf.len(), delta.len());
        for (g, &d) in buf.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn propagate(&mut self, idx: usize, grad: &[T], op: &Op<T>) {
        match *op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA = G . B^T ; dB = A^T . G
                let bt = transpose_raw(self.nodes[b].value.data(), k, n);
                let da = matmul_raw(grad, &bt, m, n, k);
                self.accumulate(a, &da);
                let at = transpose_raw(self.nodes[a].value.data(), m, k);
                let db = matmul_raw(&at, grad, k, m, n);
                self.accumulate(b, &db);
            }

            Op::Add { a, b } => {
                self.accumulate(a, grad);
                self.accumulate(b, grad);
            }

            Op::Sub { a, b } => {
                self.accumulate(a, grad);
                let neg: Vec<T> = grad.iter().map(|&g| -g).collect();
                self.accumulate(b, &neg);
            }

            Op::Mul { a, b } => {
                let da: Vec<T> = grad.iter().zip(self.nodes[b].value.data()).map(|(&g, &v)| g * v).collect();
                let db: Vec<T> = grad.iter().zip(self.nodes[a].value.data()).map(|(&g, &v)| g * v).collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }

            Op::Scale { x, c } => {
                let cc = T::from_f64(c);
                let dx: Vec<T> = grad.iter().map(|&g| g * cc).collect();
                self.accumulate(x, &dx);
            }

            Op::AddRowBias { x, bias } => {
                self.accumulate(x, grad);
                let d = self.nodes[bias].value.numel();
                let mut db = vec![T::ZERO; d];
                for (i, &g) in grad.iter().enumerate() {
                    db[i % d] += g;
                }
                self.accumulate(bias, &db);
            }

            Op::AddChannelBias { x, bias } => {
                self.accumulate(x, grad);
                let c = self.nodes[bias].value.numel();
                let hw = grad.len() / c;
                let mut db = vec![T::ZERO; c];
                for ch in 0..c {
                    for i in 0..hw {
                        db[ch] += grad[ch * hw + i];
                    }
                }
                self.accumulate(bias, &db);
            }

            Op::Relu { x } => {
                let dx: Vec<T> = grad
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(&g, &v)| if v > T::ZERO { g } else { T::ZERO })
                    .collect();
                self.accumulate(x, &dx);
            }

            Op::Gelu { x } => {
                let dx: Vec<T> =
                    grad.iter().zip(self.nodes[x].value.data()).map(|(&g, &v)| g * gelu_bwd(v)).collect();
                self.accumulate(x, &dx);
            }

            Op::Abs { x } => {
                let dx: Vec<T> = grad
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(&g, &v)| {
                        if v > T::ZERO {
                            g
                        } else if v < T::ZERO {
                            -g
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                self.accumulate(x, &dx);
            }

            Op::MeanAll { x } => {
                let n = self.nodes[x].value.numel();
                let g = grad[0] / T::from_f64(n as f64);
                let dx = vec![g; n];
                self.accumulate(x, &dx);
            }

            Op::SumAll { x } => {
                let dx = vec![grad[0]; self.nodes[x].value.numel()];
                self.accumulate(x, &dx);
            }

            Op::Clamp01 { x } => {
                // Identity (straight-through) gradient.
                self.accumulate(x, grad);
            }

            Op::Softmax { x, axis } => {
                let shape = self.nodes[idx].value.shape().to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                let s = self.nodes[idx].value.data();
                let mut dx = vec![T::ZERO; s.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let mut dot = T::ZERO;
                        for a in 0..len {
                            dot += grad[at(a)] * s[at(a)];
                        }
                        for a in 0..len {
                            dx[at(a)] = s[at(a)] * (grad[at(a)] - dot);
                        }
                    }
                }
                self.accumulate(x, &dx);
            }

            Op::LayerNorm { x, gamma, beta, eps } => {
                let src = self.nodes[x].value.data().to_vec();
                let g = self.nodes[gamma].value.data().to_vec();
                let d = self.nodes[gamma].value.numel();
                let dd = T::from_f64(d as f64);
                let eps_t = T::from_f64(eps);
                let slices = src.len() / d;
                let mut dx = vec![T::ZERO; src.len()];
                let mut dgamma = vec![T::ZERO; d];
                let mut dbeta = vec![T::ZERO; d];
                for s in 0..slices {
                    let row = &src[s * d..(s + 1) * d];
                    let gr = &grad[s * d..(s + 1) * d];
                    let mut mean = T::ZERO;
                    for &v in row {
                        mean += v;
                    }
                    mean = mean / dd;
                    let mut var = T::ZERO;
                    for &v in row {
                        var += (v - mean) * (v - mean);
                    }
                    var = var / dd;
                    let inv_std = T::ONE / (var + eps_t).sqrt();
                    // xhat_j = (x_j - mean) * inv_std ; a_j = gamma_j * g_j
                    let mut mean_a = T::ZERO;
                    let mut mean_ax = T::ZERO;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv_std;
                        let a = g[j] * gr[j];
                        mean_a += a;
                        mean_ax += a * xhat;
                        dgamma[j] += gr[j] * xhat;
                        dbeta[j] += gr[j];
                    }
                    mean_a = mean_a / dd;
                    mean_ax = mean_ax / dd;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv_std;
                        dx[s * d + j] = inv_std * (g[j] * gr[j] - mean_a - xhat * mean_ax);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }

            Op::Conv2d { x, kernel, stride, padding } => {
                let sx = self.nodes[x].value.shape().to_vec();
                let sk = self.nodes[kernel].value.shape().to_vec();
                let (c_in, h, w) = (sx[0], sx[1], sx[2]);
                let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
                let so = self.nodes[idx].value.shape().to_vec();
                let (h_out, w_out) = (so[1], so[2]);
                let src = self.nodes[x].value.data().to_vec();
                let ker = self.nodes[kernel].value.data().to_vec();
                let mut dx = vec![T::ZERO; src.len()];
                let mut dk = vec![T::ZERO; ker.len()];
                for o in 0..c_out {
                    for oy in 0..h_out {
                        for ox in 0..w_out {
                            let g = grad[(o * h_out + oy) * w_out + ox];
                            for i in 0..c_in {
                                for dy in 0..kh {
                                    let y = (oy * stride + dy) as isize - padding as isize;
                                    if y < 0 || y >= h as isize {
                                        continue;
                                    }
                                    for dxk in 0..kw {
                                        let xx = (ox * stride + dxk) as isize - padding as isize;
                                        if xx < 0 || xx >= w as isize {
                                            continue;
                                        }
                                        let xi = (i * h + y as usize) * w + xx as usize;
                                        let ki = ((o * c_in + i) * kh + dy) * kw + dxk;
                                        dk[ki] += g * src[xi];
                                        dx[xi] += g * ker[ki];
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(kernel, &dk);
            }

            Op::UpsampleNearest2 { x } => {
                let sx = self.nodes[x].value.shape().to_vec();
                let (c, h, w) = (sx[0], sx[1], sx[2]);
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![T::ZERO; c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(ch * h + y / 2) * w + xx / 2] += grad[(ch * h2 + y) * w2 + xx];
                        }
                    }
                }
                self.accumulate(x, &dx);
            }

            Op::EmbeddingLookup { table, ref ids } => {
                let d = self.nodes[table].value.shape()[1];
                let mut dt = vec![T::ZERO; self.nodes[table].value.numel()];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += grad[row * d + j];
                    }
                }
                self.accumulate(table, &dt);
            }

            Op::CrossEntropyLogits { logits, ref targets, ref probs } => {
                let n = targets.len();
                let v = probs.len() / n;
                let scale = grad[0] / T::from_f64(n as f64);
                let mut dl = vec![T::ZERO; probs.len()];
                for r in 0..n {
                    for j in 0..v {
                        let one_hot = if targets[r] == j { T::ONE } else { T::ZERO };
                        dl[r * v + j] = (probs[r * v + j] - one_hot) * scale;
                    }
                }
                self.accumulate(logits, &dl);
            }

            Op::Transpose { x } => {
                let so = self.nodes[idx].value.shape().to_vec();
                let dx = transpose_raw(grad, so[0], so[1]);
                self.accumulate(x, &dx);
            }

            Op::Reshape { x } => {
                self.accumulate(x, grad);
            }

            Op::SliceRows { x, start } => {
                let sx = self.nodes[x].value.shape().to_vec();
                let d = sx[1];
                let mut dx = vec![T::ZERO; sx[0] * d];
                dx[start * d..start * d + grad.len()].copy_from_slice(grad);
                self.accumulate(x, &dx);
            }

            Op::ConcatRows { ref parts } => {
                let mut offset = 0;
                for &p in parts {
                    let numel = self.nodes[p].value.numel();
                    let dp = grad[offset..offset + numel].to_vec();
                    self.accumulate(p, &dp);
                    offset += numel;
                }
            }

            Op::SliceCols { x, start } => {
                let sx = self.nodes[x].value.shape().to_vec();
                let (n, d) = (sx[0], sx[1]);
                let len = grad.len() / n;
                let mut dx = vec![T::ZERO; n * d];
                for i in 0..n {
                    for j in 0..len {
                        dx[i * d + start + j] = grad[i * len + j];
                    }
                }
                self.accumulate(x, &dx);
            }

            Op::ConcatCols { ref parts } => {
                let n = self.nodes[idx].value.shape()[0];
                let total = self.nodes[idx].value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.shape()[1];
                    let mut dp = vec![T::ZERO; n * w];
                    for i in 0..n {
                        for j in 0..w {
                            dp[i * w + j] = grad[i * total + offset + j];
                        }
                    }
                    self.accumulate(p, &dp);
                    offset += w;
                }
            }

            Op::StraightThrough { latents } => {
                self.accumulate(latents, grad);
            }
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn conv_extent(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return Err(Error::dim(format!("conv2d: kernel {k} larger than padded input {padded}")));
    }
    let out = (padded - k) / stride + 1;
    if out == 0 {
        return Err(Error::dim("conv2d: empty output".to_string()));
    }
    Ok(out)
}

pub(crate) fn matmul_raw<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let row = &b[p * n..(p + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] += av * row[j];
            }
        }
    }
    out
}

fn transpose_raw<T: Element>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

fn gelu_fwd<T: Element>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (T::ONE + inner.tanh())
}

fn gelu_bwd<T: Element>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = T::ONE - t * t;
    let d_inner = c * (T::ONE + three * k * x * x);
    half * (T::ONE + t) + half * x * sech2 * d_inner
}
