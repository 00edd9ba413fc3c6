use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::finola::{self, FinolaMode};
use crate::real::Real;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor added to the standard deviation in `channel_norm`.
pub const NORM_EPS: f64 = 1e-6;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    BiasAdd(Var, Var),
    Reshape(Var),
    Transpose(Var),
    ChannelNorm {
        x: Var,
        // per row: (σ + ε, σ)
        stats: Vec<(T, T)>,
    },
    Softmax(Var),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Maxout {
        x: Var,
        arg: Vec<usize>,
    },
    Upsample {
        x: Var,
        fy: usize,
        fx: usize,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Mean(Var),
    Sum(Var),
    Finola {
        v: Var,
        a: Var,
        b: Var,
        paths: usize,
        mode: FinolaMode,
        traces: Vec<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// A tape of tensor operations supporting one reverse pass.
///
/// Nodes are appended in execution order, which is a valid topological
/// order; [`Graph::backward`] visits them in exact reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_ran: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_ran: false,
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a leaf after [`Graph::backward`]; `None` for leaves that
    /// received no gradient or do not require one.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::Numeric("non-finite value in leaf tensor".into()));
        }
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{name} produced a non-finite value")));
        }
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    // ---------------------------------------------------------------- forward

    /// `[m×k] · [k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], c)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    /// 2-D convolution of `x[Cin, H, W]` with `w[Cout, Cin, kh, kw]` and optional bias `b[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd) = self.value(x).dims3("conv2d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != cin {
            return Err(Error::shape("conv2d", self.shape(x), &ws));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be ≥ 1".into()));
        }
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[cout]));
            }
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape("conv2d", self.shape(x), &ws));
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let mut out = kernels::matmul(self.value(w).data(), &cols, cout, geom.k(), geom.npix());
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (co, row) in out.chunks_mut(geom.npix()).enumerate() {
                for v in row {
                    *v += bias[co];
                }
            }
        }
        let t = Tensor::new(vec![cout, geom.ho, geom.wo], out)?;
        let keep_cols = self.requires_grad(w);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            "conv2d",
            t,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols: if keep_cols { cols } else { Vec::new() },
            },
            &inputs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let vb = self.value(b).data();
        let mut t = self.value(a).clone();
        for (x, &y) in t.data_mut().iter_mut().zip(vb) {
            *x -= y;
        }
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let vb = self.value(b).data();
        let mut t = self.value(a).clone();
        for (x, &y) in t.data_mut().iter_mut().zip(vb) {
            *x *= y;
        }
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let t = self.value(a).map(|x| x * s);
        self.push("scale", t, Op::Scale(a, s), &[a])
    }

    /// Adds `b[n]` to every row of `x[.., n]` (last axis).
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(b) != [n] {
            return Err(Error::shape("bias_add", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(&bias) {
                *v += bb;
            }
        }
        self.push("bias_add", t, Op::BiasAdd(x, b), &[x, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("transpose")?;
        let t = Tensor::new(vec![c, r], kernels::transpose(self.value(x).data(), r, c))?;
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    /// Normalizes every row over the last axis: `(x − μ)/(σ + ε)` with the
    /// population standard deviation σ and ε = [`NORM_EPS`].
    pub fn channel_norm(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if n < 2 {
            return Err(Error::Contract(format!(
                "channel_norm needs at least 2 channels, got {n}"
            )));
        }
        let mut t = self.value(x).clone();
        let mut stats = Vec::with_capacity(t.numel() / n);
        for row in t.data_mut().chunks_mut(n) {
            let (s, sigma) = finola::normalize_in_place(row);
            stats.push((s, sigma));
        }
        self.push("channel_norm", t, Op::ChannelNorm { x, stats }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push("softmax", t, Op::Softmax(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(T::zero()));
        self.push("relu", t, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| gelu_fwd(v).0);
        self.push("gelu", t, Op::Gelu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.abs());
        self.push("abs", t, Op::Abs(x), &[x])
    }

    /// Maxout over `k` contiguous groups of the last axis: a last axis of
    /// length `k·d` becomes `d`, with `out[i] = max_j x[j·d + i]`.
    pub fn maxout(&mut self, x: Var, k: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().unwrap();
        if k == 0 || len % k != 0 {
            return Err(Error::Contract(format!(
                "maxout({k}) needs a last axis divisible by {k}, got {len}"
            )));
        }
        let d = len / k;
        let xv = self.value(x).data();
        let rows = xv.len() / len;
        let mut out = Vec::with_capacity(rows * d);
        let mut arg = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let row = &xv[r * len..(r + 1) * len];
            for i in 0..d {
                let mut best = i;
                for j in 1..k {
                    if row[j * d + i] > row[best] {
                        best = j * d + i;
                    }
                }
                out.push(row[best]);
                arg.push(r * len + best);
            }
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = d;
        let t = Tensor::new(oshape, out)?;
        self.push("maxout", t, Op::Maxout { x, arg }, &[x])
    }

    /// Nearest-neighbour upsampling of `[C, H, W]` by `fy`, `fx` ∈ {1, 2}.
    pub fn upsample(&mut self, x: Var, fy: usize, fx: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3("upsample")?;
        if !(1..=2).contains(&fy) || !(1..=2).contains(&fx) {
            return Err(Error::Contract(format!("upsample factors must be 1 or 2, got ({fy}, {fx})")));
        }
        let (ho, wo) = (h * fy, w * fx);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(ch * ho + y) * wo + xx] = xv[(ch * h + y / fy) * w + xx / fx];
                }
            }
        }
        let t = Tensor::new(vec![c, ho, wo], out)?;
        self.push("upsample", t, Op::Upsample { x, fy, fx }, &[x])
    }

    /// Nearest-neighbour ×2 upsampling in both spatial axes.
    pub fn nearest_upsample2x(&mut self, x: Var) -> Result<Var> {
        self.upsample(x, 2, 2)
    }

    /// Spatial crop of `[C, H, W]` to `[C, h, w]` starting at `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let (c, hi, wi) = self.value(x).dims3("crop")?;
        if top + h > hi || left + w > wi || h == 0 || w == 0 {
            return Err(Error::shape("crop", self.shape(x), &[c, top + h, left + w]));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let base = (ch * hi + top + y) * wi + left;
                out.extend_from_slice(&xv[base..base + w]);
            }
        }
        let t = Tensor::new(vec![c, h, w], out)?;
        self.push("crop", t, Op::Crop { x, top, left }, &[x])
    }

    /// Slice `len` entries of a rank-2 tensor along `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("narrow")?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(Error::Contract(format!(
                "narrow(axis {axis}, {start}..{}) out of range for shape [{r}, {c}]",
                start + len
            )));
        }
        let xv = self.value(x).data();
        let (shape, data) = if axis == 0 {
            (vec![len, c], xv[start * c..(start + len) * c].to_vec())
        } else {
            let mut d = Vec::with_capacity(r * len);
            for row in xv.chunks(c) {
                d.extend_from_slice(&row[start..start + len]);
            }
            (vec![r, len], d)
        };
        let t = Tensor::new(shape, data)?;
        self.push("narrow", t, Op::Narrow { x, axis, start }, &[x])
    }

    /// Concatenates rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::Contract("concat needs ≥ 1 part and axis 0 or 1".into()));
        }
        let (r0, c0) = self.value(parts[0]).dims2("concat")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat")?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(Error::shape("concat", self.shape(parts[0]), self.shape(p)));
            }
            total += if axis == 0 { r } else { c };
        }
        let (shape, data) = if axis == 0 {
            let mut d = Vec::with_capacity(total * c0);
            for &p in parts {
                d.extend_from_slice(self.value(p).data());
            }
            (vec![total, c0], d)
        } else {
            let mut d = Vec::with_capacity(r0 * total);
            for row in 0..r0 {
                for &p in parts {
                    let c = self.shape(p)[1];
                    d.extend_from_slice(&self.value(p).data()[row * c..(row + 1) * c]);
                }
            }
            (vec![r0, total], d)
        };
        let t = Tensor::new(shape, data)?;
        self.push("concat", t, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).numel());
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("mean", Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    /// Multi-path FINOLA expansion of `v[D]` (any shape with `D` elements)
    /// into a `[C, h, w]` feature map using shared generators `a`, `b` (`[C, C]`).
    pub fn finola(
        &mut self,
        v: Var,
        a: Var,
        b: Var,
        paths: usize,
        h: usize,
        w: usize,
        mode: FinolaMode,
    ) -> Result<Var> {
        let (c, c2) = self.value(a).dims2("finola")?;
        if c != c2 || self.shape(b) != [c, c] {
            return Err(Error::shape("finola", self.shape(a), self.shape(b)));
        }
        let d = self.value(v).numel();
        if paths == 0 || d != paths * c {
            return Err(Error::Contract(format!(
                "finola: latent length {d} must equal paths ({paths}) × channels ({c})"
            )));
        }
        let (vv, av, bv) = (self.value(v).data(), self.value(a).data(), self.value(b).data());
        let mut traces = Vec::with_capacity(paths);
        let mut out = vec![T::zero(); c * h * w];
        for p in 0..paths {
            let trace = finola::forward_trace(&vv[p * c..(p + 1) * c], av, bv, c, h, w, mode)?;
            finola::accumulate_chw(&trace, c, h, w, &mut out);
            traces.push(trace);
        }
        let t = Tensor::new(vec![c, h, w], out)?;
        let keep = [v, a, b].iter().any(|&x| self.requires_grad(x));
        self.push(
            "finola",
            t,
            Op::Finola {
                v,
                a,
                b,
                paths,
                mode,
                traces: if keep { traces } else { Vec::new() },
            },
            &[v, a, b],
        )
    }

    // --------------------------------------------------------------- backward

    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_ran = false;
    }

    /// Reverse pass seeded with ∂L/∂out = `seed`. Leaf gradients are stored on
    /// the leaves; a second call without [`Graph::reset_grads`] is an error.
    pub fn backward(&mut self, out: Var, seed: Tensor<T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Ok(());
        }
        if self.backward_ran {
            return Err(Error::BackwardTwice);
        }
        if seed.shape() != self.shape(out) {
            return Err(Error::shape("backward seed", seed.shape(), self.shape(out)));
        }
        self.backward_ran = true;
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].grad = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
        }
        Ok(())
    }

    /// [`Graph::backward`] with a seed of ones.
    pub fn backward_scalar(&mut self, out: Var) -> Result<()> {
        let seed = Tensor::full(self.shape(out), T::one());
        self.backward(out, seed)
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<T>| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul")?;
                let n = self.shape(*b)[1];
                if rg(*a) {
                    let da = kernels::matmul_a_bt(gd, self.value(*b).data(), m, n, k);
                    acc(*a, Tensor::new(vec![m, k], da)?);
                }
                if rg(*b) {
                    let db = kernels::matmul_at_b(self.value(*a).data(), gd, m, k, n);
                    acc(*b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let cout = self.shape(*w)[0];
                let npix = geom.npix();
                if rg(*w) {
                    let dw = kernels::matmul_a_bt(gd, cols, cout, npix, geom.k());
                    acc(*w, Tensor::new(self.shape(*w).to_vec(), dw)?);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let db = gd.chunks(npix).map(|r| r.iter().copied().sum()).collect();
                        acc(*b, Tensor::new(vec![cout], db)?);
                    }
                }
                if rg(*x) {
                    let dcols = kernels::matmul_at_b(self.value(*w).data(), gd, cout, geom.k(), npix);
                    let dx = kernels::col2im(&dcols, geom);
                    acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    acc(*a, g.clone());
                }
                if rg(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    acc(*a, g.clone());
                }
                if rg(*b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if rg(*a) {
                    let d = gd.iter().zip(vb.data()).map(|(&g, &y)| g * y).collect();
                    acc(*a, Tensor::new(va.shape().to_vec(), d)?);
                }
                if rg(*b) {
                    let d = gd.iter().zip(va.data()).map(|(&g, &x)| g * x).collect();
                    acc(*b, Tensor::new(vb.shape().to_vec(), d)?);
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * *s)),
            Op::BiasAdd(x, b) => {
                if rg(*x) {
                    acc(*x, g.clone());
                }
                if rg(*b) {
                    let n = self.shape(*b)[0];
                    let mut db = vec![T::zero(); n];
                    for row in gd.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::new(vec![n], db)?);
                }
            }
            Op::Reshape(x) => acc(*x, g.clone().reshaped(self.shape(*x))?),
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2("transpose")?;
                acc(*x, Tensor::new(vec![r, c], kernels::transpose(gd, c, r))?);
            }
            Op::ChannelNorm { x, stats } => {
                let n = *node.value.shape().last().unwrap();
                let out = node.value.data();
                let mut dx = vec![T::zero(); gd.len()];
                for (r, &(s, sigma)) in stats.iter().enumerate() {
                    let range = r * n..(r + 1) * n;
                    finola::normalize_vjp(&out[range.clone()], &gd[range.clone()], s, sigma, &mut dx[range]);
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap();
                let y = node.value.data();
                let mut dx = vec![T::zero(); gd.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(gd.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dotp: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dotp);
                    }
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                acc(*x, Tensor::new(self.shape(*x).to_vec(), d)?);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let d = gd.iter().zip(xv).map(|(&g, &v)| g * gelu_fwd(v).1).collect();
                acc(*x, Tensor::new(self.shape(*x).to_vec(), d)?);
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| {
                        if v > T::zero() {
                            g
                        } else if v < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(*x, Tensor::new(self.shape(*x).to_vec(), d)?);
            }
            Op::Maxout { x, arg } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&gv, &j) in gd.iter().zip(arg) {
                    dx[j] += gv;
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Upsample { x, fy, fx } => {
                let (c, h, w) = self.value(*x).dims3("upsample")?;
                let (ho, wo) = (h * fy, w * fx);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            dx[(ch * h + y / fy) * w + xx / fx] += gd[(ch * ho + y) * wo + xx];
                        }
                    }
                }
                acc(*x, Tensor::new(vec![c, h, w], dx)?);
            }
            Op::Crop { x, top, left } => {
                let (c, hi, wi) = self.value(*x).dims3("crop")?;
                let (_, h, w) = node.value.dims3("crop")?;
                let mut dx = vec![T::zero(); c * hi * wi];
                for ch in 0..c {
                    for y in 0..h {
                        let dst = (ch * hi + top + y) * wi + left;
                        let src = (ch * h + y) * w;
                        dx[dst..dst + w].copy_from_slice(&gd[src..src + w]);
                    }
                }
                acc(*x, Tensor::new(vec![c, hi, wi], dx)?);
            }
            Op::Narrow { x, axis, start } => {
                let (r, c) = self.value(*x).dims2("narrow")?;
                let mut dx = vec![T::zero(); r * c];
                let (_, len_c) = node.value.dims2("narrow")?;
                if *axis == 0 {
                    dx[start * c..start * c + gd.len()].copy_from_slice(gd);
                } else {
                    for row in 0..r {
                        dx[row * c + start..row * c + start + len_c]
                            .copy_from_slice(&gd[row * len_c..(row + 1) * len_c]);
                    }
                }
                acc(*x, Tensor::new(vec![r, c], dx)?);
            }
            Op::Concat { parts, axis } => {
                let (rows, total) = node.value.dims2("concat")?;
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).dims2("concat")?;
                    if rg(p) {
                        let d = if *axis == 0 {
                            gd[offset * total..(offset + r) * total].to_vec()
                        } else {
                            let mut d = Vec::with_capacity(r * c);
                            for row in 0..rows {
                                d.extend_from_slice(&gd[row * total + offset..row * total + offset + c]);
                            }
                            d
                        };
                        acc(p, Tensor::new(vec![r, c], d)?);
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), gd[0])),
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel());
                acc(*x, Tensor::full(self.shape(*x), gd[0] / n));
            }
            Op::Finola { v, a, b, paths, mode, traces } => {
                let c = self.shape(*a)[0];
                let (_, h, w) = node.value.dims3("finola")?;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let upstream = finola::chw_to_positions(gd, c, h, w);
                let mut gv = Vec::with_capacity(paths * c);
                let mut ga = vec![T::zero(); c * c];
                let mut gb = vec![T::zero(); c * c];
                for trace in traces.iter().take(*paths) {
                    let grads = finola::backward_trace(trace, av, bv, c, h, w, *mode, &upstream);
                    gv.extend_from_slice(&grads.v);
                    for (x, y) in ga.iter_mut().zip(&grads.a) {
                        *x += *y;
                    }
                    for (x, y) in gb.iter_mut().zip(&grads.b) {
                        *x += *y;
                    }
                }
                if rg(*v) {
                    acc(*v, Tensor::new(self.shape(*v).to_vec(), gv)?);
                }
                if rg(*a) {
                    acc(*a, Tensor::new(vec![c, c], ga)?);
                }
                if rg(*b) {
                    acc(*b, Tensor::new(vec![c, c], gb)?);
                }
            }
        }
        Ok(())
    }
}

/// GELU (tanh form) and its derivative.
#[inline]
fn gelu_fwd<T: Real>(x: T) -> (T, T) {
    let k = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let c = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = k * (T::one() + T::from_f64(3.0) * c * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy)
}

#[cfg(test)]
impl Var {
    pub(crate) fn default_for_tests() -> Var {
        Var(0)
    }
}
