//! First-order norm+linear autoregression (FINOLA).
//!
//! A single latent vector `v` placed at grid origin is expanded into a
//! `C × H × W` feature map. The scan order is fixed: the first row is filled
//! left to right with `z(x+1, 0) = z(x, 0) + A·n(z(x, 0))`, then every column is
//! filled top to bottom with `z(x, y+1) = z(x, y) + B·n(z(x, y))`. `n` is the
//! per-position channel normalization (normalized mode) or the identity
//! (linear mode). In linear mode the map is exactly `(I+B)^y (I+A)^x v`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels::dot, NORM_EPS};
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinolaMode {
    Normalized,
    Linear,
}

/// The generator pair `(A, B)`, both `C × C`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrices<T> {
    a: Vec<T>,
    b: Vec<T>,
    channels: usize,
}

impl<T: Real> CoefficientMatrices<T> {
    pub fn new(a: Vec<T>, b: Vec<T>, channels: usize) -> Result<Self> {
        let n = channels * channels;
        if channels == 0 || a.len() != n || b.len() != n {
            return Err(Error::Contract(format!(
                "A and B must both be {channels}×{channels} (got {} and {} entries)",
                a.len(),
                b.len()
            )));
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite entry in A or B".into()));
        }
        Ok(CoefficientMatrices { a, b, channels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn a(&self) -> &[T] {
        &self.a
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }
}

/// `C × H × W` grid, channel-major. The initial condition sits at `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// The `C`-vector at grid position `(x, y)`.
    pub fn column(&self, x: usize, y: usize) -> Vec<T> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }
}

/// In-place `(z − μ)/(σ + ε)`; returns `(σ + ε, σ)`.
pub(crate) fn normalize_in_place<T: Real>(z: &mut [T]) -> (T, T) {
    let n = T::from_usize(z.len());
    let mu = z.iter().copied().sum::<T>() / n;
    let var = z.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
    let sigma = var.sqrt();
    let s = sigma + T::from_f64(NORM_EPS);
    for v in z.iter_mut() {
        *v = (*v - mu) / s;
    }
    (s, sigma)
}

/// Vector-Jacobian product of the normalization, given its output `out`,
/// upstream gradient `u` and the saved `(σ + ε, σ)`. Accumulates into `dx`.
pub(crate) fn normalize_vjp<T: Real>(out: &[T], u: &[T], s: T, sigma: T, dx: &mut [T]) {
    let n = T::from_usize(out.len());
    let mean_u = u.iter().copied().sum::<T>() / n;
    let un: T = u.iter().zip(out).map(|(&a, &b)| a * b).sum();
    let coef = if sigma > T::zero() { un / (n * sigma) } else { T::zero() };
    for i in 0..out.len() {
        dx[i] += (u[i] - mean_u) / s - out[i] * coef;
    }
}

/// Normalizes a channel column over its `C ≥ 2` entries.
pub fn channel_normalize<T: Real>(column: &[T]) -> Result<Vec<T>> {
    if column.len() < 2 {
        return Err(Error::Contract(format!(
            "channel normalization needs C ≥ 2, got {}",
            column.len()
        )));
    }
    let mut out = column.to_vec();
    normalize_in_place(&mut out);
    Ok(out)
}

#[inline]
fn matvec_add<T: Real>(m: &[T], x: &[T], out: &mut [T]) {
    let c = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&m[i * c..(i + 1) * c], x);
    }
}

/// One recurrence step: `next = cur + M·n(cur)`.
#[inline]
fn step<T: Real>(m: &[T], cur: &[T], next: &mut [T], mode: FinolaMode, scratch: &mut [T]) {
    scratch.copy_from_slice(cur);
    if mode == FinolaMode::Normalized {
        normalize_in_place(scratch);
    }
    next.copy_from_slice(cur);
    matvec_add(m, scratch, next);
}

/// Position-major trace `[H·W][C]` of a single path.
pub(crate) fn forward_trace<T: Real>(
    v: &[T],
    a: &[T],
    b: &[T],
    c: usize,
    h: usize,
    w: usize,
    mode: FinolaMode,
) -> Result<Vec<T>> {
    if h == 0 || w == 0 {
        return Err(Error::Contract("feature map extents must be ≥ 1".into()));
    }
    if mode == FinolaMode::Normalized && c < 2 && (h > 1 || w > 1) {
        return Err(Error::Contract("normalized FINOLA needs C ≥ 2".into()));
    }
    let mut z = vec![T::zero(); h * w * c];
    z[..c].copy_from_slice(v);
    let mut scratch = vec![T::zero(); c];
    let check = |z: &[T], x: usize, y: usize| -> Result<()> {
        let p = (y * w + x) * c;
        if z[p..p + c].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!(
                "FINOLA recurrence diverged at grid index (x={x}, y={y})"
            )))
        }
    };
    for x in 0..w.saturating_sub(1) {
        let (head, tail) = z.split_at_mut((x + 1) * c);
        step(a, &head[x * c..], &mut tail[..c], mode, &mut scratch);
        check(&z, x + 1, 0)?;
    }
    for x in 0..w {
        for y in 0..h.saturating_sub(1) {
            let cur = (y * w + x) * c;
            let nxt = ((y + 1) * w + x) * c;
            let (head, tail) = z.split_at_mut(nxt);
            step(b, &head[cur..cur + c], &mut tail[..c], mode, &mut scratch);
            check(&z, x, y + 1)?;
        }
    }
    Ok(z)
}

/// Adds a position-major trace into a channel-major buffer.
pub(crate) fn accumulate_chw<T: Real>(trace: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    for pos in 0..h * w {
        for ch in 0..c {
            out[ch * h * w + pos] += trace[pos * c + ch];
        }
    }
}

pub(crate) fn chw_to_positions<T: Real>(chw: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); chw.len()];
    for ch in 0..c {
        for pos in 0..h * w {
            out[pos * c + ch] = chw[ch * h * w + pos];
        }
    }
    out
}

/// Gradients of a FINOLA expansion with respect to its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FinolaGrads<T> {
    pub v: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
}

/// Reverse pass through one path's recurrence. `upstream` is position-major.
pub(crate) fn backward_trace<T: Real>(
    trace: &[T],
    a: &[T],
    b: &[T],
    c: usize,
    h: usize,
    w: usize,
    mode: FinolaMode,
    upstream: &[T],
) -> FinolaGrads<T> {
    let mut g = upstream.to_vec();
    let mut ga = vec![T::zero(); c * c];
    let mut gb = vec![T::zero(); c * c];
    let mut n = vec![T::zero(); c];
    let mut u = vec![T::zero(); c];

    // z(next) = z(cur) + M·n(z(cur)); pushes g(next) back into g(cur).
    let mut back = |m: &[T], gm: &mut [T], g: &mut [T], cur: usize, nxt: usize| {
        n.copy_from_slice(&trace[cur..cur + c]);
        let (s, sigma) = if mode == FinolaMode::Normalized {
            normalize_in_place(&mut n)
        } else {
            (T::one(), T::zero())
        };
        for i in 0..c {
            let gi = g[nxt + i];
            if gi != T::zero() {
                for j in 0..c {
                    gm[i * c + j] += gi * n[j];
                }
            }
        }
        u.iter_mut().for_each(|x| *x = T::zero());
        for i in 0..c {
            let gi = g[nxt + i];
            if gi != T::zero() {
                for j in 0..c {
                    u[j] += m[i * c + j] * gi;
                }
            }
        }
        for i in 0..c {
            let gi = g[nxt + i];
            g[cur + i] += gi;
        }
        match mode {
            FinolaMode::Normalized => normalize_vjp(&n, &u, s, sigma, &mut g[cur..cur + c]),
            FinolaMode::Linear => {
                for i in 0..c {
                    g[cur + i] += u[i];
                }
            }
        }
    };

    for x in 0..w {
        for y in (0..h.saturating_sub(1)).rev() {
            back(b, &mut gb, &mut g, (y * w + x) * c, ((y + 1) * w + x) * c);
        }
    }
    for x in (0..w.saturating_sub(1)).rev() {
        back(a, &mut ga, &mut g, x * c, (x + 1) * c);
    }
    FinolaGrads {
        v: g[..c].to_vec(),
        a: ga,
        b: gb,
    }
}

/// Expands `v` (length `C`) into an `H × W` feature map.
pub fn autoregress<T: Real>(
    v: &[T],
    coeffs: &CoefficientMatrices<T>,
    height: usize,
    width: usize,
    mode: FinolaMode,
) -> Result<FeatureMap<T>> {
    let c = coeffs.channels;
    if v.len() != c {
        return Err(Error::Contract(format!(
            "initial vector has length {}, expected C = {c}",
            v.len()
        )));
    }
    multipath_autoregress(v, 1, coeffs, height, width, mode)
}

/// Splits `v` (length `P·C`) into `P` contiguous chunks, expands each with the
/// same generators, and sums the resulting maps in path order.
pub fn multipath_autoregress<T: Real>(
    v: &[T],
    paths: usize,
    coeffs: &CoefficientMatrices<T>,
    height: usize,
    width: usize,
    mode: FinolaMode,
) -> Result<FeatureMap<T>> {
    let c = coeffs.channels;
    if paths == 0 || v.len() != paths * c {
        return Err(Error::Contract(format!(
            "latent length {} is not divisible into {paths} paths of C = {c}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite initial vector".into()));
    }
    let traces = par::try_map_range(paths, |p| {
        forward_trace(&v[p * c..(p + 1) * c], &coeffs.a, &coeffs.b, c, height, width, mode)
    })?;
    let mut values = vec![T::zero(); c * height * width];
    for t in &traces {
        accumulate_chw(t, c, height, width, &mut values);
    }
    Ok(FeatureMap {
        channels: c,
        height,
        width,
        values,
    })
}

/// Exact reverse-mode gradients of `⟨upstream, multipath_autoregress(v)⟩`
/// with respect to `v`, `A` and `B`. `upstream` is channel-major `[C, H, W]`.
pub fn finola_backward<T: Real>(
    v: &[T],
    paths: usize,
    coeffs: &CoefficientMatrices<T>,
    height: usize,
    width: usize,
    mode: FinolaMode,
    upstream: &[T],
) -> Result<FinolaGrads<T>> {
    let c = coeffs.channels;
    if paths == 0 || v.len() != paths * c {
        return Err(Error::Contract(format!(
            "latent length {} is not divisible into {paths} paths of C = {c}",
            v.len()
        )));
    }
    if upstream.len() != c * height * width {
        return Err(Error::shape("finola_backward", &[upstream.len()], &[c, height, width]));
    }
    let up = chw_to_positions(upstream, c, height, width);
    let mut out = FinolaGrads {
        v: Vec::with_capacity(v.len()),
        a: vec![T::zero(); c * c],
        b: vec![T::zero(); c * c],
    };
    for p in 0..paths {
        let trace = forward_trace(&v[p * c..(p + 1) * c], &coeffs.a, &coeffs.b, c, height, width, mode)?;
        let g = backward_trace(&trace, &coeffs.a, &coeffs.b, c, height, width, mode, &up);
        out.v.extend_from_slice(&g.v);
        out.a.iter_mut().zip(&g.a).for_each(|(x, y)| *x += *y);
        out.b.iter_mut().zip(&g.b).for_each(|(x, y)| *x += *y);
    }
    Ok(out)
}
