//! Dense kernels shared by the autodiff primitives. All loops run in a fixed
//! order so results are bit-reproducible.

use crate::real::Real;

/// Rows of `c` updated together per pass over a row of `b`.
const RB: usize = 4;

/// `c[i×n] += Σ_p coef(i, p) · b[p×n]`, four output rows at a time.
#[inline]
fn saxpy_rows<T: Real>(c: &mut [T], b: &[T], m: usize, k: usize, n: usize, coef: impl Fn(usize, usize) -> T) {
    let mut i = 0;
    while i + RB <= m {
        let (r0, rest) = c[i * n..(i + RB) * n].split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (coef(i, p), coef(i + 1, p), coef(i + 2, p), coef(i + 3, p));
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                r0[j] += a0 * bv;
                r1[j] += a1 * bv;
                r2[j] += a2 * bv;
                r3[j] += a3 * bv;
            }
        }
        i += RB;
    }
    for i in i..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = coef(i, p);
            for (cv, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    saxpy_rows(&mut c, b, m, k, n, |i, p| a[i * k + p]);
    c
}

/// `c[m×n] = aᵀ · b` with `a[k×m]`, `b[k×n]`.
pub fn matmul_at_b<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    saxpy_rows(&mut c, b, m, k, n, |i, p| a[p * m + i]);
    c
}

/// `c[m×n] = a · bᵀ` with `a[m×k]`, `b[n×k]`.
pub fn matmul_a_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// Dot product with eight independent accumulators (fixed association order).
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for l in 0..8 {
            acc[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn npix(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `ox` whose input column `ox·stride + k − pad` lies in `0..w`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if w + pad > k { ((w + pad - k - 1) / stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Patch gather: `cols[(c·kh + ky)·kw + kx][oy·wo + ox]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let npix = g.npix();
    let mut cols = vec![T::zero(); g.k() * npix];
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * npix;
                let (lo, hi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    let dst = &mut cols[row + oy * g.wo + lo..row + oy * g.wo + hi];
                    let i0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst.copy_from_slice(&src[i0..i0 + (hi - lo)]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = src[i0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let npix = g.npix();
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * npix;
                let (lo, hi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    let src = &cols[row + oy * g.wo + lo..row + oy * g.wo + hi];
                    let i0 = base + lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in x[i0..i0 + (hi - lo)].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in src.iter().enumerate() {
                            x[i0 + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
    x
}
