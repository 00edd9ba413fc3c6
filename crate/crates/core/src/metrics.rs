//! Pixel-wise errors and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_len(a: &[f64], b: &[f64], op: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("{op}: {} vs {} elements", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Contract(format!("{op}: empty input")));
    }
    Ok(())
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b, "mae")?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b, "mse")?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ssim {
    /// Clamped to [0, 1].
    pub value: f64,
    pub raw: f64,
    /// Window side actually used.
    pub window: usize,
    pub window_shrunk: bool,
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mirror index with the edge sample repeated (`-1 → 0`, `n → n-1`).
fn symmetric(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Separable weighted filter with symmetric padding, same-size output.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let r = (g.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                acc += gk * row[symmetric(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (k, gk) in g.iter().enumerate() {
            let src = symmetric(y as isize + k as isize - r, h) * w;
            for x in 0..w {
                out[y * w + x] += gk * tmp[src + x];
            }
        }
    }
    out
}

/// Mean local SSIM of two `h × w` images.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> Result<Ssim> {
    same_len(a, b, "ssim")?;
    if a.len() != h * w {
        return Err(Error::Contract(format!("ssim: {h}×{w} image given {} values", a.len())));
    }
    if !(data_range > 0.0) {
        return Err(Error::Contract(format!("ssim: data range must be positive, got {data_range}")));
    }
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian_window(size);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
    let mu_a = filter(a, h, w, &g);
    let mu_b = filter(b, h, w, &g);
    let e_aa = filter(&prod(a, a), h, w, &g);
    let e_bb = filter(&prod(b, b), h, w, &g);
    let e_ab = filter(&prod(a, b), h, w, &g);
    let mut total = 0.0;
    for i in 0..h * w {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    let raw = total / (h * w) as f64;
    Ok(Ssim {
        value: raw.clamp(0.0, 1.0),
        raw,
        window: size,
        window_shrunk: size != SSIM_WINDOW,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Normalized,
    Denormalized,
}

/// Dataset-averaged metrics for one head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
    pub scale: Scale,
    pub n: usize,
}

/// Accumulates per-sample metrics in insertion order.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    scale: Scale,
    data_range: f64,
    sums: [f64; 3],
    n: usize,
}

impl MetricAccumulator {
    pub fn new(scale: Scale, data_range: f64) -> Self {
        MetricAccumulator {
            scale,
            data_range,
            sums: [0.0; 3],
            n: 0,
        }
    }

    pub fn add(&mut self, pred: &[f64], truth: &[f64], h: usize, w: usize) -> Result<()> {
        self.sums[0] += mae(pred, truth)?;
        self.sums[1] += mse(pred, truth)?;
        self.sums[2] += ssim(pred, truth, h, w, self.data_range)?.value;
        self.n += 1;
        Ok(())
    }

    /// One sample of `c` stacked `h × w` images; SSIM is averaged over channels.
    pub fn add_channels(&mut self, pred: &[f64], truth: &[f64], c: usize, h: usize, w: usize) -> Result<()> {
        same_len(pred, truth, "metrics")?;
        if pred.len() != c * h * w {
            return Err(Error::Contract(format!("metrics: {c}×{h}×{w} sample given {} values", pred.len())));
        }
        self.sums[0] += mae(pred, truth)?;
        self.sums[1] += mse(pred, truth)?;
        let mut s = 0.0;
        for k in 0..c {
            let r = k * h * w..(k + 1) * h * w;
            s += ssim(&pred[r.clone()], &truth[r], h, w, self.data_range)?.value;
        }
        self.sums[2] += s / c as f64;
        self.n += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::Contract("no samples to average".into()));
        }
        let n = self.n as f64;
        Ok(MetricReport {
            mae: self.sums[0] / n,
            mse: self.sums[1] / n,
            ssim: self.sums[2] / n,
            scale: self.scale,
            n: self.n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset() {
        let a = vec![0.2; 10];
        let b = vec![0.7; 10];
        assert!((mae(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(mae(&a, &b[..3]), Err(Error::Contract(_))));
    }

    #[test]
    fn symmetric_padding() {
        let idx: Vec<usize> = (-3..7).map(|i| symmetric(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn window_normalized() {
        let g = gaussian_window(11);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((g[5] / g[6] - (1.0 / (2.0 * 2.25f64)).exp()).abs() < 1e-12);
    }

    #[test]
    fn identical_is_one_and_small_images_flagged() {
        let a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = ssim(&a, &a, 8, 8, 2.0).unwrap();
        assert_eq!(s.value, 1.0);
        assert!(s.window_shrunk && s.window == 7);
        let s = ssim(&a, &a, 4, 16, 2.0).unwrap();
        assert_eq!(s.window, 3);
    }
}
