//! Head-like ellipse phantoms on a centred square grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::ImageGrid;
use crate::rng::stream;

const SUPERSAMPLE: usize = 4;

/// Ellipse in normalised image coordinates (`[-1, 1]²`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
    pub angle: f64,
    pub value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.ax;
        let v = (-s * dx + c * dy) / self.ay;
        u * u + v * v <= 1.0
    }
}

/// Paints ellipses in order (later ones overwrite) and averages
/// `SUPERSAMPLE²` sub-samples per pixel.
pub fn paint(n: usize, ellipses: &[Ellipse]) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    let sub = SUPERSAMPLE as f64;
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = -1.0 + 2.0 * (col as f64 + (sx as f64 + 0.5) / sub) / n as f64;
                    let y = -1.0 + 2.0 * (row as f64 + (sy as f64 + 0.5) / sub) / n as f64;
                    let mut v = 0.0;
                    for e in ellipses {
                        if e.contains(x, y) {
                            v = e.value;
                        }
                    }
                    acc += v;
                }
            }
            img[row * n + col] = acc / (sub * sub);
        }
    }
    img
}

/// Ellipses of one random phantom: skull ring, brain, inner structures.
pub fn phantom_ellipses(seed: u64, index: u64) -> Vec<Ellipse> {
    let mut rng = stream(seed, "phantom", index);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let ax = u(0.72, 0.88);
    let ay = u(0.82, 0.95);
    let angle = u(-0.15, 0.15);
    let thick = u(0.06, 0.1);
    let mut out = vec![
        Ellipse { cx: 0.0, cy: 0.0, ax, ay, angle, value: u(0.85, 1.0) },
        Ellipse { cx: 0.0, cy: 0.0, ax: ax - thick, ay: ay - thick, angle, value: u(0.2, 0.35) },
    ];
    let k = 2 + (u(0.0, 4.0) as usize);
    for _ in 0..k {
        let r = u(0.0, 0.45);
        let t = u(0.0, std::f64::consts::TAU);
        out.push(Ellipse {
            cx: r * t.cos() * ax,
            cy: r * t.sin() * ay,
            ax: u(0.06, 0.22),
            ay: u(0.06, 0.22),
            angle: u(0.0, std::f64::consts::PI),
            value: u(0.0, 0.6),
        });
    }
    out
}

pub fn gen_phantoms_range(seed: u64, start: u64, n: usize, grid: &ImageGrid) -> Result<Vec<Vec<f64>>> {
    if grid.n < 32 {
        return Err(Error::Config(format!("phantom grid must be ≥ 32, got {}", grid.n)));
    }
    if n == 0 {
        return Err(Error::Config("need at least one phantom".into()));
    }
    Ok((start..start + n as u64).map(|i| paint(grid.n, &phantom_ellipses(seed, i))).collect())
}

pub fn gen_phantoms(n: usize, seed: u64, grid: &ImageGrid) -> Result<Vec<Vec<f64>>> {
    gen_phantoms_range(seed, 0, n, grid)
}

/// Uniform disk of radius `rho` (grid units) centred at the origin, with
/// pixel values equal to the covered area fraction (`sub × sub` samples).
pub fn disk_image(grid: &ImageGrid, rho: f64, sub: usize) -> Vec<f64> {
    let n = grid.n;
    let h = grid.half_width();
    let s = sub as f64;
    let mut img = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let mut hits = 0usize;
            for sy in 0..sub {
                for sx in 0..sub {
                    let x = -h + (col as f64 + (sx as f64 + 0.5) / s) * grid.pixel;
                    let y = -h + (row as f64 + (sy as f64 + 0.5) / s) * grid.pixel;
                    if x * x + y * y <= rho * rho {
                        hits += 1;
                    }
                }
            }
            img[row * n + col] = hits as f64 / (s * s);
        }
    }
    img
}
