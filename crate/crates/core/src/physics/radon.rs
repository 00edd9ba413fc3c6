//! Exact ray-grid traversal projector for line-integral (CT) data, with its
//! adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Square `n × n` image centred on the origin with square pixels of side
/// `pixel`. Row `i` spans `y ∈ [y_min + i·pixel, y_min + (i+1)·pixel)`,
/// column `j` spans the same in `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub n: usize,
    pub pixel: f64,
}

impl ImageGrid {
    pub fn new(n: usize, pixel: f64) -> Result<Self> {
        if n == 0 || !(pixel > 0.0) {
            return Err(Error::Config(format!("invalid image grid n={n}, pixel={pixel}")));
        }
        Ok(ImageGrid { n, pixel })
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.n as f64 * self.pixel
    }

    /// Centre of pixel `(row, col)`.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let h = self.half_width();
        (
            -h + (col as f64 + 0.5) * self.pixel,
            -h + (row as f64 + 0.5) * self.pixel,
        )
    }

    pub fn pixels(&self) -> usize {
        self.n * self.n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub source: (f64, f64),
    pub detector: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryKind {
    Parallel { views: usize, detectors: usize },
    /// Point source on a circle of `radius` (in units of the image half-width),
    /// equiangular detector arc centred on the source at twice that radius.
    Fan { views: usize, detectors: usize, radius: f64 },
    /// Three linear source arrays on the sides of an equilateral triangle,
    /// each firing at a linear detector bank on the opposite side.
    TriArray { arrays: usize, per_array: usize, detectors: usize },
}

/// Parses `parallel:V,D`, `fan:V,D,R` or `tri:A,P,D`.
impl std::str::FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad geometry `{s}`; expected parallel:V,D, fan:V,D,R or tri:A,P,D"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let int = |i: usize| -> Result<usize> { parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(bad) };
        match (kind, parts.len()) {
            ("parallel", 2) => Ok(GeometryKind::Parallel { views: int(0)?, detectors: int(1)? }),
            ("fan", 3) => Ok(GeometryKind::Fan {
                views: int(0)?,
                detectors: int(1)?,
                radius: parts[2].parse().map_err(|_| bad())?,
            }),
            ("tri", 3) => Ok(GeometryKind::TriArray { arrays: int(0)?, per_array: int(1)?, detectors: int(2)? }),
            _ => Err(bad()),
        }
    }
}

/// Rays in sinogram order together with the sinogram shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub kind: GeometryKind,
    pub grid: ImageGrid,
    pub shape: Vec<usize>,
    pub rays: Vec<Ray>,
}

impl ScanGeometry {
    pub fn from_rays(kind: GeometryKind, grid: ImageGrid, shape: Vec<usize>, rays: Vec<Ray>) -> Result<Self> {
        if shape.iter().product::<usize>() != rays.len() {
            return Err(Error::Geometry(format!(
                "sinogram shape {shape:?} does not hold {} rays",
                rays.len()
            )));
        }
        for (k, r) in rays.iter().enumerate() {
            let (dx, dy) = (r.detector.0 - r.source.0, r.detector.1 - r.source.1);
            if dx == 0.0 && dy == 0.0 {
                return Err(Error::Geometry(format!("ray {k} is degenerate: source equals detector")));
            }
            if ![r.source.0, r.source.1, r.detector.0, r.detector.1].iter().all(|v| v.is_finite()) {
                return Err(Error::Geometry(format!("ray {k} has non-finite endpoints")));
            }
        }
        Ok(ScanGeometry { kind, grid, shape, rays })
    }

    pub fn n_rays(&self) -> usize {
        self.rays.len()
    }

    /// Fan-beam half opening angle, if this is a fan geometry.
    pub fn fan_half_angle(&self) -> Option<f64> {
        match self.kind {
            GeometryKind::Fan { radius, .. } => Some(fan_half_angle(radius)),
            _ => None,
        }
    }
}

fn fan_half_angle(radius: f64) -> f64 {
    // covers the image's circumscribed circle (radius √2 in half-width units)
    (std::f64::consts::SQRT_2 / radius).asin() * 1.02
}

fn check_count(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("geometry count `{name}` must be ≥ 1")));
    }
    Ok(())
}

pub fn make_geometry(kind: GeometryKind, grid: ImageGrid) -> Result<ScanGeometry> {
    let h = grid.half_width();
    let diag = h * std::f64::consts::SQRT_2;
    let (shape, rays) = match kind {
        GeometryKind::Parallel { views, detectors } => {
            check_count("views", views)?;
            check_count("detectors", detectors)?;
            let mut rays = Vec::with_capacity(views * detectors);
            for v in 0..views {
                let th = std::f64::consts::PI * v as f64 / views as f64;
                let (s, c) = th.sin_cos();
                for d in 0..detectors {
                    let t = -diag + (d as f64 + 0.5) * 2.0 * diag / detectors as f64;
                    // ray direction (−sinθ, cosθ), offset t along (cosθ, sinθ)
                    let (px, py) = (t * c, t * s);
                    let l = 2.0 * diag;
                    rays.push(Ray {
                        source: (px + l * s, py - l * c),
                        detector: (px - l * s, py + l * c),
                    });
                }
            }
            (vec![views, detectors], rays)
        }
        GeometryKind::Fan { views, detectors, radius } => {
            check_count("views", views)?;
            check_count("detectors", detectors)?;
            if !(radius > std::f64::consts::SQRT_2) || !radius.is_finite() {
                return Err(Error::Config(format!(
                    "fan radius {radius} must exceed √2 image half-widths so the source stays outside the image"
                )));
            }
            let r = radius * h;
            let gamma = fan_half_angle(radius);
            let mut rays = Vec::with_capacity(views * detectors);
            for v in 0..views {
                let beta = 2.0 * std::f64::consts::PI * v as f64 / views as f64;
                let src = (r * beta.cos(), r * beta.sin());
                for d in 0..detectors {
                    let a = -gamma + (d as f64 + 0.5) * 2.0 * gamma / detectors as f64;
                    let phi = beta + std::f64::consts::PI + a;
                    rays.push(Ray {
                        source: src,
                        detector: (src.0 + 2.0 * r * phi.cos(), src.1 + 2.0 * r * phi.sin()),
                    });
                }
            }
            (vec![views, detectors], rays)
        }
        GeometryKind::TriArray { arrays, per_array, detectors } => {
            if arrays != 3 {
                return Err(Error::Config(format!("tri_array needs exactly 3 arrays, got {arrays}")));
            }
            check_count("per_array", per_array)?;
            check_count("detectors", detectors)?;
            // triangle circumscribing the image's circumcircle with margin
            let inr = 1.25 * diag;
            let side = 2.0 * 3f64.sqrt() * inr;
            let mut rays = Vec::with_capacity(3 * per_array * detectors);
            for a in 0..3 {
                let ang = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * a as f64 / 3.0;
                let (nx, ny) = (ang.cos(), ang.sin());
                let (tx, ty) = (-ny, nx);
                for k in 0..per_array {
                    let u = -0.5 * side + (k as f64 + 0.5) * side / per_array as f64;
                    let src = (inr * nx + u * tx, inr * ny + u * ty);
                    for d in 0..detectors {
                        let w = -0.5 * side + (d as f64 + 0.5) * side / detectors as f64;
                        rays.push(Ray {
                            source: src,
                            detector: (-inr * nx + w * tx, -inr * ny + w * ty),
                        });
                    }
                }
            }
            (vec![3, per_array, detectors], rays)
        }
    };
    ScanGeometry::from_rays(kind, grid, shape, rays)
}

/// Per-ray line integrals, laid out in `geometry.shape` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// A linear operator between images and sinograms.
pub trait LinearProjector: Sync {
    fn n_rays(&self) -> usize;
    fn n_pixels(&self) -> usize;
    fn forward(&self, image: &[f64]) -> Result<Vec<f64>>;
    fn adjoint(&self, sino: &[f64]) -> Result<Vec<f64>>;
    /// Σ_j a_ij for each ray i.
    fn row_sums(&self) -> Vec<f64>;
    /// Σ_i a_ij for each pixel j.
    fn col_sums(&self) -> Vec<f64>;
}

/// Intersection lengths of a ray with the pixels it crosses, in traversal
/// order. Null rays give an empty list.
pub fn traverse(grid: &ImageGrid, ray: &Ray) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let h = grid.half_width();
    let (x0, y0) = ray.source;
    let (dx, dy) = (ray.detector.0 - x0, ray.detector.1 - y0);
    let len = dx.hypot(dy);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, d) in [(x0, dx), (y0, dy)] {
        if d == 0.0 {
            if p < -h || p >= h {
                return out;
            }
        } else {
            let (a, b) = ((-h - p) / d, (h - p) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if t1 <= t0 {
        return out;
    }
    let n = grid.n as i64;
    let px = grid.pixel;
    let tm = 0.5 * (t0 + t1);
    // starting cell from a point just inside the entry, clamped
    let cell = |p: f64, d: f64, t: f64| -> i64 {
        let c = ((p + t * d + h) / px).floor() as i64;
        c.clamp(0, n - 1)
    };
    let te = t0 + (tm - t0) * 1e-9;
    let mut ix = cell(x0, dx, te);
    let mut iy = cell(y0, dy, te);
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let next_boundary = |i: i64, step: i64, p: f64, d: f64| -> f64 {
        if d == 0.0 {
            return f64::INFINITY;
        }
        let b = -h + (if step > 0 { i + 1 } else { i }) as f64 * px;
        (b - p) / d
    };
    let mut tx = next_boundary(ix, step_x, x0, dx);
    let mut ty = next_boundary(iy, step_y, y0, dy);
    let dtx = if dx == 0.0 { f64::INFINITY } else { px / dx.abs() };
    let dty = if dy == 0.0 { f64::INFINITY } else { px / dy.abs() };
    let mut t = t0;
    while t < t1 && (0..n).contains(&ix) && (0..n).contains(&iy) {
        let tn = tx.min(ty).min(t1);
        if tn > t {
            out.push(((iy * n + ix) as usize, (tn - t) * len));
        }
        t = tn;
        if tx <= ty {
            ix += step_x;
            tx += dtx;
        } else {
            iy += step_y;
            ty += dty;
        }
    }
    out
}

/// Sparse system matrix built once from the traversal weights.
#[derive(Clone, Debug)]
pub struct RayProjector {
    pub geometry: ScanGeometry,
    offsets: Vec<usize>,
    pixels: Vec<u32>,
    weights: Vec<f64>,
}

const ADJOINT_BLOCKS: usize = 16;

impl RayProjector {
    pub fn new(geometry: &ScanGeometry) -> Self {
        let per_ray = par::map_range(geometry.rays.len(), |k| traverse(&geometry.grid, &geometry.rays[k]));
        let mut offsets = Vec::with_capacity(per_ray.len() + 1);
        offsets.push(0);
        let total: usize = per_ray.iter().map(Vec::len).sum();
        let mut pixels = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for r in per_ray {
            for (p, w) in r {
                pixels.push(p as u32);
                weights.push(w);
            }
            offsets.push(pixels.len());
        }
        RayProjector {
            geometry: geometry.clone(),
            offsets,
            pixels,
            weights,
        }
    }

    /// `(pixel, length)` pairs for one ray.
    pub fn ray_weights(&self, ray: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[ray], self.offsets[ray + 1]);
        self.pixels[a..b].iter().zip(&self.weights[a..b]).map(|(&p, &w)| (p as usize, w))
    }

    pub fn is_null(&self, ray: usize) -> bool {
        self.offsets[ray] == self.offsets[ray + 1]
    }

    fn check(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::Geometry(format!("{what} has {got} values, geometry expects {want}")));
        }
        Ok(())
    }
}

impl LinearProjector for RayProjector {
    fn n_rays(&self) -> usize {
        self.geometry.rays.len()
    }

    fn n_pixels(&self) -> usize {
        self.geometry.grid.pixels()
    }

    fn forward(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.check(image.len(), self.n_pixels(), "image")?;
        Ok(par::map_range(self.n_rays(), |k| {
            self.ray_weights(k).map(|(p, w)| w * image[p]).sum()
        }))
    }

    fn adjoint(&self, sino: &[f64]) -> Result<Vec<f64>> {
        self.check(sino.len(), self.n_rays(), "sinogram")?;
        let n = self.n_rays();
        let block = n.div_ceil(ADJOINT_BLOCKS).max(1);
        // fixed blocking keeps the summation order independent of thread count
        let partials = par::map_range(n.div_ceil(block), |b| {
            let mut img = vec![0.0; self.n_pixels()];
            for k in b * block..((b + 1) * block).min(n) {
                let s = sino[k];
                if s != 0.0 {
                    for (p, w) in self.ray_weights(k) {
                        img[p] += w * s;
                    }
                }
            }
            img
        });
        let mut out = vec![0.0; self.n_pixels()];
        for part in partials {
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        Ok(out)
    }

    fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rays()).map(|k| self.ray_weights(k).map(|(_, w)| w).sum()).collect()
    }

    fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_pixels()];
        for (&p, &w) in self.pixels.iter().zip(&self.weights) {
            out[p as usize] += w;
        }
        out
    }
}

/// Explicit row-major matrix; handy for small hand-checked systems.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseProjector {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl DenseProjector {
    pub fn new(rows: usize, cols: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Contract(format!("dense projector {rows}×{cols} given {} entries", a.len())));
        }
        Ok(DenseProjector { rows, cols, a })
    }
}

impl LinearProjector for DenseProjector {
    fn n_rays(&self) -> usize {
        self.rows
    }

    fn n_pixels(&self) -> usize {
        self.cols
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Geometry(format!("image has {} values, operator expects {}", x.len(), self.cols)));
        }
        Ok(self.a.chunks(self.cols).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Geometry(format!("sinogram has {} values, operator expects {}", y.len(), self.rows)));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.a.chunks(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(r) {
                *o += a * yi;
            }
        }
        Ok(out)
    }

    fn row_sums(&self) -> Vec<f64> {
        self.a.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.a.chunks(self.cols) {
            for (o, a) in out.iter_mut().zip(r) {
                *o += a;
            }
        }
        out
    }
}

pub fn radon_project(image: &[f64], geometry: &ScanGeometry) -> Result<Sinogram> {
    let values = RayProjector::new(geometry).forward(image)?;
    Ok(Sinogram {
        shape: geometry.shape.clone(),
        values,
    })
}

pub fn backproject(sino: &Sinogram, geometry: &ScanGeometry) -> Result<Vec<f64>> {
    if sino.shape != geometry.shape {
        return Err(Error::Geometry(format!(
            "sinogram shape {:?} does not match geometry {:?}",
            sino.shape, geometry.shape
        )));
    }
    RayProjector::new(geometry).adjoint(&sino.values)
}

#[cfg(test)]
mod tests {
    #[test]
    fn geometry_strings() {
        use super::GeometryKind;
        assert_eq!("parallel:60,128".parse::<GeometryKind>().unwrap(), GeometryKind::Parallel { views: 60, detectors: 128 });
        assert_eq!(
            "tri:3,45,192".parse::<GeometryKind>().unwrap(),
            GeometryKind::TriArray { arrays: 3, per_array: 45, detectors: 192 }
        );
        assert!(matches!("fan:10,20,2.5".parse::<GeometryKind>().unwrap(), GeometryKind::Fan { radius, .. } if radius == 2.5));
        for bad in ["parallel:60", "cone:1,2", "parallel:a,b", "tri"] {
            assert!(bad.parse::<GeometryKind>().is_err(), "{bad}");
        }
    }

    use super::*;

    fn grid(n: usize) -> ImageGrid {
        ImageGrid::new(n, 1.0).unwrap()
    }

    #[test]
    fn single_parallel_ray() {
        let g = make_geometry(GeometryKind::Parallel { views: 1, detectors: 1 }, grid(4)).unwrap();
        assert_eq!(g.rays.len(), 1);
        // vertical ray through x = 0 lies on a pixel boundary; it belongs to one column
        let w = traverse(&g.grid, &g.rays[0]);
        let total: f64 = w.iter().map(|p| p.1).sum();
        assert!((total - 4.0).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn diagonal_ray_lengths() {
        let g = grid(2);
        let r = Ray { source: (-2.0, -2.0), detector: (2.0, 2.0) };
        let w = traverse(&g, &r);
        let s2 = std::f64::consts::SQRT_2;
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].0, 0);
        assert_eq!(w[1].0, 3);
        assert!((w[0].1 - s2).abs() < 1e-12 && (w[1].1 - s2).abs() < 1e-12);
    }

    #[test]
    fn missing_ray_is_null() {
        let g = grid(4);
        let r = Ray { source: (-5.0, 3.0), detector: (5.0, 3.5) };
        assert!(traverse(&g, &r).is_empty());
    }

    #[test]
    fn degenerate_ray_rejected() {
        let r = Ray { source: (1.0, 1.0), detector: (1.0, 1.0) };
        let err = ScanGeometry::from_rays(GeometryKind::Parallel { views: 1, detectors: 1 }, grid(2), vec![1, 1], vec![r]);
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn zero_counts_rejected() {
        for k in [
            GeometryKind::Parallel { views: 0, detectors: 3 },
            GeometryKind::Fan { views: 3, detectors: 0, radius: 3.0 },
            GeometryKind::TriArray { arrays: 3, per_array: 0, detectors: 4 },
            GeometryKind::TriArray { arrays: 2, per_array: 4, detectors: 4 },
        ] {
            assert!(matches!(make_geometry(k, grid(8)), Err(Error::Config(_))), "{k:?}");
        }
    }

    #[test]
    fn tri_array_shape() {
        let g = make_geometry(GeometryKind::TriArray { arrays: 3, per_array: 45, detectors: 1728 }, grid(16)).unwrap();
        assert_eq!(g.shape, vec![3, 45, 1728]);
        assert_eq!(g.n_rays(), 3 * 45 * 1728);
    }

    #[test]
    fn dense_matches_definition() {
        let a = DenseProjector::new(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.forward(&[1.0, 2.0]).unwrap(), vec![3.0, 2.0]);
        assert_eq!(a.adjoint(&[1.0, 1.0]).unwrap(), vec![1.0, 2.0]);
    }
}
