//! Simultaneous iterative reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::physics::LinearProjector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirtConfig {
    pub iterations: usize,
    pub relaxation: f64,
    pub nonnegative: bool,
}

impl Default for SirtConfig {
    fn default() -> Self {
        SirtConfig {
            iterations: 200,
            relaxation: 1.0,
            nonnegative: true,
        }
    }
}

/// Iterate, normalizers and iteration count.
#[derive(Clone, Debug)]
pub struct SirtState {
    pub image: Vec<f64>,
    pub iteration: usize,
    /// 1/row sum, or 0 for null rays.
    pub inv_row: Vec<f64>,
    /// 1/column sum, or 0 for pixels no ray touches.
    pub inv_col: Vec<f64>,
    pub relaxation: f64,
}

impl SirtState {
    pub fn new(op: &dyn LinearProjector, x0: Vec<f64>, relaxation: f64) -> Result<Self> {
        if !(relaxation > 0.0 && relaxation < 2.0) {
            return Err(Error::Config(format!("relaxation ω must lie in (0, 2), got {relaxation}")));
        }
        if x0.len() != op.n_pixels() {
            return Err(Error::Contract(format!(
                "initial image has {} pixels, operator expects {}",
                x0.len(),
                op.n_pixels()
            )));
        }
        let inv = |s: Vec<f64>| -> Vec<f64> { s.into_iter().map(|v| if v > 0.0 { 1.0 / v } else { 0.0 }).collect() };
        let inv_row = inv(op.row_sums());
        if inv_row.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("geometry has no ray crossing the image".into()));
        }
        Ok(SirtState {
            image: x0,
            iteration: 0,
            inv_row,
            inv_col: inv(op.col_sums()),
            relaxation,
        })
    }

    /// One update; returns the data residual ‖p − A·x‖ *before* the update.
    pub fn step(&mut self, op: &dyn LinearProjector, sino: &[f64], nonnegative: bool) -> Result<f64> {
        let ax = op.forward(&self.image)?;
        let mut res = 0.0;
        let r: Vec<f64> = ax
            .iter()
            .zip(sino)
            .zip(&self.inv_row)
            .map(|((a, p), w)| {
                if *w != 0.0 {
                    res += (p - a) * (p - a);
                }
                (p - a) * w
            })
            .collect();
        let back = op.adjoint(&r)?;
        let omega = self.relaxation;
        let inv_col = &self.inv_col;
        const CHUNK: usize = 4096;
        par::for_each_chunk(&mut self.image, CHUNK, |c, chunk| {
            for (k, x) in chunk.iter_mut().enumerate() {
                let j = c * CHUNK + k;
                *x += omega * inv_col[j] * back[j];
                if nonnegative && *x < 0.0 {
                    *x = 0.0;
                }
            }
        });
        self.iteration += 1;
        Ok(res.sqrt())
    }

    pub fn data_residual(&self, op: &dyn LinearProjector, sino: &[f64]) -> Result<f64> {
        let ax = op.forward(&self.image)?;
        Ok(ax
            .iter()
            .zip(sino)
            .zip(&self.inv_row)
            .filter(|(_, w)| **w != 0.0)
            .map(|((a, p), _)| (p - a) * (p - a))
            .sum::<f64>()
            .sqrt())
    }
}

#[derive(Clone, Debug)]
pub struct SirtResult {
    pub image: Vec<f64>,
    /// `residuals[k]` is ‖p − A·x_k‖ for k = 0..=iterations.
    pub residuals: Vec<f64>,
}

/// Runs SIRT from `x₀ = 0`.
pub fn sirt(op: &dyn LinearProjector, sino: &[f64], cfg: &SirtConfig) -> Result<SirtResult> {
    sirt_from(op, sino, vec![0.0; op.n_pixels()], cfg)
}

pub fn sirt_from(op: &dyn LinearProjector, sino: &[f64], x0: Vec<f64>, cfg: &SirtConfig) -> Result<SirtResult> {
    if cfg.iterations == 0 {
        return Err(Error::Config("SIRT needs at least one iteration".into()));
    }
    if sino.len() != op.n_rays() {
        return Err(Error::Geometry(format!(
            "sinogram has {} values, geometry has {} rays",
            sino.len(),
            op.n_rays()
        )));
    }
    let mut st = SirtState::new(op, x0, cfg.relaxation)?;
    let mut residuals = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        residuals.push(st.step(op, sino, cfg.nonnegative)?);
    }
    residuals.push(st.data_residual(op, sino)?);
    Ok(SirtResult {
        image: st.image,
        residuals,
    })
}
