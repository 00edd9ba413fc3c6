//! Least-squares fit of `v_ψ ≈ T·v_P` and its coefficient of determination.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub r2: f64,
    /// Row-major `D × D`.
    pub fitted_t: Vec<f64>,
    pub dim: usize,
    pub samples: usize,
    /// Fewer than `D + 1` pairs: a ridge penalty was added.
    pub ridge: bool,
}

pub const RIDGE: f64 = 1e-6;

/// `r2 = 1 − ‖Y − X·Tᵀ‖² / ‖Y − mean(Y)‖²`, pooled over coordinates.
pub fn r_squared(xs: &[Vec<f64>], ys: &[Vec<f64>], t: &[f64], d: usize) -> Result<f64> {
    let n = ys.len();
    let mut mean = vec![0.0; d];
    for y in ys {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += v / n as f64;
        }
    }
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        for i in 0..d {
            let pred: f64 = t[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
            ss_res += (y[i] - pred).powi(2);
            ss_tot += (y[i] - mean[i]).powi(2);
        }
    }
    if !(ss_tot > 0.0) {
        return Err(Error::Numeric("r2 undefined: target vectors are all identical".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn correlation_probe(vp: &[Vec<f64>], vpsi: &[Vec<f64>]) -> Result<ProbeResult> {
    let n = vp.len();
    if n == 0 || n != vpsi.len() {
        return Err(Error::Contract(format!("probe needs matching non-empty pairs, got {n} and {}", vpsi.len())));
    }
    let d = vp[0].len();
    if d == 0 || vp.iter().chain(vpsi).any(|v| v.len() != d) {
        return Err(Error::Contract("probe vectors must share one positive dimension".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| vp[i][j]);
    let y = DMatrix::from_fn(n, d, |i, j| vpsi[i][j]);
    let ridge = n < d + 1;
    let xtx = x.transpose() * &x;
    let scale = xtx.diagonal().max().max(1e-300);
    let lam = if ridge { RIDGE * scale } else { 0.0 };
    let sys = &xtx + DMatrix::identity(d, d) * lam;
    let rhs = x.transpose() * &y;
    // Tᵀ solves (XᵀX + λI)·Tᵀ = XᵀY
    let tt = match sys.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => sys
            .svd(true, true)
            .solve(&rhs, 1e-12 * scale)
            .map_err(|e| Error::Numeric(format!("probe least squares failed: {e}")))?,
    };
    let t = tt.transpose();
    let fitted_t: Vec<f64> = (0..d * d).map(|k| t[(k / d, k % d)]).collect();
    let r2 = r_squared(vp, vpsi, &fitted_t, d)?;
    Ok(ProbeResult {
        r2,
        fitted_t,
        dim: d,
        samples: n,
        ridge,
    })
}
