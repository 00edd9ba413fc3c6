//! 2-D constant-density acoustic FDTD: second order in time, fourth order in
//! space, Cerjan-style sponge on all four sides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Velocity model, row-major `[depth][x]`, m/s.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityMap {
    pub height: usize,
    pub width: usize,
    /// Grid spacing in metres.
    pub dx: f64,
    pub c: Vec<f64>,
}

impl VelocityMap {
    pub fn new(height: usize, width: usize, dx: f64, c: Vec<f64>) -> Result<Self> {
        if c.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Contract(format!(
                "velocity map {height}×{width} needs {} values, got {}",
                height * width,
                c.len()
            )));
        }
        if !(dx > 0.0) {
            return Err(Error::Config(format!("grid spacing must be positive, got {dx}")));
        }
        if c.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Contract("velocities must be finite and positive".into()));
        }
        Ok(VelocityMap { height, width, dx, c })
    }

    pub fn homogeneous(height: usize, width: usize, dx: f64, c: f64) -> Result<Self> {
        Self::new(height, width, dx, vec![c; height * width])
    }

    pub fn max_velocity(&self) -> f64 {
        self.c.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Wavelet {
    /// Ricker wavelet with the given peak frequency (Hz), delayed by `1/f`.
    Ricker { peak_hz: f64 },
    /// No source injected.
    Silent,
}

impl Wavelet {
    pub fn sample(&self, t: f64) -> f64 {
        match *self {
            Wavelet::Ricker { peak_hz } => {
                let tau = t - 1.0 / peak_hz;
                let a = (std::f64::consts::PI * peak_hz * tau).powi(2);
                (1.0 - 2.0 * a) * (-a).exp()
            }
            Wavelet::Silent => 0.0,
        }
    }
}

/// Source and receiver grid positions `(depth row, x column)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub sources: Vec<(usize, usize)>,
    pub receivers: Vec<(usize, usize)>,
}

impl Survey {
    /// `n_sources` evenly spaced shots and a receiver at every column, all on
    /// the top row.
    pub fn surface(n_sources: usize, width: usize) -> Result<Self> {
        if n_sources == 0 || width == 0 {
            return Err(Error::Config("survey needs ≥ 1 source and ≥ 1 column".into()));
        }
        let sources = (0..n_sources)
            .map(|i| {
                let x = if n_sources == 1 {
                    (width - 1) / 2
                } else {
                    (i * (width - 1) + (n_sources - 1) / 2) / (n_sources - 1)
                };
                (0, x)
            })
            .collect();
        Ok(Survey {
            sources,
            receivers: (0..width).map(|x| (0, x)).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcousticConfig {
    /// Simulation time step, seconds.
    pub dt: f64,
    /// Number of simulation steps.
    pub steps: usize,
    /// Record every n-th step.
    pub record_every: usize,
    pub wavelet: Wavelet,
    pub sponge_cells: usize,
    /// Cerjan exponent: the outermost sponge cell damps by `exp(−(k·w)²)` per step.
    pub sponge_strength: f64,
}

impl AcousticConfig {
    pub fn new(dt: f64, steps: usize, record_every: usize) -> Self {
        AcousticConfig {
            dt,
            steps,
            record_every,
            wavelet: Wavelet::Ricker { peak_hz: 15.0 },
            sponge_cells: 20,
            sponge_strength: 0.015,
        }
    }

    /// Largest stable time step for the given model.
    pub fn max_stable_dt(model: &VelocityMap) -> f64 {
        0.6 * model.dx / (model.max_velocity() * std::f64::consts::SQRT_2)
    }

    pub fn recorded_samples(&self) -> usize {
        self.steps / self.record_every
    }
}

/// Recorded pressure, `[source][time][receiver]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeismicGather {
    pub sources: usize,
    pub samples: usize,
    pub receivers: usize,
    /// Sampling interval of the recorded traces, seconds.
    pub dt: f64,
    pub wavelet: Wavelet,
    pub data: Vec<f64>,
}

impl SeismicGather {
    pub fn trace(&self, source: usize, receiver: usize) -> Vec<f64> {
        (0..self.samples)
            .map(|t| self.data[(source * self.samples + t) * self.receivers + receiver])
            .collect()
    }
}

const HALO: usize = 2;
// fourth-order second-derivative stencil
const C0: f64 = -5.0 / 2.0;
const C1: f64 = 4.0 / 3.0;
const C2: f64 = -1.0 / 12.0;

struct Grid {
    nz: usize,
    nx: usize,
    stride: usize,
    /// (c·dt/dx)² per cell, zero in the halo
    courant2: Vec<f64>,
    damp: Vec<f64>,
    offset: usize,
}

impl Grid {
    fn new(model: &VelocityMap, cfg: &AcousticConfig) -> Self {
        let s = cfg.sponge_cells;
        let nz = model.height + 2 * s;
        let nx = model.width + 2 * s;
        let stride = nx + 2 * HALO;
        let total = (nz + 2 * HALO) * stride;
        let mut courant2 = vec![0.0; total];
        let mut damp = vec![1.0; total];
        let r = cfg.dt / model.dx;
        for iz in 0..nz {
            let mz = iz.saturating_sub(s).min(model.height - 1);
            let dz = if iz < s { s - iz } else if iz >= s + model.height { iz - (s + model.height) + 1 } else { 0 };
            for ix in 0..nx {
                let mx = ix.saturating_sub(s).min(model.width - 1);
                let dxs = if ix < s { s - ix } else if ix >= s + model.width { ix - (s + model.width) + 1 } else { 0 };
                let idx = (iz + HALO) * stride + ix + HALO;
                let c = model.c[mz * model.width + mx];
                courant2[idx] = (c * r) * (c * r);
                let d = dz.max(dxs) as f64;
                damp[idx] = (-(cfg.sponge_strength * d).powi(2)).exp();
            }
        }
        Grid {
            nz,
            nx,
            stride,
            courant2,
            damp,
            offset: s,
        }
    }

    fn index(&self, row: usize, col: usize) -> usize {
        (row + self.offset + HALO) * self.stride + col + self.offset + HALO
    }
}

fn simulate_shot(
    grid: &Grid,
    cfg: &AcousticConfig,
    src: (usize, usize),
    receivers: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let total = grid.courant2.len();
    let mut prev = vec![0.0; total];
    let mut cur = vec![0.0; total];
    let mut next = vec![0.0; total];
    let samples = cfg.recorded_samples();
    let mut out = vec![0.0; samples * receivers.len()];
    let si = grid.index(src.0, src.1);
    let rx: Vec<usize> = receivers.iter().map(|&(r, c)| grid.index(r, c)).collect();
    let st = grid.stride;
    // s(t) enters as c²·dt²·w(t)/dx² at the source cell
    let src_gain = grid.courant2[si];
    for n in 0..cfg.steps {
        for iz in HALO..grid.nz + HALO {
            let row = iz * st;
            for ix in HALO..grid.nx + HALO {
                let i = row + ix;
                let lap = 2.0 * C0 * cur[i]
                    + C1 * (cur[i - 1] + cur[i + 1] + cur[i - st] + cur[i + st])
                    + C2 * (cur[i - 2] + cur[i + 2] + cur[i - 2 * st] + cur[i + 2 * st]);
                next[i] = 2.0 * cur[i] - prev[i] + grid.courant2[i] * lap;
            }
        }
        next[si] += src_gain * cfg.wavelet.sample(n as f64 * cfg.dt);
        for i in 0..total {
            let d = grid.damp[i];
            if d != 1.0 {
                next[i] *= d;
                cur[i] *= d;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        if (n + 1) % cfg.record_every == 0 {
            let t = (n + 1) / cfg.record_every - 1;
            if t < samples {
                for (r, &ri) in rx.iter().enumerate() {
                    out[t * receivers.len() + r] = cur[ri];
                }
            }
        }
        if (n + 1) % 64 == 0 || n + 1 == cfg.steps {
            if !cur[si].is_finite() || cur.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "acoustic field blew up by step {} (source at {src:?})",
                    n + 1
                )));
            }
        }
    }
    Ok(out)
}

/// Simulates every shot of `survey` through `model`, recording the pressure
/// at each receiver.
pub fn acoustic_simulate(model: &VelocityMap, survey: &Survey, cfg: &AcousticConfig) -> Result<SeismicGather> {
    let max_dt = AcousticConfig::max_stable_dt(model);
    if !(cfg.dt > 0.0) || cfg.dt > max_dt {
        return Err(Error::Config(format!(
            "time step {} s violates the CFL limit; use dt ≤ {max_dt:.6e} s",
            cfg.dt
        )));
    }
    if cfg.record_every == 0 || cfg.recorded_samples() == 0 {
        return Err(Error::Config("need record_every ≥ 1 and at least one recorded sample".into()));
    }
    if survey.sources.is_empty() || survey.receivers.is_empty() {
        return Err(Error::Config("survey needs sources and receivers".into()));
    }
    for &(r, c) in survey.sources.iter().chain(&survey.receivers) {
        if r >= model.height || c >= model.width {
            return Err(Error::Config(format!(
                "survey position ({r}, {c}) outside {}×{} model",
                model.height, model.width
            )));
        }
    }
    let grid = Grid::new(model, cfg);
    let shots = par::try_map_range(survey.sources.len(), |s| {
        simulate_shot(&grid, cfg, survey.sources[s], &survey.receivers)
    })?;
    Ok(SeismicGather {
        sources: survey.sources.len(),
        samples: cfg.recorded_samples(),
        receivers: survey.receivers.len(),
        dt: cfg.dt * cfg.record_every as f64,
        wavelet: cfg.wavelet,
        data: shots.concat(),
    })
}

/// First sample index where `|trace|` reaches `fraction` of its peak.
pub fn first_break(trace: &[f64], fraction: f64) -> Option<usize> {
    let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    trace.iter().position(|v| v.abs() >= fraction * peak)
}
