//! Layered, curved and faulted velocity-map families.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::VelocityMap;
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FlatVel,
    CurveVel,
    FlatFault,
    CurveFault,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: Family,
    pub difficulty: Difficulty,
    pub height: usize,
    pub width: usize,
    pub dx: f64,
    /// Inclusive layer-count range.
    pub layers: (usize, usize),
    /// Velocity range in m/s.
    pub velocity: (f64, f64),
    /// Peak interface displacement in cells for curve families.
    pub curve_amplitude: f64,
    pub fault_probability: f64,
    /// Largest fault throw in cells.
    pub fault_throw: usize,
    pub seed: u64,
}

impl FamilySpec {
    /// Defaults for a family/difficulty pair on a 70×70, 10 m grid.
    pub fn preset(family: Family, difficulty: Difficulty, seed: u64) -> Self {
        let hard = difficulty == Difficulty::B;
        let curved = matches!(family, Family::CurveVel | Family::CurveFault);
        let faulted = matches!(family, Family::FlatFault | Family::CurveFault);
        FamilySpec {
            family,
            difficulty,
            height: 70,
            width: 70,
            dx: 10.0,
            layers: if hard { (4, 8) } else { (2, 4) },
            velocity: (1500.0, 4500.0),
            curve_amplitude: match (curved, hard) {
                (false, _) => 0.0,
                (true, false) => 4.0,
                (true, true) => 8.0,
            },
            fault_probability: if faulted { 1.0 } else { 0.0 },
            fault_throw: if hard { 12 } else { 8 },
            seed,
        }
    }

    pub fn name(&self) -> String {
        let f = match self.family {
            Family::FlatVel => "flat_vel",
            Family::CurveVel => "curve_vel",
            Family::FlatFault => "flat_fault",
            Family::CurveFault => "curve_fault",
        };
        let d = match self.difficulty {
            Difficulty::A => "a",
            Difficulty::B => "b",
        };
        format!("{f}_{d}")
    }

    pub fn validate(&self) -> Result<()> {
        let (vmin, vmax) = self.velocity;
        if !(vmin > 0.0) || !(vmin <= vmax) || !vmax.is_finite() {
            return Err(Error::Config(format!("velocity range [{vmin}, {vmax}] is invalid")));
        }
        if self.layers.0 == 0 || self.layers.0 > self.layers.1 || self.layers.1 > self.height {
            return Err(Error::Config(format!(
                "layer range {:?} invalid for height {}",
                self.layers, self.height
            )));
        }
        if self.height < 2 || self.width < 2 || !(self.dx > 0.0) {
            return Err(Error::Config("velocity grid must be at least 2×2 with positive spacing".into()));
        }
        if !(0.0..=1.0).contains(&self.fault_probability) {
            return Err(Error::Config("fault probability must lie in [0, 1]".into()));
        }
        if !(self.curve_amplitude >= 0.0) {
            return Err(Error::Config("curve amplitude must be ≥ 0".into()));
        }
        Ok(())
    }
}

impl FromStr for FamilySpec {
    type Err = Error;

    /// Parses names like `flat_vel_a` or `curve_fault_b` into the preset with seed 0.
    fn from_str(s: &str) -> Result<Self> {
        let (fam, diff) = s
            .rsplit_once('_')
            .ok_or_else(|| Error::Config(format!("unknown family `{s}`")))?;
        let family = match fam {
            "flat_vel" => Family::FlatVel,
            "curve_vel" => Family::CurveVel,
            "flat_fault" => Family::FlatFault,
            "curve_fault" => Family::CurveFault,
            _ => return Err(Error::Config(format!("unknown family `{s}`"))),
        };
        let difficulty = match diff {
            "a" | "A" => Difficulty::A,
            "b" | "B" => Difficulty::B,
            _ => return Err(Error::Config(format!("unknown difficulty in `{s}`"))),
        };
        Ok(FamilySpec::preset(family, difficulty, 0))
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

struct Layers {
    depths: Vec<f64>,
    velocities: Vec<f64>,
}

fn draw_layers(spec: &FamilySpec, index: u64) -> Layers {
    let mut rng = stream(spec.seed, "layers", index);
    let n = rng.random_range(spec.layers.0..=spec.layers.1);
    let mut cuts: Vec<usize> = Vec::with_capacity(n - 1);
    while cuts.len() < n - 1 {
        let c = rng.random_range(1..spec.height);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let (lo, hi) = spec.velocity;
    let mut velocities: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    if spec.difficulty == Difficulty::A {
        velocities.sort_by(f64::total_cmp);
    }
    Layers {
        depths: cuts.into_iter().map(|c| c as f64).collect(),
        velocities,
    }
}

/// Smooth per-column interface offsets, one row per interface.
fn draw_curves(spec: &FamilySpec, index: u64, interfaces: usize) -> Vec<Vec<f64>> {
    let mut rng = stream(spec.seed, "curves", index);
    let w = spec.width as f64;
    (0..interfaces)
        .map(|_| {
            let terms: Vec<(f64, f64, f64)> = (0..3)
                .map(|k| {
                    let freq = (k + 1) as f64 * (0.5 + rng.random::<f64>());
                    (rng.random::<f64>() * 2.0 - 1.0, freq, rng.random::<f64>() * 2.0 * PI)
                })
                .collect();
            let norm: f64 = terms.iter().map(|t| t.0.abs()).sum::<f64>().max(1e-12);
            (0..spec.width)
                .map(|x| {
                    let s: f64 = terms
                        .iter()
                        .map(|&(a, f, ph)| a * (2.0 * PI * f * x as f64 / w + ph).sin())
                        .sum();
                    spec.curve_amplitude * s / norm
                })
                .collect()
        })
        .collect()
}

struct Fault {
    x0: f64,
    z0: f64,
    /// unit normal to the fault plane
    nx: f64,
    nz: f64,
    throw: i64,
}

fn draw_faults(spec: &FamilySpec, index: u64) -> Vec<Fault> {
    let mut rng = stream(spec.seed, "faults", index);
    let max_faults = if spec.difficulty == Difficulty::B { 2 } else { 1 };
    let mut out = Vec::new();
    for _ in 0..max_faults {
        if spec.fault_throw == 0 || rng.random::<f64>() >= spec.fault_probability {
            continue;
        }
        let dip = (rng.random::<f64>() * 50.0 + 40.0).to_radians() * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let t = rng.random_range(1..=spec.fault_throw) as i64;
        out.push(Fault {
            x0: spec.width as f64 * (0.25 + 0.5 * rng.random::<f64>()),
            z0: spec.height as f64 * (0.25 + 0.5 * rng.random::<f64>()),
            nx: dip.sin(),
            nz: -dip.cos(),
            throw: if rng.random::<bool>() { t } else { -t },
        });
    }
    out
}

fn layered(spec: &FamilySpec, layers: &Layers, curves: Option<&[Vec<f64>]>) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let mut c = vec![0.0; h * w];
    for x in 0..w {
        for z in 0..h {
            let zf = z as f64;
            let k = layers
                .depths
                .iter()
                .enumerate()
                .filter(|(i, d)| zf >= **d + curves.map_or(0.0, |cv| cv[*i][x]))
                .count();
            c[z * w + x] = layers.velocities[k];
        }
    }
    c
}

fn apply_fault(spec: &FamilySpec, c: &[f64], f: &Fault) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let mut out = c.to_vec();
    for z in 0..h {
        for x in 0..w {
            let side = (x as f64 - f.x0) * f.nx + (z as f64 - f.z0) * f.nz;
            if side > 0.0 {
                let src = (z as i64 - f.throw).clamp(0, h as i64 - 1) as usize;
                out[z * w + x] = c[src * w + x];
            }
        }
    }
    out
}

/// Maps `start..start+n` of the family stream.
pub fn gen_velocity_maps_range(spec: &FamilySpec, start: u64, n: usize) -> Result<Vec<VelocityMap>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("need at least one map".into()));
    }
    (start..start + n as u64)
        .map(|i| {
            let layers = draw_layers(spec, i);
            let curves = (spec.curve_amplitude > 0.0).then(|| draw_curves(spec, i, layers.depths.len()));
            let mut c = layered(spec, &layers, curves.as_deref());
            for f in draw_faults(spec, i) {
                c = apply_fault(spec, &c, &f);
            }
            VelocityMap::new(spec.height, spec.width, spec.dx, c)
        })
        .collect()
}

pub fn gen_velocity_maps(spec: &FamilySpec, n: usize) -> Result<Vec<VelocityMap>> {
    gen_velocity_maps_range(spec, 0, n)
}
