//! Hidden-wave analysis: diagonalize `A·B⁻¹ = V Λ V⁻¹`, move feature maps
//! into wave coordinates `ζ = V⁻¹ z`, and measure how closely each channel
//! obeys the one-way wave equation `Δx ζ_k = λ_k Δy ζ_k`.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::finola::{CoefficientMatrices, FeatureMap};

pub type C64 = Complex<f64>;

/// Condition estimate of `B` above which it is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;
/// Largest accepted `‖VΛV⁻¹ − AB⁻¹‖_F / ‖AB⁻¹‖_F`.
pub const RECON_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct WaveSpectrum {
    /// Eigenvector basis, one unit-norm column per wave speed.
    pub v: DMatrix<C64>,
    pub v_inv: DMatrix<C64>,
    /// Wave speeds, sorted by (real, imaginary).
    pub lambda: Vec<C64>,
    pub cond_v: f64,
    pub recon_residual: f64,
}

impl WaveSpectrum {
    pub fn channels(&self) -> usize {
        self.lambda.len()
    }
}

fn to_dmatrix(data: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}

fn condition(sv: &[f64]) -> f64 {
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Computes `V`, `Λ` with `V Λ V⁻¹ ≈ A B⁻¹`.
pub fn diagonalize(coeffs: &CoefficientMatrices<f64>) -> Result<WaveSpectrum> {
    let n = coeffs.channels();
    let a = to_dmatrix(coeffs.a(), n);
    let b = to_dmatrix(coeffs.b(), n);

    let cond_b = condition(b.clone().singular_values().as_slice());
    if !(cond_b <= SINGULAR_COND) {
        return Err(Error::Singular(cond_b));
    }
    // M = A B⁻¹  ⇔  Bᵀ Mᵀ = Aᵀ
    let mt = b
        .transpose()
        .lu()
        .solve(&a.transpose())
        .ok_or(Error::Singular(f64::INFINITY))?;
    let m = mt.transpose();

    let schur = nalgebra::Schur::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numeric("Schur iteration did not converge".into()))?;
    let mut lambda: Vec<C64> = schur.complex_eigenvalues().iter().copied().collect();
    lambda.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

    let mc: DMatrix<C64> = m.map(|x| C64::new(x, 0.0));
    let scale = m.norm().max(1.0);
    let mut v = DMatrix::<C64>::zeros(n, n);
    let mut col = 0;
    let mut i = 0;
    while i < n {
        // cluster numerically repeated eigenvalues; take a null-space basis for each
        let mut j = i + 1;
        while j < n && (lambda[j] - lambda[i]).norm() <= 1e-9 * scale {
            j += 1;
        }
        let mult = j - i;
        let center = lambda[i..j].iter().sum::<C64>() / C64::new(mult as f64, 0.0);
        let shifted = &mc - DMatrix::<C64>::identity(n, n) * center;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD failed".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
        for &r in order.iter().take(mult) {
            let mut vec: Vec<C64> = (0..n).map(|k| vt[(r, k)].conj()).collect();
            normalize_phase(&mut vec);
            for (k, val) in vec.into_iter().enumerate() {
                v[(k, col)] = val;
            }
            col += 1;
        }
        for k in i..j {
            lambda[k] = center;
        }
        i = j;
    }

    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or(Error::NotDiagonalizable { residual: f64::INFINITY })?;
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda.clone()));
    let recon = &v * lam * &v_inv - &mc;
    let m_norm = m.norm();
    let recon_residual = if m_norm > 0.0 { recon.norm() / m_norm } else { recon.norm() };
    if !(recon_residual < RECON_TOL) {
        return Err(Error::NotDiagonalizable { residual: recon_residual });
    }
    let cond_v = condition(v.clone().singular_values().as_slice());
    if !cond_v.is_finite() {
        return Err(Error::NotDiagonalizable { residual: recon_residual });
    }
    Ok(WaveSpectrum {
        v,
        v_inv,
        lambda,
        cond_v,
        recon_residual,
    })
}

/// Unit 2-norm, with the largest-magnitude component rotated onto the
/// positive real axis.
fn normalize_phase(vec: &mut [C64]) {
    let norm = vec.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut best = 0;
    for (k, c) in vec.iter().enumerate() {
        if c.norm() > vec[best].norm() * (1.0 + 1e-12) {
            best = k;
        }
    }
    let pivot = vec[best];
    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { C64::new(1.0, 0.0) };
    for c in vec.iter_mut() {
        *c = *c * phase / norm;
    }
}

/// `ζ = V⁻¹ z` at every grid position.
#[derive(Clone, Debug)]
pub struct WaveSolution {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-major `[C, H, W]`.
    pub zeta: Vec<C64>,
    /// `ζ(0, 0)`.
    pub initial: Vec<C64>,
}

impl WaveSolution {
    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> C64 {
        self.zeta[(c * self.height + y) * self.width + x]
    }
}

fn apply_per_position(
    m: &DMatrix<C64>,
    src: impl Fn(usize, usize) -> C64,
    c: usize,
    hw: usize,
) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); c * hw];
    let mut col = vec![C64::new(0.0, 0.0); c];
    for pos in 0..hw {
        for (k, v) in col.iter_mut().enumerate() {
            *v = src(k, pos);
        }
        for r in 0..c {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..c {
                s += m[(r, k)] * col[k];
            }
            out[r * hw + pos] = s;
        }
    }
    out
}

pub fn to_wave_coords(z: &FeatureMap<f64>, spectrum: &WaveSpectrum) -> Result<WaveSolution> {
    let c = spectrum.channels();
    if z.channels != c {
        return Err(Error::Contract(format!(
            "feature map has {} channels, spectrum has {c}",
            z.channels
        )));
    }
    let hw = z.height * z.width;
    let zeta = apply_per_position(&spectrum.v_inv, |k, pos| C64::new(z.values[k * hw + pos], 0.0), c, hw);
    let initial = (0..c).map(|k| zeta[k * hw]).collect();
    Ok(WaveSolution {
        channels: c,
        height: z.height,
        width: z.width,
        zeta,
        initial,
    })
}

/// `V ζ`, the inverse of [`to_wave_coords`] (complex-valued).
pub fn from_wave_coords(sol: &WaveSolution, spectrum: &WaveSpectrum) -> Vec<C64> {
    let hw = sol.height * sol.width;
    apply_per_position(&spectrum.v, |k, pos| sol.zeta[k * hw + pos], sol.channels, hw)
}

/// Residual statistics of `Δx ζ_k − λ_k Δy ζ_k` for one channel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChannelResidual {
    pub rms: f64,
    pub max: f64,
    /// `rms` divided by the RMS of `ζ_k` over the full grid.
    pub relative: f64,
}

/// Running per-channel accumulation of wave residuals over many solutions.
#[derive(Clone, Debug)]
pub struct ResidualAccumulator {
    sq: Vec<f64>,
    count: Vec<usize>,
    max: Vec<f64>,
    zeta_sq: Vec<f64>,
    zeta_count: Vec<usize>,
}

impl ResidualAccumulator {
    pub fn new(channels: usize) -> Self {
        ResidualAccumulator {
            sq: vec![0.0; channels],
            count: vec![0; channels],
            max: vec![0.0; channels],
            zeta_sq: vec![0.0; channels],
            zeta_count: vec![0; channels],
        }
    }

    pub fn add(&mut self, sol: &WaveSolution, lambda: &[C64]) -> Result<()> {
        if sol.height < 2 || sol.width < 2 {
            return Err(Error::Contract(format!(
                "wave residual needs H, W ≥ 2, got {}×{}",
                sol.height, sol.width
            )));
        }
        if lambda.len() != sol.channels || self.sq.len() != sol.channels {
            return Err(Error::Contract("wave speed count does not match channel count".into()));
        }
        for k in 0..sol.channels {
            for y in 0..sol.height - 1 {
                for x in 0..sol.width - 1 {
                    let z = sol.get(k, y, x);
                    let dx = sol.get(k, y, x + 1) - z;
                    let dy = sol.get(k, y + 1, x) - z;
                    let r = (dx - lambda[k] * dy).norm();
                    self.sq[k] += r * r;
                    self.max[k] = self.max[k].max(r);
                    self.count[k] += 1;
                }
            }
            for y in 0..sol.height {
                for x in 0..sol.width {
                    self.zeta_sq[k] += sol.get(k, y, x).norm_sqr();
                    self.zeta_count[k] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Vec<ChannelResidual> {
        (0..self.sq.len())
            .map(|k| {
                let rms = (self.sq[k] / self.count[k].max(1) as f64).sqrt();
                let zrms = (self.zeta_sq[k] / self.zeta_count[k].max(1) as f64).sqrt();
                ChannelResidual {
                    rms,
                    max: self.max[k],
                    relative: if zrms > 0.0 { rms / zrms } else { 0.0 },
                }
            })
            .collect()
    }
}

/// Per-channel residual of the one-way wave equations over the
/// `(H−1) × (W−1)` interior, forward differences with unit spacing.
pub fn wave_residual(sol: &WaveSolution, lambda: &[C64]) -> Result<Vec<ChannelResidual>> {
    let mut acc = ResidualAccumulator::new(sol.channels);
    acc.add(sol, lambda)?;
    Ok(acc.finish())
}

#[derive(Clone, Debug)]
pub struct SharedSpeedReport {
    pub spectrum: WaveSpectrum,
    pub measurement: Vec<ChannelResidual>,
    pub property: Vec<ChannelResidual>,
    pub initial_measurement: Vec<C64>,
    pub initial_property: Vec<C64>,
}

/// Diagonalizes once and measures both modalities under the same speeds.
pub fn shared_speed_report(
    coeffs: &CoefficientMatrices<f64>,
    z_measurement: &FeatureMap<f64>,
    z_property: &FeatureMap<f64>,
) -> Result<SharedSpeedReport> {
    let spectrum = diagonalize(coeffs)?;
    let zp = to_wave_coords(z_measurement, &spectrum)?;
    let zq = to_wave_coords(z_property, &spectrum)?;
    Ok(SharedSpeedReport {
        measurement: wave_residual(&zp, &spectrum.lambda)?,
        property: wave_residual(&zq, &spectrum.lambda)?,
        initial_measurement: zp.initial,
        initial_property: zq.initial,
        spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finola::{autoregress, FinolaMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(d: &[f64]) -> Vec<f64> {
        let n = d.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = d[i];
        }
        m
    }

    #[test]
    fn diagonal_generators() {
        let coeffs = CoefficientMatrices::new(diag(&[2.0, 3.0]), diag(&[1.0, 1.0]), 2).unwrap();
        let s = diagonalize(&coeffs).unwrap();
        assert_eq!(s.lambda.len(), 2);
        assert!((s.lambda[0] - C64::new(2.0, 0.0)).norm() < 1e-12);
        assert!((s.lambda[1] - C64::new(3.0, 0.0)).norm() < 1e-12);
        // columns are identity columns (phase-normalized)
        for r in 0..2 {
            for c in 0..2 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((s.v[(r, c)] - C64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_eigenvalues_are_handled() {
        let coeffs = CoefficientMatrices::new(diag(&[2.0, 2.0, 2.0]), diag(&[1.0, 1.0, 1.0]), 3).unwrap();
        let s = diagonalize(&coeffs).unwrap();
        assert!(s.recon_residual < 1e-12);
        assert!(s.cond_v < 1.0 + 1e-9);
    }

    #[test]
    fn singular_b_is_rejected() {
        let coeffs = CoefficientMatrices::new(diag(&[1.0, 1.0]), vec![0.0; 4], 2).unwrap();
        assert!(matches!(diagonalize(&coeffs), Err(Error::Singular(_))));
    }

    #[test]
    fn defective_matrix_is_rejected() {
        // A = Jordan block, B = I
        let coeffs = CoefficientMatrices::new(vec![1.0, 1.0, 0.0, 1.0], diag(&[1.0, 1.0]), 2).unwrap();
        assert!(matches!(diagonalize(&coeffs), Err(Error::NotDiagonalizable { .. })));
    }

    #[test]
    fn random_pairs_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 16;
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-0.3..0.3)).collect();
        for i in 0..n {
            b[i * n + i] += 3.0;
        }
        let s = diagonalize(&CoefficientMatrices::new(a, b, n).unwrap()).unwrap();
        assert!(s.recon_residual < 1e-10, "{}", s.recon_residual);
        for w in s.lambda.windows(2) {
            assert!(w[0].re <= w[1].re);
        }
    }

    #[test]
    fn identity_basis_and_round_trip() {
        let coeffs = CoefficientMatrices::new(diag(&[0.1, 0.2, 0.3]), diag(&[0.5, 0.4, 0.3]), 3).unwrap();
        let s = diagonalize(&coeffs).unwrap();
        let map = FeatureMap {
            channels: 3,
            height: 2,
            width: 3,
            values: (0..18).map(|i| i as f64 - 4.0).collect(),
        };
        let sol = to_wave_coords(&map, &s).unwrap();
        // eigenvalues 0.2, 0.5, 1.0 already in channel order -> V = I
        for (z, v) in sol.zeta.iter().zip(&map.values) {
            assert!((z - C64::new(*v, 0.0)).norm() < 1e-12);
        }
        let back = from_wave_coords(&sol, &s);
        for (z, v) in back.iter().zip(&map.values) {
            assert!((z.re - v).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_map_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4;
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = diag(&[1.0, 2.0, 3.0, 4.0]);
        let s = diagonalize(&CoefficientMatrices::new(a, b, n).unwrap()).unwrap();
        let v = [0.3, -0.2, 1.0, 0.5];
        let map = FeatureMap {
            channels: n,
            height: 3,
            width: 3,
            values: (0..n * 9).map(|i| v[i / 9]).collect(),
        };
        let sol = to_wave_coords(&map, &s).unwrap();
        let init = sol.initial.clone();
        for k in 0..n {
            for pos in 0..9 {
                assert!((sol.zeta[k * 9 + pos] - init[k]).norm() < 1e-12);
            }
        }
        for r in wave_residual(&sol, &s.lambda).unwrap() {
            assert_eq!(r.rms, 0.0);
        }
    }

    #[test]
    fn commuting_linear_maps_satisfy_the_wave_equation() {
        let a = [0.05, -0.03, 0.02, 0.08];
        let b = [0.04, 0.06, -0.05, 0.03];
        let coeffs = CoefficientMatrices::new(diag(&a), diag(&b), 4).unwrap();
        let v = [1.0, -0.5, 0.25, 2.0];
        let z = autoregress(&v, &coeffs, 12, 10, FinolaMode::Linear).unwrap();
        let report = shared_speed_report(&coeffs, &z, &z).unwrap();
        for r in report.measurement.iter().chain(&report.property) {
            assert!(r.relative < 1e-8, "{r:?}");
        }
        assert_eq!(report.measurement, report.property);
    }

    #[test]
    fn residual_needs_two_by_two() {
        let sol = WaveSolution {
            channels: 1,
            height: 1,
            width: 4,
            zeta: vec![C64::new(0.0, 0.0); 4],
            initial: vec![C64::new(0.0, 0.0)],
        };
        assert!(wave_residual(&sol, &[C64::new(1.0, 0.0)]).is_err());
    }
}
