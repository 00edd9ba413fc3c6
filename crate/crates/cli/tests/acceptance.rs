//! Acceptance checks. Runs every criterion in order and prints one
//! `[PASS]`/`[FAIL]` line each; exits non-zero if any fails.
//!
//! The desk-scale training criteria share one set of runs (seven trainings of
//! fwi-desk on flat_vel_a), so a full pass takes a couple of hours on one core.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use latentwave::analysis::latents;
use latentwave::autodiff::gradcheck::{grad_check, standard_cases, Primitive};
use latentwave::data::dataset::generate;
use latentwave::data::{disk_image, gen_phantoms, Dataset, DatasetSpec, FamilySpec};
use latentwave::finola::{autoregress, finola_backward, multipath_autoregress, CoefficientMatrices, FinolaMode};
use latentwave::metrics::ssim;
use latentwave::model::probe::r_squared;
use latentwave::model::{correlation_probe, ConverterKind, Model, ModelConfig};
use latentwave::physics::acoustic::first_break;
use latentwave::physics::radon::{make_geometry, GeometryKind, ImageGrid, LinearProjector, RayProjector};
use latentwave::physics::{acoustic_simulate, AcousticConfig, Survey, VelocityMap, Wavelet};
use latentwave::sirt::{sirt, SirtConfig};
use latentwave::train::{
    ablate_converter, ablate_resolution, ablate_shared_vs_separate, config_hash, AblationReport, RunCache, TrainConfig,
};
use latentwave::wave::{diagonalize, to_wave_coords, wave_residual, C64};
use latentwave::{Dtype, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

struct Suite {
    failed: usize,
    total: usize,
    /// Criterion numbers given on the command line; empty runs all.
    only: Vec<String>,
}

impl Suite {
    fn wants(&self, name: &str) -> bool {
        let num = name.split(' ').next().unwrap_or("");
        self.only.is_empty() || self.only.iter().any(|o| o == num)
    }

    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        if !self.wants(name) {
            return;
        }
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        self.total += 1;
        if !pass {
            self.failed += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {detail} ({:.1} s)", t.elapsed().as_secs_f64());
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

// small dense helpers, row-major n × n

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    c
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_pow(m: &[f64], n: usize, mut e: usize) -> Vec<f64> {
    let mut out = identity(n);
    let mut base = m.to_vec();
    while e > 0 {
        if e & 1 == 1 {
            out = mat_mul(&out, &base, n);
        }
        base = mat_mul(&base, &base, n);
        e >>= 1;
    }
    out
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| (0..n).map(|k| m[i * n + k] * v[k]).sum()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
fn inverse(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    let mut inv = identity(n);
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        for j in 0..n {
            a.swap(col * n + j, p * n + j);
            inv.swap(col * n + j, p * n + j);
        }
        let d = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i * n + col];
                for j in 0..n {
                    a[i * n + j] -= f * a[col * n + j];
                    inv[i * n + j] -= f * inv[col * n + j];
                }
            }
        }
    }
    inv
}

fn plus_identity(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = m.to_vec();
    for i in 0..n {
        out[i * n + i] += 1.0;
    }
    out
}

fn frob(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finola_closed_form() -> Outcome {
    let (c, h, w) = (8, 16, 16);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = |rng: &mut ChaCha8Rng| {
            // ‖M‖_F ≤ 0.1 bounds the spectral radius of I + M by 1.1
            let m = uniform(rng, c * c, -1.0, 1.0);
            let s = rng.random_range(0.02..0.1) / frob(&m);
            m.into_iter().map(|x| x * s).collect::<Vec<_>>()
        };
        let a = gen(&mut rng);
        let b = gen(&mut rng);
        let v = uniform(&mut rng, c, -1.0, 1.0);
        let z = autoregress(&v, &CoefficientMatrices::new(a.clone(), b.clone(), c).map_err(e)?, h, w, FinolaMode::Linear)
            .map_err(e)?;
        let (ia, ib) = (plus_identity(&a, c), plus_identity(&b, c));
        for x in 0..w {
            let ax = mat_vec(&mat_pow(&ia, c, x), &v, c);
            for y in 0..h {
                let expect = mat_vec(&mat_pow(&ib, c, y), &ax, c);
                for k in 0..c {
                    worst = worst.max((z.get(k, y, x) - expect[k]).abs());
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-9 && secs < 5.0, format!("max |err| {worst:.2e} (< 1e-9), {secs:.2} s (< 5 s)")))
}

fn spectrum_reconstruction() -> Outcome {
    let c = 16;
    let mut worst = 0.0f64;
    let mut worst_inv = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = 1.0 / (c as f64).sqrt();
        let a = uniform(&mut rng, c * c, -s, s);
        let mut b = uniform(&mut rng, c * c, -0.3 * s, 0.3 * s);
        for i in 0..c {
            b[i * c + i] += 1.0;
        }
        let spec = diagonalize(&CoefficientMatrices::new(a.clone(), b.clone(), c).map_err(e)?).map_err(e)?;
        let m = mat_mul(&a, &inverse(&b, c), c);
        let mut num = 0.0;
        let mut inv_err = 0.0f64;
        for i in 0..c {
            for j in 0..c {
                let mut r = C64::new(0.0, 0.0);
                let mut id = C64::new(0.0, 0.0);
                for k in 0..c {
                    r += spec.v[(i, k)] * spec.lambda[k] * spec.v_inv[(k, j)];
                    id += spec.v[(i, k)] * spec.v_inv[(k, j)];
                }
                num += (r - C64::new(m[i * c + j], 0.0)).norm_sqr();
                inv_err = inv_err.max((id - C64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).norm());
            }
        }
        worst = worst.max(num.sqrt() / frob(&m));
        worst_inv = worst_inv.max(inv_err);
    }
    let zero = CoefficientMatrices::new(identity(c), vec![0.0; c * c], c).map_err(e)?;
    let singular = matches!(diagonalize(&zero), Err(Error::Singular(_)));
    Ok((
        worst < 1e-8 && worst_inv < 1e-8 && singular,
        format!(
            "max relative residual {worst:.2e} (< 1e-8), max |V·V⁻¹ − I| {worst_inv:.2e}, B = 0 rejected as singular: {singular}"
        ),
    ))
}

fn commuting_wave_residual() -> Outcome {
    let c = 8;
    let mut worst = 0.0f64;
    let sizes = [(2, 2), (3, 7), (16, 16), (9, 32), (32, 32)];
    for (seed, &(h, w)) in sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed as u64);
        let mut a = vec![0.0; c * c];
        let mut b = vec![0.0; c * c];
        for k in 0..c {
            let bk = rng.random_range(0.05..0.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lam = rng.random_range(-2.0..2.0);
            b[k * c + k] = bk;
            a[k * c + k] = lam * bk;
        }
        let coeffs = CoefficientMatrices::new(a, b, c).map_err(e)?;
        let v = uniform(&mut rng, c, -1.0, 1.0);
        let z = autoregress(&v, &coeffs, h, w, FinolaMode::Linear).map_err(e)?;
        let spec = diagonalize(&coeffs).map_err(e)?;
        let sol = to_wave_coords(&z, &spec).map_err(e)?;
        for r in wave_residual(&sol, &spec.lambda).map_err(e)? {
            worst = worst.max(r.relative);
        }
    }
    Ok((worst < 1e-8, format!("max relative RMS residual {worst:.2e} over {} maps up to 32×32 (< 1e-8)", sizes.len())))
}

/// Central differences of `⟨u, multipath_autoregress(v, A, B)⟩`, compared
/// coordinate-wise with `finola_backward`.
fn finola_backward_error(mode: FinolaMode, seed: u64) -> Result<f64, String> {
    let (c, paths, h, w) = (4, 2, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = [
        uniform(&mut rng, paths * c, -1.0, 1.0),
        uniform(&mut rng, c * c, -0.3, 0.3),
        uniform(&mut rng, c * c, -0.3, 0.3),
    ];
    let u = uniform(&mut rng, c * h * w, -1.0, 1.0);
    let loss = |x: &[Vec<f64>; 3]| -> Result<f64, String> {
        let co = CoefficientMatrices::new(x[1].clone(), x[2].clone(), c).map_err(e)?;
        let z = multipath_autoregress(&x[0], paths, &co, h, w, mode).map_err(e)?;
        Ok(z.values.iter().zip(&u).map(|(a, b)| a * b).sum())
    };
    let co = CoefficientMatrices::new(inputs[1].clone(), inputs[2].clone(), c).map_err(e)?;
    let g = finola_backward(&inputs[0], paths, &co, h, w, mode, &u).map_err(e)?;
    let analytic = [g.v, g.a, g.b];
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for t in 0..3 {
        for j in 0..inputs[t].len() {
            let orig = inputs[t][j];
            inputs[t][j] = orig + eps;
            let fp = loss(&inputs)?;
            inputs[t][j] = orig - eps;
            let fm = loss(&inputs)?;
            inputs[t][j] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[t][j];
            worst = worst.max((a - numeric).abs() / (a.abs() + 1e-12));
        }
    }
    Ok(worst)
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let mut cases = standard_cases();
    for (name, mode) in [("finola_normalized", FinolaMode::Normalized), ("finola_linear", FinolaMode::Linear)] {
        cases.push((name, Primitive::Finola { paths: 2, h: 3, w: 3, mode }, vec![vec![8], vec![4, 4], vec![4, 4]]));
    }
    let mut worst = (0.0f64, "");
    let mut bad = Vec::new();
    for (name, p, shapes) in &cases {
        for seed in 0..20 {
            let err = grad_check(p, shapes, 1e-5, seed).map_err(|x| format!("{name} seed {seed}: {x}"))?;
            if err >= 1e-4 {
                bad.push(format!("{name}#{seed}={err:.1e}"));
            }
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    for (name, mode) in [("finola_backward_normalized", FinolaMode::Normalized), ("finola_backward_linear", FinolaMode::Linear)] {
        for seed in 0..20 {
            let err = finola_backward_error(mode, 300 + seed)?;
            if err >= 1e-4 {
                bad.push(format!("{name}#{seed}={err:.1e}"));
            }
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let mut detail = format!(
        "{} primitives + finola_backward × 2 modes, 20 seeds each; worst {:.2e} ({}) (< 1e-4), {secs:.1} s (< 60 s)",
        cases.len(),
        worst.0,
        worst.1
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; over tolerance: {}", bad.join(" ")));
    }
    Ok((bad.is_empty() && secs < 60.0, detail))
}

fn projector_adjoint_and_chords() -> Outcome {
    let grid = ImageGrid::new(128, 1.0).map_err(e)?;
    let geom = make_geometry(GeometryKind::Parallel { views: 60, detectors: 128 }, grid).map_err(e)?;
    let op = RayProjector::new(&geom);
    let mut gap = 0.0f64;
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + trial);
        let x = uniform(&mut rng, op.n_pixels(), -1.0, 1.0);
        let y = uniform(&mut rng, op.n_rays(), -1.0, 1.0);
        let ax = op.forward(&x).map_err(e)?;
        let aty = op.adjoint(&y).map_err(e)?;
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        gap = gap.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }

    // Pixelization of the disk edge, not the projector, dominates the chord
    // error for near-tangent rays; it shrinks like 1/ρ in pixels.
    let (chord_err, rays) = disk_chord_error(512)?;
    let (coarse_err, _) = disk_chord_error(256)?;
    Ok((
        gap < 1e-10 && chord_err < 0.01 && rays > 0,
        format!(
            "adjoint gap {gap:.2e} (< 1e-10); disk chord error {:.3}% over {rays} rays on 512×512 (< 1%), {:.3}% on 256×256",
            100.0 * chord_err,
            100.0 * coarse_err
        ),
    ))
}

/// Worst relative error of parallel-beam line integrals through a disk of
/// radius 0.9 half-widths against `2√(ρ² − h²)`, over rays with `|h| < 0.9ρ`.
fn disk_chord_error(n: usize) -> Result<(f64, usize), String> {
    let grid = ImageGrid::new(n, 1.0).map_err(e)?;
    let geom = make_geometry(GeometryKind::Parallel { views: 60, detectors: n }, grid).map_err(e)?;
    let rho = 0.9 * grid.half_width();
    let sino = RayProjector::new(&geom).forward(&disk_image(&grid, rho, 8)).map_err(e)?;
    let mut worst = 0.0f64;
    let mut rays = 0;
    for (k, r) in geom.rays.iter().enumerate() {
        // distance from the disk centre to the ray's line
        let (dx, dy) = (r.detector.0 - r.source.0, r.detector.1 - r.source.1);
        let hoff = (r.source.0 * dy - r.source.1 * dx).abs() / dx.hypot(dy);
        if hoff < 0.9 * rho {
            let exact = 2.0 * (rho * rho - hoff * hoff).sqrt();
            worst = worst.max((sino[k] - exact).abs() / exact);
            rays += 1;
        }
    }
    Ok((worst, rays))
}

fn fdtd_physics() -> Outcome {
    let (c, dx, dt, steps) = (3000.0, 10.0, 1e-3, 1000);
    let m = VelocityMap::homogeneous(70, 70, dx, c).map_err(e)?;
    let cfg = AcousticConfig::new(dt, steps, 1);
    let (src, rec) = ((0, 10), (0, 50));
    let g = acoustic_simulate(&m, &Survey { sources: vec![src], receivers: vec![rec] }, &cfg).map_err(e)?;
    let trace = g.trace(0, 0);

    // analytic 2-D trace: Ricker ⊗ 1/√(t² − t0²), with τ = t0·cosh u
    let t0 = 400.0 / c;
    let analytic: Vec<f64> = (0..steps)
        .map(|k| {
            let t = (k + 1) as f64 * dt;
            let du: f64 = 1e-4;
            let mut acc = 0.0;
            let mut u = 0.5 * du;
            while t0 * u.cosh() < t {
                acc += cfg.wavelet.sample(t - t0 * u.cosh()) * du;
                u += du;
            }
            acc
        })
        .collect();
    let pick = |tr: &[f64]| first_break(tr, 0.05).map(|i| (i + 1) as f64 * dt);
    let (tn, ta) = (pick(&trace).ok_or("numerical trace is silent")?, pick(&analytic).ok_or("analytic trace is silent")?);
    let arrival_ok = (tn - ta).abs() <= 2.0 * dt + 1e-12;

    let back = acoustic_simulate(&m, &Survey { sources: vec![rec], receivers: vec![src] }, &cfg).map_err(e)?;
    let rev = back.trace(0, 0);
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let diff: Vec<f64> = trace.iter().zip(&rev).map(|(a, b)| a - b).collect();
    let recip = rms(&diff) / rms(&trace);

    let mut silent = cfg;
    silent.wavelet = Wavelet::Silent;
    let z = acoustic_simulate(&m, &Survey::surface(5, 70).map_err(e)?, &silent).map_err(e)?;
    let zero = z.data.iter().all(|&v| v == 0.0);

    Ok((
        arrival_ok && recip < 0.01 && zero,
        format!(
            "first arrival {tn:.3} s vs analytic {ta:.3} s (±{:.3} s, onset t0 = {t0:.4} s); reciprocity RMS {:.2e} (< 1%); silent source zero gather: {zero}",
            2.0 * dt,
            recip
        ),
    ))
}

fn sirt_phantom() -> Outcome {
    let t = Instant::now();
    let grid = ImageGrid::new(64, 1.0).map_err(e)?;
    let phantom = gen_phantoms(1, 7, &grid).map_err(e)?.remove(0);
    let geom = make_geometry(GeometryKind::Parallel { views: 60, detectors: 128 }, grid).map_err(e)?;
    let op = RayProjector::new(&geom);
    let sino = op.forward(&phantom).map_err(e)?;
    let cfg = SirtConfig { iterations: 200, relaxation: 1.0, nonnegative: true };
    let res = sirt(&op, &sino, &cfg).map_err(e)?;
    let first = &res.residuals[..51.min(res.residuals.len())];
    let monotone = first.windows(2).all(|w| w[1] <= w[0]);
    let s = ssim(&res.image, &phantom, 64, 64, 1.0).map_err(e)?.value;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        monotone && s > 0.8 && secs < 120.0,
        format!(
            "residual non-increasing over first 50 iterations: {monotone} ({:.3e} → {:.3e}); SSIM {s:.4} (> 0.8); {secs:.1} s (< 120 s)",
            first[0],
            first[first.len() - 1]
        ),
    ))
}

fn reproducible_cli() -> Outcome {
    let run_once = |dir: &Path| -> Result<(), String> {
        let exp = "preset = \"fwi-desk\"\nprecision = \"f64\"\nout = \"run\"\n\n[[data]]\ntrain = \"data/train.lwc\"\ntest = \"data/test.lwc\"\n\n[train]\nepochs = 1\nbatch_size = 2\n";
        std::fs::write(dir.join("exp.toml"), exp).map_err(e)?;
        let steps: [&[&str]; 4] = [
            &["gen-data", "--kind", "fwi", "--family", "flat_vel_a", "--n", "4", "--n-test", "2", "--seed", "5", "--out", "data"],
            &["train", "--config", "exp.toml"],
            &["eval", "--ckpt", "run/final.lwc", "--data", "data/test.lwc", "--out", "eval.csv"],
            &["analyze", "--ckpt", "run/final.lwc", "--data", "data/test.lwc", "--out", "analysis", "--dumps", "2"],
        ];
        for args in steps {
            let o = Command::new(env!("CARGO_BIN_EXE_latentwave")).current_dir(dir).args(args).output().map_err(e)?;
            if !o.status.success() {
                return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
        Ok(())
    };
    let a = tempfile::tempdir().map_err(e)?;
    let b = tempfile::tempdir().map_err(e)?;
    run_once(a.path())?;
    run_once(b.path())?;
    let fa = files(a.path())?;
    let fb = files(b.path())?;
    if fa != fb {
        return Ok((false, format!("artifact lists differ: {fa:?} vs {fb:?}")));
    }
    let mut differ = Vec::new();
    for f in &fa {
        if std::fs::read(a.path().join(f)).map_err(e)? != std::fs::read(b.path().join(f)).map_err(e)? {
            differ.push(f.display().to_string());
        }
    }
    Ok((
        differ.is_empty(),
        if differ.is_empty() {
            format!("{} artifacts byte-identical across two runs", fa.len())
        } else {
            format!("differing artifacts: {}", differ.join(", "))
        },
    ))
}

fn files(root: &Path) -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(e)? {
            let p = entry.map_err(e)?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

struct DeskRuns {
    train: Dataset,
    test: Dataset,
    base: ModelConfig,
    cfg: TrainConfig,
    cache: RunCache<f32>,
    shared: AblationReport,
    converter: AblationReport,
    resolution: AblationReport,
}

fn desk_runs() -> Result<DeskRuns, String> {
    let t = Instant::now();
    let fam: FamilySpec = "flat_vel_a".parse().map_err(e)?;
    let (train, test) = generate(&DatasetSpec::fwi_desk(vec![fam], 512, 64)).map_err(e)?;
    eprintln!("desk data generated in {:.0} s", t.elapsed().as_secs_f64());
    let base = ModelConfig::preset("fwi-desk").map_err(e)?;
    let cfg = TrainConfig::desk();
    let mut cache = RunCache::with_hook(Box::new(|m: &ModelConfig, _, log| {
        eprintln!(
            "trained {:?} shared={} {:?}: {:.0} s, {} of {} steps clipped",
            m.converter,
            m.finola.shared,
            m.property_grid,
            log.wall_time_s,
            log.clipped_steps(),
            log.total_steps()
        );
        Ok(())
    }));
    let shared = ablate_shared_vs_separate(&mut cache, &base, &train, &test, &cfg, true).map_err(e)?;
    let converter = ablate_converter(&mut cache, &base, &train, &test, &cfg, false).map_err(e)?;
    let resolution = ablate_resolution(&mut cache, &base, &train, &test, &cfg, &[5, 7, 14]).map_err(e)?;
    Ok(DeskRuns { train, test, base, cfg, cache, shared, converter, resolution })
}

fn latent_pairs<T: latentwave::Real>(model: &Model<T>, data: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), String> {
    let mut vp = Vec::new();
    let mut vpsi = Vec::new();
    for i in 0..data.len() {
        let l = latents(model, data, i).map_err(e)?;
        vp.push(l.v_measurement);
        vpsi.push(l.v_property);
    }
    Ok((vp, vpsi))
}

fn converter_correlation(runs: &DeskRuns) -> Outcome {
    let hash = config_hash(&runs.base, &runs.cfg, Dtype::F32, &runs.train);
    let (ck, log, _) = runs.cache.get(&hash).ok_or("base run missing from cache")?;
    let model = &ck.model;
    if model.config.converter != ConverterKind::Linear {
        return Err("base run does not use the linear converter".into());
    }
    let (xs, ys) = latent_pairs(model, &runs.test)?;
    let d = xs[0].len();
    let t: Vec<f64> = model.params.get("conv.t").map_err(e)?.data().iter().map(|&v| v as f64).collect();
    let trained = r_squared(&xs, &ys, &t, d).map_err(e)?;
    // refit on the training latents, scored on the held-out pairs
    let (txs, tys) = latent_pairs(model, &runs.train)?;
    let fit = correlation_probe(&txs, &tys).map_err(e)?;
    let refit = r_squared(&xs, &ys, &fit.fitted_t, d).map_err(e)?;
    Ok((
        trained >= 0.9 && refit >= 0.9 && log.wall_time_s < 7200.0,
        format!(
            "held-out r2 with trained T {trained:.4} (≥ 0.9), refitted T {refit:.4} (≥ 0.9; fit on {} pairs, D = {d}); base run {:.0} s (< 2 h), {} of {} steps clipped",
            txs.len(),
            log.wall_time_s,
            log.clipped_steps(),
            log.total_steps()
        ),
    ))
}

fn shared_vs_separate(runs: &DeskRuns) -> Outcome {
    let r = &runs.shared;
    let gap = r.ssim_gap("shared", "separate").map_err(e)?;
    let control = r.ssim_gap("shared", "shared-rerun").map_err(e)?;
    let same_hash = r.row("shared").map_err(e)?.config_hash == r.row("shared-rerun").map_err(e)?.config_hash;
    Ok((
        gap.abs() <= 0.05 && control == 0.0 && same_hash,
        format!(
            "SSIM shared {:.4}, separate {:.4}, |Δ| {:.4} (≤ 0.05); identical-config rerun gap {control:e} (= 0)",
            r.row("shared").map_err(e)?.prediction.ssim,
            r.row("separate").map_err(e)?.prediction.ssim,
            gap.abs()
        ),
    ))
}

fn converter_ablation(runs: &DeskRuns) -> Outcome {
    let r = &runs.converter;
    let lin = r.row("linear").map_err(e)?.prediction.ssim;
    let mx = r.row("maxout2").map_err(e)?.prediction.ssim;
    let mlp = r.row("mlp2").map_err(e)?.prediction.ssim;
    Ok((
        mx - lin <= 0.05 && mlp - lin <= 0.05,
        format!("SSIM linear {lin:.4}, maxout2 {mx:.4} (Δ {:+.4}), mlp2 {mlp:.4} (Δ {:+.4}); limit +0.05", mx - lin, mlp - lin),
    ))
}

fn resolution_ablation(runs: &DeskRuns) -> Outcome {
    let r = &runs.resolution;
    let vals: Vec<(String, f64)> = r.rows.iter().map(|row| (row.label.clone(), row.prediction.ssim)).collect();
    let hi = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let listed = vals.iter().map(|(l, s)| format!("{l} {s:.4}")).collect::<Vec<_>>().join(", ");
    Ok((vals.len() == 3 && hi - lo <= 0.1, format!("SSIM {listed}; spread {:.4} (≤ 0.1)", hi - lo)))
}

fn main() {
    let only = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut suite = Suite { failed: 0, total: 0, only };
    suite.check("1 FINOLA linear closed form", finola_closed_form);
    suite.check("2 hidden-wave spectrum", spectrum_reconstruction);
    suite.check("3 wave equation on commuting maps", commuting_wave_residual);
    suite.check("4 gradient oracle", gradient_oracle);
    suite.check("5 projector adjointness and disk chords", projector_adjoint_and_chords);
    suite.check("6 FDTD first arrival, reciprocity, silence", fdtd_physics);
    suite.check("7 SIRT on ellipse phantom", sirt_phantom);
    suite.check("12 CLI reruns byte-identical", reproducible_cli);

    const DESK: [&str; 4] = [
        "8 converter correlation (desk)",
        "9 shared vs separate FINOLA (desk)",
        "10 converter ablation (desk)",
        "11 resolution ablation (desk)",
    ];
    if DESK.iter().any(|n| suite.wants(n)) {
        let t = Instant::now();
        match desk_runs() {
            Ok(runs) => {
                eprintln!("desk runs finished in {:.0} s", t.elapsed().as_secs_f64());
                suite.check(DESK[0], || converter_correlation(&runs));
                suite.check(DESK[1], || shared_vs_separate(&runs));
                suite.check(DESK[2], || converter_ablation(&runs));
                suite.check(DESK[3], || resolution_ablation(&runs));
            }
            Err(err) => {
                for name in DESK {
                    suite.check(name, || Err(format!("desk runs failed: {err}")));
                }
            }
        }
    }

    println!("acceptance: {} of {} criteria passed", suite.total - suite.failed, suite.total);
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
