use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use latentwave::analysis;
use latentwave::config::{ExperimentConfig, LoadedExperiment};
use latentwave::container::Container;
use latentwave::data::dataset::{CtSource, FORMAT_TAG};
use latentwave::data::phantom::gen_phantoms_range;
use latentwave::data::velocity::gen_velocity_maps_range;
use latentwave::data::{build_dataset, Dataset, DatasetKind, DatasetSpec, FamilySpec};
use latentwave::metrics::{mae, mse, ssim, Scale as MetricScale};
use latentwave::model::Model;
use latentwave::physics::{
    acoustic_simulate, make_geometry, radon_project, AcousticConfig, GeometryKind, ImageGrid, RayProjector, Survey,
    VelocityMap,
};
use latentwave::report::{csv_schema, num, write_pgm, write_text, GrayMap};
use latentwave::sirt::SirtConfig;
use latentwave::train::checkpoint::stored_precision;
use latentwave::train::{
    ablate_converter, ablate_resolution, ablate_shared_vs_separate, evaluate, Checkpoint, RunCache,
};
use latentwave::{Dtype, Error, Real, Result};

use crate::{DataKind, Precision, Scale, SimKind, Which};

fn dtype(p: Precision) -> Dtype {
    match p {
        Precision::F32 => Dtype::F32,
        Precision::F64 => Dtype::F64,
    }
}

pub struct GenData {
    pub kind: DataKind,
    pub family: Vec<String>,
    pub n: usize,
    pub n_test: Option<usize>,
    pub seed: u64,
    pub scale: Scale,
    pub storage: Precision,
    pub grid: usize,
    pub geometry: String,
    pub out: PathBuf,
}

pub fn gen_data(a: GenData) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let n_test = a.n_test.unwrap_or((a.n / 8).max(1));
    let mut spec = match a.kind {
        DataKind::Fwi => {
            if a.family.is_empty() {
                return Err(Error::Config("--kind fwi needs at least one --family".into()));
            }
            let families = a
                .family
                .iter()
                .map(|f| {
                    let mut spec: FamilySpec = f.parse()?;
                    spec.seed = a.seed;
                    Ok(spec)
                })
                .collect::<Result<Vec<_>>>()?;
            match a.scale {
                Scale::Desk => DatasetSpec::fwi_desk(families, a.n, n_test),
                Scale::Paper => DatasetSpec::fwi_paper(families, a.n, n_test),
            }
        }
        DataKind::Ct => {
            if !a.family.is_empty() {
                return Err(Error::Config("--family applies to --kind fwi only".into()));
            }
            DatasetSpec {
                source: DatasetKind::Ct(CtSource {
                    image: a.grid,
                    geometry: a.geometry.parse()?,
                    seed: a.seed,
                }),
                n_train: a.n,
                n_test,
                storage: Dtype::F32,
            }
        }
    };
    spec.storage = dtype(a.storage);
    let (train, test) = build_dataset(&spec, &a.out)?;
    println!("{}", train.display());
    println!("{}", test.display());
    Ok(())
}

pub struct Simulate {
    pub kind: SimKind,
    pub property: Option<PathBuf>,
    pub index: usize,
    pub family: Option<String>,
    pub phantom: bool,
    pub seed: u64,
    pub grid: usize,
    pub geometry: String,
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    pub sources: usize,
    pub dx: f64,
    pub out: PathBuf,
}

/// A 2-D property map in physical units, with its grid spacing when known.
struct PropertyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    dx: Option<f64>,
}

fn read_property(path: &Path, index: usize) -> Result<PropertyMap> {
    let c = Container::read(path)?;
    if c.meta::<String>("format").ok().as_deref() == Some(FORMAT_TAG) {
        let ds = Dataset::from_container(&c)?;
        if index >= ds.len() {
            return Err(Error::Config(format!("--index {index} out of range for {} samples", ds.len())));
        }
        let [ch, h, w] = ds.property_shape[..] else {
            return Err(Error::Format("dataset property is not [C, H, W]".into()));
        };
        if ch != 1 {
            return Err(Error::Config("only single-channel properties can be simulated".into()));
        }
        let np = ds.norm_property;
        let dx = ds.metadata.get("physical").and_then(|p| p.get("dx_m")).and_then(|v| v.as_f64());
        return Ok(PropertyMap {
            height: h,
            width: w,
            values: ds.property::<f64>(index).iter().map(|&v| np.denormalize(v)).collect(),
            dx,
        });
    }
    let arr = c.get("property")?;
    let (h, w) = match arr.shape[..] {
        [h, w] | [1, h, w] => (h, w),
        _ => return Err(Error::Config(format!("property array has shape {:?}, expected [H, W]", arr.shape))),
    };
    Ok(PropertyMap {
        height: h,
        width: w,
        values: arr.data.to_f64(),
        dx: c.meta("dx").ok(),
    })
}

pub fn simulate(a: Simulate) -> Result<()> {
    let mut out = Container::new();
    match a.kind {
        SimKind::Acoustic => {
            let map = match (&a.property, &a.family) {
                (Some(p), None) => {
                    let m = read_property(p, a.index)?;
                    VelocityMap::new(m.height, m.width, m.dx.unwrap_or(a.dx), m.values)?
                }
                (None, Some(f)) => {
                    let mut spec: FamilySpec = f.parse()?;
                    spec.seed = a.seed;
                    gen_velocity_maps_range(&spec, a.index as u64, 1)?.remove(0)
                }
                _ => return Err(Error::Config("acoustic simulation needs exactly one of --property or --family".into())),
            };
            let cfg = AcousticConfig::new(a.dt, a.steps, a.record_every);
            let survey = Survey::surface(a.sources, map.width)?;
            let g = acoustic_simulate(&map, &survey, &cfg)?;
            out.push_f64("measurement", vec![g.sources, g.samples, g.receivers], g.data)?;
            out.push_f64("property", vec![1, map.height, map.width], map.c.clone())?;
            out.set_meta("kind", &"acoustic")?;
            out.set_meta("acoustic", &cfg)?;
            out.set_meta("dx", &map.dx)?;
            out.set_meta("sample_dt", &g.dt)?;
        }
        SimKind::Radon => {
            let geometry: GeometryKind = a.geometry.parse()?;
            let (n, image) = match (&a.property, a.phantom) {
                (Some(p), false) => {
                    let m = read_property(p, a.index)?;
                    if m.height != m.width {
                        return Err(Error::Config(format!("radon needs a square image, got {}×{}", m.height, m.width)));
                    }
                    (m.height, m.values)
                }
                (None, true) => {
                    let grid = ImageGrid::new(a.grid, 1.0)?;
                    (a.grid, gen_phantoms_range(a.seed, a.index as u64, 1, &grid)?.remove(0))
                }
                _ => return Err(Error::Config("radon simulation needs exactly one of --property or --phantom".into())),
            };
            let geom = make_geometry(geometry, ImageGrid::new(n, 1.0)?)?;
            let sino = radon_project(&image, &geom)?;
            out.push_f64("measurement", sino.shape.clone(), sino.values)?;
            out.push_f64("property", vec![1, n, n], image)?;
            out.set_meta("kind", &"radon")?;
            out.set_meta("geometry", &geometry)?;
        }
    }
    out.write(&a.out)?;
    let m = out.get("measurement")?;
    println!("{} measurement {:?}", a.out.display(), m.shape);
    Ok(())
}

fn train_t<T: Real>(exp: &LoadedExperiment) -> Result<()> {
    let (train_set, test) = exp.datasets()?;
    let mc = exp.config.model_config()?;
    let tc = exp.config.train_config()?;
    let out = exp.out_dir();
    let model = Model::<T>::new(mc, tc.seed)?;
    let res = latentwave::train::train(model, &train_set, test.as_ref(), &tc, Some(&out))?;
    let mut log = res.log;
    log.config_file = Some(exp.sha256.clone());
    let log_path = out.join("runlog.csv");
    write_text(&log_path, &log.to_csv())?;
    eprintln!(
        "trained {} epochs ({} steps, {} clipped) in {:.1} s",
        log.epochs.len(),
        log.total_steps(),
        log.clipped_steps(),
        log.wall_time_s
    );
    println!("{}", out.join("final.lwc").display());
    println!("{}", log_path.display());
    Ok(())
}

pub fn train(config: &Path) -> Result<()> {
    let exp = ExperimentConfig::load(config)?;
    match exp.config.precision {
        Dtype::F32 => train_t::<f32>(&exp),
        Dtype::F64 => train_t::<f64>(&exp),
    }
}

fn checkpoint_precision(path: &Path) -> Result<Dtype> {
    stored_precision(&Container::read(path)?)
}

fn scale_name(s: MetricScale) -> &'static str {
    match s {
        MetricScale::Normalized => "normalized",
        MetricScale::Denormalized => "denormalized",
    }
}

fn eval_t<T: Real>(ckpt: &Path, data: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::<T>::read(ckpt)?;
    let mut s = csv_schema("eval", 1);
    s.push('\n');
    let _ = writeln!(s, "# config_hash={}", ck.config_hash);
    let _ = writeln!(s, "dataset,head,scale,n,mae,mse,ssim");
    let flush = |s: &str| -> Result<()> {
        match out {
            Some(p) => write_text(p, s),
            None => Ok(()),
        }
    };
    for d in data {
        let ds = match Dataset::read(d) {
            Ok(ds) => ds,
            Err(e) => {
                flush(&s)?;
                return Err(e);
            }
        };
        let ev = match evaluate(&ck.model, &ds) {
            Ok(ev) => ev,
            Err(e) => {
                flush(&s)?;
                return Err(e);
            }
        };
        for r in ev.records() {
            let m = r.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                d.display(),
                r.head,
                scale_name(m.scale),
                m.n,
                num(m.mae),
                num(m.mse),
                num(m.ssim)
            );
        }
        flush(&s)?;
    }
    if out.is_none() {
        print!("{s}");
    }
    Ok(())
}

pub fn eval(ckpt: &Path, data: &[PathBuf], out: Option<&Path>) -> Result<()> {
    match checkpoint_precision(ckpt)? {
        Dtype::F32 => eval_t::<f32>(ckpt, data, out),
        Dtype::F64 => eval_t::<f64>(ckpt, data, out),
    }
}

pub fn sirt(data: &Path, iters: usize, omega: f64, limit: Option<usize>, nonnegative: bool, dumps: usize, out: &Path) -> Result<()> {
    let ds = Dataset::read(data)?;
    let src = match ds.spec()?.source {
        DatasetKind::Ct(src) => src,
        DatasetKind::Fwi(_) => return Err(Error::Config("sirt needs a CT dataset".into())),
    };
    let grid = ImageGrid::new(src.image, 1.0)?;
    let geom = make_geometry(src.geometry, grid)?;
    let proj = RayProjector::new(&geom);
    let cfg = SirtConfig {
        iterations: iters,
        relaxation: omega,
        nonnegative,
    };
    let (nm, np) = (ds.norm_measurement, ds.norm_property);
    let n = limit.unwrap_or(ds.len()).min(ds.len());
    let mut res_csv = csv_schema("sirt-residuals", 1);
    res_csv.push('\n');
    let _ = writeln!(res_csv, "# iterations={iters} omega={} nonnegative={nonnegative}", num(omega));
    let _ = writeln!(res_csv, "sample,iteration,residual");
    let mut met_csv = csv_schema("sirt-metrics", 1);
    met_csv.push('\n');
    let _ = writeln!(met_csv, "sample,id,mae,mse,ssim,final_residual");
    let res_path = out.join("sirt_residuals.csv");
    let met_path = out.join("sirt_metrics.csv");
    let mut ssim_sum = 0.0;
    let mut run = |i: usize, res_csv: &mut String, met_csv: &mut String| -> Result<()> {
        let sino: Vec<f64> = ds.measurement::<f64>(i).iter().map(|&v| nm.denormalize(v)).collect();
        let truth: Vec<f64> = ds.property::<f64>(i).iter().map(|&v| np.denormalize(v)).collect();
        let r = latentwave::sirt::sirt(&proj, &sino, &cfg)?;
        for (k, v) in r.residuals.iter().enumerate() {
            let _ = writeln!(res_csv, "{i},{k},{}", num(*v));
        }
        let s = ssim(&r.image, &truth, src.image, src.image, np.range().max(f64::MIN_POSITIVE))?.value;
        ssim_sum += s;
        let _ = writeln!(
            met_csv,
            "{i},{},{},{},{},{}",
            ds.ids[i],
            num(mae(&r.image, &truth)?),
            num(mse(&r.image, &truth)?),
            num(s),
            num(*r.residuals.last().unwrap_or(&0.0))
        );
        if i < dumps {
            let p = out.join("images").join(format!("sample{i:03}_sirt.pgm"));
            write_pgm(&p, &r.image, src.image, src.image, GrayMap { lo: np.min, hi: np.max }, &format!("SIRT of sample id {}", ds.ids[i]))?;
        }
        Ok(())
    };
    for i in 0..n {
        if let Err(e) = run(i, &mut res_csv, &mut met_csv) {
            write_text(&res_path, &res_csv)?;
            write_text(&met_path, &met_csv)?;
            return Err(e);
        }
    }
    write_text(&res_path, &res_csv)?;
    write_text(&met_path, &met_csv)?;
    if n > 0 {
        eprintln!("mean SSIM over {n} samples: {:.4}", ssim_sum / n as f64);
    }
    println!("{}", res_path.display());
    println!("{}", met_path.display());
    Ok(())
}

fn which_name(w: Which) -> &'static str {
    match w {
        Which::Shared => "shared",
        Which::Converter => "converter",
        Which::Resolution => "resolution",
    }
}

fn ablate_t<T: Real>(which: Which, exp: &LoadedExperiment) -> Result<()> {
    let (train_set, test) = exp.datasets()?;
    let test = test.ok_or_else(|| Error::Config("ablations need a test set in every [[data]] entry".into()))?;
    let base = exp.config.model_config()?;
    let tc = exp.config.train_config()?;
    let dir = exp.out_dir().join(format!("ablation_{}", which_name(which)));
    let runs = dir.join("runs");
    let sha = exp.sha256.clone();
    let mut counter = 0usize;
    let mut cache = RunCache::<T>::with_hook(Box::new(move |mc, ck, log| {
        counter += 1;
        let name = format!(
            "{counter:02}_{:?}_{}_{}x{}",
            mc.converter,
            if mc.finola.shared { "shared" } else { "separate" },
            mc.property_grid.0,
            mc.property_grid.1
        )
        .to_lowercase();
        let mut log = log.clone();
        log.config_file = Some(sha.clone());
        write_text(&runs.join(format!("{name}.csv")), &log.to_csv())?;
        ck.write(&runs.join(format!("{name}.lwc")))
    }));
    let opts = &exp.config.ablation;
    let report = match which {
        Which::Shared => {
            ablate_shared_vs_separate(&mut cache, &base, &train_set, &test, &tc, opts.control.unwrap_or(true))?
        }
        Which::Converter => ablate_converter(&mut cache, &base, &train_set, &test, &tc, opts.control.unwrap_or(false))?,
        Which::Resolution => {
            let sizes = opts.sizes.clone().unwrap_or_else(|| vec![5, 7, 14]);
            ablate_resolution(&mut cache, &base, &train_set, &test, &tc, &sizes)?
        }
    };
    let csv = report
        .to_csv()
        .replacen("\nlabel,", &format!("\n# config_file_sha256={}\nlabel,", exp.sha256), 1);
    let path = exp.out_dir().join(format!("ablation_{}.csv", which_name(which)));
    write_text(&path, &csv)?;
    for r in &report.rows {
        eprintln!("{:>14}  prediction SSIM {:.4}", r.label, r.prediction.ssim);
    }
    println!("{}", path.display());
    Ok(())
}

pub fn ablate(which: Which, config: &Path) -> Result<()> {
    let exp = ExperimentConfig::load(config)?;
    match exp.config.precision {
        Dtype::F32 => ablate_t::<f32>(which, &exp),
        Dtype::F64 => ablate_t::<f64>(which, &exp),
    }
}

fn analyze_t<T: Real>(ckpt: &Path, data: &Path, out: &Path, dumps: usize) -> Result<()> {
    let ck = Checkpoint::<T>::read(ckpt)?;
    let ds = Dataset::read(data)?;
    let a = analysis::analyze(&ck.model, &ds, dumps)?;
    let files = a.write(out)?;
    for (g, s) in &a.spectra {
        if let Err(e) = s {
            eprintln!("{g} generators: {e}");
        }
    }
    match &a.probe {
        Ok(p) => eprintln!("refit r2 {:.4} over {} pairs", p.r2, p.samples),
        Err(e) => eprintln!("probe: {e}"),
    }
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

pub fn analyze(ckpt: &Path, data: &Path, out: &Path, dumps: usize) -> Result<()> {
    match checkpoint_precision(ckpt)? {
        Dtype::F32 => analyze_t::<f32>(ckpt, data, out, dumps),
        Dtype::F64 => analyze_t::<f64>(ckpt, data, out, dumps),
    }
}
