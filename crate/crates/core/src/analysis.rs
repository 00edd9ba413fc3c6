//! Post-training analysis of a checkpoint on a dataset: hidden wave speeds,
//! per-modality wave residuals, the linear-correlation probe between initial
//! conditions, and image dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::finola::{CoefficientMatrices, FeatureMap};
use crate::model::probe::r_squared;
use crate::model::{correlation_probe, ConverterKind, Model, ProbeResult};
use crate::par;
use crate::real::Real;
use crate::report::{csv_schema, num, write_pgm, write_text, GrayMap};
use crate::wave::{diagonalize, to_wave_coords, ChannelResidual, ResidualAccumulator, WaveSpectrum};

/// Encoder/FINOLA outputs of one sample, in f64.
#[derive(Clone, Debug)]
pub struct Latents {
    pub v_measurement: Vec<f64>,
    pub v_property: Vec<f64>,
    pub z_measurement: FeatureMap<f64>,
    pub z_property: FeatureMap<f64>,
    pub prediction: Vec<f64>,
}

pub fn latents<T: Real>(model: &Model<T>, data: &Dataset, i: usize) -> Result<Latents> {
    let (g, f) = model.infer(&data.measurement::<T>(i))?;
    let vec = |v| -> Vec<f64> { g.value(v).data().iter().map(|&x| x.to_f64()).collect() };
    let map = |v| -> Result<FeatureMap<f64>> {
        match *g.shape(v) {
            [channels, height, width] => Ok(FeatureMap { channels, height, width, values: vec(v) }),
            ref s => Err(Error::Contract(format!("feature map has shape {s:?}"))),
        }
    };
    Ok(Latents {
        v_measurement: vec(f.v_measurement),
        v_property: vec(f.v_property),
        z_measurement: map(f.z_measurement)?,
        z_property: map(f.z_property)?,
        prediction: vec(f.property),
    })
}

/// Generators of each modality: one shared pair, or one pair each.
fn generators<T: Real>(model: &Model<T>) -> Result<Vec<(&'static str, CoefficientMatrices<f64>)>> {
    let c = model.config.finola.channels;
    let get = |prefix: &str| -> Result<CoefficientMatrices<f64>> {
        let read = |n: &str| -> Result<Vec<f64>> {
            Ok(model.params.get(&format!("{prefix}.{n}"))?.data().iter().map(|&v| v.to_f64()).collect())
        };
        CoefficientMatrices::new(read("a")?, read("b")?, c)
    };
    if model.config.finola.shared {
        Ok(vec![("shared", get("finola")?)])
    } else {
        Ok(vec![("measurement", get("finola.meas")?), ("property", get("finola.prop")?)])
    }
}

#[derive(Clone, Debug)]
pub struct ModalityResidual {
    pub modality: &'static str,
    pub generator: &'static str,
    pub channels: std::result::Result<Vec<ChannelResidual>, String>,
}

#[derive(Clone, Debug)]
pub struct ImageDump {
    pub index: usize,
    pub id: f64,
    pub height: usize,
    pub width: usize,
    /// Physical units, channel-major.
    pub property: Vec<f64>,
    pub prediction: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub samples: usize,
    pub spectra: Vec<(&'static str, std::result::Result<WaveSpectrum, String>)>,
    pub residuals: Vec<ModalityResidual>,
    /// Refitted least-squares `T` over the dataset.
    pub probe: std::result::Result<ProbeResult, String>,
    /// r2 of the model's own linear converter; `None` for nonlinear converters.
    pub trained_r2: Option<std::result::Result<f64, String>>,
    pub dumps: Vec<ImageDump>,
    pub property_range: (f64, f64),
}

/// Runs the model over every sample of `data`. Diagonalization and probe
/// failures are recorded in the result rather than aborting.
pub fn analyze<T: Real>(model: &Model<T>, data: &Dataset, dumps: usize) -> Result<Analysis> {
    if data.is_empty() {
        return Err(Error::Config("analysis needs at least one sample".into()));
    }
    let lat = par::try_map_range(data.len(), |i| latents(model, data, i))?;

    let gens = generators(model)?;
    let spectra: Vec<_> = gens
        .iter()
        .map(|(name, c)| (*name, diagonalize(c).map_err(|e| e.to_string())))
        .collect();
    let spectrum_for = |modality: &str| -> (&'static str, std::result::Result<&WaveSpectrum, String>) {
        let (name, s) = spectra
            .iter()
            .find(|(n, _)| *n == "shared" || *n == modality)
            .expect("every modality has a generator");
        (name, s.as_ref().map_err(Clone::clone))
    };
    let mut residuals = Vec::new();
    for modality in ["measurement", "property"] {
        let (generator, spec) = spectrum_for(modality);
        let channels = spec.and_then(|s| {
            let mut acc = ResidualAccumulator::new(s.channels());
            for l in &lat {
                let z = if modality == "measurement" { &l.z_measurement } else { &l.z_property };
                let sol = to_wave_coords(z, s).map_err(|e| e.to_string())?;
                acc.add(&sol, &s.lambda).map_err(|e| e.to_string())?;
            }
            Ok(acc.finish())
        });
        residuals.push(ModalityResidual { modality, generator, channels });
    }

    let vp: Vec<Vec<f64>> = lat.iter().map(|l| l.v_measurement.clone()).collect();
    let vq: Vec<Vec<f64>> = lat.iter().map(|l| l.v_property.clone()).collect();
    let probe = correlation_probe(&vp, &vq).map_err(|e| e.to_string());
    let trained_r2 = match model.config.converter {
        ConverterKind::Linear => {
            let t: Vec<f64> = model.params.get("conv.t")?.data().iter().map(|&v| v.to_f64()).collect();
            let d = model.config.latent_dim();
            Some(r_squared(&vp, &vq, &t, d).map_err(|e| e.to_string()))
        }
        _ => None,
    };

    let np = data.norm_property;
    let [_, h, w] = model.config.output;
    let dumps = (0..dumps.min(data.len()))
        .map(|i| ImageDump {
            index: i,
            id: data.ids[i],
            height: h,
            width: w,
            property: data.property::<f64>(i).iter().map(|&v| np.denormalize(v)).collect(),
            prediction: lat[i].prediction.iter().map(|&v| np.denormalize(v)).collect(),
        })
        .collect();

    Ok(Analysis {
        samples: data.len(),
        spectra,
        residuals,
        probe,
        trained_r2,
        dumps,
        property_range: (np.min, np.max),
    })
}

impl Analysis {
    pub fn speed_report_csv(&self) -> String {
        let mut s = csv_schema("speed-report", 1);
        s.push('\n');
        let _ = writeln!(s, "# samples={}", self.samples);
        let _ = writeln!(s, "channel,lambda_re,lambda_im,rms_residual,max_residual,relative_residual,modality,generator");
        for r in &self.residuals {
            let spec = self.spectra.iter().find(|(n, _)| *n == r.generator).and_then(|(_, s)| s.as_ref().ok());
            match (&r.channels, spec) {
                (Ok(ch), Some(spec)) => {
                    for (k, c) in ch.iter().enumerate() {
                        let l = spec.lambda[k];
                        let _ = writeln!(
                            s,
                            "{k},{},{},{},{},{},{},{}",
                            num(l.re),
                            num(l.im),
                            num(c.rms),
                            num(c.max),
                            num(c.relative),
                            r.modality,
                            r.generator
                        );
                    }
                }
                (Err(e), _) => {
                    let _ = writeln!(s, "# {} failed: {}", r.modality, e.replace('\n', " "));
                }
                (Ok(_), None) => {}
            }
        }
        s
    }

    pub fn spectrum_csv(&self) -> String {
        let mut s = csv_schema("spectrum", 1);
        s.push('\n');
        for (g, sp) in &self.spectra {
            match sp {
                Ok(sp) => {
                    let _ = writeln!(s, "# {g}: recon_residual={} cond_v={}", num(sp.recon_residual), num(sp.cond_v));
                }
                Err(e) => {
                    let _ = writeln!(s, "# {g}: diagonalization failed: {}", e.replace('\n', " "));
                }
            }
        }
        let _ = writeln!(s, "generator,index,lambda_re,lambda_im,lambda_abs");
        for (g, sp) in &self.spectra {
            if let Ok(sp) = sp {
                for (k, l) in sp.lambda.iter().enumerate() {
                    let _ = writeln!(s, "{g},{k},{},{},{}", num(l.re), num(l.im), num(l.norm()));
                }
            }
        }
        s
    }

    /// One row per fit; `r2` clamped to `[0, 1]`, the unclamped value alongside.
    pub fn probe_csv(&self) -> String {
        let mut s = csv_schema("probe", 1);
        s.push('\n');
        let _ = writeln!(s, "fit,r2,r2_raw,samples,dim,ridge,note");
        let row = |s: &mut String, fit: &str, r: &std::result::Result<f64, String>, n: usize, d: usize, ridge: bool| {
            match r {
                Ok(r2) => {
                    let _ = writeln!(s, "{fit},{},{},{n},{d},{ridge},", num(r2.clamp(0.0, 1.0)), num(*r2));
                }
                Err(e) => {
                    let _ = writeln!(s, "{fit},,,{n},{d},{ridge},{}", e.replace([',', '\n'], " "));
                }
            }
        };
        let d = self.probe.as_ref().map(|p| p.dim).unwrap_or(0);
        if let Some(t) = &self.trained_r2 {
            row(&mut s, "trained", t, self.samples, d, false);
        }
        let refit = self.probe.as_ref().map(|p| p.r2).map_err(Clone::clone);
        let ridge = self.probe.as_ref().map(|p| p.ridge).unwrap_or(false);
        row(&mut s, "refit", &refit, self.samples, d, ridge);
        s
    }

    /// Writes the three CSV reports and the image dumps under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (name, text) in [
            ("speed_report.csv", self.speed_report_csv()),
            ("spectrum.csv", self.spectrum_csv()),
            ("probe.csv", self.probe_csv()),
        ] {
            let p = dir.join(name);
            write_text(&p, &text)?;
            out.push(p);
        }
        let (lo, hi) = self.property_range;
        let value_map = GrayMap { lo, hi };
        let err_map = GrayMap { lo: 0.0, hi: hi - lo };
        for d in &self.dumps {
            let hw = d.height * d.width;
            for c in 0..d.property.len() / hw {
                let tag = if d.property.len() == hw { String::new() } else { format!("_c{c}") };
                let truth = &d.property[c * hw..(c + 1) * hw];
                let pred = &d.prediction[c * hw..(c + 1) * hw];
                let err: Vec<f64> = truth.iter().zip(pred).map(|(a, b)| (a - b).abs()).collect();
                for (kind, vals, map) in [("property", truth, value_map), ("prediction", pred, value_map), ("error", &err[..], err_map)] {
                    let p = dir.join("images").join(format!("sample{:03}{tag}_{kind}.pgm", d.index));
                    write_pgm(&p, vals, d.height, d.width, map, &format!("{kind} of sample id {}", d.id))?;
                    out.push(p);
                }
            }
        }
        Ok(out)
    }
}
