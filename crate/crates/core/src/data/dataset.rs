//! Paired (measurement, property) datasets stored as LWC1 containers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::normalize::NormRecord;
use super::phantom::gen_phantoms_range;
use super::velocity::{gen_velocity_maps_range, FamilySpec};
use crate::container::{ArrayData, Container};
use crate::error::{Error, Result};
use crate::par;
use crate::physics::{
    acoustic_simulate, make_geometry, AcousticConfig, GeometryKind, ImageGrid, LinearProjector, RayProjector,
    Survey,
};
use crate::real::{Dtype, Real};

pub const FORMAT_TAG: &str = "latentwave-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwiSource {
    pub families: Vec<FamilySpec>,
    pub sources: usize,
    pub acoustic: AcousticConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtSource {
    pub image: usize,
    pub geometry: GeometryKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetKind {
    Fwi(FwiSource),
    Ct(CtSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DatasetKind,
    /// Training samples per family (or in total for CT).
    pub n_train: usize,
    pub n_test: usize,
    pub storage: Dtype,
}

impl DatasetSpec {
    /// Desk-scale FWI data: 250 samples at 4 ms from a 0.8 ms simulation.
    pub fn fwi_desk(families: Vec<FamilySpec>, n_train: usize, n_test: usize) -> Self {
        DatasetSpec {
            source: DatasetKind::Fwi(FwiSource {
                families,
                sources: 5,
                acoustic: AcousticConfig::new(8e-4, 1250, 5),
            }),
            n_train,
            n_test,
            storage: Dtype::F32,
        }
    }

    /// OpenFWI-shaped FWI data: 1000 samples at 1 ms from a 0.5 ms simulation.
    pub fn fwi_paper(families: Vec<FamilySpec>, n_train: usize, n_test: usize) -> Self {
        DatasetSpec {
            source: DatasetKind::Fwi(FwiSource {
                families,
                sources: 5,
                acoustic: AcousticConfig::new(5e-4, 2000, 2),
            }),
            n_train,
            n_test,
            storage: Dtype::F32,
        }
    }

    pub fn ct_desk(n_train: usize, n_test: usize, seed: u64) -> Self {
        DatasetSpec {
            source: DatasetKind::Ct(CtSource {
                image: 64,
                geometry: GeometryKind::TriArray { arrays: 3, per_array: 45, detectors: 192 },
                seed,
            }),
            n_train,
            n_test,
            storage: Dtype::F32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Normalised paired samples of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    /// Per-sample measurement shape.
    pub measurement_shape: Vec<usize>,
    /// Per-sample property shape, `[channels, H, W]`.
    pub property_shape: Vec<usize>,
    pub measurement: ArrayData,
    pub property: ArrayData,
    pub ids: Vec<f64>,
    pub norm_measurement: NormRecord,
    pub norm_property: NormRecord,
    pub metadata: BTreeMap<String, Value>,
}

fn slice_as<T: Real>(data: &ArrayData, i: usize, n: usize) -> Vec<T> {
    match data {
        ArrayData::F32(v) => v[i * n..(i + 1) * n].iter().map(|&x| T::from_f64(x as f64)).collect(),
        ArrayData::F64(v) => v[i * n..(i + 1) * n].iter().map(|&x| T::from_f64(x)).collect(),
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn measurement_numel(&self) -> usize {
        self.measurement_shape.iter().product()
    }

    pub fn property_numel(&self) -> usize {
        self.property_shape.iter().product()
    }

    pub fn measurement<T: Real>(&self, i: usize) -> Vec<T> {
        slice_as(&self.measurement, i, self.measurement_numel())
    }

    pub fn property<T: Real>(&self, i: usize) -> Vec<T> {
        slice_as(&self.property, i, self.property_numel())
    }

    /// Keeps the listed samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let pick = |d: &ArrayData, n: usize| -> Result<ArrayData> {
            if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
                return Err(Error::Contract(format!("sample {bad} out of range for {} samples", self.len())));
            }
            Ok(match d {
                ArrayData::F32(v) => ArrayData::F32(indices.iter().flat_map(|&i| v[i * n..(i + 1) * n].to_vec()).collect()),
                ArrayData::F64(v) => ArrayData::F64(indices.iter().flat_map(|&i| v[i * n..(i + 1) * n].to_vec()).collect()),
            })
        };
        Ok(Dataset {
            measurement: pick(&self.measurement, self.measurement_numel())?,
            property: pick(&self.property, self.property_numel())?,
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            ..self.clone()
        })
    }

    /// Generation spec recorded in the metadata.
    pub fn spec(&self) -> Result<DatasetSpec> {
        let v = self
            .metadata
            .get("spec")
            .ok_or_else(|| Error::Format("dataset metadata has no generation spec".into()))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("dataset spec: {e}")))
    }

    /// Joins datasets of one split and shape. Values are mapped back to
    /// physical units and renormalised over the joint range; sample ids get
    /// the part index in bits 44 and up.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Config("no datasets to join".into()))?;
        if parts.len() == 1 {
            return Ok(first.clone());
        }
        for d in parts {
            if d.measurement_shape != first.measurement_shape || d.property_shape != first.property_shape || d.split != first.split {
                return Err(Error::Config("joined datasets must share split and sample shapes".into()));
            }
        }
        let joint = |f: &dyn Fn(&Dataset) -> NormRecord| NormRecord {
            min: parts.iter().map(|d| f(d).min).fold(f64::INFINITY, f64::min),
            max: parts.iter().map(|d| f(d).max).fold(f64::NEG_INFINITY, f64::max),
        };
        let nm = joint(&|d| d.norm_measurement);
        let np = joint(&|d| d.norm_property);
        let remap = |get: &dyn Fn(&Dataset) -> (&ArrayData, NormRecord), to: &NormRecord| -> ArrayData {
            let vals = parts.iter().flat_map(|d| {
                let (a, from) = get(d);
                a.to_f64().into_iter().map(move |v| to.normalize(from.denormalize(v)))
            });
            match first.measurement.dtype() {
                Dtype::F32 => ArrayData::F32(vals.map(|v| v as f32).collect()),
                Dtype::F64 => ArrayData::F64(vals.collect()),
            }
        };
        Ok(Dataset {
            measurement: remap(&|d| (&d.measurement, d.norm_measurement), &nm),
            property: remap(&|d| (&d.property, d.norm_property), &np),
            ids: parts
                .iter()
                .enumerate()
                .flat_map(|(k, d)| d.ids.iter().map(move |&id| ((k as u64) << 44 | id as u64) as f64))
                .collect(),
            norm_measurement: nm,
            norm_property: np,
            ..first.clone()
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let n = self.len();
        let mut c = Container::new();
        let mut ms = vec![n];
        ms.extend(&self.measurement_shape);
        let mut ps = vec![n];
        ps.extend(&self.property_shape);
        c.push("measurement", ms, self.measurement.clone())?;
        c.push("property", ps, self.property.clone())?;
        c.push_f64("sample_id", vec![n], self.ids.clone())?;
        c.metadata = self.metadata.clone();
        c.set_meta("format", &FORMAT_TAG)?;
        c.set_meta("split", &self.split)?;
        c.set_meta(
            "normalization",
            &BTreeMap::from([("measurement", self.norm_measurement), ("property", self.norm_property)]),
        )?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Dataset> {
        let tag: String = c.meta("format")?;
        if tag != FORMAT_TAG {
            return Err(Error::Format(format!("unsupported dataset format `{tag}`")));
        }
        let norm: BTreeMap<String, NormRecord> = c.meta("normalization")?;
        let get_norm = |k: &str| norm.get(k).copied().ok_or_else(|| Error::Format(format!("missing {k} normalization")));
        let m = c.get("measurement")?;
        let p = c.get("property")?;
        let ids = c.get("sample_id")?;
        let n = ids.data.len();
        if m.shape.first() != Some(&n) || p.shape.first() != Some(&n) || p.shape.len() != 4 {
            return Err(Error::Format(format!(
                "inconsistent dataset arrays: measurement {:?}, property {:?}, {n} ids",
                m.shape, p.shape
            )));
        }
        let mut metadata = c.metadata.clone();
        for k in ["format", "split", "normalization"] {
            metadata.remove(k);
        }
        Ok(Dataset {
            split: c.meta("split")?,
            measurement_shape: m.shape[1..].to_vec(),
            property_shape: p.shape[1..].to_vec(),
            measurement: m.data.clone(),
            property: p.data.clone(),
            ids: ids.data.to_f64(),
            norm_measurement: get_norm("measurement")?,
            norm_property: get_norm("property")?,
            metadata,
        })
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }
}

struct Raw {
    id: f64,
    measurement: Vec<f64>,
    property: Vec<f64>,
}

fn raw_samples(spec: &DatasetSpec, split: Split) -> Result<(Vec<Raw>, Vec<usize>, Vec<usize>)> {
    let (start, n) = match split {
        Split::Train => (0u64, spec.n_train),
        Split::Test => (spec.n_train as u64, spec.n_test),
    };
    match &spec.source {
        DatasetKind::Fwi(src) => {
            if src.families.is_empty() {
                return Err(Error::Config("FWI dataset needs at least one family".into()));
            }
            let mut out = Vec::new();
            let mut mshape = Vec::new();
            let mut pshape = Vec::new();
            for (f, fam) in src.families.iter().enumerate() {
                let maps = gen_velocity_maps_range(fam, start, n)?;
                let survey = Survey::surface(src.sources, fam.width)?;
                let gathers = par::try_map_range(maps.len(), |k| {
                    acoustic_simulate(&maps[k], &survey, &src.acoustic).map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("{} sample {}: {m}", fam.name(), start + k as u64)),
                        other => other,
                    })
                })?;
                let ms = vec![src.sources, src.acoustic.recorded_samples(), fam.width];
                let ps = vec![1, fam.height, fam.width];
                if f > 0 && (ms != mshape || ps != pshape) {
                    return Err(Error::Config("all families in a dataset must share grid and survey".into()));
                }
                mshape = ms;
                pshape = ps;
                for (k, (m, g)) in maps.into_iter().zip(gathers).enumerate() {
                    out.push(Raw {
                        id: ((f as u64) << 32 | (start + k as u64)) as f64,
                        measurement: g.data,
                        property: m.c,
                    });
                }
            }
            Ok((out, mshape, pshape))
        }
        DatasetKind::Ct(src) => {
            let grid = ImageGrid::new(src.image, 1.0)?;
            let geom = make_geometry(src.geometry, grid)?;
            let proj = RayProjector::new(&geom);
            let images = gen_phantoms_range(src.seed, start, n, &grid)?;
            let sinos = par::try_map_range(images.len(), |k| proj.forward(&images[k]))?;
            let out = images
                .into_iter()
                .zip(sinos)
                .enumerate()
                .map(|(k, (img, s))| Raw {
                    id: (start + k as u64) as f64,
                    measurement: s,
                    property: img,
                })
                .collect();
            Ok((out, geom.shape.clone(), vec![1, src.image, src.image]))
        }
    }
}

fn physical_metadata(spec: &DatasetSpec) -> Value {
    match &spec.source {
        DatasetKind::Fwi(src) => serde_json::json!({
            "dx_m": src.families.first().map(|f| f.dx),
            "dt_s": src.acoustic.dt * src.acoustic.record_every as f64,
            "measurement_units": "pressure",
            "property_units": "m/s",
        }),
        DatasetKind::Ct(_) => serde_json::json!({
            "pixel": 1.0,
            "measurement_units": "line integral",
            "property_units": "attenuation",
        }),
    }
}

/// Simulates, normalises with the joint train ∪ test min/max, and returns
/// `(train, test)`.
pub fn generate(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::Config("n_train and n_test must both be ≥ 1".into()));
    }
    let (train, mshape, pshape) = raw_samples(spec, Split::Train)?;
    let (test, _, _) = raw_samples(spec, Split::Test)?;
    let all = || train.iter().chain(&test);
    let nm = NormRecord::fit(all().flat_map(|r| &r.measurement))?;
    let np = NormRecord::fit(all().flat_map(|r| &r.property))?;
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "spec".to_string(),
        serde_json::to_value(spec).map_err(|e| Error::Format(e.to_string()))?,
    );
    metadata.insert("physical".to_string(), physical_metadata(spec));
    let pack = |raws: &[Raw], split: Split| -> Dataset {
        let store = |get: &dyn Fn(&Raw) -> &Vec<f64>, norm: &NormRecord| -> ArrayData {
            let it = raws.iter().flat_map(|r| get(r).iter().map(|&v| norm.normalize(v)));
            match spec.storage {
                Dtype::F32 => ArrayData::F32(it.map(|v| v as f32).collect()),
                Dtype::F64 => ArrayData::F64(it.collect()),
            }
        };
        Dataset {
            split,
            measurement_shape: mshape.clone(),
            property_shape: pshape.clone(),
            measurement: store(&|r| &r.measurement, &nm),
            property: store(&|r| &r.property, &np),
            ids: raws.iter().map(|r| r.id).collect(),
            norm_measurement: nm,
            norm_property: np,
            metadata: metadata.clone(),
        }
    };
    Ok((pack(&train, Split::Train), pack(&test, Split::Test)))
}

/// Writes `train.lwc` and `test.lwc` under `out_dir`.
pub fn build_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = generate(spec)?;
    let tp = out_dir.join("train.lwc");
    let vp = out_dir.join("test.lwc");
    train.write(&tp)?;
    test.write(&vp)?;
    Ok((tp, vp))
}
