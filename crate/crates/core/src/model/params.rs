//! Named parameter tensors with name-seeded initialisation.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ConverterKind, DecoderConfig, ModelConfig};
use crate::autodiff::Tensor;
use crate::container::{ArrayData, Container};
use crate::error::{Error, Result};
use crate::real::{Dtype, Real};
use crate::rng::stream;

/// Ordered parameter set; iteration order is insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.tensors[self.position(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self.position(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Appends every tensor as `{prefix}{name}` in the store's precision.
    pub fn write_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            let data = match T::DTYPE {
                Dtype::F32 => ArrayData::F32(t.data().iter().map(|&v| v.to_f64() as f32).collect()),
                Dtype::F64 => ArrayData::F64(t.data().iter().map(|&v| v.to_f64()).collect()),
            };
            c.push(&format!("{prefix}{n}"), t.shape().to_vec(), data)?;
        }
        Ok(())
    }

    /// Reads tensors named like `template` from `{prefix}{name}` entries.
    pub fn read_from(template: &ParamStore<T>, c: &Container, prefix: &str) -> Result<Self> {
        let mut out = ParamStore::new();
        for (n, t) in template.names.iter().zip(&template.tensors) {
            let a = c.get(&format!("{prefix}{n}"))?;
            if a.shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{n}` has shape {:?} in file, model expects {:?}",
                    a.shape,
                    t.shape()
                )));
            }
            let data = a.data.to_f64().into_iter().map(T::from_f64).collect();
            out.insert(n, Tensor::new(a.shape.clone(), data)?)?;
        }
        Ok(out)
    }
}

fn trunc_normal<T: Real>(seed: u64, key: &str, shape: Vec<usize>, std: f64) -> Result<Tensor<T>> {
    let mut rng = stream(seed, key, 0);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::from_f64(z * std);
            }
        })
        .collect();
    Tensor::new(shape, data)
}

fn he_normal<T: Real>(seed: u64, key: &str, shape: Vec<usize>) -> Result<Tensor<T>> {
    let fan_in: usize = shape[1..].iter().product();
    trunc_normal(seed, key, shape, (2.0 / fan_in as f64).sqrt())
}

fn identity_plus_noise<T: Real>(seed: u64, key: &str, d: usize, std: f64) -> Result<Tensor<T>> {
    let mut t: Tensor<T> = trunc_normal(seed, key, vec![d, d], std)?;
    for i in 0..d {
        t.data_mut()[i * d + i] += T::one();
    }
    Ok(t)
}

fn normal_scaled<T: Real>(seed: u64, key: &str, d: usize, scale: f64) -> Result<Tensor<T>> {
    let mut rng = stream(seed, key, 0);
    let data = (0..d * d)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal) * scale))
        .collect();
    Tensor::new(vec![d, d], data)
}

pub const PROJ_STD: f64 = 0.02;
pub const CONVERTER_NOISE: f64 = 1e-3;
pub const GENERATOR_SCALE: f64 = 0.02;

fn decoder_params<T: Real>(
    s: &mut ParamStore<T>,
    seed: u64,
    prefix: &str,
    cin: usize,
    cout: usize,
    d: &DecoderConfig,
) -> Result<()> {
    let k = |n: &str| format!("{prefix}.{n}");
    s.insert(&k("stem.w"), he_normal(seed, &k("stem.w"), vec![d.stem, cin, 1, 1])?)?;
    s.insert(&k("stem.b"), Tensor::zeros(&[d.stem]))?;
    let mut prev = d.stem;
    for (i, &w) in d.widths.iter().enumerate() {
        for (part, ci) in [("a", prev), ("b", w)] {
            let name = k(&format!("s{i}.{part}.w"));
            s.insert(&name, he_normal(seed, &name, vec![w, ci, 3, 3])?)?;
            s.insert(&k(&format!("s{i}.{part}.b")), Tensor::zeros(&[w]))?;
        }
        prev = w;
    }
    s.insert(&k("head.w"), trunc_normal(seed, &k("head.w"), vec![cout, prev, 3, 3], PROJ_STD)?)?;
    s.insert(&k("head.b"), Tensor::zeros(&[cout]))?;
    Ok(())
}

/// Fresh parameters for `cfg`. Each tensor draws from a stream keyed by
/// `(seed, role)`, so models that differ only in one component share the
/// initial values of everything else.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut s = ParamStore::new();
    let e = &cfg.encoder;
    let h = e.hidden;
    let pd = cfg.input[0] * e.patch_h * e.patch_w;
    let (th, tw) = cfg.token_grid();
    let tn = |s: &mut ParamStore<T>, name: &str, shape: Vec<usize>| -> Result<()> {
        s.insert(name, trunc_normal(seed, name, shape, PROJ_STD)?)
    };
    tn(&mut s, "enc.patch.w", vec![pd, h])?;
    s.insert("enc.patch.b", Tensor::zeros(&[h]))?;
    tn(&mut s, "enc.pos", vec![th * tw, h])?;
    let attn = |s: &mut ParamStore<T>, p: &str| -> Result<()> {
        for m in ["q", "k", "v", "o"] {
            tn(s, &format!("{p}.w{m}"), vec![h, h])?;
            s.insert(&format!("{p}.b{m}"), Tensor::zeros(&[h]))?;
        }
        Ok(())
    };
    for i in 0..e.depth {
        attn(&mut s, &format!("enc.block{i}.attn"))?;
        tn(&mut s, &format!("enc.block{i}.mlp.w1"), vec![h, e.mlp_ratio * h])?;
        s.insert(&format!("enc.block{i}.mlp.b1"), Tensor::zeros(&[e.mlp_ratio * h]))?;
        tn(&mut s, &format!("enc.block{i}.mlp.w2"), vec![e.mlp_ratio * h, h])?;
        s.insert(&format!("enc.block{i}.mlp.b2"), Tensor::zeros(&[h]))?;
    }
    tn(&mut s, "enc.pool.seeds", vec![e.pool_seeds, h])?;
    attn(&mut s, "enc.pool")?;

    let d = cfg.latent_dim();
    match cfg.converter {
        ConverterKind::Linear => s.insert("conv.t", identity_plus_noise(seed, "conv.t", d, CONVERTER_NOISE)?)?,
        ConverterKind::Maxout2 => {
            let t: Tensor<T> = identity_plus_noise(seed, "conv.t", d, CONVERTER_NOISE)?;
            let mut both = t.data().to_vec();
            both.extend_from_slice(t.data());
            s.insert("conv.w", Tensor::new(vec![2 * d, d], both)?)?;
        }
        ConverterKind::Mlp2 => {
            s.insert("conv.w1", identity_plus_noise(seed, "conv.t", d, CONVERTER_NOISE)?)?;
            s.insert("conv.b1", Tensor::zeros(&[d]))?;
            s.insert("conv.w2", identity_plus_noise(seed, "conv.w2", d, CONVERTER_NOISE)?)?;
            s.insert("conv.b2", Tensor::zeros(&[d]))?;
        }
    }

    let c = cfg.finola.channels;
    let groups: &[&str] = if cfg.finola.shared { &["finola"] } else { &["finola.meas", "finola.prop"] };
    for g in groups {
        s.insert(&format!("{g}.a"), normal_scaled(seed, "finola.a", c, GENERATOR_SCALE)?)?;
        s.insert(&format!("{g}.b"), normal_scaled(seed, "finola.b", c, GENERATOR_SCALE)?)?;
    }

    decoder_params(&mut s, seed, "dec.meas", c, cfg.input[0], &cfg.decoder_measurement)?;
    decoder_params(&mut s, seed, "dec.prop", c, cfg.output[0], &cfg.decoder_property)?;
    Ok(s)
}
