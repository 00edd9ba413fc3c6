//! Forward pass of the two-modality model on a graph.

use super::config::{ConverterKind, DecoderConfig, ModelConfig};
use super::params::{init_params, ParamStore};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::finola::{CoefficientMatrices, FinolaMode};
use crate::real::Real;

/// Splits `[C, H, W]` into `ph × pw` patches. Tokens are in row-major raster
/// over the patch grid; each token lists its values in `(c, dy, dx)` order.
pub fn patchify<T: Real>(x: &[T], c: usize, h: usize, w: usize, ph: usize, pw: usize) -> Result<Tensor<T>> {
    if x.len() != c * h * w {
        return Err(Error::shape("patchify", &[x.len()], &[c, h, w]));
    }
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Contract(format!("{h}×{w} input is not divisible by {ph}×{pw} patches")));
    }
    let (gh, gw) = (h / ph, w / pw);
    let pd = c * ph * pw;
    let mut out = Vec::with_capacity(gh * gw * pd);
    for ty in 0..gh {
        for tx in 0..gw {
            for ch in 0..c {
                for dy in 0..ph {
                    let row = (ch * h + ty * ph + dy) * w + tx * pw;
                    out.extend_from_slice(&x[row..row + pw]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, pd], out)
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub v_measurement: Var,
    pub v_property: Var,
    pub z_measurement: Var,
    pub z_property: Var,
    pub measurement: Var,
    pub property: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    /// Fixed measurement subtracted before patch embedding. Not trained.
    /// Training fills it with the training-set mean when absent.
    pub reference: Option<Vec<T>>,
}

struct Ctx<'a, T> {
    g: &'a mut Graph<T>,
    vars: &'a [Var],
    store: &'a ParamStore<T>,
}

impl<T: Real> Ctx<'_, T> {
    fn p(&self, name: &str) -> Result<Var> {
        Ok(self.vars[self.store.position(name)?])
    }

    fn linear(&mut self, x: Var, prefix: &str, w: &str, b: &str) -> Result<Var> {
        let wv = self.p(&format!("{prefix}.{w}"))?;
        let bv = self.p(&format!("{prefix}.{b}"))?;
        let y = self.g.matmul(x, wv)?;
        self.g.bias_add(y, bv)
    }

    /// Multi-head attention of queries `q_in` over `kv_in`.
    fn attention(&mut self, q_in: Var, kv_in: Var, prefix: &str, heads: usize) -> Result<Var> {
        let q = self.linear(q_in, prefix, "wq", "bq")?;
        let k = self.linear(kv_in, prefix, "wk", "bk")?;
        let v = self.linear(kv_in, prefix, "wv", "bv")?;
        let hidden = self.g.shape(q)[1];
        let dh = hidden / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = self.g.narrow(q, 1, hd * dh, dh)?;
            let kh = self.g.narrow(k, 1, hd * dh, dh)?;
            let vh = self.g.narrow(v, 1, hd * dh, dh)?;
            let kt = self.g.transpose(kh)?;
            let s = self.g.matmul(qh, kt)?;
            let s = self.g.scale(s, scale)?;
            let a = self.g.softmax(s)?;
            outs.push(self.g.matmul(a, vh)?);
        }
        let o = if heads == 1 { outs[0] } else { self.g.concat(&outs, 1)? };
        self.linear(o, prefix, "wo", "bo")
    }

    fn conv(&mut self, x: Var, prefix: &str, pad: usize) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        self.g.conv2d(x, w, Some(b), 1, pad)
    }

    fn decode(&mut self, z: Var, prefix: &str, d: &DecoderConfig, target: (usize, usize)) -> Result<Var> {
        let mut x = self.conv(z, &format!("{prefix}.stem"), 0)?;
        let (mut h, mut w) = (self.g.shape(x)[1], self.g.shape(x)[2]);
        let n = d.widths.len();
        let sy = super::config::stages_for(h, target.0)?;
        let sx = super::config::stages_for(w, target.1)?;
        for i in 0..n {
            let fy = if i + sy >= n { 2 } else { 1 };
            let fx = if i + sx >= n { 2 } else { 1 };
            let mut u = if fy * fx > 1 { self.g.upsample(x, fy, fx)? } else { x };
            h *= fy;
            w *= fx;
            if i + 1 == n && (h, w) != target {
                u = self.g.crop(u, (h - target.0) / 2, (w - target.1) / 2, target.0, target.1)?;
                (h, w) = target;
            }
            let a = self.conv(u, &format!("{prefix}.s{i}.a"), 1)?;
            let a = self.g.relu(a)?;
            let b = self.conv(a, &format!("{prefix}.s{i}.b"), 1)?;
            x = self.g.add(a, b)?;
        }
        if (h, w) != target {
            x = self.g.crop(x, (h - target.0) / 2, (w - target.1) / 2, target.0, target.1)?;
        }
        self.conv(x, &format!("{prefix}.head"), 1)
    }
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params, reference: None })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let template = init_params::<T>(&config, 0)?;
        if template.names() != params.names()
            || template.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Contract("parameter set does not match the model configuration".into()));
        }
        Ok(Model { config, params, reference: None })
    }

    pub fn with_reference(mut self, reference: Vec<T>) -> Result<Self> {
        let [c, h, w] = self.config.input;
        if reference.len() != c * h * w {
            return Err(Error::shape("reference", &[c, h, w], &[reference.len()]));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    /// Adds every parameter to `g` in store order.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .tensors()
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], measurement: &[T]) -> Result<Forward> {
        let cfg = &self.config;
        let e = &cfg.encoder;
        let [c, h, w] = cfg.input;
        let centered: Vec<T>;
        let input = match &self.reference {
            Some(r) if r.len() == measurement.len() => {
                centered = measurement.iter().zip(r).map(|(&x, &m)| x - m).collect();
                &centered[..]
            }
            Some(r) => return Err(Error::shape("forward", &[r.len()], &[measurement.len()])),
            None => measurement,
        };
        let tokens = patchify(input, c, h, w, e.patch_h, e.patch_w)?;
        let mut cx = Ctx { g, vars, store: &self.params };
        let t = cx.g.constant(tokens)?;
        let x = cx.linear(t, "enc.patch", "w", "b")?;
        let pos = cx.p("enc.pos")?;
        let mut x = cx.g.add(x, pos)?;
        for i in 0..e.depth {
            let n = cx.g.channel_norm(x)?;
            let a = cx.attention(n, n, &format!("enc.block{i}.attn"), e.heads)?;
            x = cx.g.add(x, a)?;
            let n = cx.g.channel_norm(x)?;
            let m = cx.linear(n, &format!("enc.block{i}.mlp"), "w1", "b1")?;
            let m = cx.g.gelu(m)?;
            let m = cx.linear(m, &format!("enc.block{i}.mlp"), "w2", "b2")?;
            x = cx.g.add(x, m)?;
        }
        let n = cx.g.channel_norm(x)?;
        let seeds = cx.p("enc.pool.seeds")?;
        let pooled = cx.attention(seeds, n, "enc.pool", e.heads)?;
        let d = cfg.latent_dim();
        let v_p = cx.g.reshape(pooled, &[1, d])?;

        let col = cx.g.reshape(v_p, &[d, 1])?;
        let v_psi = match cfg.converter {
            ConverterKind::Linear => {
                let tm = cx.p("conv.t")?;
                let y = cx.g.matmul(tm, col)?;
                cx.g.reshape(y, &[1, d])?
            }
            ConverterKind::Maxout2 => {
                let wm = cx.p("conv.w")?;
                let y = cx.g.matmul(wm, col)?;
                let y = cx.g.reshape(y, &[1, 2 * d])?;
                cx.g.maxout(y, 2)?
            }
            ConverterKind::Mlp2 => {
                let (w1, b1, w2, b2) = (cx.p("conv.w1")?, cx.p("conv.b1")?, cx.p("conv.w2")?, cx.p("conv.b2")?);
                let y = cx.g.matmul(w1, col)?;
                let y = cx.g.reshape(y, &[1, d])?;
                let y = cx.g.bias_add(y, b1)?;
                let y = cx.g.relu(y)?;
                let y = cx.g.reshape(y, &[d, 1])?;
                let y = cx.g.matmul(w2, y)?;
                let y = cx.g.reshape(y, &[1, d])?;
                cx.g.bias_add(y, b2)?
            }
        };

        let f = &cfg.finola;
        let (ga, gb) = if f.shared { ("finola", "finola") } else { ("finola.meas", "finola.prop") };
        let (th, tw) = cfg.token_grid();
        let (a, b) = (cx.p(&format!("{ga}.a"))?, cx.p(&format!("{ga}.b"))?);
        let z_p = cx.g.finola(v_p, a, b, f.paths, th, tw, f.mode)?;
        let (a, b) = (cx.p(&format!("{gb}.a"))?, cx.p(&format!("{gb}.b"))?);
        let (gh, gw) = cfg.property_grid;
        let z_psi = cx.g.finola(v_psi, a, b, f.paths, gh, gw, f.mode)?;

        let pm = cx.decode(z_p, "dec.meas", &cfg.decoder_measurement, (h, w))?;
        let pp = cx.decode(z_psi, "dec.prop", &cfg.decoder_property, (cfg.output[1], cfg.output[2]))?;
        Ok(Forward {
            v_measurement: v_p,
            v_property: v_psi,
            z_measurement: z_p,
            z_property: z_psi,
            measurement: pm,
            property: pp,
        })
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, measurement: &[T]) -> Result<(Graph<T>, Forward)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let f = self.forward(&mut g, &vars, measurement)?;
        Ok((g, f))
    }

    /// Shared generators, when the model has them.
    pub fn coefficients(&self) -> Result<CoefficientMatrices<f64>> {
        let prefix = if self.config.finola.shared { "finola" } else { "finola.prop" };
        let c = self.config.finola.channels;
        let get = |n: &str| -> Result<Vec<f64>> {
            Ok(self.params.get(&format!("{prefix}.{n}"))?.data().iter().map(|&v| v.to_f64()).collect())
        };
        CoefficientMatrices::new(get("a")?, get("b")?, c)
    }

    pub fn finola_mode(&self) -> FinolaMode {
        self.config.finola.mode
    }
}
