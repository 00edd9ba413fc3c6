//! Deterministic mini-batch training and evaluation.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adamw::{adamw_step, cosine_lr, AdamHyper, AdamState};
use super::checkpoint::Checkpoint;
use super::runlog::{EpochRecord, EvalRecord, RunLog};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{MetricAccumulator, MetricReport, Scale};
use crate::model::{Model, ModelConfig, ParamStore};
use crate::par;
use crate::real::Real;
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Weights of the measurement and property heads.
    pub head_weights: [f64; 2],
    /// Write a checkpoint every n epochs (0: only the final one).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 64,
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            clip_norm: Some(1.0),
            head_weights: [1.0, 1.0],
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("lr must be ≥ 0 and betas in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config("eps > 0, weight_decay ≥ 0 and batch_size ≥ 1 required".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Hash binding a run to its model/training configuration, precision and data.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig, dtype: crate::Dtype, data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(model, train, dtype)).unwrap_or_default());
    h.update(serde_json::to_vec(&(data.norm_measurement, data.norm_property)).unwrap_or_default());
    for id in &data.ids {
        h.update(id.to_le_bytes());
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct SampleGrad<T> {
    grads: Vec<Tensor<T>>,
    /// l1/l2 of measurement and property heads
    parts: [f64; 4],
}

fn head_losses<T: Real>(g: &mut Graph<T>, pred: Var, target: Vec<T>) -> Result<(Var, Var)> {
    let shape = g.shape(pred).to_vec();
    let t = g.constant(Tensor::new(shape, target)?)?;
    let d = g.sub(pred, t)?;
    let a = g.abs(d)?;
    let l1 = g.mean(a)?;
    let sq = g.mul(d, d)?;
    let l2 = g.mean(sq)?;
    Ok((l1, l2))
}

fn sample_grad<T: Real>(model: &Model<T>, data: &Dataset, i: usize, weights: [f64; 2], scale: f64) -> Result<SampleGrad<T>> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true)?;
    let f = model.forward(&mut g, &vars, &data.measurement::<T>(i))?;
    let (l1m, l2m) = head_losses(&mut g, f.measurement, data.measurement::<T>(i))?;
    let (l1p, l2p) = head_losses(&mut g, f.property, data.property::<T>(i))?;
    let hm = g.add(l1m, l2m)?;
    let hm = g.scale(hm, T::from_f64(weights[0] * scale))?;
    let hp = g.add(l1p, l2p)?;
    let hp = g.scale(hp, T::from_f64(weights[1] * scale))?;
    let total = g.add(hm, hp)?;
    let parts = [l1m, l2m, l1p, l2p].map(|v| g.value(v).data()[0].to_f64());
    g.backward_scalar(total)?;
    let grads = vars
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok(SampleGrad { grads, parts })
}

pub struct TrainOutput<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: RunLog,
}

fn write_checkpoint<T: Real>(dir: Option<&Path>, name: &str, ck: &Checkpoint<T>) -> Result<()> {
    if let Some(d) = dir {
        ck.write(&d.join(name))?;
    }
    Ok(())
}

/// Per-element mean of the training measurements, summed in sample order.
pub fn mean_measurement(data: &Dataset) -> Vec<f64> {
    let mut acc = vec![0.0; data.measurement_numel()];
    for i in 0..data.len() {
        for (a, x) in acc.iter_mut().zip(data.measurement::<f64>(i)) {
            *a += x;
        }
    }
    let n = data.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Trains `model` on `train`; evaluates on `test` at the end if given.
pub fn train<T: Real>(
    model: Model<T>,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let mc = &model.config;
    if train.measurement_shape != mc.input || train.property_shape != mc.output {
        return Err(Error::Config(format!(
            "dataset shapes {:?}/{:?} do not match model {:?}/{:?}",
            train.measurement_shape, train.property_shape, mc.input, mc.output
        )));
    }
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let hash = config_hash(mc, cfg, T::DTYPE, train);
    let model = match model.reference {
        Some(_) => model,
        None => {
            let r = mean_measurement(train).into_iter().map(T::from_f64).collect();
            model.with_reference(r)?
        }
    };
    let mut log = RunLog::new(hash.clone());
    let n = train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut ck = Checkpoint {
        adam: AdamState::new(&model.params),
        model,
        epoch: 0,
        train: Some(cfg.clone()),
        config_hash: hash,
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", epoch as u64));
        let mut sums = [0.0f64; 4];
        let mut clipped = 0;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let step = ck.adam.t as usize;
            lr = cosine_lr(cfg.lr, step, total);
            let scale = 1.0 / batch.len() as f64;
            let model = &ck.model;
            let per = par::try_map_range(batch.len(), |k| sample_grad(model, train, batch[k], cfg.head_weights, scale));
            let per = match per {
                Ok(p) => p,
                Err(e @ Error::Numeric(_)) => {
                    write_checkpoint(checkpoint_dir, "last_good.lwc", &ck)?;
                    return Err(Error::Numeric(format!("training diverged at step {}: {e}", step + 1)));
                }
                Err(e) => return Err(e),
            };
            let mut grads = ck.model.params.zeros_like();
            for s in &per {
                for (acc, g) in grads.tensors_mut().iter_mut().zip(&s.grads) {
                    acc.add_assign(g);
                }
                for (a, b) in sums.iter_mut().zip(s.parts) {
                    *a += b;
                }
            }
            if let Some(c) = cfg.clip_norm {
                let norm = grads
                    .tensors()
                    .iter()
                    .flat_map(|t| t.data())
                    .map(|&x| x.to_f64() * x.to_f64())
                    .sum::<f64>()
                    .sqrt();
                if norm > c {
                    let f = T::from_f64(c / norm);
                    grads.tensors_mut().iter_mut().for_each(|t| t.scale_assign(f));
                    clipped += 1;
                }
            }
            if let Err(e) = adamw_step(&mut ck.model.params, &grads, &mut ck.adam, &cfg.hyper(lr)) {
                write_checkpoint(checkpoint_dir, "last_good.lwc", &ck)?;
                return Err(e);
            }
        }
        let nf = n as f64;
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            steps: steps_per_epoch,
            lr,
            l1_measurement: sums[0] / nf,
            l2_measurement: sums[1] / nf,
            l1_property: sums[2] / nf,
            l2_property: sums[3] / nf,
            clipped_steps: clipped,
        });
        ck.epoch = epoch + 1;
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            write_checkpoint(checkpoint_dir, &format!("epoch_{:04}.lwc", epoch + 1), &ck)?;
        }
    }
    if let Some(t) = test {
        let ev = evaluate(&ck.model, t)?;
        log.eval = ev.records();
    }
    write_checkpoint(checkpoint_dir, "final.lwc", &ck)?;
    log.wall_time_s = start.elapsed().as_secs_f64();
    Ok(TrainOutput { checkpoint: ck, log })
}

/// Per-head metrics on normalized and original scales.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub measurement: [MetricReport; 2],
    pub property: [MetricReport; 2],
}

impl Evaluation {
    pub fn records(&self) -> Vec<EvalRecord> {
        let mut out = Vec::new();
        for (head, reps) in [("reconstruction", &self.measurement), ("prediction", &self.property)] {
            for r in reps {
                out.push(EvalRecord {
                    head: head.to_string(),
                    report: *r,
                });
            }
        }
        out
    }
}

/// Predictions of both heads for one sample, as f64.
pub fn predict<T: Real>(model: &Model<T>, data: &Dataset, i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (g, f) = model.infer(&data.measurement::<T>(i))?;
    let to = |v: Var| g.value(v).data().iter().map(|&x| x.to_f64()).collect();
    Ok((to(f.measurement), to(f.property)))
}

pub fn evaluate<T: Real>(model: &Model<T>, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mc = &model.config;
    if data.measurement_shape != mc.input || data.property_shape != mc.output {
        return Err(Error::Config("dataset shapes do not match the model".into()));
    }
    let preds = par::try_map_range(data.len(), |i| predict(model, data, i))?;
    let nm = data.norm_measurement;
    let np = data.norm_property;
    let mut acc = [
        MetricAccumulator::new(Scale::Normalized, 2.0),
        MetricAccumulator::new(Scale::Denormalized, nm.range().max(f64::MIN_POSITIVE)),
        MetricAccumulator::new(Scale::Normalized, 2.0),
        MetricAccumulator::new(Scale::Denormalized, np.range().max(f64::MIN_POSITIVE)),
    ];
    let [c, h, w] = mc.input;
    let [cp, hp, wp] = mc.output;
    for (i, (pm, pp)) in preds.iter().enumerate() {
        let tm: Vec<f64> = data.measurement::<f64>(i);
        let tp: Vec<f64> = data.property::<f64>(i);
        acc[0].add_channels(pm, &tm, c, h, w)?;
        let dn = |v: &[f64], r: &crate::data::NormRecord| -> Vec<f64> { v.iter().map(|&x| r.denormalize(x)).collect() };
        acc[1].add_channels(&dn(pm, &nm), &dn(&tm, &nm), c, h, w)?;
        acc[2].add_channels(pp, &tp, cp, hp, wp)?;
        acc[3].add_channels(&dn(pp, &np), &dn(&tp, &np), cp, hp, wp)?;
    }
    Ok(Evaluation {
        measurement: [acc[0].finish()?, acc[1].finish()?],
        property: [acc[2].finish()?, acc[3].finish()?],
    })
}

/// Parameter store of an untrained model, for comparisons.
pub fn initial_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    crate::model::params::init_params(cfg, seed)
}
