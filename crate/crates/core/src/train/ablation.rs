//! The three controlled comparisons: shared vs separate generators,
//! converter kind, and property feature-map resolution.

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::trainer::{config_hash, train, Evaluation, TrainConfig};
use super::Checkpoint;
use super::RunLog;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{ConverterKind, Model, ModelConfig};
use crate::real::Real;

pub const ABLATION_SCHEMA: &str = "# latentwave ablation v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config_hash: String,
    pub reconstruction: MetricReport,
    pub prediction: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub which: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Result<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.label == label)
            .ok_or_else(|| Error::Contract(format!("no ablation row `{label}`")))
    }

    /// Prediction-head SSIM of `a` minus that of `b`.
    pub fn ssim_gap(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.row(a)?.prediction.ssim - self.row(b)?.prediction.ssim)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{ABLATION_SCHEMA}");
        let _ = writeln!(s, "# which={}", self.which);
        let _ = writeln!(s, "label,config_hash,head,n,mae,mse,ssim");
        for r in &self.rows {
            for (head, m) in [("reconstruction", &r.reconstruction), ("prediction", &r.prediction)] {
                let _ = writeln!(
                    s,
                    "{},{},{head},{},{:e},{:e},{:e}",
                    r.label, r.config_hash, m.n, m.mae, m.mse, m.ssim
                );
            }
        }
        s
    }
}

/// Called after every finished training run, cached or not.
pub type RunHook<T> = Box<dyn FnMut(&ModelConfig, &Checkpoint<T>, &RunLog) -> Result<()>>;

/// Finished runs keyed by config hash, so variants shared between
/// comparisons train once.
pub struct RunCache<T> {
    runs: HashMap<String, (Checkpoint<T>, RunLog, Evaluation)>,
    hook: Option<RunHook<T>>,
}

impl<T: Real> Default for RunCache<T> {
    fn default() -> Self {
        RunCache {
            runs: HashMap::new(),
            hook: None,
        }
    }
}

impl<T: Real> RunCache<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `hook` as each run finishes, e.g. to flush logs before a later
    /// variant fails.
    pub fn with_hook(hook: RunHook<T>) -> Self {
        RunCache {
            runs: HashMap::new(),
            hook: Some(hook),
        }
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn get(&self, hash: &str) -> Option<&(Checkpoint<T>, RunLog, Evaluation)> {
        self.runs.get(hash)
    }

    /// Trains `(model, cfg)` unless an identical run is cached.
    pub fn run(
        &mut self,
        model: &ModelConfig,
        train_set: &Dataset,
        test: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<&(Checkpoint<T>, RunLog, Evaluation)> {
        let hash = config_hash(model, cfg, T::DTYPE, train_set);
        if !self.runs.contains_key(&hash) {
            let out = self.fresh(model, train_set, test, cfg)?;
            self.runs.insert(hash.clone(), out);
        }
        Ok(&self.runs[&hash])
    }

    /// Trains without consulting or filling the cache.
    pub fn fresh(
        &mut self,
        model: &ModelConfig,
        train_set: &Dataset,
        test: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<(Checkpoint<T>, RunLog, Evaluation)> {
        let out = fresh_run::<T>(model, train_set, test, cfg)?;
        if let Some(h) = self.hook.as_mut() {
            h(model, &out.0, &out.1)?;
        }
        Ok(out)
    }
}

fn fresh_run<T: Real>(
    model: &ModelConfig,
    train_set: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Checkpoint<T>, RunLog, Evaluation)> {
    let m = Model::<T>::new(model.clone(), cfg.seed)?;
    let out = train(m, train_set, None, cfg, None)?;
    let ev = super::evaluate(&out.checkpoint.model, test)?;
    let mut log = out.log;
    log.eval = ev.records();
    Ok((out.checkpoint, log, ev))
}

fn row(label: &str, hash: &str, ev: &Evaluation) -> AblationRow {
    AblationRow {
        label: label.to_string(),
        config_hash: hash.to_string(),
        reconstruction: ev.measurement[0],
        prediction: ev.property[0],
    }
}

fn control_row<T: Real>(
    cache: &mut RunCache<T>,
    label: &str,
    model: &ModelConfig,
    train_set: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<AblationRow> {
    // deliberately bypasses the cache: this is the rerun
    let (_, log, ev) = cache.fresh(model, train_set, test, cfg)?;
    Ok(row(label, &log.config_hash, &ev))
}

/// Rows `shared`, `separate` and, with `control`, `shared-rerun`.
pub fn ablate_shared_vs_separate<T: Real>(
    cache: &mut RunCache<T>,
    base: &ModelConfig,
    train_set: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    control: bool,
) -> Result<AblationReport> {
    let mut shared = base.clone();
    shared.finola.shared = true;
    let mut separate = base.clone();
    separate.finola.shared = false;
    let mut rows = Vec::new();
    for (label, m) in [("shared", &shared), ("separate", &separate)] {
        let (_, log, ev) = cache.run(m, train_set, test, cfg)?;
        rows.push(row(label, &log.config_hash, ev));
    }
    if control {
        rows.push(control_row(cache, "shared-rerun", &shared, train_set, test, cfg)?);
    }
    Ok(AblationReport {
        which: "shared".into(),
        rows,
    })
}

/// Rows `linear`, `maxout2`, `mlp2` and, with `control`, `linear-rerun`.
pub fn ablate_converter<T: Real>(
    cache: &mut RunCache<T>,
    base: &ModelConfig,
    train_set: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    control: bool,
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (label, kind) in [
        ("linear", ConverterKind::Linear),
        ("maxout2", ConverterKind::Maxout2),
        ("mlp2", ConverterKind::Mlp2),
    ] {
        let mut m = base.clone();
        m.converter = kind;
        let (_, log, ev) = cache.run(&m, train_set, test, cfg)?;
        rows.push(row(label, &log.config_hash, ev));
    }
    if control {
        let mut m = base.clone();
        m.converter = ConverterKind::Linear;
        rows.push(control_row(cache, "linear-rerun", &m, train_set, test, cfg)?);
    }
    Ok(AblationReport {
        which: "converter".into(),
        rows,
    })
}

/// One row per property feature-map size, labelled `"{s}x{s}"`.
pub fn ablate_resolution<T: Real>(
    cache: &mut RunCache<T>,
    base: &ModelConfig,
    train_set: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    sizes: &[usize],
) -> Result<AblationReport> {
    if sizes.is_empty() {
        return Err(Error::Config("resolution ablation needs at least one size".into()));
    }
    let mut rows = Vec::new();
    for &s in sizes {
        let m = base.with_property_grid(s)?;
        let (_, log, ev) = cache.run(&m, train_set, test, cfg)?;
        rows.push(row(&format!("{s}x{s}"), &log.config_hash, ev));
    }
    Ok(AblationReport {
        which: "resolution".into(),
        rows,
    })
}
