//! Model + optimiser state in an LWC1 container.

use std::path::Path;

use super::adamw::AdamState;
use super::trainer::TrainConfig;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::model::{params::init_params, Model, ModelConfig, ParamStore};
use crate::real::{Dtype, Real};

pub const CHECKPOINT_TAG: &str = "latentwave-checkpoint/1";
const REFERENCE: &str = "reference/measurement";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub epoch: usize,
    pub train: Option<TrainConfig>,
    pub config_hash: String,
}

impl<T: Real> Checkpoint<T> {
    /// Untrained checkpoint around `model`.
    pub fn fresh(model: Model<T>) -> Self {
        Checkpoint {
            adam: AdamState::new(&model.params),
            model,
            epoch: 0,
            train: None,
            config_hash: String::new(),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        self.model.params.write_into(&mut c, "param/")?;
        self.adam.m.write_into(&mut c, "adam_m/")?;
        self.adam.v.write_into(&mut c, "adam_v/")?;
        if let Some(r) = &self.model.reference {
            let shape = self.model.config.input.to_vec();
            match T::DTYPE {
                Dtype::F32 => c.push_f32(REFERENCE, shape, r.iter().map(|&v| Real::to_f64(v) as f32).collect())?,
                Dtype::F64 => c.push_f64(REFERENCE, shape, r.iter().map(|&v| Real::to_f64(v)).collect())?,
            }
        }
        c.set_meta("format", &CHECKPOINT_TAG)?;
        c.set_meta("model", &self.model.config)?;
        c.set_meta("train", &self.train)?;
        c.set_meta("epoch", &self.epoch)?;
        c.set_meta("step", &self.adam.t)?;
        c.set_meta("precision", &T::DTYPE)?;
        c.set_meta("config_hash", &self.config_hash)?;
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    /// Loads a checkpoint, converting its stored precision to `T`.
    pub fn from_container(c: &Container) -> Result<Self> {
        let tag: String = c.meta("format")?;
        if tag != CHECKPOINT_TAG {
            return Err(Error::Format(format!("unsupported checkpoint format `{tag}`")));
        }
        let config: ModelConfig = c.meta("model")?;
        let template = init_params::<T>(&config, 0)?;
        let params = ParamStore::read_from(&template, c, "param/")?;
        let adam = AdamState {
            m: ParamStore::read_from(&template, c, "adam_m/")?,
            v: ParamStore::read_from(&template, c, "adam_v/")?,
            t: c.meta("step")?,
        };
        let mut model = Model::from_params(config, params)?;
        if c.contains(REFERENCE) {
            let r = c.get(REFERENCE)?.data.to_f64().into_iter().map(T::from_f64).collect();
            model = model.with_reference(r)?;
        }
        Ok(Checkpoint {
            model,
            adam,
            epoch: c.meta("epoch")?,
            train: c.meta("train")?,
            config_hash: c.meta("config_hash")?,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Stored precision of a checkpoint file.
pub fn stored_precision(c: &Container) -> Result<Dtype> {
    c.meta("precision")
}
