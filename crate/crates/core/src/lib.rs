//! Paired-modality latent modelling with shared one-way wave dynamics.

pub mod analysis;
pub mod autodiff;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod finola;
pub mod metrics;
pub mod model;
pub mod par;
pub mod physics;
pub mod real;
pub mod report;
pub mod rng;
pub mod sirt;
pub mod train;
pub mod wave;

pub use error::{Error, ErrorClass, Result};
pub use real::{Dtype, Real};
