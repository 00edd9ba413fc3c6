//! Encoder, converter and decoders around a shared FINOLA layer.

pub mod config;
pub mod network;
pub mod params;
pub mod probe;

pub use config::{ConverterKind, DecoderConfig, EncoderConfig, FinolaConfig, ModelConfig};
pub use network::{patchify, Forward, Model};
pub use params::ParamStore;
pub use probe::{correlation_probe, ProbeResult};
