//! Forward simulators that produce the measurement modality.

pub mod acoustic;
pub mod radon;

pub use acoustic::{acoustic_simulate, AcousticConfig, SeismicGather, Survey, VelocityMap, Wavelet};
pub use radon::{
    backproject, make_geometry, radon_project, DenseProjector, GeometryKind, ImageGrid, LinearProjector,
    Ray, RayProjector, ScanGeometry, Sinogram,
};
