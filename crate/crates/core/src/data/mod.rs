//! Synthetic property generators and paired dataset assembly.

pub mod dataset;
pub mod normalize;
pub mod phantom;
pub mod velocity;

pub use dataset::{build_dataset, Dataset, DatasetKind, DatasetSpec, Split};
pub use normalize::NormRecord;
pub use phantom::{disk_image, gen_phantoms, Ellipse};
pub use velocity::{gen_velocity_maps, Difficulty, Family, FamilySpec};
