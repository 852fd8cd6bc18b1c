//! Panoptic nuclei segmentation on imbalanced cell-type labels.
//!
//! The crate covers the full pipeline: raster primitives and file formats
//! ([`imagecore`]), training targets ([`targets`]), image-level importance
//! sampling ([`sampler`]), class-weighted losses with analytic gradients
//! ([`loss`]), stain-space and dihedral augmentation plus test-time averaging
//! ([`augment`]), a small two-head convolutional model trained with AdamW
//! ([`model`]), seeded-watershed post-processing with threshold search
//! ([`postprocess`]), PQ+/R² evaluation ([`metrics`]) and a synthetic scene
//! generator ([`synth`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases at
//! the crate root pin the concrete types the pipeline uses by default.

pub mod augment;
pub mod error;
pub mod imagecore;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod targets;

pub use error::{Error, Result};
pub use imagecore::{InstanceMap, LabeledInstances, Mask, Raster, SemanticMap};
pub use scalar::Scalar;

/// Single-precision raster, the working type of the model and file formats.
pub type RasterF32 = Raster<f32>;
/// Double-precision raster, used by oracles and reference computations.
pub type RasterF64 = Raster<f64>;

pub type CenterVectorFieldF32 = targets::CenterVectorField<f32>;
pub type ClassPriorF32 = loss::ClassPrior<f32>;
pub type LossWeightsF32 = loss::LossWeights<f32>;
pub type ClassOccupancyF64 = sampler::ClassOccupancy<f64>;
pub type StainBasisF32 = augment::StainBasis<f32>;
/// The toy model at its working precision.
pub type ToyModel = model::Model<f32>;

/// Number of semantic classes in the CoNIC/Lizard label set: background plus
/// six nucleus types.
pub const NUM_CLASSES: usize = 7;

/// Short column names of the nucleus classes, indexed by `class - 1`.
pub const CLASS_NAMES: [&str; 6] = ["neu", "epi", "lym", "pla", "eos", "con"];
