//! Training and test-time augmentation.

mod dihedral;
mod photometric;
mod stain;
mod tta;

pub use dihedral::Dihedral;
pub use photometric::{augment_train, gaussian_blur, AugmentConfig, TrainSample};
pub use stain::{StainBasis, LOG_FLOOR, RUIFROK_HED};
pub use tta::{tta_average, Predictor, TtaOutput, TtaPass, TtaPlan};
