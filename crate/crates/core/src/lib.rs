//! Landmark regression for ear CT volumes.

pub mod folds;
pub mod landmark;
pub mod netspec;
pub mod nn;
pub mod report;
pub mod synth;
pub mod train;
pub mod volume;

pub use landmark::{Landmark, LandmarkSet};
pub use volume::{Case, Laterality, RoiSpec, Volume, VolumeError};
