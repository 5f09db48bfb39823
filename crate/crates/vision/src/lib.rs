//! Image-side half of the pipeline: camera resection from 2D–3D picks,
//! frame-to-frame homography tracking, overlay rasterization, frame and
//! image formats, and a synthetic camera-sequence generator.

pub mod features;
pub mod frame;
pub mod homography;
pub mod overlay;
pub mod registration;
pub mod synthcam;
pub mod tracking;

pub use frame::Frame;
pub use homography::{apply_homography, Homography};
pub use overlay::{OverlaySpec, RgbImage};
pub use registration::{CameraMatrix, Correspondence};
pub use tracking::{TrackParams, TrackState, TrackStatus};

/// Pixel coordinate `(u, v)`: `u` along the row, `v` down the rows, pixel
/// centres at integers.
pub type Point2 = [f64; 2];
