//! Keyframe selection: LUV-difference candidates, brightness/entropy gates,
//! histogram k-means, and the sharpest frame per cluster.

pub mod color;
pub mod features;
pub mod kmeans;
pub mod select;

pub use color::{luv_frame_diff, pixel_to_luv, rgb_to_luv, LuvPlanes};
pub use features::{
    brightness_score, color_histogram, entropy_score, laplacian_variance, luma, FrameFeatures,
};
pub use kmeans::{kmeans_cluster, Clustering, KMeansParams};
pub use select::{
    candidate_filter, choose_keyframes, select_keyframes, write_keyframes, Candidate, Keyframe,
    KeyframeEntry, KeyframeManifest, SelectionParams, KEYFRAME_MANIFEST,
};

use crate::frame::FrameError;

#[derive(Debug, thiserror::Error)]
pub enum KeyframeError {
    #[error("frame dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("frame {width}x{height} is smaller than the 3x3 Laplacian kernel")]
    FrameTooSmall { width: u32, height: u32 },
    #[error("invalid selection parameters: {0}")]
    InvalidParams(String),
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
