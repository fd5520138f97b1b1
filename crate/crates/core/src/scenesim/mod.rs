//! Synthetic multi-person scenes and the per-view feature maps that stand in
//! for a CNN backbone.
//!
//! A scene is a set of articulated skeletons in the capture space. Rendering
//! projects every joint into every camera and paints a Gaussian blob into
//! that joint's channel; the remaining channels carry uniform noise.
//! Occluders and random dropout remove evidence and mark the joint
//! invisible, while the 2D ground truth stays the exact projection.

mod dataset;
mod render;
mod skeleton_prior;
mod tensor;

pub use dataset::{
    generate_dataset, load_dataset, load_scene_files, Dataset, DatasetConfig, Manifest, SceneFile,
    SplitSizes, DATASET_FORMAT,
};
pub use render::{render_feature_maps, GroundTruth2D, OcclusionConfig, RenderConfig};
pub use skeleton_prior::{sample_persons, sample_skeleton, PosePrior};
pub use tensor::{read_maps, write_maps, MAPS_MAGIC, MAPS_VERSION};

use nalgebra::Vector3;

use crate::camgeom::{CameraModel, CaptureSpace};

/// Ground-truth people observed by a camera rig.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    /// `Z` poses, each `J` joints in mm.
    pub persons: Vec<Vec<Vector3<f64>>>,
    pub rig: Vec<CameraModel>,
    pub space: CaptureSpace,
    /// Seeds the render-time randomness (noise, jitter, dropout).
    pub seed: u64,
}

impl Scene {
    /// The same people seen by another rig.
    pub fn with_rig(&self, rig: Vec<CameraModel>) -> Self {
        Self {
            rig,
            ..self.clone()
        }
    }
}
