//! Multi-view multi-person 3D pose estimation by iterative query refinement.
//!
//! Each person hypothesis ("query") pairs a learned per-joint appearance
//! feature with explicit 3D joint positions. A decoder layer projects every
//! joint into every view, samples the view's feature map around the
//! projection, predicts a 2D correction and a confidence per view, and then
//! re-triangulates the joint from the corrected 2D positions. Only the 2D
//! stage is learned; the 3D update is plain weighted least squares, which is
//! what lets a trained model move to unseen camera rigs.
//!
//! Modules:
//! - [`camgeom`]: pinhole cameras, calibration files, ring-sector rigs
//! - [`triangulation`]: weighted DLT solve and its vector-Jacobian product
//! - [`nn`]: dense layers, gradients, Adam, checkpoints
//! - [`decoder`]: queries, projective attention, the layer stack, NMS
//! - [`scenesim`]: synthetic people, feature-map rendering, datasets
//! - [`trainer`]: anchor matching, losses, the training loop
//! - [`eval`]: metrics, generalization and ablation harnesses
//! - [`gradsuite`]: finite-difference checks of every gradient

pub mod camgeom;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod nn;
pub mod par;
pub mod scenesim;
pub mod skeleton;
pub mod trainer;
pub mod triangulation;

pub use error::{Error, Result};
