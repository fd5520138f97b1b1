use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matching::match_anchors;
use crate::decoder::CompositionalQuery;
use crate::error::{Error, Result};

/// How a scene's initial queries are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitMode {
    /// T-poses on the anchor grid.
    #[default]
    Grid,
    /// Grid, with each person's nearest anchor replaced by the ground truth
    /// plus iid Gaussian noise of `sigma_mm` per coordinate.
    GtNoise { sigma_mm: f64 },
}

/// Replaces the nearest grid query of every person by a noisy copy of its
/// ground truth. The query keeps its anchor index and appearance, so `K`
/// and the embedding lookup are unchanged.
pub fn denoise_init<R: Rng + ?Sized>(
    gt3d: &[Vec<Vector3<f64>>],
    sigma_mm: f64,
    rng: &mut R,
    grid: &[CompositionalQuery],
) -> Result<Vec<CompositionalQuery>> {
    let normal = Normal::new(0.0, sigma_mm)
        .map_err(|_| Error::Config(format!("invalid noise sigma {sigma_mm}")))?;
    let anchors: Vec<Vec<Vector3<f64>>> = grid.iter().map(|q| q.geometry.clone()).collect();
    let a = match_anchors(gt3d, &anchors, 1)?;
    let mut out = grid.to_vec();
    for (z, m) in a.matched.iter().enumerate() {
        out[m[0]].geometry = gt3d[z]
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| normal.sample(rng)))
            .collect();
    }
    Ok(out)
}
