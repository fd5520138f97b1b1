use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camgeom::CaptureSpace;
use crate::error::{Error, Result};
use crate::nn::Parameters;

/// Hierarchical query embeddings: `f_k^j = h_k + g_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub feature_dim: usize,
    /// `K × L` instance embeddings `h_k`.
    pub instance: Vec<f64>,
    /// `J × L` joint embeddings `g_j`.
    pub joint: Vec<f64>,
}

impl EmbeddingTable {
    pub fn num_instances(&self) -> usize {
        self.instance.len() / self.feature_dim
    }

    pub fn num_joints(&self) -> usize {
        self.joint.len() / self.feature_dim
    }

    /// `J × L` appearance matrix of instance `k`.
    pub fn appearance(&self, k: usize) -> Vec<f64> {
        let l = self.feature_dim;
        let h = &self.instance[k * l..(k + 1) * l];
        self.joint
            .chunks(l)
            .flat_map(|g| g.iter().zip(h).map(|(a, b)| a + b))
            .collect()
    }
}

impl Parameters for EmbeddingTable {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        let l = self.feature_dim;
        f(
            crate::nn::join(prefix, "instance"),
            &[self.instance.len() / l, l],
            &self.instance,
        );
        f(
            crate::nn::join(prefix, "joint"),
            &[self.joint.len() / l, l],
            &self.joint,
        );
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.instance);
        f(&mut self.joint);
    }
}

/// One person hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionalQuery {
    /// `J × L`, row `j` is the appearance vector of joint `j`.
    pub appearance: Vec<f64>,
    /// `J` joint positions in mm.
    pub geometry: Vec<Vector3<f64>>,
    pub score: f64,
    /// Grid cell the query was initialized in; selects its instance
    /// embedding.
    pub anchor_index: usize,
}

impl CompositionalQuery {
    pub fn center(&self) -> Vector3<f64> {
        crate::skeleton::pose_center(&self.geometry)
    }
}

/// Grid cell centers of a `g × g` partition of the ground plane.
pub fn anchor_centers(space: &CaptureSpace, k: usize) -> Result<Vec<(f64, f64)>> {
    let g = (k as f64).sqrt().round() as usize;
    if g == 0 || g * g != k {
        return Err(Error::NonSquareK(k));
    }
    space.validate()?;
    let (x0, x1) = space.x_mm;
    let (y0, y1) = space.y_mm;
    let mut out = Vec::with_capacity(k);
    for iy in 0..g {
        for ix in 0..g {
            out.push((
                x0 + (ix as f64 + 0.5) * (x1 - x0) / g as f64,
                y0 + (iy as f64 + 0.5) * (y1 - y0) / g as f64,
            ));
        }
    }
    Ok(out)
}

/// Places `tpose` (joint positions for a person standing at the ground-plane
/// origin) at each of `k` uniform grid centers.
pub fn init_queries(
    space: &CaptureSpace,
    k: usize,
    tpose: &[Vector3<f64>],
    embeddings: &EmbeddingTable,
) -> Result<Vec<CompositionalQuery>> {
    if embeddings.num_instances() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} instance embeddings for {k} queries",
            embeddings.num_instances()
        )));
    }
    if embeddings.num_joints() != tpose.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} joint embeddings for a {}-joint T-pose",
            embeddings.num_joints(),
            tpose.len()
        )));
    }
    Ok(anchor_centers(space, k)?
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| CompositionalQuery {
            appearance: embeddings.appearance(i),
            geometry: tpose.iter().map(|o| o + Vector3::new(x, y, 0.0)).collect(),
            score: 1.0,
            anchor_index: i,
        })
        .collect())
}
