use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::matching::Assignment;
use crate::decoder::LayerSnapshot;
use crate::error::{Error, Result};
use crate::nn::bce_loss;
use crate::scenesim::GroundTruth2D;

/// Per-layer loss weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerWeightMode {
    #[default]
    Uniform,
    /// `(…, 0.25, 0.5, 1)`
    ExpDecay,
    /// `(1/N, 2/N, …, 1)`
    LinearDecay,
    FinalOnly,
}

/// Weight of each of `n` layers, first layer first.
pub fn layer_weights(mode: LayerWeightMode, n: usize) -> Vec<f64> {
    (0..n)
        .map(|l| match mode {
            LayerWeightMode::Uniform => 1.0,
            LayerWeightMode::ExpDecay => 0.5f64.powi((n - 1 - l) as i32),
            LayerWeightMode::LinearDecay => (l + 1) as f64 / n as f64,
            LayerWeightMode::FinalOnly => {
                if l + 1 == n {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseLoss {
    /// L1 over joints and coordinates, mm.
    pub l3d: f64,
    /// L1 over visible (view, joint) pairs and coordinates, px.
    pub l2d: f64,
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss of one query against person `z` and its gradients w.r.t. the 3D
/// joints and the refined 2D points. `refined[j][t]` is `None` for views
/// that did not observe the joint; such entries and invisible ground truth
/// are skipped.
pub fn query_pose_loss(
    geometry: &[Vector3<f64>],
    refined: &[Vec<Option<Vector2<f64>>>],
    z: usize,
    gt3d: &[Vec<Vector3<f64>>],
    gt2d: &GroundTruth2D,
) -> Result<(PoseLoss, Vec<Vector3<f64>>, Vec<Vec<Vector2<f64>>>)> {
    let h = &gt3d[z];
    if geometry.len() != h.len() || refined.len() != h.len() {
        return Err(Error::ShapeMismatch(format!(
            "pose loss: {} predicted joints, {} ground truth",
            geometry.len(),
            h.len()
        )));
    }
    let mut loss = PoseLoss::default();
    let mut g3 = vec![Vector3::zeros(); h.len()];
    let mut g2 = vec![Vec::new(); h.len()];
    for j in 0..h.len() {
        let d = geometry[j] - h[j];
        loss.l3d += d.abs().sum();
        g3[j] = d.map(sign);
        g2[j] = vec![Vector2::zeros(); refined[j].len()];
        for (t, u) in refined[j].iter().enumerate() {
            let Some(u) = u else { continue };
            if t >= gt2d.visible[z].len() {
                return Err(Error::ShapeMismatch(
                    "more views than 2D ground truth".into(),
                ));
            }
            if !gt2d.visible[z][t][j] {
                continue;
            }
            let d = u - gt2d.points[z][t][j];
            loss.l2d += d.abs().sum();
            g2[j][t] = d.map(sign);
        }
    }
    Ok((loss, g3, g2))
}

/// Summed pose loss of every matched query in a layer snapshot. The
/// snapshot must carry per-view outputs.
pub fn pose_loss(
    snapshot: &LayerSnapshot,
    assignment: &Assignment,
    gt3d: &[Vec<Vector3<f64>>],
    gt2d: &GroundTruth2D,
) -> Result<PoseLoss> {
    let mut total = PoseLoss::default();
    for q in &snapshot.queries {
        let Some(z) = assignment.label.get(q.anchor_index).copied().flatten() else {
            continue;
        };
        if q.views.len() != q.geometry.len() {
            return Err(Error::ShapeMismatch(
                "snapshot lacks per-view outputs".into(),
            ));
        }
        let refined: Vec<Vec<Option<Vector2<f64>>>> = q
            .views
            .iter()
            .map(|vs| vs.iter().map(|v| v.valid.then_some(v.u)).collect())
            .collect();
        let (l, _, _) = query_pose_loss(&q.geometry, &refined, z, gt3d, gt2d)?;
        total.l3d += l.l3d;
        total.l2d += l.l2d;
    }
    Ok(total)
}

/// Mean BCE over `(anchor, score)` pairs with target 1 for matched anchors
/// and 0 otherwise; also returns `dL/dscore` per pair.
pub fn classification_loss(scores: &[(usize, f64)], assignment: &Assignment) -> (f64, Vec<f64>) {
    if scores.is_empty() {
        return (0.0, Vec::new());
    }
    let n = scores.len() as f64;
    let mut total = 0.0;
    let grads = scores
        .iter()
        .map(|&(a, s)| {
            let y = if assignment.label[a].is_some() {
                1.0
            } else {
                0.0
            };
            let (l, g) = bce_loss(s, y);
            total += l;
            g / n
        })
        .collect();
    (total / n, grads)
}
