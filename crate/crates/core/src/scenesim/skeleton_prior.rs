use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camgeom::CaptureSpace;
use crate::skeleton::{tpose_offsets, NUM_JOINTS, PARENTS, ROOT_HEIGHT_MM};

/// Bounds of the random articulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosePrior {
    /// Whole-body rotation about the vertical axis is uniform in `±yaw_deg`.
    pub yaw_deg: f64,
    /// Each bone rotates relative to its parent by at most this angle about
    /// a uniformly random axis.
    pub joint_rotation_deg: f64,
    /// Minimum ground-plane distance between two persons' roots.
    pub min_separation_mm: f64,
    /// Roots are kept this far from the space border.
    pub border_mm: f64,
    pub max_attempts: usize,
}

impl Default for PosePrior {
    fn default() -> Self {
        Self {
            yaw_deg: 30.0,
            joint_rotation_deg: 25.0,
            min_separation_mm: 1000.0,
            border_mm: 800.0,
            max_attempts: 1000,
        }
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R, max_deg: f64) -> Rotation3<f64> {
    if max_deg <= 0.0 {
        return Rotation3::identity();
    }
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    let axis = Unit::new_normalize(Vector3::new(r * phi.cos(), r * phi.sin(), z));
    Rotation3::from_axis_angle(&axis, rng.random_range(0.0..=max_deg.to_radians()))
}

fn articulate<R: Rng + ?Sized>(
    rng: &mut R,
    prior: &PosePrior,
    x: f64,
    y: f64,
) -> Vec<Vector3<f64>> {
    let offsets = tpose_offsets();
    let yaw = if prior.yaw_deg > 0.0 {
        rng.random_range(-prior.yaw_deg..=prior.yaw_deg)
            .to_radians()
    } else {
        0.0
    };
    let mut global = vec![Rotation3::from_axis_angle(&Vector3::z_axis(), yaw); NUM_JOINTS];
    let mut pose = vec![Vector3::new(x, y, ROOT_HEIGHT_MM); NUM_JOINTS];
    for j in 1..NUM_JOINTS {
        let p = PARENTS[j];
        global[j] = global[p] * random_rotation(rng, prior.joint_rotation_deg);
        pose[j] = pose[p] + global[j] * (offsets[j] - offsets[p]);
    }
    pose
}

/// One random pose inside `space`. Falls back to an upright T-pose at the
/// last drawn center if rejection sampling runs out of attempts.
pub fn sample_skeleton<R: Rng + ?Sized>(
    rng: &mut R,
    space: &CaptureSpace,
    prior: &PosePrior,
) -> Vec<Vector3<f64>> {
    sample_near(rng, space, prior, &[]).expect("an empty scene never blocks placement")
}

fn sample_near<R: Rng + ?Sized>(
    rng: &mut R,
    space: &CaptureSpace,
    prior: &PosePrior,
    others: &[Vec<Vector3<f64>>],
) -> Option<Vec<Vector3<f64>>> {
    let inset = |(lo, hi): (f64, f64)| {
        let m = prior.border_mm.min((hi - lo) / 2.0 - 1e-6).max(0.0);
        (lo + m, hi - m)
    };
    let (x0, x1) = inset(space.x_mm);
    let (y0, y1) = inset(space.y_mm);
    let mut fallback = None;
    for _ in 0..prior.max_attempts.max(1) {
        let x = rng.random_range(x0..=x1);
        let y = rng.random_range(y0..=y1);
        let far = others.iter().all(|o| {
            let d = Vector3::new(o[0].x - x, o[0].y - y, 0.0);
            d.norm() >= prior.min_separation_mm
        });
        if !far {
            continue;
        }
        let pose = articulate(rng, prior, x, y);
        if pose.iter().all(|p| space.contains(p)) {
            return Some(pose);
        }
        fallback.get_or_insert((x, y));
    }
    fallback.map(|(x, y)| crate::skeleton::tpose_at(x, y))
}

/// `count` poses at pairwise root distance ≥ `min_separation_mm`, or fewer
/// if the space cannot fit them.
pub fn sample_persons<R: Rng + ?Sized>(
    rng: &mut R,
    space: &CaptureSpace,
    prior: &PosePrior,
    count: usize,
) -> Vec<Vec<Vector3<f64>>> {
    let mut out: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(count);
    for _ in 0..count {
        match sample_near(rng, space, prior, &out) {
            Some(p) => out.push(p),
            None => break,
        }
    }
    out
}
