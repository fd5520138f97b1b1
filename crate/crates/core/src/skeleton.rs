//! The canonical 15-joint skeleton and its T-pose.

use nalgebra::Vector3;

pub const NUM_JOINTS: usize = 15;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "root",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
];

/// Parent of each joint; the root is its own parent. Parents precede
/// children in index order.
pub const PARENTS: [usize; NUM_JOINTS] = [0, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13];

/// Height of the root joint in the T-pose.
pub const ROOT_HEIGHT_MM: f64 = 950.0;

/// T-pose joint offsets from the root (mm), arms along ±x, facing −y.
const TPOSE_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 550.0],
    [0.0, 0.0, 780.0],
    [180.0, 0.0, 500.0],
    [460.0, 0.0, 500.0],
    [710.0, 0.0, 500.0],
    [-180.0, 0.0, 500.0],
    [-460.0, 0.0, 500.0],
    [-710.0, 0.0, 500.0],
    [100.0, 0.0, 0.0],
    [100.0, 0.0, -440.0],
    [100.0, 0.0, -870.0],
    [-100.0, 0.0, 0.0],
    [-100.0, 0.0, -440.0],
    [-100.0, 0.0, -870.0],
];

/// Joint offsets from the root in the T-pose.
pub fn tpose_offsets() -> Vec<Vector3<f64>> {
    TPOSE_OFFSETS.iter().map(|o| Vector3::from(*o)).collect()
}

/// T-pose standing with its root above `(x, y)`.
pub fn tpose_at(x: f64, y: f64) -> Vec<Vector3<f64>> {
    let base = Vector3::new(x, y, ROOT_HEIGHT_MM);
    tpose_offsets().into_iter().map(|o| base + o).collect()
}

/// `(parent, child)` pairs, one per bone.
pub fn bones() -> Vec<(usize, usize)> {
    (1..NUM_JOINTS).map(|j| (PARENTS[j], j)).collect()
}

/// Mean of all joints.
pub fn pose_center(pose: &[Vector3<f64>]) -> Vector3<f64> {
    pose.iter().sum::<Vector3<f64>>() / pose.len() as f64
}
