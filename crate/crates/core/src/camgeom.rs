//! Pinhole cameras, world-to-image projection, calibration files and
//! synthetic ring-sector camera rigs.
//!
//! World frame: millimeters, z up, ground plane at z = 0. Image frame: pixels,
//! x right, y down. No lens distortion.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Matrix3x4, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homogeneous depths at or below this magnitude are treated as degenerate.
pub const MIN_DEPTH: f64 = 1e-9;

/// Orthonormality tolerance enforced when constructing or loading a camera.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// A calibrated pinhole camera. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    id: u32,
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    image_size: (u32, u32),
    projection: Matrix3x4<f64>,
}

impl CameraModel {
    /// Builds a camera from intrinsics `k`, world-to-camera rotation `r` and
    /// translation `t` (mm).
    pub fn new(
        id: u32,
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self> {
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Invariant(format!(
                "camera {id}: focal lengths must be positive (fx={}, fy={})",
                k[(0, 0)],
                k[(1, 1)]
            )));
        }
        if k.iter()
            .chain(r.iter())
            .chain(t.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Invariant(format!("camera {id}: non-finite entries")));
        }
        let dev = orthonormality_error(&r);
        if dev >= ROTATION_TOLERANCE {
            return Err(Error::Invariant(format!(
                "camera {id}: rotation is not orthonormal (max |R^T R - I| = {dev:e})"
            )));
        }
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt.set_column(3, &t);
        Ok(Self {
            id,
            intrinsics: k,
            rotation: r,
            translation: t,
            image_size,
            projection: k * rt,
        })
    }

    /// Camera at `center` looking at `target` with world z as up.
    pub fn look_at(
        id: u32,
        center: Vector3<f64>,
        target: Vector3<f64>,
        focal_px: f64,
        image_size: (u32, u32),
    ) -> Result<Self> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidSpec("camera center coincides with target".into()))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidSpec("viewing direction is vertical".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * center);
        let (w, h) = image_size;
        let k = Matrix3::new(
            focal_px,
            0.0,
            w as f64 / 2.0,
            0.0,
            focal_px,
            h as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(id, k, r, t, image_size)
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    /// The 3×4 projection `K [R | t]`.
    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Homogeneous product `Π [p; 1]`.
    #[inline]
    pub fn homogeneous(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.projection.fixed_view::<3, 3>(0, 0) * p + self.projection.column(3)
    }

    /// Projects and also returns the 2×3 Jacobian of the pixel position with
    /// respect to the world point, plus the homogeneous depth.
    pub fn project_with_jacobian(
        &self,
        p: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>, f64)> {
        let h = self.homogeneous(p);
        let w = h.z;
        if w.abs() <= MIN_DEPTH {
            return Err(Error::DegenerateProjection { depth: w });
        }
        let u = Vector2::new(h.x / w, h.y / w);
        let pm = &self.projection;
        let mut jac = Matrix2x3::zeros();
        for c in 0..3 {
            jac[(0, c)] = (pm[(0, c)] - u.x * pm[(2, c)]) / w;
            jac[(1, c)] = (pm[(1, c)] - u.y * pm[(2, c)]) / w;
        }
        Ok((u, jac, w))
    }

    /// True when `u` lies inside the image rectangle.
    pub fn in_bounds(&self, u: &Vector2<f64>) -> bool {
        let (w, h) = self.image_size;
        u.x >= 0.0 && u.y >= 0.0 && u.x <= (w - 1) as f64 && u.y <= (h - 1) as f64
    }

    /// Fixed-length numeric summary used by regressors that consume camera
    /// parameters directly: rotation (9), translation in meters (3), and
    /// intrinsics normalized by the image width/height (4).
    pub fn flat_params(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        let (w, h) = (self.image_size.0 as f64, self.image_size.1 as f64);
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)];
            }
        }
        for i in 0..3 {
            out[9 + i] = self.translation[i] / 1000.0;
        }
        out[12] = self.intrinsics[(0, 0)] / w;
        out[13] = self.intrinsics[(1, 1)] / h;
        out[14] = self.intrinsics[(0, 2)] / w;
        out[15] = self.intrinsics[(1, 2)] / h;
        out
    }
}

/// `max |RᵀR − I|` entrywise.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Projects a world point (mm) into pixel coordinates.
pub fn project(p: &Vector3<f64>, cam: &CameraModel) -> Result<Vector2<f64>> {
    let h = cam.homogeneous(p);
    if h.z.abs() <= MIN_DEPTH {
        return Err(Error::DegenerateProjection { depth: h.z });
    }
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

/// Axis-aligned capture region on the ground plane plus a height ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureSpace {
    pub x_mm: (f64, f64),
    pub y_mm: (f64, f64),
    pub z_max_mm: f64,
}

impl Default for CaptureSpace {
    fn default() -> Self {
        Self {
            x_mm: (-4000.0, 4000.0),
            y_mm: (-4000.0, 4000.0),
            z_max_mm: 2200.0,
        }
    }
}

impl CaptureSpace {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.x_mm.0
            && p.x <= self.x_mm.1
            && p.y >= self.y_mm.0
            && p.y <= self.y_mm.1
            && p.z >= 0.0
            && p.z <= self.z_max_mm
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_mm.0.is_finite()
            && self.x_mm.1.is_finite()
            && self.y_mm.0.is_finite()
            && self.y_mm.1.is_finite()
            && self.x_mm.0 < self.x_mm.1
            && self.y_mm.0 < self.y_mm.1
            && self.z_max_mm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid capture space {self:?}")))
        }
    }
}

fn default_image_size() -> (u32, u32) {
    (96, 96)
}

fn default_fov() -> f64 {
    75.0
}

/// Parameters of a ring-sector camera rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementSpec {
    pub name: String,
    pub camera_count: usize,
    pub radius_mm: f64,
    pub height_range_mm: (f64, f64),
    pub azimuth_coverage_deg: (f64, f64),
    pub look_at: [f64; 3],
    pub seed: u64,
    #[serde(default = "default_image_size")]
    pub image_size: (u32, u32),
    /// Horizontal field of view.
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
}

impl Default for ArrangementSpec {
    fn default() -> Self {
        Self {
            name: "ring5".into(),
            camera_count: 5,
            radius_mm: 8000.0,
            height_range_mm: (1500.0, 3000.0),
            azimuth_coverage_deg: (0.0, 360.0),
            look_at: [0.0, 0.0, 900.0],
            seed: 0,
            image_size: default_image_size(),
            fov_deg: default_fov(),
        }
    }
}

impl ArrangementSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(format!("{}: {m}", self.name)));
        let span = self.azimuth_coverage_deg.1 - self.azimuth_coverage_deg.0;
        if self.camera_count < 2 {
            return bad("camera_count must be at least 2");
        }
        if !(self.radius_mm > 0.0 && self.radius_mm.is_finite()) {
            return bad("radius_mm must be positive");
        }
        if !(span > 0.0 && span <= 360.0) {
            return bad("azimuth span must lie in (0, 360]");
        }
        if !(self.height_range_mm.0 <= self.height_range_mm.1) {
            return bad("height range is inverted");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must lie in (0, 180)");
        }
        if self.image_size.0 < 2 || self.image_size.1 < 2 {
            return bad("image is too small");
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        (self.image_size.0 as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }
}

/// Generates the cameras of a ring-sector rig. Azimuths are evenly spaced
/// over the sector with a seeded common phase; heights are seeded uniform
/// draws. Every camera looks at `look_at`.
pub fn make_arrangement(spec: &ArrangementSpec) -> Result<Vec<CameraModel>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (start, end) = spec.azimuth_coverage_deg;
    let step = (end - start) / spec.camera_count as f64;
    let phase: f64 = rng.random();
    let target = Vector3::from(spec.look_at);
    let (h_lo, h_hi) = spec.height_range_mm;
    (0..spec.camera_count)
        .map(|i| {
            let az = (start + (i as f64 + phase) * step).to_radians();
            let height = if h_hi > h_lo {
                rng.random_range(h_lo..h_hi)
            } else {
                h_lo
            };
            let center = Vector3::new(
                target.x + spec.radius_mm * az.cos(),
                target.y + spec.radius_mm * az.sin(),
                height,
            );
            CameraModel::look_at(i as u32, center, target, spec.focal_px(), spec.image_size)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CalibrationDoc {
    units: String,
    cameras: Vec<CalibrationEntry>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationEntry {
    id: u32,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    t: Vec<f64>,
    width: u32,
    height: u32,
}

pub const CALIBRATION_UNITS: &str = "mm/px";

fn mat3_rows(m: &Matrix3<f64>) -> Vec<Vec<f64>> {
    (0..3)
        .map(|r| (0..3).map(|c| m[(r, c)]).collect())
        .collect()
}

fn rows_to_mat3(rows: &[Vec<f64>], field: &str) -> Result<Matrix3<f64>> {
    if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
        let shape: Vec<usize> = rows.iter().map(Vec::len).collect();
        return Err(Error::field(
            field,
            format!(
                "expected a 3x3 matrix, got {} rows with lengths {shape:?}",
                rows.len()
            ),
        ));
    }
    Ok(Matrix3::from_fn(|r, c| rows[r][c]))
}

/// Serializes a rig into the calibration document format.
pub fn calibration_to_string(cams: &[CameraModel]) -> String {
    let doc = CalibrationDoc {
        units: CALIBRATION_UNITS.into(),
        cameras: cams
            .iter()
            .map(|c| CalibrationEntry {
                id: c.id,
                k: mat3_rows(&c.intrinsics),
                r: mat3_rows(&c.rotation),
                t: c.translation.iter().copied().collect(),
                width: c.image_size.0,
                height: c.image_size.1,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("calibration serializes");
    s.push('\n');
    s
}

/// Parses a calibration document. Rotations must already be orthonormal.
pub fn calibration_from_str(text: &str) -> Result<Vec<CameraModel>> {
    let doc: CalibrationDoc = serde_json::from_str(text)?;
    if doc.units != CALIBRATION_UNITS {
        return Err(Error::field(
            "units",
            format!("expected \"{CALIBRATION_UNITS}\", got \"{}\"", doc.units),
        ));
    }
    doc.cameras
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let k = rows_to_mat3(&e.k, &format!("cameras[{i}].K"))?;
            let r = rows_to_mat3(&e.r, &format!("cameras[{i}].R"))?;
            if e.t.len() != 3 {
                return Err(Error::field(
                    format!("cameras[{i}].t"),
                    format!("expected 3 entries, got {}", e.t.len()),
                ));
            }
            let t = Vector3::new(e.t[0], e.t[1], e.t[2]);
            CameraModel::new(e.id, k, r, t, (e.width, e.height))
        })
        .collect()
}

pub fn save_calibration(cams: &[CameraModel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, calibration_to_string(cams)).map_err(|e| Error::io(path, e))
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<Vec<CameraModel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    calibration_from_str(&text)
}

/// Human-readable one-line-per-camera summary.
pub fn describe_rig(cams: &[CameraModel]) -> String {
    let mut s = String::new();
    for c in cams {
        let ctr = c.center();
        let _ = writeln!(
            s,
            "cam {}: center=({:.0}, {:.0}, {:.0}) mm f={:.1}px",
            c.id,
            ctr.x,
            ctr.y,
            ctr.z,
            c.intrinsics[(0, 0)]
        );
    }
    s
}
