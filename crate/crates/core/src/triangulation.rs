//! Confidence-weighted algebraic triangulation with an analytic
//! vector-Jacobian product.
//!
//! Each view `t` with projection rows `π₁, π₂, π₃` and observation `u`
//! contributes the two inhomogeneous DLT rows `u_x π₃ − π₁` and
//! `u_y π₃ − π₂`, split as `[A | −b]`. The estimate minimizes
//! `Σ_t c_t² ‖A_t x − b_t‖²` through the 3×3 normal equations.

use nalgebra::{Matrix3, Matrix3x4, SymmetricEigen, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::camgeom::{project, CameraModel};
use crate::error::{Error, Result};

/// Views with confidence at or below this are dropped from the system.
pub const MIN_WEIGHT: f64 = 1e-6;

/// Normal matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewObservation {
    pub point2d: Vector2<f64>,
    pub confidence: f64,
    pub camera_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulationResult {
    pub point3d: Vector3<f64>,
    /// Weighted least-squares cost at the solution.
    pub residual: f64,
    pub effective_views: usize,
}

/// Gradients of a scalar loss with respect to the inputs of [`triangulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationGrads {
    pub point2d: Vec<Vector2<f64>>,
    pub confidence: Vec<f64>,
}

/// One weighted view in the solver's own terms.
#[derive(Debug, Clone, Copy)]
pub struct WeightedView<'a> {
    pub u: Vector2<f64>,
    pub confidence: f64,
    pub projection: &'a Matrix3x4<f64>,
}

impl WeightedView<'_> {
    fn active(&self) -> bool {
        self.confidence > MIN_WEIGHT
    }

    /// The two DLT rows as 4-vectors `[A | −b]`.
    #[inline]
    fn rows(&self) -> [Vector4<f64>; 2] {
        let p = self.projection;
        let r3 = Vector4::new(p[(2, 0)], p[(2, 1)], p[(2, 2)], p[(2, 3)]);
        let r1 = Vector4::new(p[(0, 0)], p[(0, 1)], p[(0, 2)], p[(0, 3)]);
        let r2 = Vector4::new(p[(1, 0)], p[(1, 1)], p[(1, 2)], p[(1, 3)]);
        [r3 * self.u.x - r1, r3 * self.u.y - r2]
    }
}

/// Solved normal system, kept so the backward pass can reuse it.
#[derive(Debug, Clone, Copy)]
pub struct Solution {
    pub point: Vector3<f64>,
    pub residual: f64,
    pub effective_views: usize,
    normal_inv: Matrix3<f64>,
}

fn split(row: &Vector4<f64>) -> (Vector3<f64>, f64) {
    (Vector3::new(row[0], row[1], row[2]), -row[3])
}

/// Solves the weighted normal equations for a set of views.
pub fn solve(views: &[WeightedView<'_>]) -> Result<Solution> {
    let mut m = Matrix3::zeros();
    let mut r = Vector3::zeros();
    let mut effective = 0;
    for v in views {
        if !v.confidence.is_finite() || v.confidence < 0.0 || !v.u.iter().all(|x| x.is_finite()) {
            return Err(Error::Invariant(format!(
                "observation must be finite with nonnegative confidence (u={:?}, c={})",
                v.u, v.confidence
            )));
        }
        if !v.active() {
            continue;
        }
        effective += 1;
        let w = v.confidence * v.confidence;
        for row in v.rows() {
            let (a, b) = split(&row);
            m += (a * a.transpose()) * w;
            r += a * (b * w);
        }
    }
    if effective < 2 {
        return Err(Error::InsufficientViews { effective });
    }
    let eig = SymmetricEigen::new(m).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::IllConditioned { cond });
    }
    let normal_inv = m
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::IllConditioned {
            cond: f64::INFINITY,
        })?;
    let point = normal_inv * r;
    let mut residual = 0.0;
    for v in views.iter().filter(|v| v.active()) {
        let w = v.confidence * v.confidence;
        for row in v.rows() {
            let (a, b) = split(&row);
            let e = a.dot(&point) - b;
            residual += w * e * e;
        }
    }
    Ok(Solution {
        point,
        residual,
        effective_views: effective,
        normal_inv,
    })
}

/// Vector-Jacobian product of [`solve`]: given `dL/dx`, returns `dL/du_t`
/// and `dL/dc_t` per view by implicit differentiation of `M x = r`.
pub fn solve_vjp(
    views: &[WeightedView<'_>],
    sol: &Solution,
    upstream: &Vector3<f64>,
) -> (Vec<Vector2<f64>>, Vec<f64>) {
    let lambda = sol.normal_inv * upstream;
    let x = sol.point;
    let mut du = vec![Vector2::zeros(); views.len()];
    let mut dc = vec![0.0; views.len()];
    for (i, v) in views.iter().enumerate() {
        if !v.active() {
            continue;
        }
        let c = v.confidence;
        let w = c * c;
        let p = v.projection;
        let r3 = Vector4::new(p[(2, 0)], p[(2, 1)], p[(2, 2)], p[(2, 3)]);
        let mut dconf = 0.0;
        for (k, row) in v.rows().iter().enumerate() {
            let (a, b) = split(row);
            let e = b - a.dot(&x);
            let alpha = lambda.dot(&a);
            dconf += 2.0 * c * alpha * e;
            let ga = (lambda * e - x * alpha) * w;
            let grad_row = Vector4::new(ga.x, ga.y, ga.z, -w * alpha);
            du[i][k] = grad_row.dot(&r3);
        }
        dc[i] = dconf;
    }
    (du, dc)
}

fn weighted_views<'a>(
    obs: &[ViewObservation],
    cams: &'a [CameraModel],
) -> Result<Vec<WeightedView<'a>>> {
    obs.iter()
        .map(|o| {
            let cam = cams.get(o.camera_index).ok_or_else(|| {
                Error::Invariant(format!(
                    "camera index {} out of range for a {}-camera rig",
                    o.camera_index,
                    cams.len()
                ))
            })?;
            Ok(WeightedView {
                u: o.point2d,
                confidence: o.confidence,
                projection: cam.projection(),
            })
        })
        .collect()
}

/// Confidence-weighted triangulation of one point.
pub fn triangulate(obs: &[ViewObservation], cams: &[CameraModel]) -> Result<TriangulationResult> {
    let views = weighted_views(obs, cams)?;
    let sol = solve(&views)?;
    Ok(TriangulationResult {
        point3d: sol.point,
        residual: sol.residual,
        effective_views: sol.effective_views,
    })
}

/// Gradients of `upstream · point3d` with respect to every observation.
pub fn triangulate_vjp(
    obs: &[ViewObservation],
    cams: &[CameraModel],
    upstream: &Vector3<f64>,
) -> Result<TriangulationGrads> {
    let views = weighted_views(obs, cams)?;
    let sol = solve(&views)?;
    let (point2d, confidence) = solve_vjp(&views, &sol, upstream);
    Ok(TriangulationGrads {
        point2d,
        confidence,
    })
}

/// Weighted RMS pixel distance between the projections of `p` and the
/// observations, with weights `c²` to match the solver.
pub fn reprojection_error(
    p: &Vector3<f64>,
    obs: &[ViewObservation],
    cams: &[CameraModel],
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for o in obs {
        let cam = cams.get(o.camera_index).ok_or_else(|| {
            Error::Invariant(format!("camera index {} out of range", o.camera_index))
        })?;
        let u = project(p, cam)?;
        let w = o.confidence * o.confidence;
        num += w * (u - o.point2d).norm_squared();
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::InsufficientViews { effective: 0 });
    }
    Ok((num / den).sqrt())
}
