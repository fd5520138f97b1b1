use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::camgeom::MIN_DEPTH;
use crate::decoder::{FeatureMap, FeatureMapSet};
use crate::skeleton::NUM_JOINTS;

/// Evidence removal and observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    /// Probability that a (person, view, joint) observation is dropped.
    pub dropout_prob: f64,
    /// Fixed occluders per view as `[x0, y0, x1, y1]` pixel rectangles.
    pub occluder_boxes: Vec<Vec<[f64; 4]>>,
    /// Additional random occluders drawn per view.
    pub random_boxes_per_view: usize,
    /// Side length range of random occluders.
    pub random_box_px: (f64, f64),
    /// Standard deviation of the jitter applied to rendered heatmap centers.
    pub noise_sigma_px: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            dropout_prob: 0.0,
            occluder_boxes: Vec::new(),
            random_boxes_per_view: 0,
            random_box_px: (10.0, 25.0),
            noise_sigma_px: 0.0,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = (0.0..=1.0).contains(&self.dropout_prob)
            && self.noise_sigma_px.is_finite()
            && self.noise_sigma_px >= 0.0
            && self.random_box_px.0 >= 0.0
            && self.random_box_px.0 <= self.random_box_px.1;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!(
                "invalid occlusion config {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub sigma_px: f64,
    pub noise_channels: usize,
    /// Noise channels are uniform in `[0, noise_amplitude)`.
    pub noise_amplitude: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sigma_px: 2.0,
            noise_channels: 4,
            noise_amplitude: 0.5,
        }
    }
}

impl RenderConfig {
    pub fn channels(&self) -> usize {
        NUM_JOINTS + self.noise_channels
    }
}

/// Exact 2D projections with visibility, indexed `[person][view][joint]`.
/// Invisible entries hold the projection when it exists and zeros behind the
/// camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth2D {
    pub points: Vec<Vec<Vec<Vector2<f64>>>>,
    pub visible: Vec<Vec<Vec<bool>>>,
}

impl GroundTruth2D {
    pub fn persons(&self) -> usize {
        self.points.len()
    }
}

fn in_box(u: &Vector2<f64>, b: &[f64; 4]) -> bool {
    u.x >= b[0] && u.x <= b[2] && u.y >= b[1] && u.y <= b[3]
}

fn paint(map: &mut FeatureMap, channel: usize, c: Vector2<f64>, sigma: f64) {
    let r = (3.0 * sigma).ceil() as i64;
    let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in (cy - r).max(0)..=(cy + r).min(map.height as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(map.width as i64 - 1) {
            let d2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
            let v = (-d2 * inv).exp() as f32;
            let px = &mut map.pixel_mut(x as usize, y as usize)[channel];
            if v > *px {
                *px = v;
            }
        }
    }
}

/// Renders every view of `scene`. Deterministic in `scene.seed`; each view
/// draws from its own stream.
pub fn render_feature_maps(
    scene: &Scene,
    occ: &OcclusionConfig,
    cfg: &RenderConfig,
) -> (FeatureMapSet, GroundTruth2D) {
    let nz = scene.persons.len();
    let nt = scene.rig.len();
    let mut points = vec![vec![vec![Vector2::zeros(); NUM_JOINTS]; nt]; nz];
    let mut visible = vec![vec![vec![false; NUM_JOINTS]; nt]; nz];
    let mut views = Vec::with_capacity(nt);
    let jitter = Normal::new(0.0, occ.noise_sigma_px.max(0.0)).expect("finite sigma");
    for (t, cam) in scene.rig.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(t as u64 + 1);
        let (w, h) = cam.image_size();
        let mut map = FeatureMap::zeros(w as usize, h as usize, cfg.channels());
        let mut boxes: Vec<[f64; 4]> = occ.occluder_boxes.get(t).cloned().unwrap_or_default();
        for _ in 0..occ.random_boxes_per_view {
            let (lo, hi) = occ.random_box_px;
            let (bw, bh) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
            let x0 = rng.random_range(0.0..(w as f64 - bw).max(1.0));
            let y0 = rng.random_range(0.0..(h as f64 - bh).max(1.0));
            boxes.push([x0, y0, x0 + bw, y0 + bh]);
        }
        for (z, person) in scene.persons.iter().enumerate() {
            for (j, p) in person.iter().enumerate() {
                let hom = cam.homogeneous(p);
                let drop = occ.dropout_prob > 0.0 && rng.random_bool(occ.dropout_prob);
                let jx: f64 = jitter.sample(&mut rng);
                let jy: f64 = jitter.sample(&mut rng);
                if hom.z <= MIN_DEPTH {
                    continue;
                }
                let u = Vector2::new(hom.x / hom.z, hom.y / hom.z);
                points[z][t][j] = u;
                let vis = !drop && cam.in_bounds(&u) && !boxes.iter().any(|b| in_box(&u, b));
                visible[z][t][j] = vis;
                if vis {
                    paint(&mut map, j, u + Vector2::new(jx, jy), cfg.sigma_px);
                }
            }
        }
        for b in &boxes {
            let (x0, x1) = (
                b[0].ceil().max(0.0) as usize,
                b[2].floor().min(w as f64 - 1.0),
            );
            let (y0, y1) = (
                b[1].ceil().max(0.0) as usize,
                b[3].floor().min(h as f64 - 1.0),
            );
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    map.pixel_mut(x, y)[..NUM_JOINTS].fill(0.0);
                }
            }
        }
        if cfg.noise_channels > 0 && cfg.noise_amplitude > 0.0 {
            for px in map.data.chunks_mut(cfg.channels()) {
                for v in &mut px[NUM_JOINTS..] {
                    *v = rng.random_range(0.0..cfg.noise_amplitude) as f32;
                }
            }
        }
        views.push(map);
    }
    (FeatureMapSet { views }, GroundTruth2D { points, visible })
}
