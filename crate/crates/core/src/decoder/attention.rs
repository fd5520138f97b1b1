//! Projective attention: sample a view's feature map at learned offsets
//! around a projected joint and mix the samples with learned weights.
//!
//! Offsets and softmax weights are linear functions of the joint's
//! appearance vector. Each sampling point has its own `C → L` value
//! projection, so the output keeps track of where each sample came from.

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::maps::{FeatureMap, SampleGeom};
use super::ModelConfig;
use crate::nn::{dot, Linear, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub sampling_points: usize,
    /// `L → 2S` pixel offsets `(dx, dy)` per sampling point.
    pub offsets: Linear,
    /// `L → S` attention logits.
    pub weights: Linear,
    /// `C → S·L`; rows `s·L .. (s+1)·L` project sampling point `s`.
    pub value: Linear,
}

impl AttentionHead {
    /// Offsets start on a ring of radius `offset_init_px` independent of the
    /// query; attention starts uniform.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let s = cfg.sampling_points;
        let l = cfg.feature_dim;
        let mut offsets = Linear::zeros(l, 2 * s);
        for i in 0..s {
            let a = std::f64::consts::TAU * i as f64 / s as f64;
            offsets.bias[2 * i] = cfg.offset_init_px * a.cos();
            offsets.bias[2 * i + 1] = cfg.offset_init_px * a.sin();
        }
        Self {
            sampling_points: s,
            offsets,
            weights: Linear::zeros(l, s),
            value: Linear::init(cfg.map_channels, s * l, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.offsets.in_dim
    }
}

impl Parameters for AttentionHead {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        self.offsets
            .for_each(&crate::nn::join(prefix, "offsets"), f);
        self.weights
            .for_each(&crate::nn::join(prefix, "weights"), f);
        self.value.for_each(&crate::nn::join(prefix, "value"), f);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.offsets.for_each_mut(f);
        self.weights.for_each_mut(f);
        self.value.for_each_mut(f);
    }
}

/// Query-dependent part of the attention, shared by all views of a joint.
#[derive(Debug, Clone)]
pub struct AttnPrep {
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Sampling state of one view.
#[derive(Debug, Clone)]
pub struct AttnView {
    pub geoms: Vec<SampleGeom>,
    /// `S × C` bilinear samples.
    pub samples: Vec<f64>,
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn prep(head: &AttentionHead, f: &[f64]) -> AttnPrep {
    AttnPrep {
        offsets: head.offsets.forward(f),
        weights: softmax(&head.weights.forward(f)),
    }
}

/// Value projection of sample `s` into `out` (length `L`).
#[inline]
fn value_block(head: &AttentionHead, s: usize, m: &[f64], out: &mut [f64]) {
    let l = out.len();
    let c = head.value.in_dim;
    for o in 0..l {
        let row = s * l + o;
        out[o] = head.value.bias[row] + dot(&head.value.weights[row * c..(row + 1) * c], m);
    }
}

pub(crate) fn sample_view(
    head: &AttentionHead,
    p: &AttnPrep,
    u: &Vector2<f64>,
    map: &FeatureMap,
) -> (AttnView, Vec<f64>) {
    let n = head.sampling_points;
    let c = map.channels;
    let l = head.feature_dim();
    let mut samples = vec![0.0; n * c];
    let mut geoms = Vec::with_capacity(n);
    let mut s_out = vec![0.0; l];
    let mut val = vec![0.0; l];
    for s in 0..n {
        let g = map.locate(u.x + p.offsets[2 * s], u.y + p.offsets[2 * s + 1]);
        let m = &mut samples[s * c..(s + 1) * c];
        map.sample_into(&g, m);
        value_block(head, s, m, &mut val);
        let w = p.weights[s];
        for o in 0..l {
            s_out[o] += w * val[o];
        }
        geoms.push(g);
    }
    (AttnView { geoms, samples }, s_out)
}

/// Backward through one view's sampling. Accumulates value-projection
/// gradients into `grads`, attention-weight and offset gradients into
/// `d_weights` / `d_offsets`, and returns the gradient w.r.t. `u`.
pub(crate) fn backward_view(
    head: &AttentionHead,
    p: &AttnPrep,
    view: &AttnView,
    map: &FeatureMap,
    ds: &[f64],
    grads: &mut AttentionHead,
    d_weights: &mut [f64],
    d_offsets: &mut [f64],
) -> Vector2<f64> {
    let n = head.sampling_points;
    let c = map.channels;
    let l = head.feature_dim();
    let mut val = vec![0.0; l];
    let mut dm = vec![0.0; c];
    let mut gx = vec![0.0; c];
    let mut gy = vec![0.0; c];
    let mut du = Vector2::zeros();
    for s in 0..n {
        let m = &view.samples[s * c..(s + 1) * c];
        value_block(head, s, m, &mut val);
        d_weights[s] += dot(ds, &val);
        let w = p.weights[s];
        dm.fill(0.0);
        for o in 0..l {
            let g = w * ds[o];
            if g == 0.0 {
                continue;
            }
            let row = s * l + o;
            grads.value.bias[row] += g;
            let wrow = &head.value.weights[row * c..(row + 1) * c];
            let grow = &mut grads.value.weights[row * c..(row + 1) * c];
            for k in 0..c {
                grow[k] += g * m[k];
                dm[k] += g * wrow[k];
            }
        }
        let geom = &view.geoms[s];
        if geom.clamped_x && geom.clamped_y {
            continue;
        }
        map.sample_grad_into(geom, &mut gx, &mut gy);
        let dloc = Vector2::new(dot(&dm, &gx), dot(&dm, &gy));
        d_offsets[2 * s] += dloc.x;
        d_offsets[2 * s + 1] += dloc.y;
        du += dloc;
    }
    du
}

/// Backward through the offset and weight heads; adds to `df`.
pub(crate) fn backward_prep(
    head: &AttentionHead,
    f: &[f64],
    p: &AttnPrep,
    d_weights: &[f64],
    d_offsets: &[f64],
    grads: &mut AttentionHead,
    df: &mut [f64],
) {
    let mean: f64 = p.weights.iter().zip(d_weights).map(|(w, d)| w * d).sum();
    let dlogits: Vec<f64> = p
        .weights
        .iter()
        .zip(d_weights)
        .map(|(w, d)| w * (d - mean))
        .collect();
    head.weights
        .backward_into(f, &dlogits, &mut grads.weights, df);
    head.offsets
        .backward_into(f, d_offsets, &mut grads.offsets, df);
}

/// Attention feature `s_t` of appearance vector `f` at pixel `u` in `map`.
pub fn projective_attention(
    head: &AttentionHead,
    f: &[f64],
    u: &Vector2<f64>,
    map: &FeatureMap,
) -> Vec<f64> {
    let p = prep(head, f);
    sample_view(head, &p, u, map).1
}
