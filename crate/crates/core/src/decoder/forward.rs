//! Single-query forward and reverse passes through the decoder stack.

use nalgebra::{Matrix2x3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::attention::{self, AttnPrep, AttnView};
use super::maps::FeatureMapSet;
use super::query::CompositionalQuery;
use super::{DecoderParams, FusionMode, GeometryMode, LayerParams, ModelConfig};
use crate::camgeom::CameraModel;
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, sigmoid, Tape};
use crate::triangulation::{self, Solution, WeightedView};

/// Minimum homogeneous depth for a view to observe a joint.
const MIN_VIEW_DEPTH: f64 = 1e-9;

/// Cameras and feature maps shared by all queries of one scene.
pub struct DecodeContext<'a> {
    pub cams: &'a [CameraModel],
    pub maps: &'a FeatureMapSet,
    cam_flat: Vec<f64>,
}

impl<'a> DecodeContext<'a> {
    pub fn new(
        cams: &'a [CameraModel],
        maps: &'a FeatureMapSet,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        maps.validate()?;
        if maps.views.len() != cams.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature maps for {} cameras",
                maps.views.len(),
                cams.len()
            )));
        }
        if maps.channels() != cfg.map_channels {
            return Err(Error::DimMismatch {
                expected: cfg.map_channels,
                got: maps.channels(),
            });
        }
        if cfg.geometry == GeometryMode::Regress && cams.len() > cfg.max_cameras {
            return Err(Error::Config(format!(
                "regressor supports at most {} cameras, got {}",
                cfg.max_cameras,
                cams.len()
            )));
        }
        let mut cam_flat = vec![0.0; 16 * cfg.max_cameras];
        for (i, c) in cams.iter().enumerate().take(cfg.max_cameras) {
            cam_flat[16 * i..16 * (i + 1)].copy_from_slice(&c.flat_params());
        }
        Ok(Self {
            cams,
            maps,
            cam_flat,
        })
    }

    pub fn views(&self) -> usize {
        self.cams.len()
    }
}

/// Per-view result of the appearance stage for one joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewStepOutput {
    pub projected2d: Vector2<f64>,
    pub residual2d: Vector2<f64>,
    pub refined2d: Vector2<f64>,
    pub confidence: f64,
    pub attention_feature: Vec<f64>,
    /// False when the joint is on or behind the camera plane; such views
    /// carry zero confidence and no feature.
    pub valid: bool,
}

#[derive(Debug, Clone)]
struct ViewInner {
    jac: Matrix2x3<f64>,
    attn: AttnView,
    g_tape: Tape,
}

#[derive(Debug, Clone)]
pub struct ViewRecord {
    pub output: ViewStepOutput,
    inner: Option<ViewInner>,
}

#[derive(Debug, Clone)]
pub struct JointRecord {
    pub views: Vec<ViewRecord>,
    prep: AttnPrep,
    n_valid: usize,
    alpha_tape: Option<Tape>,
    gamma_tape: Option<Tape>,
    beta_tape: Tape,
    regress_tape: Option<Tape>,
    tri: Option<Solution>,
}

/// Everything one decoder layer computed for one query.
#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub geometry_in: Vec<Vector3<f64>>,
    pub appearance_in: Vec<f64>,
    pub joints: Vec<JointRecord>,
    pub geometry_out: Vec<Vector3<f64>>,
    pub appearance_out: Vec<f64>,
    pub score: f64,
    /// Some joint could not be triangulated; the score was zeroed.
    pub failed: bool,
}

/// Forward trace of one query through the layers it survived.
#[derive(Debug, Clone)]
pub struct QueryForward {
    pub anchor_index: usize,
    pub layers: Vec<LayerRecord>,
}

impl QueryForward {
    /// True when the query ran every layer and passed the last filter.
    pub fn survived(&self, depth: usize, eps: f64) -> bool {
        self.layers.len() == depth && self.layers.last().is_some_and(|l| l.score >= eps)
    }

    pub fn query(&self) -> CompositionalQuery {
        let last = self.layers.last().expect("at least one layer");
        CompositionalQuery {
            appearance: last.appearance_out.clone(),
            geometry: last.geometry_out.clone(),
            score: last.score,
            anchor_index: self.anchor_index,
        }
    }
}

/// Loss gradients with respect to one layer's outputs.
#[derive(Debug, Clone)]
pub struct LayerUpstream {
    /// `dL/dP'` per joint.
    pub geometry: Vec<Vector3<f64>>,
    /// `dL/du'` per joint and view.
    pub refined2d: Vec<Vec<Vector2<f64>>>,
    pub score: f64,
}

impl LayerUpstream {
    pub fn zeros(joints: usize, views: usize) -> Self {
        Self {
            geometry: vec![Vector3::zeros(); joints],
            refined2d: vec![vec![Vector2::zeros(); views]; joints],
            score: 0.0,
        }
    }
}

/// One [`LayerUpstream`] per recorded layer.
#[derive(Debug, Clone)]
pub struct QueryUpstream {
    pub layers: Vec<LayerUpstream>,
}

fn row(v: &[f64], j: usize, l: usize) -> &[f64] {
    &v[j * l..(j + 1) * l]
}

fn appearance_joint(
    ctx: &DecodeContext<'_>,
    layer: &LayerParams,
    f: &[f64],
    p: &Vector3<f64>,
) -> (AttnPrep, Vec<ViewRecord>) {
    let prep = attention::prep(&layer.attention, f);
    let l = layer.attention.feature_dim();
    let views = ctx
        .cams
        .iter()
        .zip(&ctx.maps.views)
        .map(|(cam, map)| match cam.project_with_jacobian(p) {
            Ok((u, jac, w)) if w > MIN_VIEW_DEPTH => {
                let (attn, s) = attention::sample_view(&layer.attention, &prep, &u, map);
                let (g, g_tape) = mlp_forward(&layer.g_theta, &s).expect("g_θ input");
                let residual2d = Vector2::new(g[0], g[1]);
                ViewRecord {
                    output: ViewStepOutput {
                        projected2d: u,
                        residual2d,
                        refined2d: u + residual2d,
                        confidence: sigmoid(g[2]),
                        attention_feature: s,
                        valid: true,
                    },
                    inner: Some(ViewInner { jac, attn, g_tape }),
                }
            }
            _ => ViewRecord {
                output: ViewStepOutput {
                    projected2d: Vector2::repeat(f64::NAN),
                    residual2d: Vector2::zeros(),
                    refined2d: Vector2::repeat(f64::NAN),
                    confidence: 0.0,
                    attention_feature: vec![0.0; l],
                    valid: false,
                },
                inner: None,
            },
        })
        .collect();
    (prep, views)
}

/// Projects joint `p` (appearance `f`) into every view, samples features
/// and predicts the 2D residual and confidence.
pub fn appearance_step(
    ctx: &DecodeContext<'_>,
    layer: &LayerParams,
    f: &[f64],
    p: &Vector3<f64>,
) -> Vec<ViewStepOutput> {
    appearance_joint(ctx, layer, f, p)
        .1
        .into_iter()
        .map(|v| v.output)
        .collect()
}

fn weighted<'a>(
    views: &[ViewStepOutput],
    projections: &[&'a Matrix3x4<f64>],
) -> Vec<WeightedView<'a>> {
    views
        .iter()
        .zip(projections)
        .map(|(v, p)| WeightedView {
            u: if v.valid {
                v.refined2d
            } else {
                Vector2::zeros()
            },
            confidence: if v.valid { v.confidence } else { 0.0 },
            projection: p,
        })
        .collect()
}

fn projections(cams: &[CameraModel]) -> Vec<&Matrix3x4<f64>> {
    cams.iter().map(|c| c.projection()).collect()
}

/// Confidence-weighted triangulation of the refined 2D positions.
pub fn geometry_step(views: &[ViewStepOutput], cams: &[CameraModel]) -> Result<Vector3<f64>> {
    Ok(triangulation::solve(&weighted(views, &projections(cams)))?.point)
}

fn mean_features(views: &[ViewRecord], l: usize) -> (Vec<f64>, usize) {
    let mut mean = vec![0.0; l];
    let mut n = 0;
    for v in views.iter().filter(|v| v.output.valid) {
        n += 1;
        for (m, s) in mean.iter_mut().zip(&v.output.attention_feature) {
            *m += s;
        }
    }
    if n > 0 {
        mean.iter_mut().for_each(|m| *m /= n as f64);
    }
    (mean, n)
}

/// `f' = f_γ(f + f_α(mean s))`, or `f + mean s` in mean-fusion mode.
pub fn fuse_features(
    layer: &LayerParams,
    mode: FusionMode,
    f: &[f64],
    s_list: &[Vec<f64>],
) -> Vec<f64> {
    let l = f.len();
    let mut mean = vec![0.0; l];
    for s in s_list {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / s_list.len() as f64;
        }
    }
    match mode {
        FusionMode::Mlp => {
            let a = layer.f_alpha.apply(&mean);
            let x: Vec<f64> = f.iter().zip(&a).map(|(x, y)| x + y).collect();
            layer.f_gamma.apply(&x)
        }
        FusionMode::Mean => f.iter().zip(&mean).map(|(x, y)| x + y).collect(),
    }
}

/// Mean over joints of the positive-channel sigmoid of `f_β`.
pub fn score_query(layer: &LayerParams, appearance: &[f64], joints: usize) -> f64 {
    let l = appearance.len() / joints;
    (0..joints)
        .map(|j| sigmoid(layer.f_beta.apply(row(appearance, j, l))[0]))
        .sum::<f64>()
        / joints as f64
}

fn layer_forward(
    ctx: &DecodeContext<'_>,
    layer: &LayerParams,
    cfg: &ModelConfig,
    appearance_in: Vec<f64>,
    geometry_in: Vec<Vector3<f64>>,
) -> LayerRecord {
    let l = cfg.feature_dim;
    let nj = geometry_in.len();
    let projs = projections(ctx.cams);
    let mut joints = Vec::with_capacity(nj);
    let mut geometry_out = geometry_in.clone();
    let mut appearance_out = vec![0.0; appearance_in.len()];
    let mut failed = false;
    let mut score = 0.0;
    for j in 0..nj {
        let f = row(&appearance_in, j, l);
        let (prep, views) = appearance_joint(ctx, layer, f, &geometry_in[j]);
        let (mean, n_valid) = mean_features(&views, l);
        let (out, alpha_tape, gamma_tape) = match cfg.fusion {
            FusionMode::Mlp => {
                let (a, at) = mlp_forward(&layer.f_alpha, &mean).expect("f_α input");
                let x: Vec<f64> = f.iter().zip(&a).map(|(x, y)| x + y).collect();
                let (g, gt) = mlp_forward(&layer.f_gamma, &x).expect("f_γ input");
                (g, Some(at), Some(gt))
            }
            FusionMode::Mean => (
                f.iter().zip(&mean).map(|(x, y)| x + y).collect(),
                None,
                None,
            ),
        };
        let (logits, beta_tape) = mlp_forward(&layer.f_beta, &out).expect("f_β input");
        score += sigmoid(logits[0]);
        let mut tri = None;
        let mut regress_tape = None;
        match cfg.geometry {
            GeometryMode::Triangulate => {
                let outputs: Vec<ViewStepOutput> = views.iter().map(|v| v.output.clone()).collect();
                match triangulation::solve(&weighted(&outputs, &projs)) {
                    Ok(sol) => {
                        geometry_out[j] = sol.point;
                        tri = Some(sol);
                    }
                    Err(_) => failed = true,
                }
            }
            GeometryMode::Regress => {
                let reg = layer.regressor.as_ref().expect("regressor parameters");
                let mut x = out.clone();
                x.extend_from_slice(&ctx.cam_flat);
                let (d, t) = mlp_forward(reg, &x).expect("regressor input");
                geometry_out[j] += Vector3::new(d[0], d[1], d[2]) * cfg.regressor_scale_mm;
                regress_tape = Some(t);
            }
        }
        appearance_out[j * l..(j + 1) * l].copy_from_slice(&out);
        joints.push(JointRecord {
            views,
            prep,
            n_valid,
            alpha_tape,
            gamma_tape,
            beta_tape,
            regress_tape,
            tri,
        });
    }
    score /= nj as f64;
    if failed {
        score = 0.0;
    }
    LayerRecord {
        geometry_in,
        appearance_in,
        joints,
        geometry_out,
        appearance_out,
        score,
        failed,
    }
}

/// Runs `query` through the stack, stopping after the first layer whose
/// score falls below `eps`.
pub fn forward_query(
    ctx: &DecodeContext<'_>,
    params: &DecoderParams,
    query: &CompositionalQuery,
    eps: f64,
) -> QueryForward {
    let mut layers: Vec<LayerRecord> = Vec::with_capacity(params.depth());
    let mut f = query.appearance.clone();
    let mut p = query.geometry.clone();
    for i in 0..params.depth() {
        let rec = layer_forward(ctx, params.layer(i), &params.config, f, p);
        f = rec.appearance_out.clone();
        p = rec.geometry_out.clone();
        let stop = rec.score < eps;
        layers.push(rec);
        if stop {
            break;
        }
    }
    QueryForward {
        anchor_index: query.anchor_index,
        layers,
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn layer_backward(
    ctx: &DecodeContext<'_>,
    layer: &LayerParams,
    cfg: &ModelConfig,
    rec: &mut LayerRecord,
    up: &LayerUpstream,
    d_f_out: &mut [f64],
    d_p_out: &mut [Vector3<f64>],
    grads: &mut LayerParams,
) -> Result<()> {
    let l = cfg.feature_dim;
    let nj = rec.geometry_in.len();
    let projs = projections(ctx.cams);
    let mut d_f_in = vec![0.0; d_f_out.len()];
    let mut d_p_in = vec![Vector3::zeros(); nj];
    for j in 0..nj {
        let jr = &mut rec.joints[j];
        let f_in = &rec.appearance_in[j * l..(j + 1) * l];
        let f_out = &rec.appearance_out[j * l..(j + 1) * l];
        let df_out = &mut d_f_out[j * l..(j + 1) * l];
        let dp_out = d_p_out[j] + up.geometry[j];

        if !rec.failed && up.score != 0.0 {
            let z = layer.f_beta.layers[0].linear.forward(f_out)[0];
            let s = sigmoid(z);
            let dz = up.score / nj as f64 * s * (1.0 - s);
            let dx = layer.f_beta.backward_accumulate(
                &mut jr.beta_tape,
                &[dz, 0.0],
                &mut grads.f_beta,
            )?;
            add(df_out, &dx);
        }

        let nv = jr.views.len();
        let mut d_refined: Vec<Vector2<f64>> = up.refined2d[j].clone();
        let mut d_conf = vec![0.0; nv];
        match cfg.geometry {
            GeometryMode::Triangulate => match &jr.tri {
                Some(sol) => {
                    let outputs: Vec<ViewStepOutput> =
                        jr.views.iter().map(|v| v.output.clone()).collect();
                    let (du, dc) =
                        triangulation::solve_vjp(&weighted(&outputs, &projs), sol, &dp_out);
                    for t in 0..nv {
                        d_refined[t] += du[t];
                        d_conf[t] = dc[t];
                    }
                }
                None => d_p_in[j] += dp_out,
            },
            GeometryMode::Regress => {
                d_p_in[j] += dp_out;
                let reg = layer.regressor.as_ref().expect("regressor parameters");
                let g = dp_out * cfg.regressor_scale_mm;
                let dx = reg.backward_accumulate(
                    jr.regress_tape.as_mut().expect("regressor tape"),
                    &[g.x, g.y, g.z],
                    grads.regressor.as_mut().expect("regressor gradients"),
                )?;
                add(df_out, &dx[..l]);
            }
        }

        let d_mean = match cfg.fusion {
            FusionMode::Mlp => {
                let dx = layer.f_gamma.backward_accumulate(
                    jr.gamma_tape.as_mut().expect("f_γ tape"),
                    df_out,
                    &mut grads.f_gamma,
                )?;
                add(&mut d_f_in[j * l..(j + 1) * l], &dx);
                layer.f_alpha.backward_accumulate(
                    jr.alpha_tape.as_mut().expect("f_α tape"),
                    &dx,
                    &mut grads.f_alpha,
                )?
            }
            FusionMode::Mean => {
                add(&mut d_f_in[j * l..(j + 1) * l], df_out);
                df_out.to_vec()
            }
        };

        let mut d_weights = vec![0.0; layer.attention.sampling_points];
        let mut d_offsets = vec![0.0; 2 * layer.attention.sampling_points];
        for (t, v) in jr.views.iter_mut().enumerate() {
            let Some(inner) = v.inner.as_mut() else {
                continue;
            };
            let c = v.output.confidence;
            let dg = [d_refined[t].x, d_refined[t].y, d_conf[t] * c * (1.0 - c)];
            let mut ds =
                layer
                    .g_theta
                    .backward_accumulate(&mut inner.g_tape, &dg, &mut grads.g_theta)?;
            for (x, m) in ds.iter_mut().zip(&d_mean) {
                *x += m / jr.n_valid as f64;
            }
            let du_attn = attention::backward_view(
                &layer.attention,
                &jr.prep,
                &inner.attn,
                &ctx.maps.views[t],
                &ds,
                &mut grads.attention,
                &mut d_weights,
                &mut d_offsets,
            );
            let du = d_refined[t] + du_attn;
            d_p_in[j] += inner.jac.transpose() * du;
        }
        attention::backward_prep(
            &layer.attention,
            f_in,
            &jr.prep,
            &d_weights,
            &d_offsets,
            &mut grads.attention,
            &mut d_f_in[j * l..(j + 1) * l],
        );
    }
    d_f_out.copy_from_slice(&d_f_in);
    d_p_out.copy_from_slice(&d_p_in);
    Ok(())
}

/// Reverse pass of [`forward_query`]: accumulates parameter gradients into
/// `grads`, including the query's instance and joint embeddings.
pub fn backward_query(
    ctx: &DecodeContext<'_>,
    params: &DecoderParams,
    fwd: &mut QueryForward,
    upstream: &QueryUpstream,
    grads: &mut DecoderParams,
) -> Result<()> {
    if upstream.layers.len() != fwd.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} upstream layers for {} recorded layers",
            upstream.layers.len(),
            fwd.layers.len()
        )));
    }
    let cfg = &params.config;
    let (nj, l) = (cfg.joints, cfg.feature_dim);
    let mut d_f = vec![0.0; nj * l];
    let mut d_p = vec![Vector3::zeros(); nj];
    for i in (0..fwd.layers.len()).rev() {
        layer_backward(
            ctx,
            params.layer(i),
            cfg,
            &mut fwd.layers[i],
            &upstream.layers[i],
            &mut d_f,
            &mut d_p,
            grads.layer_mut(i),
        )?;
    }
    let k = fwd.anchor_index;
    let emb = &mut grads.embeddings;
    for j in 0..nj {
        let g = &d_f[j * l..(j + 1) * l];
        add(&mut emb.instance[k * l..(k + 1) * l], g);
        add(&mut emb.joint[j * l..(j + 1) * l], g);
    }
    Ok(())
}
