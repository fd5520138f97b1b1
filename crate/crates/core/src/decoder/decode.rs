use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::forward::{forward_query, DecodeContext, QueryForward};
use super::query::CompositionalQuery;
use super::select::nms;
use super::DecoderParams;
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    /// Per-layer score filter threshold.
    pub eps: f64,
    /// `None` disables NMS.
    pub nms_radius_mm: Option<f64>,
    /// Keep per-view 2D outputs in the snapshots.
    pub view_snapshots: bool,
    pub exec: Exec,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            eps: 0.1,
            nms_radius_mm: Some(500.0),
            view_snapshots: false,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSnapshot {
    pub u: Vector2<f64>,
    pub delta: Vector2<f64>,
    pub confidence: f64,
    pub valid: bool,
}

/// One query's state after a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub anchor_index: usize,
    pub geometry: Vec<Vector3<f64>>,
    pub score: f64,
    /// `joint × view`, empty unless view snapshots were requested.
    pub views: Vec<Vec<ViewSnapshot>>,
}

/// Queries that entered a layer and what the layer made of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub layer: usize,
    pub queries: Vec<QueryTrace>,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Survivors of the last filter, after NMS.
    pub queries: Vec<CompositionalQuery>,
    /// Survivors of the last filter, before NMS.
    pub pre_nms: Vec<CompositionalQuery>,
    pub snapshots: Vec<LayerSnapshot>,
}

/// Flat dump record: `kind = "view"` rows carry `joint`, `view`, `u`,
/// `delta`, `confidence`; `kind = "query"` rows carry `p3d` and `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub kind: String,
    pub layer: usize,
    pub query: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p3d: Option<Vec<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

pub fn snapshot_records(snaps: &[LayerSnapshot]) -> Vec<SnapshotRecord> {
    let mut out = Vec::new();
    for s in snaps {
        for q in &s.queries {
            for (j, views) in q.views.iter().enumerate() {
                for (t, v) in views.iter().enumerate().filter(|(_, v)| v.valid) {
                    out.push(SnapshotRecord {
                        kind: "view".into(),
                        layer: s.layer,
                        query: q.anchor_index,
                        joint: Some(j),
                        view: Some(t),
                        u: Some([v.u.x, v.u.y]),
                        delta: Some([v.delta.x, v.delta.y]),
                        confidence: Some(v.confidence),
                        p3d: None,
                        score: None,
                    });
                }
            }
            out.push(SnapshotRecord {
                kind: "query".into(),
                layer: s.layer,
                query: q.anchor_index,
                joint: None,
                view: None,
                u: None,
                delta: None,
                confidence: None,
                p3d: Some(q.geometry.iter().map(|p| [p.x, p.y, p.z]).collect()),
                score: Some(q.score),
            });
        }
    }
    out
}

pub(crate) fn snapshots_from(
    traces: &[QueryForward],
    depth: usize,
    with_views: bool,
) -> Vec<LayerSnapshot> {
    (0..depth)
        .map(|layer| LayerSnapshot {
            layer,
            queries: traces
                .iter()
                .filter_map(|t| t.layers.get(layer).map(|r| (t.anchor_index, r)))
                .map(|(anchor_index, r)| QueryTrace {
                    anchor_index,
                    geometry: r.geometry_out.clone(),
                    score: r.score,
                    views: if with_views {
                        r.joints
                            .iter()
                            .map(|j| {
                                j.views
                                    .iter()
                                    .map(|v| ViewSnapshot {
                                        u: v.output.refined2d,
                                        delta: v.output.residual2d,
                                        confidence: v.output.confidence,
                                        valid: v.output.valid,
                                    })
                                    .collect()
                            })
                            .collect()
                    } else {
                        Vec::new()
                    },
                })
                .collect(),
        })
        .collect()
}

pub(crate) fn finish(
    traces: &[QueryForward],
    params: &DecoderParams,
    opts: &DecodeOptions,
) -> DecodeOutput {
    let depth = params.depth();
    let pre_nms: Vec<CompositionalQuery> = traces
        .iter()
        .filter(|t| t.survived(depth, opts.eps))
        .map(|t| t.query())
        .collect();
    let queries = match opts.nms_radius_mm {
        Some(r) => nms(pre_nms.clone(), r),
        None => pre_nms.clone(),
    };
    DecodeOutput {
        queries,
        pre_nms,
        snapshots: snapshots_from(traces, depth, opts.view_snapshots),
    }
}

/// Runs the full stack on one scene. An empty result is not an error.
pub fn decode(
    init: &[CompositionalQuery],
    ctx: &DecodeContext<'_>,
    params: &DecoderParams,
    opts: &DecodeOptions,
) -> DecodeOutput {
    let traces = opts.exec.map(init, |q| {
        let mut t = forward_query(ctx, params, q, opts.eps);
        if !opts.view_snapshots {
            t.layers.iter_mut().for_each(|l| l.joints.clear());
        }
        t
    });
    finish(&traces, params, opts)
}

/// [`decode`] over several scenes, parallel across scenes.
pub fn decode_batch(
    init: &[Vec<CompositionalQuery>],
    ctxs: &[DecodeContext<'_>],
    params: &DecoderParams,
    opts: &DecodeOptions,
) -> Vec<DecodeOutput> {
    let inner = DecodeOptions {
        exec: Exec::Sequential,
        ..*opts
    };
    opts.exec
        .map_range(ctxs.len(), |i| decode(&init[i], &ctxs[i], params, &inner))
}
