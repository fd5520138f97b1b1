//! Pose metrics, whole-model evaluation, the cross-rig generalization suite
//! and the ablation runner.

mod ablation;
mod metrics;
mod suite;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use ablation::{default_grid, run_ablation, AblationRow, AblationTable, ABLATIONS};
pub use metrics::{
    average_precision, claim_predictions, match_and_score, mpjpe, pcp, summarize, Claim, MatchScore,
};
pub use suite::{
    generalization_conditions, run_generalization, run_generalization_suite, Condition, SuiteConfig,
};

use crate::decoder::{decode, DecodeContext, DecodeOptions, DecodeOutput, DecoderParams};
use crate::error::Result;
use crate::par::Exec;
use crate::scenesim::{render_feature_maps, OcclusionConfig, RenderConfig, Scene};
use crate::skeleton::bones;
use crate::trainer::{scene_init, InitMode};

/// Thresholds (mm) at which AP is reported.
pub const AP_THRESHOLDS_MM: [f64; 4] = [25.0, 50.0, 100.0, 150.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub decode: DecodeOptions,
    pub init: InitMode,
    /// Seeds initialization noise in [`InitMode::GtNoise`].
    pub seed: u64,
    /// Threshold of the headline AP, recall and TP/FP counts.
    pub ap_analog_tau_mm: f64,
    /// Threshold under which a prediction counts for matched MPJPE and PCP.
    pub mpjpe_tau_mm: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            decode: DecodeOptions::default(),
            init: InitMode::Grid,
            seed: 0,
            ap_analog_tau_mm: 100.0,
            mpjpe_tau_mm: 500.0,
        }
    }
}

impl EvalOptions {
    pub fn with_eps(eps: f64, exec: Exec) -> Self {
        Self {
            decode: DecodeOptions {
                eps,
                exec,
                ..DecodeOptions::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub scenes: usize,
    /// Cameras of the first scene.
    pub cameras: usize,
    pub persons: usize,
    pub predictions: usize,
    /// AP at each of [`AP_THRESHOLDS_MM`], keyed `ap25`, `ap50`, ...
    pub ap: BTreeMap<String, f64>,
    /// Mean of `ap`.
    pub mean_ap: f64,
    /// AP at `ap_analog_tau_mm`.
    pub ap_analog: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Mean MPJPE of predictions matched under `mpjpe_tau_mm`.
    pub mpjpe_mm: Option<f64>,
    pub pcp: Option<f64>,
    /// MPJPE of the final matched predictions after each layer, tracked by
    /// anchor.
    pub per_layer_mpjpe: Vec<Option<f64>>,
    pub runtime_s: f64,
}

pub const REPORT_HEADER: &str =
    "condition,scenes,cameras,persons,predictions,ap25,ap50,ap100,ap150,mean_ap,ap_analog,recall,tp,fp,fn,mpjpe_mm,pcp";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl EvalReport {
    /// CSV row matching [`REPORT_HEADER`]; runtime is left out so that
    /// repeated runs produce identical files.
    pub fn csv_row(&self) -> String {
        let ap = |k: &str| self.ap.get(k).map(|v| format!("{v:?}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{},{},{},{},{}",
            self.condition,
            self.scenes,
            self.cameras,
            self.persons,
            self.predictions,
            ap("ap25"),
            ap("ap50"),
            ap("ap100"),
            ap("ap150"),
            self.mean_ap,
            self.ap_analog,
            self.recall,
            self.tp,
            self.fp,
            self.fn_,
            opt(self.mpjpe_mm),
            opt(self.pcp)
        )
    }
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Per-layer MPJPE table: one row per report and layer.
pub fn per_layer_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("condition,layer,mpjpe_mm\n");
    for r in reports {
        for (l, v) in r.per_layer_mpjpe.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", r.condition, l, opt(*v));
        }
    }
    s
}

/// Renders and decodes one scene.
pub fn decode_scene(
    params: &DecoderParams,
    scene: &Scene,
    occ: &OcclusionConfig,
    render: &RenderConfig,
    opts: &EvalOptions,
) -> Result<DecodeOutput> {
    let (maps, _) = render_feature_maps(scene, occ, render);
    let ctx = DecodeContext::new(&scene.rig, &maps, &params.config)?;
    let init = scene_init(params, scene, opts.init, opts.seed, 0)?;
    Ok(decode(&init, &ctx, params, &opts.decode))
}

/// `(score, geometry)` of the final predictions.
pub fn predictions(out: &DecodeOutput) -> Vec<(f64, Vec<Vector3<f64>>)> {
    out.queries
        .iter()
        .map(|q| (q.score, q.geometry.clone()))
        .collect()
}

struct SceneEval {
    claims: Vec<Vec<Claim>>,
    analog: Vec<Claim>,
    matched: Vec<f64>,
    pcp: Vec<f64>,
    layer_err: Vec<Vec<f64>>,
    persons: usize,
    predictions: usize,
}

fn eval_scene(
    params: &DecoderParams,
    scene: &Scene,
    occ: &OcclusionConfig,
    render: &RenderConfig,
    opts: &EvalOptions,
) -> Result<SceneEval> {
    let inner = EvalOptions {
        decode: DecodeOptions {
            exec: Exec::Sequential,
            ..opts.decode
        },
        ..*opts
    };
    let out = decode_scene(params, scene, occ, render, &inner)?;
    let preds = predictions(&out);
    let gts = &scene.persons;
    let claims = AP_THRESHOLDS_MM
        .iter()
        .map(|&t| claim_predictions(&preds, gts, t))
        .collect::<Result<Vec<_>>>()?;
    let analog = claim_predictions(&preds, gts, opts.ap_analog_tau_mm)?;
    let loose = claim_predictions(&preds, gts, opts.mpjpe_tau_mm)?;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0).then(a.cmp(&b)));
    let limbs = bones();
    let mut matched = Vec::new();
    let mut pcps = Vec::new();
    let mut layer_err = vec![Vec::new(); out.snapshots.len()];
    for (c, &i) in loose.iter().zip(&order) {
        let Some((g, e)) = c.matched else { continue };
        matched.push(e);
        pcps.push(pcp(&preds[i].1, &gts[g], &limbs));
        let anchor = out.queries[i].anchor_index;
        for (l, snap) in out.snapshots.iter().enumerate() {
            if let Some(q) = snap.queries.iter().find(|q| q.anchor_index == anchor) {
                layer_err[l].push(mpjpe(&q.geometry, &gts[g])?);
            }
        }
    }
    Ok(SceneEval {
        claims,
        analog,
        matched,
        pcp: pcps,
        layer_err,
        persons: gts.len(),
        predictions: preds.len(),
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Decodes every scene and pools claims across scenes before computing AP.
pub fn evaluate(
    params: &DecoderParams,
    scenes: &[Scene],
    occ: &OcclusionConfig,
    render: &RenderConfig,
    opts: &EvalOptions,
    condition: &str,
) -> Result<EvalReport> {
    let start = Instant::now();
    let per = opts
        .decode
        .exec
        .map(scenes, |s| eval_scene(params, s, occ, render, opts))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let persons: usize = per.iter().map(|s| s.persons).sum();
    let mut ap = BTreeMap::new();
    for (k, t) in AP_THRESHOLDS_MM.iter().enumerate() {
        let all: Vec<Claim> = per
            .iter()
            .flat_map(|s| s.claims[k].iter().copied())
            .collect();
        ap.insert(format!("ap{}", *t as u32), summarize(&all, persons).ap);
    }
    let analog: Vec<Claim> = per.iter().flat_map(|s| s.analog.iter().copied()).collect();
    let score = summarize(&analog, persons);
    let matched: Vec<f64> = per.iter().flat_map(|s| s.matched.iter().copied()).collect();
    let pcps: Vec<f64> = per.iter().flat_map(|s| s.pcp.iter().copied()).collect();
    let per_layer_mpjpe = (0..params.depth())
        .map(|l| {
            let v: Vec<f64> = per
                .iter()
                .flat_map(|s| s.layer_err[l].iter().copied())
                .collect();
            mean(&v)
        })
        .collect();
    Ok(EvalReport {
        condition: condition.to_string(),
        scenes: scenes.len(),
        cameras: scenes.first().map_or(0, |s| s.rig.len()),
        persons,
        predictions: per.iter().map(|s| s.predictions).sum(),
        mean_ap: ap.values().sum::<f64>() / ap.len() as f64,
        ap,
        ap_analog: score.ap,
        recall: score.recall,
        tp: score.tp,
        fp: score.fp,
        fn_: score.fn_,
        mpjpe_mm: mean(&matched),
        pcp: mean(&pcps),
        per_layer_mpjpe,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// How many true positives of an unfiltered run (`eps = 0`) the filtered
/// run loses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterAudit {
    pub reference_tp: usize,
    pub removed: usize,
}

impl FilterAudit {
    pub fn removed_fraction(&self) -> f64 {
        if self.reference_tp == 0 {
            0.0
        } else {
            self.removed as f64 / self.reference_tp as f64
        }
    }
}

/// Compares `opts` against the same run with filtering disabled. A
/// reference true positive (at `ap_analog_tau_mm`) counts as removed when
/// its anchor does not pass the filtered run's last filter.
pub fn filtering_audit(
    params: &DecoderParams,
    scenes: &[Scene],
    occ: &OcclusionConfig,
    render: &RenderConfig,
    opts: &EvalOptions,
) -> Result<FilterAudit> {
    let inner = EvalOptions {
        decode: DecodeOptions {
            exec: Exec::Sequential,
            ..opts.decode
        },
        ..*opts
    };
    let unfiltered = EvalOptions {
        decode: DecodeOptions {
            eps: 0.0,
            ..inner.decode
        },
        ..inner
    };
    let per = opts
        .decode
        .exec
        .map(scenes, |s| -> Result<(usize, usize)> {
            let refr = decode_scene(params, s, occ, render, &unfiltered)?;
            let filt = decode_scene(params, s, occ, render, &inner)?;
            let preds = predictions(&refr);
            let mut order: Vec<usize> = (0..preds.len()).collect();
            order.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0).then(a.cmp(&b)));
            let claims = claim_predictions(&preds, &s.persons, opts.ap_analog_tau_mm)?;
            let (mut tp, mut removed) = (0, 0);
            for (c, &i) in claims.iter().zip(&order) {
                if c.matched.is_none() {
                    continue;
                }
                tp += 1;
                let a = refr.queries[i].anchor_index;
                if !filt.pre_nms.iter().any(|q| q.anchor_index == a) {
                    removed += 1;
                }
            }
            Ok((tp, removed))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterAudit {
        reference_tp: per.iter().map(|p| p.0).sum(),
        removed: per.iter().map(|p| p.1).sum(),
    })
}
