use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoise::{denoise_init, InitMode};
use super::loss::{classification_loss, layer_weights, query_pose_loss, LayerWeightMode};
use super::matching::{match_anchors, Assignment};
use crate::decoder::{
    backward_query, forward_query, init_queries, CompositionalQuery, DecodeContext, DecoderParams,
    LayerUpstream, ModelConfig, QueryForward, QueryUpstream,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::nn::{adam_step, flatten, num_params, unflatten, Adam, AdamState, Checkpoint};
use crate::par::Exec;
use crate::scenesim::{Dataset, GroundTruth2D, Scene};
use crate::skeleton::tpose_at;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// `W`, anchors matched per person. Noisy-GT initialization always uses 1.
    pub knn: usize,
    /// Per-layer score filter used during training and validation.
    pub eps: f64,
    pub adam: Adam,
    pub epochs: usize,
    pub layer_weights: LayerWeightMode,
    pub init: InitMode,
    pub seed: u64,
    /// Multiplier on the 2D pose term.
    pub weight_2d: f64,
    /// Negatives sampled per step; `None` uses every unmatched anchor.
    pub negatives_per_step: Option<usize>,
    /// Train on the first `n` training scenes only.
    pub max_train_scenes: Option<usize>,
    /// Validation scenes evaluated after each epoch; 0 disables validation.
    pub val_scenes: usize,
    /// Queries per gradient chunk. Fixed chunks keep the reduction order
    /// independent of the execution mode.
    pub chunk_size: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            knn: 5,
            eps: 0.1,
            adam: Adam::default(),
            epochs: 40,
            layer_weights: LayerWeightMode::Uniform,
            init: InitMode::Grid,
            seed: 0,
            weight_2d: 1.0,
            negatives_per_step: Some(48),
            max_train_scenes: None,
            val_scenes: 20,
            chunk_size: 8,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.knn == 0 {
            return Err(Error::Config("knn (W) must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::Config(format!(
                "eps must lie in [0, 1), got {}",
                self.eps
            )));
        }
        if !(self.adam.lr >= 0.0) || !self.adam.lr.is_finite() {
            return Err(Error::Config(format!(
                "invalid learning rate {}",
                self.adam.lr
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be positive".into()));
        }
        if let InitMode::GtNoise { sigma_mm } = self.init {
            if !(sigma_mm >= 0.0) || !sigma_mm.is_finite() {
                return Err(Error::Config(format!("invalid noise sigma {sigma_mm}")));
            }
        }
        Ok(())
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: f64,
    pub loss_pose_3d: f64,
    pub loss_pose_2d: f64,
    pub loss_cls: f64,
    /// Filled on the last step of an epoch when validation runs.
    pub val_mpjpe: Option<f64>,
    pub val_ap25_analog: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "epoch,step,loss_total,loss_pose_3d,loss_pose_2d,loss_cls,val_mpjpe,val_ap25_analog";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?},{},{}",
            r.epoch,
            r.step,
            r.loss_total,
            r.loss_pose_3d,
            r.loss_pose_2d,
            r.loss_cls,
            opt(r.val_mpjpe),
            opt(r.val_ap25_analog)
        );
    }
    s
}

/// Weighted loss of one step. `total` is the sum of the three components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub pose_3d: f64,
    pub pose_2d: f64,
    pub cls: f64,
}

impl StepLoss {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.pose_3d.is_finite()
            && self.pose_2d.is_finite()
            && self.cls.is_finite()
    }
}

/// Everything a step needs about one scene.
pub struct StepInput<'a> {
    pub ctx: DecodeContext<'a>,
    pub init: &'a [CompositionalQuery],
    pub gt3d: &'a [Vec<Vector3<f64>>],
    pub gt2d: &'a GroundTruth2D,
    pub assignment: &'a Assignment,
    /// Indices into `init` that take part in the step, ascending.
    pub selected: &'a [usize],
}

fn upstreams(
    cfg: &TrainConfig,
    depth: usize,
    input: &StepInput<'_>,
    fwds: &[QueryForward],
) -> Result<(StepLoss, Vec<QueryUpstream>)> {
    let weights = layer_weights(cfg.layer_weights, depth);
    let joints = cfg.model.joints;
    let views = input.ctx.views();
    let mut ups: Vec<QueryUpstream> = fwds
        .iter()
        .map(|f| QueryUpstream {
            layers: vec![LayerUpstream::zeros(joints, views); f.layers.len()],
        })
        .collect();
    let mut loss = StepLoss::default();
    for (l, &wl) in weights.iter().enumerate() {
        let alive: Vec<usize> = (0..fwds.len())
            .filter(|&i| fwds[i].layers.len() > l)
            .collect();
        let pairs: Vec<(usize, f64)> = alive
            .iter()
            .map(|&i| (fwds[i].anchor_index, fwds[i].layers[l].score))
            .collect();
        let (cls, dcls) = classification_loss(&pairs, input.assignment);
        loss.cls += wl * cls;
        let (mut l3, mut l2) = (0.0, 0.0);
        for (n, &i) in alive.iter().enumerate() {
            let rec = &fwds[i].layers[l];
            let up = &mut ups[i].layers[l];
            up.score = wl * dcls[n];
            let Some(z) = input.assignment.label[fwds[i].anchor_index] else {
                continue;
            };
            let refined: Vec<Vec<Option<Vector2<f64>>>> = rec
                .joints
                .iter()
                .map(|j| {
                    j.views
                        .iter()
                        .map(|v| v.output.valid.then_some(v.output.refined2d))
                        .collect()
                })
                .collect();
            let (pl, g3, g2) =
                query_pose_loss(&rec.geometry_out, &refined, z, input.gt3d, input.gt2d)?;
            l3 += pl.l3d;
            l2 += pl.l2d;
            for j in 0..joints {
                up.geometry[j] = g3[j] * wl;
                for t in 0..views {
                    up.refined2d[j][t] = g2[j][t] * (wl * cfg.weight_2d);
                }
            }
        }
        loss.pose_3d += wl * l3;
        loss.pose_2d += wl * cfg.weight_2d * l2;
    }
    loss.total = loss.pose_3d + loss.pose_2d + loss.cls;
    Ok((loss, ups))
}

/// Loss of one scene without gradients.
pub fn step_loss(
    params: &DecoderParams,
    cfg: &TrainConfig,
    input: &StepInput<'_>,
) -> Result<StepLoss> {
    let fwds = cfg.exec.map(input.selected, |&i| {
        forward_query(&input.ctx, params, &input.init[i], cfg.eps)
    });
    Ok(upstreams(cfg, params.depth(), input, &fwds)?.0)
}

/// Loss of one scene and its gradient as a flat vector in parameter
/// visiting order.
pub fn step_loss_and_grad(
    params: &DecoderParams,
    cfg: &TrainConfig,
    input: &StepInput<'_>,
) -> Result<(StepLoss, Vec<f64>)> {
    let fwds = cfg.exec.map(input.selected, |&i| {
        forward_query(&input.ctx, params, &input.init[i], cfg.eps)
    });
    let (loss, ups) = upstreams(cfg, params.depth(), input, &fwds)?;
    let mut chunks: Vec<Vec<(QueryForward, QueryUpstream)>> = Vec::new();
    for pair in fwds.into_iter().zip(ups) {
        match chunks.last_mut() {
            Some(c) if c.len() < cfg.chunk_size => c.push(pair),
            _ => chunks.push(vec![pair]),
        }
    }
    let partial = cfg.exec.map_owned(chunks, |chunk| -> Result<Vec<f64>> {
        let mut g = crate::nn::zeros_like(params);
        for (mut f, u) in chunk {
            backward_query(&input.ctx, params, &mut f, &u, &mut g)?;
        }
        Ok(flatten(&g))
    });
    let mut grad = vec![0.0; num_params(params)];
    for p in partial {
        for (a, b) in grad.iter_mut().zip(p?) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Grid queries for the current embeddings.
pub fn grid_queries(params: &DecoderParams, scene: &Scene) -> Result<Vec<CompositionalQuery>> {
    init_queries(
        &scene.space,
        params.config.num_queries,
        &tpose_at(0.0, 0.0),
        &params.embeddings,
    )
}

/// Initial queries of `scene` under `mode`. Noise draws depend on
/// `(scene.seed, seed, stream)` only.
pub fn scene_init(
    params: &DecoderParams,
    scene: &Scene,
    mode: InitMode,
    seed: u64,
    stream: u64,
) -> Result<Vec<CompositionalQuery>> {
    let grid = grid_queries(params, scene)?;
    match mode {
        InitMode::Grid => Ok(grid),
        InitMode::GtNoise { sigma_mm } => {
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ seed.rotate_left(32));
            rng.set_stream(stream);
            denoise_init(&scene.persons, sigma_mm, &mut rng, &grid)
        }
    }
}

/// Anchor assignment of `scene`, computed on the grid. Under
/// [`InitMode::GtNoise`] each person has one positive, the anchor that
/// [`denoise_init`] replaces, and every grid query is a negative.
pub fn training_assignment(
    params: &DecoderParams,
    scene: &Scene,
    cfg: &TrainConfig,
) -> Result<Assignment> {
    let anchors: Vec<Vec<Vector3<f64>>> = grid_queries(params, scene)?
        .into_iter()
        .map(|q| q.geometry)
        .collect();
    let w = match cfg.init {
        InitMode::Grid => cfg.knn,
        InitMode::GtNoise { .. } => 1,
    };
    match_anchors(&scene.persons, &anchors, w)
}

/// Matched anchors plus up to `negatives` sampled unmatched ones, ascending.
pub fn select_queries(
    a: &Assignment,
    negatives: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut sel: Vec<usize> = a.matched.iter().flatten().copied().collect();
    match negatives {
        Some(n) if n < a.negatives.len() => sel.extend(
            index::sample(rng, a.negatives.len(), n)
                .into_iter()
                .map(|i| a.negatives[i]),
        ),
        _ => sel.extend_from_slice(&a.negatives),
    }
    sel.sort_unstable();
    sel
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DecoderParams,
    pub metrics: Vec<MetricRow>,
}

/// Trains a fresh model on `data.train`, one scene per step.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = DecoderParams::init(&cfg.model, cfg.seed)?;
    let mut flat = flatten(&params);
    let mut state = AdamState::new(flat.len());
    let n_train = cfg
        .max_train_scenes
        .map_or(data.train.len(), |n| n.min(data.train.len()));
    let scenes = &data.train[..n_train];
    let val = &data.val[..cfg.val_scenes.min(data.val.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut rows = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut rng);
        for &si in &order {
            let scene = &scenes[si];
            let (maps, gt2d) = data.render(scene);
            let init = scene_init(&params, scene, cfg.init, cfg.seed, epoch as u64 + 1)?;
            let assignment = training_assignment(&params, scene, cfg)?;
            let selected = select_queries(&assignment, cfg.negatives_per_step, &mut rng);
            let input = StepInput {
                ctx: DecodeContext::new(&scene.rig, &maps, &cfg.model)?,
                init: &init,
                gt3d: &scene.persons,
                gt2d: &gt2d,
                assignment: &assignment,
                selected: &selected,
            };
            let (loss, grad) = step_loss_and_grad(&params, cfg, &input)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            adam_step(&mut flat, &grad, &mut state, &cfg.adam)?;
            unflatten(&mut params, &flat);
            rows.push(MetricRow {
                epoch,
                step,
                loss_total: loss.total,
                loss_pose_3d: loss.pose_3d,
                loss_pose_2d: loss.pose_2d,
                loss_cls: loss.cls,
                val_mpjpe: None,
                val_ap25_analog: None,
            });
            step += 1;
        }
        if !val.is_empty() {
            if let Some(last) = rows.last_mut() {
                let opts = EvalOptions {
                    init: cfg.init,
                    seed: cfg.seed,
                    ..EvalOptions::with_eps(cfg.eps, cfg.exec)
                };
                let rep = evaluate(
                    &params,
                    val,
                    &data.config.occlusion,
                    &data.config.render,
                    &opts,
                    "val",
                )?;
                last.val_mpjpe = rep.mpjpe_mm;
                last.val_ap25_analog = Some(rep.ap_analog);
            }
        }
    }
    Ok(TrainOutcome {
        params,
        metrics: rows,
    })
}

/// Writes `params` with its model config in the checkpoint metadata.
pub fn save_model(params: &DecoderParams, path: impl AsRef<Path>) -> Result<()> {
    let meta = serde_json::json!({ "model": params.config });
    Checkpoint::capture(params, meta).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DecoderParams> {
    let ck = Checkpoint::load(path)?;
    let model: ModelConfig = serde_json::from_value(
        ck.meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::field("meta.model", "missing model config"))?,
    )?;
    let mut params = DecoderParams::init(&model, 0)?;
    ck.restore(&mut params)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camgeom::{ArrangementSpec, CaptureSpace};
    use crate::scenesim::{DatasetConfig, SplitSizes};

    pub(crate) fn tiny_config() -> (TrainConfig, DatasetConfig) {
        let data = DatasetConfig {
            name: "tiny".into(),
            seed: 3,
            splits: SplitSizes {
                train: 3,
                val: 2,
                test: 2,
            },
            persons: (1, 2),
            space: CaptureSpace {
                x_mm: (-2000.0, 2000.0),
                y_mm: (-2000.0, 2000.0),
                z_max_mm: 2200.0,
            },
            rig: ArrangementSpec {
                camera_count: 3,
                image_size: (48, 48),
                ..ArrangementSpec::default()
            },
            write_maps: false,
            ..DatasetConfig::default()
        };
        let cfg = TrainConfig {
            model: ModelConfig {
                num_queries: 16,
                feature_dim: 4,
                g_hidden: 6,
                gamma_hidden: 8,
                layers: 2,
                sampling_points: 2,
                regressor_hidden: 6,
                ..ModelConfig::desk()
            },
            knn: 2,
            epochs: 2,
            negatives_per_step: Some(4),
            val_scenes: 2,
            ..TrainConfig::default()
        };
        (cfg, data)
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (mut cfg, dc) = tiny_config();
        cfg.adam.lr = 0.0;
        let data = Dataset::generate(&dc).unwrap();
        let out = train(&cfg, &data).unwrap();
        let init = DecoderParams::init(&cfg.model, cfg.seed).unwrap();
        assert_eq!(flatten(&out.params), flatten(&init));
        assert_eq!(out.metrics.len(), 6);
    }

    #[test]
    fn components_sum_to_total() {
        let (cfg, dc) = tiny_config();
        let data = Dataset::generate(&dc).unwrap();
        let out = train(&cfg, &data).unwrap();
        for r in &out.metrics {
            let s = r.loss_pose_3d + r.loss_pose_2d + r.loss_cls;
            assert!((s - r.loss_total).abs() <= 1e-12 * r.loss_total.abs().max(1.0));
        }
        assert!(out.metrics.last().unwrap().val_ap25_analog.is_some());
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let (cfg, dc) = tiny_config();
        let data = Dataset::generate(&dc).unwrap();
        let a = train(&cfg, &data).unwrap();
        let seq = TrainConfig {
            exec: Exec::Sequential,
            ..cfg.clone()
        };
        let b = train(&seq, &data).unwrap();
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(flatten(&a.params), flatten(&b.params));
    }

    #[test]
    fn non_finite_loss_reports_step() {
        let (mut cfg, dc) = tiny_config();
        cfg.weight_2d = f64::INFINITY;
        let data = Dataset::generate(&dc).unwrap();
        match train(&cfg, &data) {
            Err(Error::NonFiniteLoss { epoch, step }) => assert_eq!((epoch, step), (0, 0)),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let (cfg, _) = tiny_config();
        assert!(TrainConfig {
            knn: 0,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            eps: 1.0,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        let mut c = cfg;
        c.adam.lr = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn model_round_trips_through_checkpoint() {
        let (cfg, _) = tiny_config();
        let p = DecoderParams::init(&cfg.model, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&p, &path).unwrap();
        let q = load_model(&path).unwrap();
        assert_eq!(p, q);
        assert!(matches!(
            load_model(dir.path().join("none.json")),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn selection_keeps_positives() {
        let gts = vec![tpose_at(0.0, 0.0)];
        let anchors: Vec<Vec<Vector3<f64>>> =
            (0..10).map(|i| tpose_at(i as f64 * 300.0, 0.0)).collect();
        let a = match_anchors(&gts, &anchors, 2).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let s = select_queries(&a, Some(3), &mut r);
        assert_eq!(s.len(), 5);
        assert!(s.contains(&0) && s.contains(&1));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(
            select_queries(&a, None, &mut r),
            (0..10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn noisy_init_has_one_positive_per_person() {
        let (mut cfg, dc) = tiny_config();
        let data = Dataset::generate(&dc).unwrap();
        let params = DecoderParams::init(&cfg.model, 0).unwrap();
        let scene = &data.train[0];
        let grid = grid_queries(&params, scene).unwrap();
        assert_eq!(
            training_assignment(&params, scene, &cfg)
                .unwrap()
                .positives(),
            2 * scene.persons.len()
        );
        cfg.init = InitMode::GtNoise { sigma_mm: 20.0 };
        let a = training_assignment(&params, scene, &cfg).unwrap();
        let init = scene_init(&params, scene, cfg.init, 0, 1).unwrap();
        for (z, m) in a.matched.iter().enumerate() {
            assert_eq!(m.len(), 1);
            assert_ne!(init[m[0]].geometry, grid[m[0]].geometry);
            assert!(
                (init[m[0]].center() - crate::skeleton::pose_center(&scene.persons[z])).norm()
                    < 100.0
            );
        }
        let moved = (0..grid.len())
            .filter(|&i| init[i].geometry != grid[i].geometry)
            .count();
        assert_eq!(moved, scene.persons.len());
    }
}
