//! Finite-difference checks of every analytic gradient in the pipeline.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camgeom::{make_arrangement, project, ArrangementSpec, CaptureSpace};
use crate::decoder::{
    backward_query, forward_query, init_queries, DecodeContext, DecoderParams, LayerUpstream,
    ModelConfig, QueryForward, QueryUpstream,
};
use crate::error::Result;
use crate::nn::{
    flatten, grad_check, grad_check_coords, mlp_backward, mlp_forward, unflatten, DenseParams,
    Parameters,
};
use crate::par::Exec;
use crate::scenesim::{
    render_feature_maps, sample_persons, OcclusionConfig, PosePrior, RenderConfig, Scene,
};
use crate::skeleton::tpose_at;
use crate::trainer::{match_anchors, step_loss, step_loss_and_grad, StepInput, TrainConfig};
use crate::triangulation::{triangulate, triangulate_vjp, ViewObservation};

/// Relative error bound every check must meet.
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Difference step for the summed training loss. Its magnitude is around
/// 1e5, so a 1e-6 step loses about five digits to rounding.
pub const FULL_LOSS_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn result(name: &str, coords: usize, err: f64) -> GradCheckResult {
    GradCheckResult {
        name: name.into(),
        coords,
        max_rel_err: err,
        passed: err < GRAD_TOLERANCE,
    }
}

fn sample_coords(n: usize, k: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= k {
        (0..n).collect()
    } else {
        rand::seq::index::sample(r, n, k).into_vec()
    }
}

fn check_triangulation(r: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for trial in 0..20 {
        let cams = make_arrangement(&ArrangementSpec {
            camera_count: r.random_range(2..=6),
            seed: trial,
            ..ArrangementSpec::default()
        })?;
        let p = Vector3::new(
            r.random_range(-2000.0..2000.0),
            r.random_range(-2000.0..2000.0),
            r.random_range(200.0..1800.0),
        );
        let obs: Vec<ViewObservation> = cams
            .iter()
            .enumerate()
            .map(|(t, c)| -> Result<ViewObservation> {
                Ok(ViewObservation {
                    point2d: project(&p, c)?
                        + Vector2::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)),
                    confidence: r.random_range(0.2..1.0),
                    camera_index: t,
                })
            })
            .collect::<Result<_>>()?;
        let up = Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        );
        let g = triangulate_vjp(&obs, &cams, &up)?;
        let pack = |o: &[ViewObservation]| -> Vec<f64> {
            o.iter()
                .flat_map(|v| [v.point2d.x, v.point2d.y, v.confidence])
                .collect()
        };
        let analytic: Vec<f64> = (0..obs.len())
            .flat_map(|t| [g.point2d[t].x, g.point2d[t].y, g.confidence[t]])
            .collect();
        let theta = pack(&obs);
        let mut o2 = obs.clone();
        let err = grad_check(
            |t| {
                for (i, v) in o2.iter_mut().enumerate() {
                    v.point2d = Vector2::new(t[3 * i], t[3 * i + 1]);
                    v.confidence = t[3 * i + 2];
                }
                triangulate(&o2, &cams)
                    .map(|s| s.point3d.dot(&up))
                    .unwrap_or(f64::NAN)
            },
            &analytic,
            &theta,
            1e-6,
        );
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        coords += theta.len();
    }
    Ok(result("triangulate_vjp", coords, worst))
}

fn check_network(name: &str, net: &DenseParams, r: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let x: Vec<f64> = (0..net.in_dim())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let probe: Vec<f64> = (0..net.out_dim())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let (_, mut tape) = mlp_forward(net, &x)?;
    let (grads, dx) = mlp_backward(net, &mut tape, &probe)?;
    let eval = |p: &DenseParams, x: &[f64]| -> f64 {
        p.apply(x).iter().zip(&probe).map(|(a, b)| a * b).sum()
    };
    let theta = flatten(net);
    let analytic = flatten(&grads);
    let coords = sample_coords(theta.len(), 400, r);
    let mut p2 = net.clone();
    let e_params = grad_check_coords(
        |t| {
            unflatten(&mut p2, t);
            eval(&p2, &x)
        },
        &analytic,
        &theta,
        1e-6,
        &coords,
    );
    let e_input = grad_check(|t| eval(net, t), &dx, &x, 1e-6);
    Ok(result(name, coords.len() + x.len(), e_params.max(e_input)))
}

fn randomize<P: Parameters>(p: &mut P, scale: f64, r: &mut ChaCha8Rng) {
    p.for_each_mut(&mut |v| {
        for x in v.iter_mut() {
            *x += r.random_range(-scale..scale);
        }
    });
}

fn linear_probe(fw: &QueryForward, up: &QueryUpstream) -> f64 {
    let mut total = 0.0;
    for (rec, u) in fw.layers.iter().zip(&up.layers) {
        total += u.score * rec.score;
        for (j, jr) in rec.joints.iter().enumerate() {
            total += u.geometry[j].dot(&rec.geometry_out[j]);
            for (t, v) in jr.views.iter().enumerate() {
                if v.output.valid {
                    total += u.refined2d[j][t].dot(&v.output.refined2d);
                }
            }
        }
    }
    total
}

/// One query through a two-layer stack of full-size layers on rendered
/// maps, probed linearly at every output.
fn check_full_stack(r: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let cfg = ModelConfig {
        layers: 2,
        num_queries: 4,
        ..ModelConfig::full()
    };
    let scene = micro_scene(3, 2, 5);
    let (maps, _) = render_feature_maps(
        &scene,
        &OcclusionConfig::default(),
        &RenderConfig::default(),
    );
    let ctx = DecodeContext::new(&scene.rig, &maps, &cfg)?;
    let mut params = DecoderParams::init(&cfg, 12)?;
    randomize(&mut params, 0.02, r);
    let q = init_queries(&scene.space, 4, &tpose_at(0.0, 0.0), &params.embeddings)?[0].clone();
    let fw = forward_query(&ctx, &params, &q, 0.0);
    let views = scene.rig.len();
    let up = QueryUpstream {
        layers: (0..fw.layers.len())
            .map(|_| {
                let mut u = LayerUpstream::zeros(cfg.joints, views);
                for j in 0..cfg.joints {
                    u.geometry[j] = Vector3::new(
                        r.random_range(-1.0..1.0),
                        r.random_range(-1.0..1.0),
                        r.random_range(-1.0..1.0),
                    ) * 1e-3;
                    for t in 0..views {
                        u.refined2d[j][t] =
                            Vector2::new(r.random_range(-0.1..0.1), r.random_range(-0.1..0.1));
                    }
                }
                u.score = r.random_range(-1.0..1.0);
                u
            })
            .collect(),
    };
    let mut grads = crate::nn::zeros_like(&params);
    backward_query(&ctx, &params, &mut fw.clone(), &up, &mut grads)?;
    let theta = flatten(&params);
    let analytic = flatten(&grads);
    let coords = sample_coords(theta.len(), 300, r);
    let mut p2 = params.clone();
    let err = grad_check_coords(
        |t| {
            unflatten(&mut p2, t);
            let q2 = crate::decoder::CompositionalQuery {
                appearance: p2.embeddings.appearance(q.anchor_index),
                ..q.clone()
            };
            linear_probe(&forward_query(&ctx, &p2, &q2, 0.0), &up)
        },
        &analytic,
        &theta,
        1e-6,
        &coords,
    );
    Ok(result("decoder_stack_full", coords.len(), err))
}

/// `persons` people seen by a `cameras`-camera ring.
pub fn micro_scene(cameras: usize, persons: usize, seed: u64) -> Scene {
    let space = CaptureSpace {
        x_mm: (-2000.0, 2000.0),
        y_mm: (-2000.0, 2000.0),
        z_max_mm: 2200.0,
    };
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let prior = PosePrior {
        min_separation_mm: 800.0,
        border_mm: 400.0,
        ..PosePrior::default()
    };
    Scene {
        name: "micro".into(),
        persons: sample_persons(&mut r, &space, &prior, persons),
        rig: make_arrangement(&ArrangementSpec {
            camera_count: cameras,
            image_size: (48, 48),
            radius_mm: 6000.0,
            seed,
            ..ArrangementSpec::default()
        })
        .expect("valid micro rig"),
        space,
        seed,
    }
}

/// Total training loss of a 2-person, 3-camera scene against every
/// parameter, all queries taking part and no filtering.
fn check_full_loss(r: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let cfg = TrainConfig {
        model: ModelConfig {
            num_queries: 16,
            feature_dim: 4,
            g_hidden: 6,
            gamma_hidden: 8,
            sampling_points: 2,
            layers: 3,
            ..ModelConfig::desk()
        },
        knn: 2,
        eps: 0.0,
        exec: Exec::Sequential,
        ..TrainConfig::default()
    };
    let scene = micro_scene(3, 2, 21);
    let (maps, gt2d) = render_feature_maps(
        &scene,
        &OcclusionConfig::default(),
        &RenderConfig::default(),
    );
    let mut params = DecoderParams::init(&cfg.model, 3)?;
    randomize(&mut params, 0.05, r);
    let ctx = DecodeContext::new(&scene.rig, &maps, &cfg.model)?;
    let build =
        |p: &DecoderParams| init_queries(&scene.space, 16, &tpose_at(0.0, 0.0), &p.embeddings);
    let init = build(&params)?;
    let anchors: Vec<_> = init.iter().map(|q| q.geometry.clone()).collect();
    let assignment = match_anchors(&scene.persons, &anchors, cfg.knn)?;
    let selected: Vec<usize> = (0..init.len()).collect();
    let input = StepInput {
        ctx,
        init: &init,
        gt3d: &scene.persons,
        gt2d: &gt2d,
        assignment: &assignment,
        selected: &selected,
    };
    let (_, analytic) = step_loss_and_grad(&params, &cfg, &input)?;
    let theta = flatten(&params);
    let mut p2 = params.clone();
    let err = grad_check(
        |t| {
            unflatten(&mut p2, t);
            let init2 = build(&p2).expect("same layout");
            let input2 = StepInput {
                ctx: DecodeContext::new(&scene.rig, &maps, &cfg.model).expect("valid context"),
                init: &init2,
                gt3d: &scene.persons,
                gt2d: &gt2d,
                assignment: &assignment,
                selected: &selected,
            };
            step_loss(&p2, &cfg, &input2)
                .map(|l| l.total)
                .unwrap_or(f64::NAN)
        },
        &analytic,
        &theta,
        FULL_LOSS_STEP,
    );
    Ok(result(
        "full_loss_micro_scene",
        theta.len(),
        if err.is_nan() { f64::INFINITY } else { err },
    ))
}

/// Runs every check with seeded inputs.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<GradCheckResult>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let full = ModelConfig {
        geometry: crate::decoder::GeometryMode::Regress,
        ..ModelConfig::full()
    };
    let mut layer = crate::decoder::LayerParams::init(&full, &mut r);
    randomize(&mut layer, 0.02, &mut r);
    let mut out = vec![check_triangulation(&mut r)?];
    for (name, net) in [
        ("g_theta", &layer.g_theta),
        ("f_alpha", &layer.f_alpha),
        ("f_gamma", &layer.f_gamma),
        ("f_beta", &layer.f_beta),
        ("regressor", layer.regressor.as_ref().expect("regress mode")),
    ] {
        out.push(check_network(name, net, &mut r)?);
    }
    out.push(check_full_stack(&mut r)?);
    out.push(check_full_loss(&mut r)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_scene_has_requested_shape() {
        let s = micro_scene(3, 2, 1);
        assert_eq!(s.rig.len(), 3);
        assert_eq!(s.persons.len(), 2);
    }

    #[test]
    fn wrong_tolerance_flags_failure() {
        assert!(!result("x", 1, 2e-5).passed);
        assert!(result("x", 1, 5e-6).passed);
    }
}
