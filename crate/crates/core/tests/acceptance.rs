//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line with the
//! measured value and its threshold; the process exits nonzero if any fails.
//!
//! `cargo test -p mvpose --test acceptance -- c4 c9` runs the criteria whose
//! names start with the given prefixes. Trained models are shared between
//! criteria. `MVPOSE_ACCEPTANCE_EPOCHS` overrides the training length.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use mvpose::camgeom::{make_arrangement, project, ArrangementSpec, CameraModel, CaptureSpace};
use mvpose::decoder::{nms, CompositionalQuery, DecoderParams, GeometryMode, ModelConfig};
use mvpose::eval::{
    evaluate, filtering_audit, match_and_score, mpjpe, reports_csv, run_generalization,
    EvalOptions, EvalReport, SuiteConfig,
};
use mvpose::gradsuite::{run_gradient_suite, GRAD_TOLERANCE};
use mvpose::par::Exec;
use mvpose::scenesim::{Dataset, DatasetConfig, SplitSizes};
use mvpose::skeleton::{pose_center, tpose_at};
use mvpose::trainer::{match_anchors, metrics_csv, train, InitMode, TrainConfig};
use mvpose::triangulation::{triangulate, ViewObservation};

const DEFAULT_EPOCHS: usize = 8;
const DENOISE_SIGMA_MM: f64 = 20.0;

fn epochs() -> usize {
    std::env::var("MVPOSE_ACCEPTANCE_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_EPOCHS)
}

fn verdict(id: u32, name: &str, pass: bool, detail: String) -> bool {
    println!(
        "[{}] {id}. {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn benchmark() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        Dataset::generate(&DatasetConfig {
            write_maps: false,
            ..DatasetConfig::default()
        })
        .unwrap()
    })
}

struct Trained {
    params: DecoderParams,
    secs: f64,
}

fn train_model(layers: usize, geometry: GeometryMode, init: InitMode) -> Trained {
    let cfg = TrainConfig {
        model: ModelConfig {
            layers,
            geometry,
            ..ModelConfig::desk()
        },
        init,
        epochs: epochs(),
        val_scenes: 0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let params = train(&cfg, benchmark()).unwrap().params;
    let secs = start.elapsed().as_secs_f64();
    println!("    trained layers={layers} {geometry:?} {init:?} in {secs:.0} s");
    Trained { params, secs }
}

fn grid_model(layers: usize) -> &'static Trained {
    static MODELS: [OnceLock<Trained>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match layers {
        1 => 0,
        2 => 1,
        4 => 2,
        _ => unreachable!(),
    };
    MODELS[slot].get_or_init(|| train_model(layers, GeometryMode::Triangulate, InitMode::Grid))
}

fn regress_model() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| train_model(4, GeometryMode::Regress, InitMode::Grid))
}

fn denoise_model() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| {
        train_model(
            4,
            GeometryMode::Triangulate,
            InitMode::GtNoise {
                sigma_mm: DENOISE_SIGMA_MM,
            },
        )
    })
}

fn eval_test(params: &DecoderParams, opts: &EvalOptions, name: &str) -> EvalReport {
    let d = benchmark();
    evaluate(
        params,
        &d.test,
        &d.config.occlusion,
        &d.config.render,
        opts,
        name,
    )
    .unwrap()
}

fn default_opts() -> EvalOptions {
    EvalOptions::with_eps(0.1, Exec::Parallel)
}

fn in_domain(layers: usize) -> &'static EvalReport {
    static R: [OnceLock<EvalReport>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match layers {
        1 => 0,
        2 => 1,
        _ => 2,
    };
    R[slot].get_or_init(|| eval_test(&grid_model(layers).params, &default_opts(), "in_domain"))
}

fn mm(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn c1_triangulation_exactness() -> bool {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let space = CaptureSpace::default();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let lo = r.random_range(500.0..2000.0);
        let spec = ArrangementSpec {
            camera_count: r.random_range(2..=8),
            radius_mm: r.random_range(6000.0..10000.0),
            height_range_mm: (lo, lo + r.random_range(0.0..2000.0)),
            seed: i,
            ..ArrangementSpec::default()
        };
        let cams = make_arrangement(&spec).unwrap();
        let p = Vector3::new(
            r.random_range(space.x_mm.0..space.x_mm.1),
            r.random_range(space.y_mm.0..space.y_mm.1),
            r.random_range(0.0..space.z_max_mm),
        );
        let obs: Vec<_> = cams
            .iter()
            .enumerate()
            .map(|(t, c)| ViewObservation {
                point2d: project(&p, c).unwrap(),
                confidence: 1.0,
                camera_index: t,
            })
            .collect();
        let x = triangulate(&obs, &cams).unwrap().point3d;
        worst = worst.max((x - p).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "triangulation exactness",
        worst < 1e-6 && secs < 5.0,
        format!("max error {worst:.3e} mm (< 1e-6), {secs:.2} s (< 5)"),
    )
}

fn c2_gradient_suite() -> bool {
    let start = Instant::now();
    let results = run_gradient_suite(0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    verdict(
        2,
        "gradient suite",
        failed.is_empty() && worst < GRAD_TOLERANCE && secs < 120.0,
        format!(
            "{} checks, worst rel err {worst:.2e} (< {GRAD_TOLERANCE:e}), failed {failed:?}, {secs:.1} s (< 120)",
            results.len()
        ),
    )
}

fn weighted_cost(x: &Vector3<f64>, obs: &[ViewObservation], cams: &[CameraModel]) -> f64 {
    obs.iter()
        .map(|o| {
            let p = cams[o.camera_index].projection();
            let h = p * x.push(1.0);
            let rx = o.point2d.x * h.z - h.x;
            let ry = o.point2d.y * h.z - h.y;
            o.confidence * o.confidence * (rx * rx + ry * ry)
        })
        .sum()
}

fn grid_argmin(
    center: Vector3<f64>,
    step: f64,
    half: i32,
    f: &dyn Fn(&Vector3<f64>) -> f64,
) -> Vector3<f64> {
    let mut best = (f64::INFINITY, center);
    for i in -half..=half {
        for j in -half..=half {
            for k in -half..=half {
                let q = center + Vector3::new(i as f64, j as f64, k as f64) * step;
                let c = f(&q);
                if c < best.0 {
                    best = (c, q);
                }
            }
        }
    }
    best.1
}

/// Worst per-axis gap between the solver and a 0.5 mm grid search, in grid steps.
fn triangulation_oracle(r: &mut ChaCha8Rng) -> f64 {
    let noise = Normal::new(0.0, 2.0).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let cams = make_arrangement(&ArrangementSpec {
            camera_count: 4,
            seed,
            ..ArrangementSpec::default()
        })
        .unwrap();
        let gt = Vector3::new(
            r.random_range(-2000.0..2000.0),
            r.random_range(-2000.0..2000.0),
            1000.0,
        );
        let obs: Vec<_> = cams
            .iter()
            .enumerate()
            .map(|(t, c)| ViewObservation {
                point2d: project(&gt, c).unwrap() + Vector2::new(noise.sample(r), noise.sample(r)),
                confidence: r.random_range(0.3..1.0),
                camera_index: t,
            })
            .collect();
        let x = triangulate(&obs, &cams).unwrap().point3d;
        let cost = |q: &Vector3<f64>| weighted_cost(q, &obs, &cams);
        let coarse = grid_argmin(gt, 10.0, 60, &cost);
        let fine = grid_argmin(coarse, 0.5, 24, &cost);
        worst = worst.max((fine - x).amax() / 0.5);
    }
    worst
}

fn query(center: (f64, f64), score: f64, anchor: usize) -> CompositionalQuery {
    CompositionalQuery {
        appearance: vec![],
        geometry: tpose_at(center.0, center.1),
        score,
        anchor_index: anchor,
    }
}

/// Suppression as repeated best-candidate extraction.
fn nms_reference(qs: &[CompositionalQuery], radius: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; qs.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..qs.len() {
            if !alive[i] {
                continue;
            }
            best = match best {
                Some(b)
                    if qs[b].score > qs[i].score
                        || (qs[b].score == qs[i].score
                            && qs[b].anchor_index < qs[i].anchor_index) =>
                {
                    Some(b)
                }
                _ => Some(i),
            };
        }
        let Some(b) = best else { break };
        kept.push(qs[b].anchor_index);
        let c = pose_center(&qs[b].geometry);
        for i in 0..qs.len() {
            if alive[i] && (pose_center(&qs[i].geometry) - c).norm() <= radius {
                alive[i] = false;
            }
        }
    }
    kept
}

fn nms_oracle(r: &mut ChaCha8Rng) -> usize {
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = r.random_range(1..60);
        let qs: Vec<_> = (0..n)
            .map(|i| {
                let c = (
                    r.random_range(-3000.0..3000.0),
                    r.random_range(-3000.0..3000.0),
                );
                query(c, r.random_range(0..8) as f64 / 8.0, i)
            })
            .collect();
        let got: Vec<usize> = nms(qs.clone(), 500.0)
            .iter()
            .map(|q| q.anchor_index)
            .collect();
        if got != nms_reference(&qs, 500.0) {
            mismatches += 1;
        }
    }
    mismatches
}

/// Pair-by-pair global minimum search over the full distance table.
fn match_reference(
    gts: &[Vec<Vector3<f64>>],
    anchors: &[Vec<Vector3<f64>>],
    w: usize,
) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); gts.len()];
    let mut used = vec![false; anchors.len()];
    for _ in 0..w * gts.len() {
        let mut best: Option<(f64, usize, usize)> = None;
        for (p, g) in gts.iter().enumerate() {
            if out[p].len() == w {
                continue;
            }
            for (a, an) in anchors.iter().enumerate() {
                if used[a] {
                    continue;
                }
                let d = (pose_center(g) - pose_center(an)).norm();
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, p, a));
                }
            }
        }
        let (_, p, a) = best.unwrap();
        used[a] = true;
        out[p].push(a);
    }
    out
}

fn matching_oracle(r: &mut ChaCha8Rng) -> usize {
    let mut mismatches = 0;
    for _ in 0..200 {
        let k = r.random_range(4..40);
        let anchors: Vec<_> = (0..k)
            .map(|_| {
                tpose_at(
                    r.random_range(-4000.0..4000.0),
                    r.random_range(-4000.0..4000.0),
                )
            })
            .collect();
        let z = r.random_range(1..=4);
        let w = r.random_range(1..=(k / z).min(5));
        let gts: Vec<_> = (0..z)
            .map(|_| {
                tpose_at(
                    r.random_range(-4000.0..4000.0),
                    r.random_range(-4000.0..4000.0),
                )
            })
            .collect();
        let got = match_anchors(&gts, &anchors, w).unwrap();
        if got.matched != match_reference(&gts, &anchors, w) {
            mismatches += 1;
        }
        // a lone person gets exactly its k nearest anchors
        let one = match_anchors(&gts[..1], &anchors, w).unwrap();
        let mut by_dist: Vec<usize> = (0..k).collect();
        by_dist.sort_by(|&a, &b| {
            let da = (pose_center(&anchors[a]) - pose_center(&gts[0])).norm();
            let db = (pose_center(&anchors[b]) - pose_center(&gts[0])).norm();
            da.total_cmp(&db)
        });
        if one.matched[0] != by_dist[..w] {
            mismatches += 1;
        }
    }
    mismatches
}

/// Enumerates every partial injection of predictions into ground truths
/// and keeps the lexicographically best one in score order, where a match
/// beats no match and a smaller error beats a larger one.
fn exhaustive_score(
    preds: &[(f64, Vec<Vector3<f64>>)],
    gts: &[Vec<Vector3<f64>>],
    tau: f64,
) -> (f64, usize, Option<f64>) {
    let n = preds.len();
    let m = gts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0).then(a.cmp(&b)));
    let err: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| mpjpe(&p.1, g).unwrap()).collect())
        .collect();
    let mut best: Option<(Vec<(u8, f64)>, Vec<Option<usize>>)> = None;
    for code in 0..(m + 1).pow(n as u32) {
        let mut c = code;
        let assign: Vec<Option<usize>> = (0..n)
            .map(|_| {
                let v = c % (m + 1);
                c /= m + 1;
                (v < m).then_some(v)
            })
            .collect();
        let targets: Vec<usize> = assign.iter().flatten().copied().collect();
        let injective = (0..m).all(|g| targets.iter().filter(|&&t| t == g).count() <= 1);
        let within = assign
            .iter()
            .enumerate()
            .all(|(i, a)| a.is_none_or(|g| err[i][g] < tau));
        if !injective || !within {
            continue;
        }
        let key: Vec<(u8, f64)> = order
            .iter()
            .map(|&i| assign[i].map_or((0, 0.0), |g| (1, -err[i][g])))
            .collect();
        let better = match &best {
            None => true,
            Some((bk, _)) => key
                .iter()
                .zip(bk)
                .find(|(a, b)| a != b)
                .is_some_and(|(a, b)| a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)),
        };
        if better {
            best = Some((key, assign));
        }
    }
    let assign = best.unwrap().1;
    let hits: Vec<bool> = order.iter().map(|&i| assign[i].is_some()).collect();
    let mut ap = 0.0;
    for k in 0..n {
        if hits[k] {
            let prec = (k..n)
                .map(|j| hits[..=j].iter().filter(|h| **h).count() as f64 / (j + 1) as f64)
                .fold(0.0, f64::max);
            ap += prec / m as f64;
        }
    }
    let errs: Vec<f64> = (0..n)
        .filter_map(|i| assign[i].map(|g| err[i][g]))
        .collect();
    let mean = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
    (ap, errs.len(), mean)
}

fn scoring_oracle(r: &mut ChaCha8Rng) -> usize {
    let mut mismatches = 0;
    for _ in 0..300 {
        let m = r.random_range(1..=3);
        let n = r.random_range(1..=4);
        let gts: Vec<_> = (0..m).map(|g| tpose_at(g as f64 * 150.0, 0.0)).collect();
        let preds: Vec<_> = (0..n)
            .map(|_| {
                let base = &gts[r.random_range(0..m)];
                let d = Vector3::new(
                    r.random_range(-200.0..200.0),
                    r.random_range(-50.0..50.0),
                    0.0,
                );
                (
                    r.random_range(0..4) as f64 / 4.0,
                    base.iter().map(|j| j + d).collect::<Vec<_>>(),
                )
            })
            .collect();
        let got = match_and_score(&preds, &gts, 100.0).unwrap();
        let (ap, tp, err) = exhaustive_score(&preds, &gts, 100.0);
        let same_err = match (got.mpjpe, err) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-9,
            (None, None) => true,
            _ => false,
        };
        if (got.ap - ap).abs() > 1e-12 || got.tp != tp || got.fp != n - tp || !same_err {
            mismatches += 1;
        }
    }
    mismatches
}

fn c3_oracle_equivalence() -> bool {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let tri = triangulation_oracle(&mut r);
    let nms_bad = nms_oracle(&mut r);
    let match_bad = matching_oracle(&mut r);
    let score_bad = scoring_oracle(&mut r);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        "oracle equivalence",
        tri <= 1.0 && nms_bad == 0 && match_bad == 0 && score_bad == 0 && secs < 120.0,
        format!(
            "triangulation vs grid {tri:.2} steps (<= 1), nms mismatches {nms_bad}/200, \
             matching mismatches {match_bad}/400, scoring mismatches {score_bad}/300, {secs:.1} s (< 120)"
        ),
    )
}

fn c4_layer_refinement_trend() -> bool {
    let secs: f64 = [1, 2, 4].iter().map(|&n| grid_model(n).secs).sum();
    let m: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&n| mm(in_domain(n).mpjpe_mm))
        .collect();
    let layers: Vec<f64> = in_domain(4)
        .per_layer_mpjpe
        .iter()
        .map(|v| mm(*v))
        .collect();
    let monotone = layers.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        4,
        "layer refinement trend",
        m[2] < m[1] && m[1] < m[0] && monotone && secs < 45.0 * 60.0,
        format!(
            "MPJPE N=1 {:.1}, N=2 {:.1}, N=4 {:.1} mm (strictly decreasing); N=4 per layer {:?} \
             (non-increasing); training {:.1} min (< 45)",
            m[0],
            m[1],
            m[2],
            layers
                .iter()
                .map(|v| (v * 10.0).round() / 10.0)
                .collect::<Vec<_>>(),
            secs / 60.0
        ),
    )
}

fn c5_generalization() -> bool {
    let start = Instant::now();
    let hybrid = grid_model(4);
    let base = regress_model();
    let reports = run_generalization(
        &hybrid.params,
        Some(&base.params),
        benchmark(),
        &SuiteConfig::default(),
        Exec::Parallel,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64() + hybrid.secs;
    let get = |name: &str| reports.iter().find(|r| r.condition == name).unwrap();
    for r in &reports {
        println!(
            "    {:<26} cams {} AP@100 {:.3} MPJPE {:.1} mm TP {} FP {}",
            r.condition,
            r.cameras,
            r.ap_analog,
            mm(r.mpjpe_mm),
            r.tp,
            r.fp
        );
    }
    let (ind, plus, fresh) = (get("in_domain"), get("plus_2"), get("fresh_7"));
    let (b_ind, b_fresh) = (get("baseline/in_domain"), get("baseline/fresh_7"));
    let more_cams = mm(plus.mpjpe_mm) <= 1.05 * mm(ind.mpjpe_mm);
    let hybrid_holds = fresh.ap_analog >= 0.5 * ind.ap_analog;
    let baseline_collapses = b_fresh.ap_analog < 0.2 * b_ind.ap_analog;
    verdict(
        5,
        "generalization",
        more_cams && hybrid_holds && baseline_collapses && secs < 3600.0,
        format!(
            "plus_2 MPJPE {:.1} vs in-domain {:.1} mm (<= x1.05); fresh_7 AP@100 {:.3} vs in-domain {:.3} \
             (>= x0.5); baseline fresh_7 {:.3} vs its in-domain {:.3} (< x0.2); {:.1} min (< 60)",
            mm(plus.mpjpe_mm),
            mm(ind.mpjpe_mm),
            fresh.ap_analog,
            ind.ap_analog,
            b_fresh.ap_analog,
            b_ind.ap_analog,
            secs / 60.0
        ),
    )
}

fn c6_nms_necessity() -> bool {
    let model = &grid_model(4).params;
    let start = Instant::now();
    let on = in_domain(4);
    let mut opts = default_opts();
    opts.decode.nms_radius_mm = None;
    let off = eval_test(model, &opts, "nms_off");
    let secs = start.elapsed().as_secs_f64();
    let (m_on, m_off) = (mm(on.mpjpe_mm), mm(off.mpjpe_mm));
    let change = (m_off - m_on).abs() / m_on;
    verdict(
        6,
        "nms necessity",
        off.fp >= 3 * on.fp && change < 0.1 && secs < 300.0,
        format!(
            "FP off {} vs on {} (>= x3); MPJPE off {m_off:.1} vs on {m_on:.1} mm, change {:.1}% (< 10); \
             AP@100 off {:.3} vs on {:.3}; {secs:.0} s (< 300)",
            off.fp,
            on.fp,
            change * 100.0,
            off.ap_analog,
            on.ap_analog
        ),
    )
}

fn c7_filtering_correctness() -> bool {
    let model = &grid_model(4).params;
    let d = benchmark();
    let audit = filtering_audit(
        model,
        &d.test,
        &d.config.occlusion,
        &d.config.render,
        &default_opts(),
    )
    .unwrap();
    verdict(
        7,
        "filtering correctness",
        audit.removed_fraction() <= 0.02,
        format!(
            "eps=0.1 removes {} of {} eps=0 true positives at 100 mm ({:.2}%, <= 2%)",
            audit.removed,
            audit.reference_tp,
            audit.removed_fraction() * 100.0
        ),
    )
}

fn c8_determinism() -> bool {
    let data = Dataset::generate(&DatasetConfig {
        seed: 8,
        splits: SplitSizes {
            train: 12,
            val: 4,
            test: 6,
        },
        write_maps: false,
        ..DatasetConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            num_queries: 64,
            layers: 2,
            ..ModelConfig::desk()
        },
        epochs: 2,
        val_scenes: 4,
        seed: 8,
        ..TrainConfig::default()
    };
    let run = |exec: Exec| {
        let out = train(
            &TrainConfig {
                exec,
                ..cfg.clone()
            },
            &data,
        )
        .unwrap();
        let opts = EvalOptions {
            seed: 8,
            ..EvalOptions::with_eps(0.1, exec)
        };
        let report = evaluate(
            &out.params,
            &data.test,
            &data.config.occlusion,
            &data.config.render,
            &opts,
            "test",
        )
        .unwrap();
        (metrics_csv(&out.metrics), reports_csv(&[report]))
    };
    let a = run(Exec::Parallel);
    let b = run(Exec::Parallel);
    let c = run(Exec::Sequential);
    verdict(
        8,
        "determinism",
        a == b && a == c,
        format!(
            "repeated train CSV identical: {}, eval CSV identical: {}, sequential matches parallel: {}",
            a.0 == b.0,
            a.1 == b.1,
            a == c
        ),
    )
}

fn c9_denoise_refiner() -> bool {
    let grid = &grid_model(4).params;
    let den = denoise_model();
    let start = Instant::now();
    let opts = EvalOptions {
        init: InitMode::GtNoise {
            sigma_mm: DENOISE_SIGMA_MM,
        },
        ..default_opts()
    };
    let g = eval_test(grid, &opts, "grid_trained");
    let n = eval_test(&den.params, &opts, "noise_trained");
    let secs = start.elapsed().as_secs_f64() + den.secs;
    verdict(
        9,
        "denoise refiner",
        mm(n.mpjpe_mm) <= mm(g.mpjpe_mm) && secs < 1800.0,
        format!(
            "from GT+N(0,{DENOISE_SIGMA_MM}) init: noise-trained MPJPE {:.1} vs grid-trained {:.1} mm (<=); \
             AP@100 {:.3} vs {:.3}; {:.1} min (< 30)",
            mm(n.mpjpe_mm),
            mm(g.mpjpe_mm),
            n.ap_analog,
            g.ap_analog,
            secs / 60.0
        ),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, fn() -> bool); 9] = [
        ("c1_triangulation_exactness", c1_triangulation_exactness),
        ("c2_gradient_suite", c2_gradient_suite),
        ("c3_oracle_equivalence", c3_oracle_equivalence),
        ("c4_layer_refinement_trend", c4_layer_refinement_trend),
        ("c5_generalization", c5_generalization),
        ("c6_nms_necessity", c6_nms_necessity),
        ("c7_filtering_correctness", c7_filtering_correctness),
        ("c8_determinism", c8_determinism),
        ("c9_denoise_refiner", c9_denoise_refiner),
    ];
    let (mut run, mut passed) = (0, 0);
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.starts_with(p.as_str())) {
            continue;
        }
        run += 1;
        match std::panic::catch_unwind(f) {
            Ok(true) => passed += 1,
            Ok(false) => {}
            Err(_) => println!("[FAIL] {name}: panicked"),
        }
    }
    println!("acceptance: {passed} of {run} criteria passed");
    if passed < run {
        std::process::exit(1);
    }
}
