use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalOptions, EvalReport};
use crate::camgeom::{make_arrangement, ArrangementSpec};
use crate::decoder::{DecodeOptions, DecoderParams};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::scenesim::{Dataset, OcclusionConfig, Scene};
use crate::trainer::load_model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Test scenes evaluated per condition.
    pub test_scenes: usize,
    /// Cameras dropped from the end of the training rig.
    pub remove_cameras: usize,
    /// Cameras added to the training rig, drawn from the same sector.
    pub add_cameras: usize,
    pub fresh_rig: ArrangementSpec,
    pub hard_occlusion: OcclusionConfig,
    pub eps: f64,
    pub nms_radius_mm: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            test_scenes: 50,
            remove_cameras: 2,
            add_cameras: 2,
            fresh_rig: ArrangementSpec {
                name: "fresh7".into(),
                camera_count: 7,
                radius_mm: 6500.0,
                height_range_mm: (1200.0, 2800.0),
                azimuth_coverage_deg: (20.0, 340.0),
                seed: 7007,
                ..ArrangementSpec::default()
            },
            hard_occlusion: OcclusionConfig {
                dropout_prob: 0.15,
                random_boxes_per_view: 2,
                ..OcclusionConfig::default()
            },
            eps: 0.1,
            nms_radius_mm: Some(500.0),
        }
    }
}

/// A named evaluation setting: the test scenes re-seen by some rig, and the
/// occlusion applied when rendering them.
#[derive(Debug, Clone)]
pub struct Condition {
    pub name: String,
    pub scenes: Vec<Scene>,
    pub occlusion: OcclusionConfig,
}

/// In-domain, fewer cameras, more cameras, a fresh rig and harder occlusion.
pub fn generalization_conditions(data: &Dataset, suite: &SuiteConfig) -> Result<Vec<Condition>> {
    let test = &data.test[..suite.test_scenes.min(data.test.len())];
    let rig = &data.rig;
    if suite.remove_cameras + 2 > rig.len() {
        return Err(Error::Config(format!(
            "cannot remove {} of {} cameras and keep two",
            suite.remove_cameras,
            rig.len()
        )));
    }
    let occ = data.config.occlusion.clone();
    let reseen =
        |r: &[crate::camgeom::CameraModel]| test.iter().map(|s| s.with_rig(r.to_vec())).collect();
    let mut out = vec![Condition {
        name: "in_domain".into(),
        scenes: test.to_vec(),
        occlusion: occ.clone(),
    }];
    if suite.remove_cameras > 0 {
        out.push(Condition {
            name: format!("minus_{}", suite.remove_cameras),
            scenes: reseen(&rig[..rig.len() - suite.remove_cameras]),
            occlusion: occ.clone(),
        });
    }
    if suite.add_cameras > 0 {
        let extra = make_arrangement(&ArrangementSpec {
            name: format!("{}_extra", data.config.rig.name),
            camera_count: suite.add_cameras,
            seed: data.config.rig.seed.wrapping_add(1),
            ..data.config.rig.clone()
        })?;
        let mut grown = rig.clone();
        grown.extend(extra);
        out.push(Condition {
            name: format!("plus_{}", suite.add_cameras),
            scenes: reseen(&grown),
            occlusion: occ.clone(),
        });
    }
    out.push(Condition {
        name: format!("fresh_{}", suite.fresh_rig.camera_count),
        scenes: reseen(&make_arrangement(&suite.fresh_rig)?),
        occlusion: occ,
    });
    out.push(Condition {
        name: "hard_occlusion".into(),
        scenes: test.to_vec(),
        occlusion: suite.hard_occlusion.clone(),
    });
    Ok(out)
}

/// Evaluates `params` (and optionally a baseline, whose conditions are
/// prefixed `baseline/`) on every condition.
pub fn run_generalization(
    params: &DecoderParams,
    baseline: Option<&DecoderParams>,
    data: &Dataset,
    suite: &SuiteConfig,
    exec: Exec,
) -> Result<Vec<EvalReport>> {
    let opts = EvalOptions {
        decode: DecodeOptions {
            eps: suite.eps,
            nms_radius_mm: suite.nms_radius_mm,
            view_snapshots: false,
            exec,
        },
        ..EvalOptions::default()
    };
    let conditions = generalization_conditions(data, suite)?;
    let mut out = Vec::new();
    for (prefix, model) in [("", Some(params)), ("baseline/", baseline)] {
        let Some(model) = model else { continue };
        for c in &conditions {
            out.push(evaluate(
                model,
                &c.scenes,
                &c.occlusion,
                &data.config.render,
                &opts,
                &format!("{prefix}{}", c.name),
            )?);
        }
    }
    Ok(out)
}

/// [`run_generalization`] with models read from checkpoint files.
pub fn run_generalization_suite(
    checkpoint: &Path,
    baseline: Option<&Path>,
    data: &Dataset,
    suite: &SuiteConfig,
    exec: Exec,
) -> Result<Vec<EvalReport>> {
    let params = load_model(checkpoint)?;
    let base = baseline.map(load_model).transpose()?;
    run_generalization(&params, base.as_ref(), data, suite, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenesim::{DatasetConfig, SplitSizes};

    fn data() -> Dataset {
        Dataset::generate(&DatasetConfig {
            splits: SplitSizes {
                train: 1,
                val: 1,
                test: 3,
            },
            rig: ArrangementSpec {
                camera_count: 5,
                ..ArrangementSpec::default()
            },
            write_maps: false,
            ..DatasetConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn conditions_have_expected_rigs() {
        let d = data();
        let c = generalization_conditions(&d, &SuiteConfig::default()).unwrap();
        let names: Vec<&str> = c.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "in_domain",
                "minus_2",
                "plus_2",
                "fresh_7",
                "hard_occlusion"
            ]
        );
        let cams: Vec<usize> = c.iter().map(|c| c.scenes[0].rig.len()).collect();
        assert_eq!(cams, [5, 3, 7, 7, 5]);
        assert_eq!(c[2].scenes[0].rig[..5], d.rig[..]);
        for cond in &c {
            assert_eq!(cond.scenes.len(), 3);
            assert_eq!(cond.scenes[1].persons, d.test[1].persons);
        }
    }

    #[test]
    fn removing_too_many_cameras_is_rejected() {
        let d = data();
        let s = SuiteConfig {
            remove_cameras: 4,
            ..SuiteConfig::default()
        };
        assert!(generalization_conditions(&d, &s).is_err());
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let d = data();
        let dir = tempfile::tempdir().unwrap();
        let r = run_generalization_suite(
            &dir.path().join("absent.json"),
            None,
            &d,
            &SuiteConfig::default(),
            Exec::Sequential,
        );
        assert!(matches!(r, Err(Error::MissingCheckpoint(_))));
    }
}
