//! Dataset generation and the on-disk layout.
//!
//! ```text
//! <dir>/manifest.json          format tag, generating config, split lists
//! <dir>/calibration.json       the rig (camgeom calibration format)
//! <dir>/scenes/<name>/scene.json   poses (mm), space, render seed
//! <dir>/scenes/<name>/gt2d.json    2D ground truth and visibility
//! <dir>/scenes/<name>/maps.bin     rendered feature maps
//! ```

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_feature_maps, GroundTruth2D, OcclusionConfig, RenderConfig};
use super::skeleton_prior::{sample_persons, PosePrior};
use super::tensor::{read_maps, write_maps};
use super::Scene;
use crate::camgeom::{
    load_calibration, make_arrangement, project, save_calibration, ArrangementSpec, CameraModel,
    CaptureSpace,
};
use crate::decoder::FeatureMapSet;
use crate::error::{Error, Result};
use crate::par::Exec;

pub const DATASET_FORMAT: &str = "mvpose-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub name: String,
    pub seed: u64,
    pub splits: SplitSizes,
    /// Inclusive bounds of the per-scene person count.
    pub persons: (usize, usize),
    pub space: CaptureSpace,
    pub rig: ArrangementSpec,
    pub prior: PosePrior,
    pub occlusion: OcclusionConfig,
    pub render: RenderConfig,
    /// Write `maps.bin` files. Loaders re-render when they are absent.
    pub write_maps: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            seed: 0,
            splits: SplitSizes {
                train: 500,
                val: 20,
                test: 50,
            },
            persons: (1, 5),
            space: CaptureSpace::default(),
            rig: ArrangementSpec::default(),
            prior: PosePrior::default(),
            occlusion: OcclusionConfig::default(),
            render: RenderConfig::default(),
            write_maps: true,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.rig.validate()?;
        self.occlusion.validate()?;
        if self.persons.0 > self.persons.1 {
            return Err(Error::Config("person count bounds are inverted".into()));
        }
        Ok(())
    }
}

/// Scenes of one dataset, grouped by split, plus their shared rig.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub rig: Vec<CameraModel>,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64 + 1);
    r.next_u64()
}

impl Dataset {
    /// Builds every scene in memory. Scene `i` depends only on
    /// `(config.seed, i)`.
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let rig = make_arrangement(&config.rig)?;
        let s = config.splits;
        let total = s.train + s.val + s.test;
        let mut scenes = Exec::Parallel.map_range(total, |i| {
            let seed = scene_seed(config.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(config.persons.0..=config.persons.1);
            Scene {
                name: format!("scene_{i:05}"),
                persons: sample_persons(&mut rng, &config.space, &config.prior, n),
                rig: rig.clone(),
                space: config.space,
                seed,
            }
        });
        let test = scenes.split_off(s.train + s.val);
        let val = scenes.split_off(s.train);
        Ok(Self {
            config: config.clone(),
            rig,
            train: scenes,
            val,
            test,
        })
    }

    pub fn render(&self, scene: &Scene) -> (FeatureMapSet, GroundTruth2D) {
        render_feature_maps(scene, &self.config.occlusion, &self.config.render)
    }

    pub fn manifest(&self) -> Manifest {
        let names = |v: &[Scene]| v.iter().map(|s| s.name.clone()).collect();
        Manifest {
            format: DATASET_FORMAT.into(),
            config: self.config.clone(),
            train: names(&self.train),
            val: names(&self.val),
            test: names(&self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Contents of `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub name: String,
    pub seed: u64,
    pub calibration: String,
    pub space: CaptureSpace,
    pub persons: Vec<Vec<[f64; 3]>>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: Some(e.line()),
        field: Some(path.display().to_string()),
        msg: e.to_string(),
    })
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates the dataset and writes it under `dir`.
pub fn generate_dataset(config: &DatasetConfig, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let data = Dataset::generate(config)?;
    mkdir(&dir.join("scenes"))?;
    save_calibration(&data.rig, dir.join("calibration.json"))?;
    let all: Vec<&Scene> = data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .collect();
    let results = Exec::Parallel.map(&all, |s| -> Result<()> {
        let sd = dir.join("scenes").join(&s.name);
        mkdir(&sd)?;
        write_json(
            &SceneFile {
                name: s.name.clone(),
                seed: s.seed,
                calibration: "calibration.json".into(),
                space: s.space,
                persons: s
                    .persons
                    .iter()
                    .map(|p| p.iter().map(|v| [v.x, v.y, v.z]).collect())
                    .collect(),
            },
            &sd.join("scene.json"),
        )?;
        let (maps, gt) = data.render(s);
        write_json(&gt, &sd.join("gt2d.json"))?;
        if config.write_maps {
            write_maps(&maps, sd.join("maps.bin"))?;
        }
        Ok(())
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    let manifest = data.manifest();
    write_json(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Reads the manifest, rig and scene files under `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Parse {
            line: None,
            field: Some("format".into()),
            msg: format!("expected {DATASET_FORMAT}, found {}", manifest.format),
        });
    }
    let rig = load_calibration(dir.join("calibration.json"))?;
    let load = |names: &[String]| -> Result<Vec<Scene>> {
        names
            .iter()
            .map(|n| {
                let f: SceneFile = read_json(&dir.join("scenes").join(n).join("scene.json"))?;
                Ok(Scene {
                    name: f.name,
                    persons: f
                        .persons
                        .iter()
                        .map(|p| p.iter().map(|v| Vector3::from(*v)).collect())
                        .collect(),
                    rig: rig.clone(),
                    space: f.space,
                    seed: f.seed,
                })
            })
            .collect()
    };
    Ok(Dataset {
        train: load(&manifest.train)?,
        val: load(&manifest.val)?,
        test: load(&manifest.test)?,
        config: manifest.config,
        rig,
    })
}

/// Loads the 2D ground truth and maps of one scene, checking that every
/// visible 2D entry is the exact projection of its 3D joint. Maps are
/// re-rendered when `maps.bin` is absent.
pub fn load_scene_files(
    dir: impl AsRef<Path>,
    data: &Dataset,
    scene: &Scene,
) -> Result<(FeatureMapSet, GroundTruth2D)> {
    let sd = dir.as_ref().join("scenes").join(&scene.name);
    let gt: GroundTruth2D = read_json(&sd.join("gt2d.json"))?;
    if gt.points.len() != scene.persons.len() {
        return Err(Error::Invariant(format!(
            "{}: gt2d person count",
            scene.name
        )));
    }
    for (z, person) in scene.persons.iter().enumerate() {
        for (t, cam) in scene.rig.iter().enumerate() {
            for (j, p) in person.iter().enumerate() {
                if gt.visible[z][t][j] && project(p, cam)? != gt.points[z][t][j] {
                    return Err(Error::Invariant(format!(
                        "{}: gt2d person {z} view {t} joint {j} is not the projection",
                        scene.name
                    )));
                }
            }
        }
    }
    let mp = sd.join("maps.bin");
    let maps = if mp.exists() {
        read_maps(&mp)?
    } else {
        data.render(scene).0
    };
    Ok((maps, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            splits: SplitSizes {
                train: 30,
                val: 5,
                test: 5,
            },
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_disjoint() {
        let a = Dataset::generate(&small()).unwrap();
        let b = Dataset::generate(&small()).unwrap();
        assert_eq!(a.manifest(), b.manifest());
        assert_eq!(a.train, b.train);
        let m = a.manifest();
        for n in &m.train {
            assert!(!m.val.contains(n) && !m.test.contains(n));
        }
        for n in &m.val {
            assert!(!m.test.contains(n));
        }
    }

    #[test]
    fn person_counts_cover_the_configured_range() {
        let cfg = DatasetConfig {
            splits: SplitSizes {
                train: 400,
                val: 0,
                test: 0,
            },
            ..small()
        };
        let d = Dataset::generate(&cfg).unwrap();
        let mut hist = [0usize; 8];
        for s in &d.train {
            hist[s.persons.len()] += 1;
        }
        assert_eq!(hist[0] + hist[6] + hist[7], 0);
        for c in 1..=5 {
            // uniform over 5 values: expect 80 each
            assert!((50..=110).contains(&hist[c]), "{hist:?}");
        }
    }

    #[test]
    fn disk_round_trip() {
        let cfg = DatasetConfig {
            splits: SplitSizes {
                train: 3,
                val: 1,
                test: 1,
            },
            ..small()
        };
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.manifest(), m);
        let mem = Dataset::generate(&cfg).unwrap();
        for (a, b) in d.train.iter().zip(&mem.train) {
            assert_eq!(a.persons, b.persons);
        }
        let (maps, gt) = load_scene_files(dir.path(), &d, &d.test[0]).unwrap();
        assert_eq!((maps, gt), mem.render(&mem.test[0]));
    }
}
