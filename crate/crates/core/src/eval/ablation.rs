use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalOptions, EvalReport, REPORT_HEADER};
use crate::camgeom::{make_arrangement, ArrangementSpec};
use crate::decoder::{DecoderParams, FusionMode};
use crate::error::{Error, Result};
use crate::scenesim::Dataset;
use crate::trainer::{train, InitMode, TrainConfig};

pub const ABLATIONS: [&str; 9] = [
    "queries",
    "layers",
    "knn",
    "fusion",
    "nms",
    "sharing",
    "layer_weights",
    "denoise",
    "camera_count",
];

/// Grid values used when none are given.
pub fn default_grid(name: &str) -> Result<Vec<String>> {
    let v: &[&str] = match name {
        "queries" => &["64", "144", "256"],
        "layers" => &["1", "2", "3", "4"],
        "knn" => &["1", "2", "3", "4", "5", "6"],
        "fusion" => &["mlp", "mean"],
        "nms" => &["on", "off"],
        "sharing" => &["separate", "shared"],
        "layer_weights" => &["uniform", "exp_decay", "linear_decay", "final_only"],
        "denoise" => &["grid", "5", "10", "20", "40"],
        "camera_count" => &["2", "3", "4", "5", "6", "7"],
        _ => return Err(unknown(name)),
    };
    Ok(v.iter().map(|s| s.to_string()).collect())
}

fn unknown(name: &str) -> Error {
    Error::Config(format!(
        "unknown ablation `{name}` (expected one of {})",
        ABLATIONS.join(", ")
    ))
}

fn bad_value(name: &str, v: &str) -> Error {
    Error::Config(format!("invalid value `{v}` for ablation `{name}`"))
}

fn parse_usize(name: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad_value(name, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub name: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("ablation,value,{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", self.name, r.value, r.report.csv_row());
        }
        s
    }
}

/// Overrides `base` for one grid point of a training-side ablation.
fn configure(name: &str, v: &str, base: &TrainConfig) -> Result<TrainConfig> {
    let mut c = base.clone();
    match name {
        "queries" => c.model.num_queries = parse_usize(name, v)?,
        "layers" => c.model.layers = parse_usize(name, v)?,
        "knn" => c.knn = parse_usize(name, v)?,
        "fusion" => {
            c.model.fusion = match v {
                "mlp" => FusionMode::Mlp,
                "mean" => FusionMode::Mean,
                _ => return Err(bad_value(name, v)),
            }
        }
        "sharing" => {
            c.model.shared_layers = match v {
                "shared" => true,
                "separate" => false,
                _ => return Err(bad_value(name, v)),
            }
        }
        "layer_weights" => {
            c.layer_weights = serde_json::from_value(serde_json::Value::String(v.into()))
                .map_err(|_| bad_value(name, v))?
        }
        "denoise" => {
            c.init = if v == "grid" {
                InitMode::Grid
            } else {
                InitMode::GtNoise {
                    sigma_mm: v.parse().map_err(|_| bad_value(name, v))?,
                }
            }
        }
        _ => return Err(unknown(name)),
    }
    c.validate()?;
    Ok(c)
}

/// Trains and evaluates one model per grid value on `data.test`, all with
/// the seeds of `base`. `nms` and `camera_count` train a single model and
/// vary only the evaluation. `denoise` rows are all evaluated from the same
/// coarse estimate, `eval_init_sigma_mm` around the ground truth.
pub fn run_ablation(
    name: &str,
    values: &[String],
    base: &TrainConfig,
    data: &Dataset,
    eval_init_sigma_mm: f64,
) -> Result<AblationTable> {
    if !ABLATIONS.contains(&name) {
        return Err(unknown(name));
    }
    let opts = EvalOptions {
        seed: base.seed,
        ..EvalOptions::with_eps(base.eps, base.exec)
    };
    let occ = &data.config.occlusion;
    let render = &data.config.render;
    let eval = |p: &DecoderParams, o: &EvalOptions, scenes: &[crate::scenesim::Scene], v: &str| {
        evaluate(p, scenes, occ, render, o, &format!("{name}={v}"))
    };
    let mut rows = Vec::new();
    match name {
        "nms" | "camera_count" => {
            let model = train(base, data)?.params;
            for v in values {
                let report = if name == "nms" {
                    let radius = match v.as_str() {
                        "on" => opts.decode.nms_radius_mm.or(Some(500.0)),
                        "off" => None,
                        _ => return Err(bad_value(name, v)),
                    };
                    let mut o = opts;
                    o.decode.nms_radius_mm = radius;
                    eval(&model, &o, &data.test, v)?
                } else {
                    let rig = make_arrangement(&ArrangementSpec {
                        camera_count: parse_usize(name, v)?,
                        ..data.config.rig.clone()
                    })?;
                    let scenes: Vec<_> =
                        data.test.iter().map(|s| s.with_rig(rig.clone())).collect();
                    eval(&model, &opts, &scenes, v)?
                };
                rows.push(AblationRow {
                    value: v.clone(),
                    report,
                });
            }
        }
        _ => {
            for v in values {
                let cfg = configure(name, v, base)?;
                let model = train(&cfg, data)?.params;
                let mut o = opts;
                if name == "denoise" {
                    o.init = InitMode::GtNoise {
                        sigma_mm: eval_init_sigma_mm,
                    };
                }
                rows.push(AblationRow {
                    value: v.clone(),
                    report: eval(&model, &o, &data.test, v)?,
                });
            }
        }
    }
    Ok(AblationTable {
        name: name.into(),
        rows,
    })
}
