use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mvpose::camgeom::load_calibration;
use mvpose::decoder::snapshot_records;
use mvpose::eval::{
    decode_scene, default_grid, evaluate, per_layer_csv, reports_csv, run_ablation,
    run_generalization_suite, EvalOptions, SuiteConfig,
};
use mvpose::gradsuite::run_gradient_suite;
use mvpose::scenesim::{generate_dataset, load_dataset, Dataset, DatasetConfig};
use mvpose::trainer::{load_model, metrics_csv, save_model, train, TrainConfig};
use mvpose::triangulation::{triangulate, ViewObservation};

#[derive(Parser)]
#[command(
    name = "mvpose",
    version,
    about = "Multi-view multi-person 3D pose refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration with optional [data], [train] and [suite] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the dataset seed (simulate) or the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write per-layer query and view dumps.
    #[arg(long)]
    snapshots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk.
    Simulate(Common),
    /// Train a model and write its checkpoint and metrics log.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint across camera counts, rigs and occlusion.
    Generalize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional geometry-ablated baseline checkpoint.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Train and evaluate over one ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// queries, layers, knn, fusion, nms, sharing, layer_weights, denoise or camera_count
        #[arg(long)]
        name: String,
        /// Comma-separated grid values; defaults to the built-in grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
    /// Finite-difference check of every gradient; exits nonzero on failure.
    Gradcheck(Common),
    /// Triangulate batches of 2D observations with a calibration file.
    Triangulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        calibration: PathBuf,
        /// JSON array of points, each an array of {point2d, confidence, camera_index}.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    /// Existing dataset directory; when absent the [data] table is
    /// generated in memory.
    data_dir: Option<PathBuf>,
    data: DatasetConfig,
    train: TrainConfig,
    suite: SuiteConfig,
    /// Spread of the coarse initial estimate used by the denoise ablation.
    eval_init_sigma_mm: Option<f64>,
}

fn read_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(RunConfig::default()),
    }
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    Ok(match &cfg.data_dir {
        Some(d) => load_dataset(d)?,
        None => Dataset::generate(&cfg.data)?,
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write(dir, name, &serde_json::to_string_pretty(value)?)
}

fn prepare(common: &Common) -> Result<RunConfig> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let mut cfg = read_config(common)?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn simulate(common: &Common) -> Result<()> {
    let mut cfg = prepare(common)?;
    if let Some(s) = common.seed {
        cfg.data.seed = s;
    }
    let m = generate_dataset(&cfg.data, &common.out)?;
    println!(
        "wrote {} train / {} val / {} test scenes to {}",
        m.train.len(),
        m.val.len(),
        m.test.len(),
        common.out.display()
    );
    Ok(())
}

fn run_train(common: &Common) -> Result<()> {
    let cfg = prepare(common)?;
    let data = dataset(&cfg)?;
    let start = Instant::now();
    let out = train(&cfg.train, &data)?;
    save_model(&out.params, common.out.join("model.json"))?;
    write(&common.out, "metrics.csv", &metrics_csv(&out.metrics))?;
    let last = out
        .metrics
        .iter()
        .rev()
        .find(|r| r.val_mpjpe.is_some() || r.val_ap25_analog.is_some());
    write_json(
        &common.out,
        "summary.json",
        &serde_json::json!({
            "steps": out.metrics.len(),
            "final": out.metrics.last(),
            "last_validation": last,
            "runtime_s": start.elapsed().as_secs_f64(),
            "config": cfg.train,
        }),
    )?;
    if let Some(r) = out.metrics.last() {
        println!(
            "trained {} steps, final loss {:.3}",
            out.metrics.len(),
            r.loss_total
        );
    }
    Ok(())
}

fn run_eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = prepare(common)?;
    let data = dataset(&cfg)?;
    let params = load_model(checkpoint)?;
    let opts = EvalOptions {
        seed: cfg.train.seed,
        init: cfg.train.init,
        ..EvalOptions::with_eps(cfg.train.eps, cfg.train.exec)
    };
    let rep = evaluate(
        &params,
        &data.test,
        &data.config.occlusion,
        &data.config.render,
        &opts,
        "test",
    )?;
    write(
        &common.out,
        "eval.csv",
        &reports_csv(std::slice::from_ref(&rep)),
    )?;
    write(
        &common.out,
        "per_layer.csv",
        &per_layer_csv(std::slice::from_ref(&rep)),
    )?;
    write_json(&common.out, "report.json", &rep)?;
    if common.snapshots {
        let dir = common.out.join("snapshots");
        std::fs::create_dir_all(&dir)?;
        let mut o = opts;
        o.decode.view_snapshots = true;
        for s in &data.test {
            let d = decode_scene(&params, s, &data.config.occlusion, &data.config.render, &o)?;
            write_json(
                &dir,
                &format!("{}.json", s.name),
                &snapshot_records(&d.snapshots),
            )?;
        }
    }
    println!(
        "AP@{:.0}mm {:.3}  recall {:.3}  MPJPE {}",
        opts.ap_analog_tau_mm,
        rep.ap_analog,
        rep.recall,
        rep.mpjpe_mm.map_or("n/a".into(), |m| format!("{m:.1} mm"))
    );
    Ok(())
}

fn run_generalize(common: &Common, checkpoint: &Path, baseline: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    let data = dataset(&cfg)?;
    let reps = run_generalization_suite(checkpoint, baseline, &data, &cfg.suite, cfg.train.exec)?;
    write(&common.out, "generalization.csv", &reports_csv(&reps))?;
    write(&common.out, "per_layer.csv", &per_layer_csv(&reps))?;
    write_json(&common.out, "reports.json", &reps)?;
    for r in &reps {
        println!(
            "{:<28} AP-analog {:.3}  MPJPE {}",
            r.condition,
            r.ap_analog,
            r.mpjpe_mm.map_or("n/a".into(), |m| format!("{m:.1}"))
        );
    }
    Ok(())
}

fn run_ablate(common: &Common, name: &str, values: Option<&[String]>) -> Result<()> {
    let cfg = prepare(common)?;
    let data = dataset(&cfg)?;
    let grid = match values {
        Some(v) => v.to_vec(),
        None => default_grid(name)?,
    };
    let table = run_ablation(
        name,
        &grid,
        &cfg.train,
        &data,
        cfg.eval_init_sigma_mm.unwrap_or(20.0),
    )?;
    write(
        &common.out,
        &format!("ablation_{name}.csv"),
        &table.to_csv(),
    )?;
    write_json(&common.out, &format!("ablation_{name}.json"), &table)?;
    for r in &table.rows {
        println!(
            "{name}={:<12} AP-analog {:.3}  FP {}  MPJPE {}",
            r.value,
            r.report.ap_analog,
            r.report.fp,
            r.report
                .mpjpe_mm
                .map_or("n/a".into(), |m| format!("{m:.1}"))
        );
    }
    Ok(())
}

fn run_gradcheck(common: &Common) -> Result<bool> {
    std::fs::create_dir_all(&common.out)?;
    let results = run_gradient_suite(common.seed.unwrap_or(0))?;
    for r in &results {
        println!(
            "{} {:<24} max rel err {:.3e} over {} coords",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.coords
        );
    }
    write_json(&common.out, "gradcheck.json", &results)?;
    Ok(results.iter().all(|r| r.passed))
}

fn run_triangulate(common: &Common, calibration: &Path, input: &Path) -> Result<()> {
    std::fs::create_dir_all(&common.out)?;
    let cams = load_calibration(calibration)?;
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let points: Vec<Vec<ViewObservation>> = serde_json::from_str(&text)?;
    let mut csv = String::from("index,x,y,z,residual,effective_views,error\n");
    for (i, obs) in points.iter().enumerate() {
        match triangulate(obs, &cams) {
            Ok(r) => csv.push_str(&format!(
                "{i},{:?},{:?},{:?},{:?},{},\n",
                r.point3d.x, r.point3d.y, r.point3d.z, r.residual, r.effective_views
            )),
            Err(e) => csv.push_str(&format!("{i},,,,,,\"{e}\"\n")),
        }
    }
    write(&common.out, "points.csv", &csv)?;
    println!("triangulated {} points", points.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Train(c) => run_train(c),
        Command::Eval { common, checkpoint } => run_eval(common, checkpoint),
        Command::Generalize {
            common,
            checkpoint,
            baseline,
        } => run_generalize(common, checkpoint, baseline.as_deref()),
        Command::Ablate {
            common,
            name,
            values,
        } => run_ablate(common, name, values.as_deref()),
        Command::Gradcheck(c) => match run_gradcheck(c) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("gradient check failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
        Command::Triangulate {
            common,
            calibration,
            input,
        } => run_triangulate(common, calibration, input),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
