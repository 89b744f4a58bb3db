use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use reflector::experiments::{
    emit_plots, measure, run_experiment_1, run_experiment_2, run_experiment_3, ExperimentConfig, ExperimentOutput,
};
use reflector::geometry::{plane_azimuth, Plane};
use reflector::lidar::{cast_cloud, PointCloud};
use reflector::pipeline::{hitrate, Estimator, Method};
use reflector::plane_detect::detect_planes;
use reflector::Result;

#[derive(Parser)]
#[command(
    name = "reflector",
    version,
    about = "Reflector estimation from a circular microphone array and a LiDAR"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (or file for detect-planes).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Floor-height sweep.
    Exp1(Common),
    /// Rotating wall, SNR sweep.
    Exp2(Common),
    /// Rotating wall with a LiDAR-transparent window.
    Exp3(Common),
    /// Simulate the `[scene]` of the config and estimate it with both methods.
    Estimate(Common),
    /// Detect planes in an `x y z` point cloud file.
    DetectPlanes {
        cloud: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the effective config as TOML.
    PrintConfig(Common),
}

fn finish(cfg: &ExperimentConfig, out: ExperimentOutput) -> Result<()> {
    let files = emit_plots(&out.table, &cfg.output.dir)?;
    if cfg.output.runlog {
        let path = cfg.output.dir.join(format!("{}_runlog.jsonl", out.table.kind()));
        out.write_runlog(&path)?;
        println!("{}", path.display());
    }
    for f in files {
        println!("{}", f.display());
    }
    for c in out.table.hit_summary() {
        println!(
            "{} {} angle={} snr={} hitrate={:.3}",
            c.method,
            c.surface.name(),
            c.angle_deg,
            c.snr_db,
            c.hitrate
        );
    }
    Ok(())
}

fn estimate(cfg: &ExperimentConfig) -> Result<()> {
    let scene = &cfg.scene;
    let planes: Vec<Plane> = scene.planes.iter().map(|p| p.to_plane()).collect::<Result<_>>()?;
    let pose = cfg.system_pose()?;
    let params = cfg.acoustic_params();
    let n = cfg.acoustics.n_samples;
    let est = Estimator::new(
        &cfg.grid()?,
        &pose,
        &scene.directivity,
        &params,
        n,
        cfg.estimator.clone(),
    )?;
    let h = measure(&planes, &pose, &scene.directivity, &params, n, scene.snr_db, scene.seed)?;
    let cloud = cast_cloud(&planes, &scene.lidar)?;
    let vertical: Vec<Plane> = planes.iter().filter(|p| plane_azimuth(p).is_ok()).cloned().collect();
    let mut report = Vec::new();
    for method in [Method::Baseline, Method::Proposed] {
        let r = est.estimate(&h, Some(&cloud), method)?;
        let hits = hitrate(&r, &vertical, est.grid(), &cfg.hit)?;
        let dets: Vec<_> = r
            .detections
            .iter()
            .map(|d| {
                json!({
                    "radius": d.peak.radius,
                    "rho": d.plane.distance(),
                    "azimuth_deg": d.peak.azimuth.to_degrees(),
                    "normal": [d.plane.normal().x, d.plane.normal().y, d.plane.normal().z],
                    "magnitude": d.peak.magnitude,
                })
            })
            .collect();
        let mut diag = serde_json::to_value(&r.diagnostics).expect("diagnostics serialize");
        if let Some(o) = diag.as_object_mut() {
            o.remove("objective_trace");
        }
        report.push(json!({
            "method": method.name(),
            "detections": dets,
            "hits": hits,
            "priors_used": r.priors_used,
            "horizontal_planes_used": r.horizontal_planes_used.len(),
            "diagnostics": diag,
        }));
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| reflector::Error::Io {
        path: cfg.output.dir.clone(),
        source: e,
    })?;
    let path = cfg.output.dir.join("estimate.json");
    std::fs::write(&path, &text).map_err(|e| reflector::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!("{text}");
    Ok(())
}

fn detect(cloud: &std::path::Path, common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let pc = PointCloud::read_xyz(cloud)?;
    let planes = detect_planes(&pc, &cfg.estimator.detector)?;
    let rows: Vec<_> = planes
        .iter()
        .map(|p| {
            let n = p.plane.normal();
            json!({
                "normal": [n.x, n.y, n.z],
                "distance": p.plane.distance(),
                "inliers": p.inlier_count,
                "rms_residual": p.rms_residual,
            })
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).expect("planes serialize");
    match &common.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| reflector::Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Exp1(c) => {
            let cfg = c.load()?;
            finish(&cfg, run_experiment_1(&cfg)?)
        }
        Command::Exp2(c) => {
            let cfg = c.load()?;
            finish(&cfg, run_experiment_2(&cfg)?)
        }
        Command::Exp3(c) => {
            let cfg = c.load()?;
            finish(&cfg, run_experiment_3(&cfg)?)
        }
        Command::Estimate(c) => estimate(&c.load()?),
        Command::DetectPlanes { cloud, common } => detect(&cloud, &common),
        Command::PrintConfig(c) => {
            print!("{}", c.load()?.to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
