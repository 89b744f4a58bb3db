//! Monte-Carlo experiment harness: the floor-height sweep, the rotating
//! wall, and the wall plus LiDAR-transparent window.
//!
//! Every run draws its noise from a seed derived from the master seed and
//! the run's own sweep values, so results do not depend on sweep order or
//! worker count.

mod config;
mod plots;
mod table;

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    AcousticsConfig, Exp1Config, Exp2Config, Exp3Config, ExperimentConfig, OutputConfig, PlaneKind, PlaneSpec,
    PoseConfig, SceneConfig,
};
pub use plots::emit_plots;
pub use table::{Exp1Row, Exp2Row, Exp3Row, HitCell, ResultsTable, Surface};

use crate::acoustic::{add_noise_referenced, simulate_rir, AcousticParams, Directivity, ImpulseResponseSet, NoiseSpec};
use crate::error::{Error, Result};
use crate::geometry::{image_source_to_plane, Plane, SystemPose};
use crate::lidar::{cast_cloud, cast_labeled, LidarConfig};
use crate::pipeline::{
    first_arrival, hitrate, normal_squared_error, EstimationResult, Estimator, Method, SolverDiagnostics,
    NORMAL_MSE_SENTINEL,
};
use crate::plane_detect::{detect_planes, DetectedPlane};
use crate::solver::PolarGrid;

/// Seed for one Monte-Carlo run, from the master seed and the run's sweep
/// coordinates (by value).
pub fn derive_seed(master: u64, tag: &str, angle_deg: f64, snr_db: f64, run: usize) -> u64 {
    let angle_mdeg = (angle_deg * 1000.0).round() as i64;
    let key = format!("{master}:{tag}:{angle_mdeg}:{:016x}:{run}", snr_db.to_bits());
    let d = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// One line of the JSONL solver log.
#[derive(Debug, Clone, Serialize)]
pub struct RunLogEntry {
    pub experiment: &'static str,
    pub method: &'static str,
    pub sweep: String,
    pub run: usize,
    pub diagnostics: SolverDiagnostics,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: ResultsTable,
    pub runlog: Vec<RunLogEntry>,
}

impl ExperimentOutput {
    /// Writes the run log as JSON lines.
    pub fn write_runlog(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.runlog {
            text.push_str(&serde_json::to_string(e).map_err(|e| Error::invalid(e.to_string()))?);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Shared state of an experiment run: estimator and measurement model.
struct Bench<'a> {
    cfg: &'a ExperimentConfig,
    estimator: Estimator,
    directivity: Directivity,
}

impl<'a> Bench<'a> {
    fn new(cfg: &'a ExperimentConfig, directivity: Directivity) -> Result<Self> {
        cfg.validate()?;
        let estimator = Estimator::new(
            &cfg.grid()?,
            &cfg.system_pose()?,
            &directivity,
            &cfg.acoustic_params(),
            cfg.acoustics.n_samples,
            cfg.estimator.clone(),
        )?;
        Ok(Bench {
            cfg,
            estimator,
            directivity,
        })
    }

    fn grid(&self) -> &PolarGrid {
        self.estimator.grid()
    }

    /// Direct-path-free RIR with noise at `snr_db`. The SNR is measured
    /// against the reflections an omnidirectional source would produce, so
    /// the noise level does not depend on where the walls sit relative to
    /// the loudspeaker axis.
    fn measure(&self, planes: &[Plane], snr_db: f64, seed: u64) -> Result<ImpulseResponseSet> {
        let pose = &self.estimator.dictionary.pose;
        let params = &self.estimator.dictionary.params;
        measure(
            planes,
            pose,
            &self.directivity,
            params,
            self.cfg.acoustics.n_samples,
            snr_db,
            seed,
        )
    }

    fn detect(&self, planes: &[Plane], lidar: &LidarConfig) -> Result<Vec<DetectedPlane>> {
        detect_planes(&cast_cloud(planes, lidar)?, &self.cfg.estimator.detector)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}

/// Simulated direct-path-free measurement with white noise at `snr_db`
/// relative to the omnidirectional reflection energy of the scene.
pub fn measure(
    planes: &[Plane],
    pose: &SystemPose,
    directivity: &Directivity,
    params: &AcousticParams,
    n_samples: usize,
    snr_db: f64,
    seed: u64,
) -> Result<ImpulseResponseSet> {
    let h = simulate_rir(planes, pose, directivity, params, n_samples, false)?;
    if snr_db == f64::INFINITY {
        return Ok(h);
    }
    let reference = simulate_rir(planes, pose, &Directivity::omni(), params, n_samples, false)?;
    add_noise_referenced(&h, &NoiseSpec { snr_db, seed }, reference.energy())
}

const METHODS: [Method; 2] = [Method::Baseline, Method::Proposed];

/// Floor-height sweep: noiseless, wall on the loudspeaker axis, floor at
/// each configured depth.
pub fn run_experiment_1(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let e = &cfg.exp1;
    let bench = Bench::new(cfg, e.directivity)?;
    let hash = cfg.hash();
    let wall = Plane::wall(e.wall_azimuth_deg.to_radians(), e.wall_distance)?;
    let pool = bench.pool()?;
    let cells: Vec<Result<Vec<(Exp1Row, RunLogEntry)>>> = pool.install(|| {
        e.floor_depths
            .par_iter()
            .map(|&d_f| {
                let floor = Plane::floor(d_f)?;
                let scene = [wall.clone(), floor];
                let h = bench.measure(&scene, f64::INFINITY, 0)?;
                let cast = cast_labeled(&scene, &e.lidar)?;
                let planes = detect_planes(&cast.cloud, &cfg.estimator.detector)?;
                let mut out = Vec::new();
                for (method, r) in METHODS.into_iter().zip(bench.estimator.estimate_both(&h, &planes)?) {
                    let fa = first_arrival(
                        &r.map,
                        e.arrival_threshold,
                        e.arrival_nms_radius,
                        e.arrival_centroid_radius,
                    );
                    let (detected_r, az, mse) = match fa {
                        Some(f) => {
                            let p = image_source_to_plane(f.radius, f.azimuth)?;
                            (
                                Some(f.radius),
                                Some(f.azimuth.to_degrees()),
                                normal_squared_error(&p.normal(), &wall.normal()),
                            )
                        }
                        None => (None, None, NORMAL_MSE_SENTINEL),
                    };
                    out.push((
                        Exp1Row {
                            config_hash: hash.clone(),
                            method: method.name().to_string(),
                            floor_depth: d_f,
                            run: 0,
                            detected_r,
                            detected_azimuth_deg: az,
                            normal_mse: mse,
                            mse_missing: fa.is_none(),
                            n_detections: r.detections.len(),
                            floor_points: cast.hits(1),
                            horizontal_used: r.horizontal_planes_used.len(),
                            converged: r.diagnostics.converged,
                            iterations: r.diagnostics.iterations,
                        },
                        log_entry("exp1", method, format!("floor_depth={d_f}"), 0, &r),
                    ));
                }
                Ok(out)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut runlog = Vec::new();
    for c in cells {
        for (row, log) in c? {
            rows.push(row);
            runlog.push(log);
        }
    }
    Ok(ExperimentOutput {
        table: ResultsTable::Exp1(rows),
        runlog,
    })
}

fn log_entry(experiment: &'static str, method: Method, sweep: String, run: usize, r: &EstimationResult) -> RunLogEntry {
    RunLogEntry {
        experiment,
        method: method.name(),
        sweep,
        run,
        diagnostics: r.diagnostics.clone(),
    }
}

/// Cell distance from the closest detection to `truth`, `(radial, angular)`.
fn nearest_error(r: &EstimationResult, truth: &Plane, grid: &PolarGrid) -> Result<Option<(i64, usize)>> {
    let az = crate::geometry::plane_azimuth(truth)?;
    let tq = grid.radial_coord(2.0 * truth.distance()).round() as i64;
    let tm = (az / grid.angular_step()).round() as usize % grid.angular_count;
    Ok(r.detections
        .iter()
        .map(|d| (d.peak.q as i64 - tq, grid.angular_distance(d.peak.m, tm)))
        .min_by_key(|&(dq, dm)| (dq.unsigned_abs() as usize + dm, dq)))
}

/// Sweep of `(angle, snr, run)` cells with planes detected once per angle
/// when the LiDAR is noiseless.
struct Sweep<'a> {
    tag: &'static str,
    angles: &'a [f64],
    snrs: &'a [f64],
    runs: usize,
    lidar: &'a LidarConfig,
}

impl Sweep<'_> {
    fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::with_capacity(self.angles.len() * self.snrs.len() * self.runs);
        for a in 0..self.angles.len() {
            for s in 0..self.snrs.len() {
                for r in 0..self.runs {
                    v.push((a, s, r));
                }
            }
        }
        v
    }

    fn run<T: Send>(
        &self,
        bench: &Bench,
        scene: impl Fn(f64) -> Result<Vec<Plane>> + Sync,
        cell: impl Fn(&[Plane], &[DetectedPlane], f64, f64, usize, u64) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        let master = bench.cfg.master_seed;
        let pool = bench.pool()?;
        pool.install(|| {
            let scenes: Vec<Vec<Plane>> = self.angles.iter().map(|&a| scene(a)).collect::<Result<_>>()?;
            let cached: Option<Vec<Vec<DetectedPlane>>> = if self.lidar.range_noise_sigma == 0.0 {
                Some(
                    scenes
                        .par_iter()
                        .map(|s| bench.detect(s, self.lidar))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            };
            self.cells()
                .par_iter()
                .map(|&(ai, si, run)| {
                    let (angle, snr) = (self.angles[ai], self.snrs[si]);
                    let seed = derive_seed(master, self.tag, angle, snr, run);
                    let planes = match &cached {
                        Some(c) => c[ai].clone(),
                        None => {
                            let lidar = LidarConfig {
                                seed: seed ^ 0x9e37_79b9_7f4a_7c15,
                                ..self.lidar.clone()
                            };
                            bench.detect(&scenes[ai], &lidar)?
                        }
                    };
                    cell(&scenes[ai], &planes, angle, snr, run, seed)
                })
                .collect()
        })
    }
}

/// Rotating single wall: hit per `(angle, SNR, run, method)`.
pub fn run_experiment_2(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let e = &cfg.exp2;
    let bench = Bench::new(cfg, e.directivity)?;
    let hash = cfg.hash();
    let sweep = Sweep {
        tag: "exp2",
        angles: &e.angles_deg,
        snrs: &e.snr_db,
        runs: e.mc_runs,
        lidar: &e.lidar,
    };
    let grid = bench.grid().clone();
    let results = sweep.run(
        &bench,
        |a| Ok(vec![Plane::wall(a.to_radians(), e.wall_distance)?]),
        |scene, planes, angle, snr, run, seed| {
            let h = bench.measure(scene, snr, seed)?;
            let mut out = Vec::new();
            for (method, r) in METHODS.into_iter().zip(bench.estimator.estimate_both(&h, planes)?) {
                let hit = hitrate(&r, &scene[..1], &grid, &cfg.hit)?[0];
                let err = nearest_error(&r, &scene[0], &grid)?;
                out.push((
                    Exp2Row {
                        config_hash: hash.clone(),
                        method: method.name().to_string(),
                        angle_deg: angle,
                        snr_db: snr,
                        run,
                        hit,
                        radial_err_cells: err.map(|e| e.0),
                        angular_err_cells: err.map(|e| e.1),
                        n_detections: r.detections.len(),
                        priors_used: r.priors_used.len(),
                        mu: r.diagnostics.mu,
                        converged: r.diagnostics.converged,
                        iterations: r.diagnostics.iterations,
                    },
                    log_entry("exp2", method, format!("angle_deg={angle},snr_db={snr}"), run, &r),
                ));
            }
            Ok(out)
        },
    )?;
    let (rows, runlog) = results.into_iter().flatten().unzip();
    Ok(ExperimentOutput {
        table: ResultsTable::Exp2(rows),
        runlog,
    })
}

/// Wall plus window at a fixed angular offset; the window is invisible to
/// the LiDAR.
pub fn run_experiment_3(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let e = &cfg.exp3;
    let bench = Bench::new(cfg, e.directivity)?;
    let hash = cfg.hash();
    let sweep = Sweep {
        tag: "exp3",
        angles: &e.angles_deg,
        snrs: &e.snr_db,
        runs: e.mc_runs,
        lidar: &e.lidar,
    };
    let grid = bench.grid().clone();
    let results = sweep.run(
        &bench,
        |a| {
            Ok(vec![
                Plane::wall(a.to_radians(), e.wall_distance)?,
                Plane::window((a + e.window_offset_deg).to_radians(), e.window_distance)?,
            ])
        },
        |scene, planes, angle, snr, run, seed| {
            let h = bench.measure(scene, snr, seed)?;
            let mut out = Vec::new();
            for (method, r) in METHODS.into_iter().zip(bench.estimator.estimate_both(&h, planes)?) {
                let hits = hitrate(&r, scene, &grid, &cfg.hit)?;
                let wall_err = nearest_error(&r, &scene[0], &grid)?;
                let window_err = nearest_error(&r, &scene[1], &grid)?;
                out.push((
                    Exp3Row {
                        config_hash: hash.clone(),
                        method: method.name().to_string(),
                        angle_deg: angle,
                        snr_db: snr,
                        run,
                        wall_hit: hits[0],
                        window_hit: hits[1],
                        wall_radial_err_cells: wall_err.map(|e| e.0),
                        wall_angular_err_cells: wall_err.map(|e| e.1),
                        window_radial_err_cells: window_err.map(|e| e.0),
                        window_angular_err_cells: window_err.map(|e| e.1),
                        n_detections: r.detections.len(),
                        priors_used: r.priors_used.len(),
                        mu: r.diagnostics.mu,
                        converged: r.diagnostics.converged,
                        iterations: r.diagnostics.iterations,
                    },
                    log_entry("exp3", method, format!("angle_deg={angle},snr_db={snr}"), run, &r),
                ));
            }
            Ok(out)
        },
    )?;
    let (rows, runlog) = results.into_iter().flatten().unzip();
    Ok(ExperimentOutput {
        table: ResultsTable::Exp3(rows),
        runlog,
    })
}
