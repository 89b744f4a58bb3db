//! Experiment configuration. Every field has a default, so an empty file is
//! a valid config; see `docs/config.md` for the full schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{AcousticParams, Directivity};
use crate::error::{Error, Result};
use crate::geometry::{Plane, SystemPose};
use crate::kernel::FractionalDelayKernel;
use crate::lidar::LidarConfig;
use crate::pipeline::{EstimatorConfig, HitSpec};
use crate::solver::PolarGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    pub array_radius: f64,
    pub mic_count: usize,
}

impl Default for PoseConfig {
    fn default() -> Self {
        PoseConfig {
            array_radius: 0.05,
            mic_count: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticsConfig {
    pub sample_rate: f64,
    pub n_samples: usize,
    pub speed_of_sound: f64,
    pub kernel_half_width: usize,
    /// Radial grid points `T`.
    pub radial_count: usize,
}

impl Default for AcousticsConfig {
    fn default() -> Self {
        AcousticsConfig {
            sample_rate: 16_000.0,
            n_samples: 256,
            speed_of_sound: 343.0,
            kernel_half_width: 16,
            radial_count: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneKind {
    Wall,
    Window,
    Floor,
    Ceiling,
}

/// Human-friendly plane description used in scene files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub kind: PlaneKind,
    /// Normal azimuth in degrees; ignored for floor and ceiling.
    #[serde(default)]
    pub azimuth_deg: f64,
    pub distance: f64,
    #[serde(default = "one")]
    pub reflection_coeff: f64,
    /// Overrides the kind's default LiDAR visibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar_reflective: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acoustic_reflective: Option<bool>,
}

fn one() -> f64 {
    1.0
}

impl PlaneSpec {
    pub fn wall(azimuth_deg: f64, distance: f64) -> Self {
        PlaneSpec {
            kind: PlaneKind::Wall,
            azimuth_deg,
            distance,
            reflection_coeff: 1.0,
            lidar_reflective: None,
            acoustic_reflective: None,
        }
    }

    pub fn to_plane(&self) -> Result<Plane> {
        let az = self.azimuth_deg.to_radians();
        let mut p = match self.kind {
            PlaneKind::Wall => Plane::wall(az, self.distance)?,
            PlaneKind::Window => Plane::window(az, self.distance)?,
            PlaneKind::Floor => Plane::floor(self.distance)?,
            PlaneKind::Ceiling => Plane::ceiling(self.distance)?,
        }
        .with_reflection_coeff(self.reflection_coeff)?;
        if let Some(l) = self.lidar_reflective {
            p = p.with_lidar(l);
        }
        if let Some(a) = self.acoustic_reflective {
            p = p.with_acoustic(a);
        }
        Ok(p)
    }
}

/// Single-scene setup for the `estimate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub planes: Vec<PlaneSpec>,
    pub directivity: Directivity,
    pub lidar: LidarConfig,
    /// `inf` for a noiseless response.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            planes: vec![PlaneSpec::wall(180.0, 0.5)],
            directivity: Directivity::default(),
            lidar: LidarConfig::default(),
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }
}

/// Floor-height sweep with a wall on the loudspeaker axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Config {
    pub wall_distance: f64,
    pub wall_azimuth_deg: f64,
    pub floor_depths: Vec<f64>,
    pub directivity: Directivity,
    pub lidar: LidarConfig,
    /// Relative threshold on the radial profile for the first arrival.
    pub arrival_threshold: f64,
    pub arrival_nms_radius: usize,
    pub arrival_centroid_radius: usize,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Exp1Config {
            wall_distance: 0.5,
            wall_azimuth_deg: 0.0,
            floor_depths: (1..=9).map(|i| i as f64 / 10.0).collect(),
            directivity: Directivity::omni(),
            lidar: LidarConfig {
                fov_hor_deg: 50.0,
                fov_ver_deg: 70.0,
                max_range: 1.12,
                ..LidarConfig::default()
            },
            arrival_threshold: 0.5,
            arrival_nms_radius: 3,
            arrival_centroid_radius: 4,
        }
    }
}

/// Rotating single wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Config {
    pub wall_distance: f64,
    pub angles_deg: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub mc_runs: usize,
    pub directivity: Directivity,
    pub lidar: LidarConfig,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Exp2Config {
            wall_distance: 0.5,
            angles_deg: (0..12).map(|i| i as f64 * 30.0).collect(),
            snr_db: vec![-9.0, -3.0, 3.0, 9.0, 15.0, 21.0],
            mc_runs: 100,
            directivity: Directivity::default(),
            lidar: LidarConfig::default(),
        }
    }
}

/// Rotating wall plus a LiDAR-transparent window at a fixed offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp3Config {
    pub wall_distance: f64,
    pub window_distance: f64,
    pub window_offset_deg: f64,
    pub angles_deg: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub mc_runs: usize,
    pub directivity: Directivity,
    pub lidar: LidarConfig,
}

impl Default for Exp3Config {
    fn default() -> Self {
        Exp3Config {
            wall_distance: 0.4,
            window_distance: 0.6,
            window_offset_deg: 90.0,
            angles_deg: (0..12).map(|i| i as f64 * 30.0).collect(),
            snr_db: vec![-9.0, -3.0, 3.0, 9.0, 15.0, 20.0],
            mc_runs: 100,
            directivity: Directivity::default(),
            lidar: LidarConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write one JSON line of solver diagnostics per solve.
    pub runlog: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            runlog: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub pose: PoseConfig,
    pub acoustics: AcousticsConfig,
    pub estimator: EstimatorConfig,
    pub hit: HitSpec,
    pub scene: SceneConfig,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    pub exp3: Exp3Config,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 2024,
            workers: 0,
            pose: PoseConfig::default(),
            acoustics: AcousticsConfig::default(),
            estimator: EstimatorConfig::default(),
            hit: HitSpec::default(),
            scene: SceneConfig::default(),
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            exp3: Exp3Config::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn system_pose(&self) -> Result<SystemPose> {
        SystemPose::new(self.pose.array_radius, self.pose.mic_count)
    }

    pub fn acoustic_params(&self) -> AcousticParams {
        AcousticParams {
            sample_rate: self.acoustics.sample_rate,
            speed_of_sound: self.acoustics.speed_of_sound,
            kernel: FractionalDelayKernel::new(self.acoustics.kernel_half_width),
        }
    }

    pub fn grid(&self) -> Result<PolarGrid> {
        PolarGrid::new(
            self.acoustics.radial_count,
            self.pose.mic_count,
            self.pose.array_radius,
            self.acoustics.sample_rate,
            self.acoustics.speed_of_sound,
        )
    }

    /// Checks everything a run needs before any work starts.
    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, e: Error| Error::Config(format!("{what}: {e}"));
        self.system_pose().map_err(|e| wrap("pose", e))?;
        self.acoustic_params().validate().map_err(|e| wrap("acoustics", e))?;
        self.grid().map_err(|e| wrap("grid", e))?;
        if self.acoustics.n_samples == 0 {
            return Err(Error::Config("acoustics.n_samples must be positive".into()));
        }
        self.estimator.validate().map_err(|e| wrap("estimator", e))?;
        if self.hit.tol_radial == 0 || self.hit.tol_angular == 0 {
            return Err(Error::Config("hit tolerances must be at least one cell".into()));
        }
        for (name, d, l) in [
            ("scene", &self.scene.directivity, &self.scene.lidar),
            ("exp1", &self.exp1.directivity, &self.exp1.lidar),
            ("exp2", &self.exp2.directivity, &self.exp2.lidar),
            ("exp3", &self.exp3.directivity, &self.exp3.lidar),
        ] {
            d.validate().map_err(|e| wrap(name, e))?;
            l.validate().map_err(|e| wrap(name, e))?;
        }
        for p in &self.scene.planes {
            p.to_plane().map_err(|e| wrap("scene plane", e))?;
        }
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        positive("exp1.wall_distance", self.exp1.wall_distance)?;
        positive("exp2.wall_distance", self.exp2.wall_distance)?;
        positive("exp3.wall_distance", self.exp3.wall_distance)?;
        positive("exp3.window_distance", self.exp3.window_distance)?;
        for &d in &self.exp1.floor_depths {
            positive("exp1.floor_depths entry", d)?;
        }
        if !(self.exp1.arrival_threshold > 0.0 && self.exp1.arrival_threshold <= 1.0) {
            return Err(Error::Config("exp1.arrival_threshold must be in (0, 1]".into()));
        }
        for (name, snrs, angles, runs) in [
            ("exp2", &self.exp2.snr_db, &self.exp2.angles_deg, self.exp2.mc_runs),
            ("exp3", &self.exp3.snr_db, &self.exp3.angles_deg, self.exp3.mc_runs),
        ] {
            if snrs.iter().chain(angles.iter()).any(|v| v.is_nan()) || angles.iter().any(|a| !a.is_finite()) {
                return Err(Error::Config(format!("{name}: sweep values must be numbers")));
            }
            if snrs.contains(&f64::NEG_INFINITY) {
                return Err(Error::Config(format!("{name}: SNR of -inf is not supported")));
            }
            if runs == 0 {
                return Err(Error::Config(format!("{name}.mc_runs must be positive")));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    /// Output paths and worker count are excluded since they do not affect
    /// results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        c.workers = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.exp2.snr_db = vec![f64::INFINITY, 0.5];
        cfg.scene.planes.push(PlaneSpec {
            kind: PlaneKind::Window,
            azimuth_deg: 90.0,
            distance: 0.6,
            reflection_coeff: 0.8,
            lidar_reflective: None,
            acoustic_reflective: Some(true),
        });
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_tracks_result_relevant_fields() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        b.workers = 7;
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("[pose]\nmic_count = 2\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[exp2]\nmc_runs = 0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[estimator]\nlambda_rel = -1.0\n").is_err());
    }

    #[test]
    fn window_defaults_to_lidar_transparent() {
        let spec = PlaneSpec {
            kind: PlaneKind::Window,
            ..PlaneSpec::wall(90.0, 0.6)
        };
        let p = spec.to_plane().unwrap();
        assert!(!p.lidar_reflective && p.acoustic_reflective);
    }
}
