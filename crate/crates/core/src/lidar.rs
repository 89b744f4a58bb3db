//! Ray-cast LiDAR point clouds on a regular angular grid.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Plane, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub fov_hor_deg: f64,
    pub fov_ver_deg: f64,
    pub rays_hor: usize,
    pub rays_ver: usize,
    /// Azimuth of the FOV center in radians.
    pub center_azimuth: f64,
    pub range_noise_sigma: f64,
    pub max_range: f64,
    pub seed: u64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            fov_hor_deg: 70.0,
            fov_ver_deg: 50.0,
            rays_hor: 128,
            rays_ver: 96,
            center_azimuth: std::f64::consts::PI,
            range_noise_sigma: 0.0,
            max_range: 5.0,
            seed: 0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f <= 180.0;
        if !fov_ok(self.fov_hor_deg) || !fov_ok(self.fov_ver_deg) {
            return Err(Error::invalid(format!(
                "LiDAR FOV must lie in (0, 180] degrees, got {} x {}",
                self.fov_hor_deg, self.fov_ver_deg
            )));
        }
        if self.rays_hor < 2 || self.rays_ver < 2 {
            return Err(Error::invalid(format!(
                "LiDAR needs at least 2x2 rays, got {} x {}",
                self.rays_hor, self.rays_ver
            )));
        }
        if !(self.max_range > 0.0) || !(self.range_noise_sigma >= 0.0) {
            return Err(Error::invalid(
                "LiDAR max_range must be positive and noise sigma non-negative",
            ));
        }
        Ok(())
    }

    /// Unit ray directions, row-major over (elevation, azimuth).
    pub fn ray_directions(&self) -> Vec<Vec3> {
        let span = |fov_deg: f64, count: usize, i: usize| {
            let fov = fov_deg.to_radians();
            -fov / 2.0 + fov * i as f64 / (count - 1) as f64
        };
        let mut dirs = Vec::with_capacity(self.rays_hor * self.rays_ver);
        for j in 0..self.rays_ver {
            let el = span(self.fov_ver_deg, self.rays_ver, j);
            for i in 0..self.rays_hor {
                let az = self.center_azimuth + span(self.fov_hor_deg, self.rays_hor, i);
                dirs.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        dirs
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes one `x y z` triple per line with 6 decimals.
    pub fn write_xyz(&self, path: &Path) -> Result<()> {
        let mut body = String::with_capacity(self.points.len() * 32);
        for p in &self.points {
            body.push_str(&format!("{:.6} {:.6} {:.6}\n", p.x, p.y, p.z));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_xyz(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_xyz(&text).map_err(|(line, message)| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    /// Parses XYZ text; blank lines and `#` comments are skipped.
    pub fn parse_xyz(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| (i + 1, e.to_string()))?;
            if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
                return Err((i + 1, format!("expected 3 finite values, got {line:?}")));
            }
            points.push(Vec3::new(vals[0], vals[1], vals[2]));
        }
        Ok(PointCloud { points })
    }
}

/// Range along a unit ray from the origin to `plane`, if it is hit in front
/// of the sensor and inside the plane's bounds.
pub fn ray_plane_range(dir: &Vec3, plane: &Plane) -> Option<f64> {
    let denom = plane.normal().dot(dir);
    if denom <= 1e-12 {
        return None;
    }
    let t = plane.distance() / denom;
    if !(t > 0.0) {
        return None;
    }
    plane.within_bounds(&(dir * t)).then_some(t)
}

/// Point cloud plus the index of the plane each point came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<usize>,
}

impl LabeledCloud {
    /// Number of points returned from plane `i`.
    pub fn hits(&self, i: usize) -> usize {
        self.labels.iter().filter(|&&l| l == i).count()
    }
}

/// Casts every ray against the LiDAR-reflective planes, keeping the nearest
/// hit within `max_range`.
pub fn cast_labeled(planes: &[Plane], cfg: &LidarConfig) -> Result<LabeledCloud> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = LabeledCloud::default();
    for dir in cfg.ray_directions() {
        let nearest = planes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.lidar_reflective)
            .filter_map(|(i, p)| ray_plane_range(&dir, p).map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((idx, t)) = nearest else { continue };
        if t > cfg.max_range {
            continue;
        }
        let range = if cfg.range_noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            t + cfg.range_noise_sigma * z
        } else {
            t
        };
        if !(range > 0.0 && range <= cfg.max_range) {
            continue;
        }
        out.cloud.points.push(dir * range);
        out.labels.push(idx);
    }
    Ok(out)
}

pub fn cast_cloud(planes: &[Plane], cfg: &LidarConfig) -> Result<PointCloud> {
    Ok(cast_labeled(planes, cfg)?.cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wall_behind_speaker() {
        let wall = Plane::wall(PI, 1.0).unwrap();
        let cloud = cast_cloud(std::slice::from_ref(&wall), &LidarConfig::default()).unwrap();
        assert_eq!(cloud.len(), 128 * 96);
        for p in &cloud.points {
            assert!((-p.x - 1.0).abs() < 1e-9);
            assert!(wall.signed_distance(p).abs() < 1e-9);
        }
    }

    #[test]
    fn windows_are_invisible() {
        let window = Plane::window(PI, 1.0).unwrap();
        assert!(cast_cloud(&[window], &LidarConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn wall_in_front_is_out_of_view() {
        let wall = Plane::wall(0.0, 0.5).unwrap();
        assert!(cast_cloud(&[wall], &LidarConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn floor_coverage_depends_on_range() {
        // 50° x 70° FOV: steepest ray dips 35°, reaching z = -0.7 at 0.7/sin 35° = 1.22 m
        let cfg = LidarConfig {
            fov_hor_deg: 50.0,
            fov_ver_deg: 70.0,
            max_range: 1.12,
            ..LidarConfig::default()
        };
        let steepest = 0.7 / 35f64.to_radians().sin();
        assert!((steepest - 1.2204).abs() < 1e-3);
        let low = cast_cloud(&[Plane::floor(0.7).unwrap()], &cfg).unwrap();
        assert!(low.is_empty());
        let cfg_far = LidarConfig {
            max_range: 1.3,
            ..cfg.clone()
        };
        assert!(!cast_cloud(&[Plane::floor(0.7).unwrap()], &cfg_far).unwrap().is_empty());
        let high = cast_cloud(&[Plane::floor(0.3).unwrap()], &cfg).unwrap();
        assert!(high.points.iter().all(|p| (p.z + 0.3).abs() < 1e-9 && p.norm() <= 1.12));
    }

    #[test]
    fn nearest_hit_wins() {
        let near = Plane::wall(PI, 0.8).unwrap();
        let far = Plane::wall(PI, 1.5).unwrap();
        let floor = Plane::floor(0.4).unwrap();
        let planes = [far.clone(), near.clone(), floor.clone()];
        let lc = cast_labeled(&planes, &LidarConfig::default()).unwrap();
        assert_eq!(lc.hits(0), 0);
        for (p, &l) in lc.cloud.points.iter().zip(&lc.labels) {
            let r = p.norm();
            let dir = p / r;
            assert!(planes[l].signed_distance(p).abs() < 1e-9);
            for other in &planes {
                if let Some(t) = ray_plane_range(&dir, other) {
                    assert!(r <= t + 1e-12);
                }
            }
        }
    }

    #[test]
    fn bounded_plane_clips_rays() {
        let wall = Plane::wall(PI, 1.0).unwrap().with_bounds(crate::geometry::PlaneBounds {
            u_min: -0.2,
            u_max: 0.2,
            v_min: -0.1,
            v_max: 0.1,
        });
        let cloud = cast_cloud(&[wall], &LidarConfig::default()).unwrap();
        assert!(!cloud.is_empty() && cloud.len() < 128 * 96);
        for p in &cloud.points {
            assert!(p.y.abs() <= 0.2 + 1e-9 && p.z.abs() <= 0.1 + 1e-9);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let wall = Plane::wall(PI, 1.0).unwrap();
        let cfg = LidarConfig {
            range_noise_sigma: 0.002,
            seed: 9,
            ..LidarConfig::default()
        };
        let a = cast_cloud(std::slice::from_ref(&wall), &cfg).unwrap();
        let b = cast_cloud(std::slice::from_ref(&wall), &cfg).unwrap();
        assert_eq!(a, b);
        let rms = (a.points.iter().map(|p| wall.signed_distance(p).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        assert!(rms > 0.001 && rms < 0.003);
        assert!(a.points.iter().all(|p| p.norm() <= cfg.max_range));
    }

    #[test]
    fn xyz_round_trip() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, -2.5, 0.125), Vec3::new(0.1234567, 0.0, -3.0)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        cloud.write_xyz(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1.000000 -2.500000 0.125000\n0.123457 0.000000 -3.000000\n");
        let back = PointCloud::read_xyz(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back.points[1].x - 0.123457).abs() < 1e-12);
        assert!(PointCloud::parse_xyz("1 2\n").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LidarConfig {
            fov_hor_deg: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LidarConfig {
            rays_ver: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        let dirs = LidarConfig::default().ray_directions();
        assert!(dirs.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
    }
}
