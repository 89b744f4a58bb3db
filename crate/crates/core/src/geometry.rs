//! Planar reflectors, the co-located system pose and the image-source
//! relations shared by the simulators and estimators.
//!
//! Coordinates are meters in a right-handed frame with the loudspeaker,
//! the microphone-array center and the LiDAR at the origin. Azimuth is
//! measured in the `xy` plane from the `+x` axis (the loudspeaker's
//! on-axis direction).

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Default tilt tolerance used to split horizontal from vertical planes.
pub const DEFAULT_HORIZONTAL_TOL_DEG: f64 = 5.0;

/// Rectangular extent in the plane's own `(u, v)` coordinates, measured
/// from the foot point `ρν`. See [`Plane::basis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneBounds {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl PlaneBounds {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

/// A planar reflector `{x : ν·x = ρ}` with `ρ ≥ 0`, so `ν` points from the
/// origin toward the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    normal: Vec3,
    distance: f64,
    pub bounds: Option<PlaneBounds>,
    pub acoustic_reflective: bool,
    pub lidar_reflective: bool,
    pub reflection_coeff: f64,
}

impl Plane {
    /// Builds a fully reflective infinite plane. The normal is normalized and
    /// flipped if needed so that the stored distance is non-negative.
    pub fn new(normal: Vec3, distance: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm.is_finite() && norm > 0.0) || !distance.is_finite() {
            return Err(Error::invalid(format!(
                "plane needs a finite non-zero normal and finite distance, got {normal:?}, {distance}"
            )));
        }
        let mut normal = normal / norm;
        let mut distance = distance;
        if distance < 0.0 {
            normal = -normal;
            distance = -distance;
        }
        Ok(Plane {
            normal,
            distance,
            bounds: None,
            acoustic_reflective: true,
            lidar_reflective: true,
            reflection_coeff: 1.0,
        })
    }

    /// Vertical wall at `azimuth` (radians) and `distance` meters.
    pub fn wall(azimuth: f64, distance: f64) -> Result<Self> {
        Plane::new(Vec3::new(azimuth.cos(), azimuth.sin(), 0.0), distance)
    }

    /// A wall that reflects sound but returns no LiDAR points.
    pub fn window(azimuth: f64, distance: f64) -> Result<Self> {
        Ok(Plane::wall(azimuth, distance)?.with_lidar(false))
    }

    /// Floor `depth` meters below the system.
    pub fn floor(depth: f64) -> Result<Self> {
        Plane::new(Vec3::new(0.0, 0.0, -1.0), depth)
    }

    /// Ceiling `height` meters above the system.
    pub fn ceiling(height: f64) -> Result<Self> {
        Plane::new(Vec3::new(0.0, 0.0, 1.0), height)
    }

    pub fn with_lidar(mut self, reflective: bool) -> Self {
        self.lidar_reflective = reflective;
        self
    }

    pub fn with_acoustic(mut self, reflective: bool) -> Self {
        self.acoustic_reflective = reflective;
        self
    }

    pub fn with_reflection_coeff(mut self, coeff: f64) -> Result<Self> {
        if !(coeff > 0.0 && coeff <= 1.0) {
            return Err(Error::invalid(format!(
                "reflection coefficient must lie in (0, 1], got {coeff}"
            )));
        }
        self.reflection_coeff = coeff;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: PlaneBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Signed distance of `x` from the plane, positive on the far side.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        self.normal.dot(x) - self.distance
    }

    /// Orthonormal in-plane basis `(u, v)`. For non-horizontal planes `v` is
    /// `+z` projected into the plane and `u = v × ν`; horizontal planes use
    /// `u = +x`.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let up = Vec3::z();
        let v = up - n * n.dot(&up);
        if v.norm() > 1e-9 {
            let v = v.normalize();
            let u = v.cross(&n).normalize();
            (u, v)
        } else {
            let x = Vec3::x();
            let u = (x - n * n.dot(&x)).normalize();
            let v = n.cross(&u).normalize();
            (u, v)
        }
    }

    /// Whether `x` (assumed on the plane) lies inside the plane's bounds.
    pub fn within_bounds(&self, x: &Vec3) -> bool {
        match &self.bounds {
            None => true,
            Some(b) => {
                let (u, v) = self.basis();
                let r = x - self.normal * self.distance;
                b.contains(r.dot(&u), r.dot(&v))
            }
        }
    }
}

/// Geometry of the co-located loudspeaker, uniform circular array and LiDAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPose {
    pub array_radius: f64,
    pub mic_count: usize,
    pub speaker_axis_angle: f64,
    pub lidar_axis_angle: f64,
}

impl SystemPose {
    pub fn new(array_radius: f64, mic_count: usize) -> Result<Self> {
        let pose = SystemPose {
            array_radius,
            mic_count,
            speaker_axis_angle: 0.0,
            lidar_axis_angle: PI,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.array_radius > 0.0 && self.array_radius.is_finite()) {
            return Err(Error::invalid(format!(
                "array radius must be positive, got {}",
                self.array_radius
            )));
        }
        if self.mic_count < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 microphones, got {}",
                self.mic_count
            )));
        }
        Ok(())
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::zeros()
    }

    /// Angular spacing of the array, `2π / M`.
    pub fn angular_step(&self) -> f64 {
        TAU / self.mic_count as f64
    }

    pub fn mic_angle(&self, m: usize) -> f64 {
        m as f64 * self.angular_step()
    }

    pub fn mic_position(&self, m: usize) -> Vec3 {
        let a = self.mic_angle(m);
        Vec3::new(self.array_radius * a.cos(), self.array_radius * a.sin(), 0.0)
    }

    pub fn mic_positions(&self) -> Vec<Vec3> {
        (0..self.mic_count).map(|m| self.mic_position(m)).collect()
    }
}

/// A mirrored virtual source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    pub gain: f64,
}

/// Reflects `source` across `plane` (treated as infinite). The gain carries
/// the plane's reflection coefficient.
pub fn mirror_source(source: &Vec3, plane: &Plane) -> ImageSource {
    let offset = plane.signed_distance(source);
    ImageSource {
        position: source - plane.normal * (2.0 * offset),
        gain: plane.reflection_coeff,
    }
}

/// Recovers the reflector from an image source at distance `radius` and
/// azimuth `azimuth` from the origin: the plane sits halfway along the
/// source-image segment.
pub fn image_source_to_plane(radius: f64, azimuth: f64) -> Result<Plane> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!(
            "image-source distance must be positive, got {radius}"
        )));
    }
    Plane::wall(azimuth, radius / 2.0)
}

/// Azimuth of the plane normal in `[0, 2π)`.
pub fn plane_azimuth(plane: &Plane) -> Result<f64> {
    let n = plane.normal;
    if n.x.hypot(n.y) < 1e-12 {
        return Err(Error::NotVerticalPlane([n.x, n.y, n.z]));
    }
    Ok(wrap_angle(n.y.atan2(n.x)))
}

/// True when the normal tilts out of the horizontal by more than `tol_deg`,
/// i.e. `|ν_z| > sin(tol)`.
pub fn is_horizontal(plane: &Plane, tol_deg: f64) -> bool {
    plane.normal.z.abs() > tol_deg.to_radians().sin()
}

/// True when the normal is within `tol_deg` of the vertical axis, i.e. the
/// plane is a floor or ceiling up to `tol_deg` of tilt.
pub fn is_level(plane: &Plane, tol_deg: f64) -> bool {
    plane.normal.z.abs() >= tol_deg.to_radians().cos()
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Smallest absolute difference between two angles, in `[0, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

/// Angle between two normals ignoring orientation, in `[0, π/2]`.
pub fn normal_angle(a: &Vec3, b: &Vec3) -> f64 {
    let c = (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0);
    c.acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn mirror_origin_in_wall() {
        let wall = Plane::wall(0.0, 0.5).unwrap();
        let img = mirror_source(&Vec3::zeros(), &wall);
        assert!(close(&img.position, &Vec3::new(1.0, 0.0, 0.0), EPS));
        assert_eq!(img.gain, 1.0);
    }

    #[test]
    fn mirror_origin_in_floor() {
        let d_f = 0.3;
        let floor = Plane::floor(d_f).unwrap();
        let img = mirror_source(&Vec3::zeros(), &floor);
        assert!(close(&img.position, &Vec3::new(0.0, 0.0, -2.0 * d_f), EPS));
    }

    #[test]
    fn point_on_plane_is_fixed() {
        let p = Plane::wall(0.7, 1.2).unwrap();
        let x = p.normal() * 1.2 + p.basis().0 * 0.3;
        let img = mirror_source(&x, &p);
        assert!(close(&img.position, &x, 1e-12));
    }

    #[test]
    fn gain_carries_reflection_coeff() {
        let p = Plane::wall(0.0, 1.0).unwrap().with_reflection_coeff(0.7).unwrap();
        assert_eq!(mirror_source(&Vec3::zeros(), &p).gain, 0.7);
        assert!(Plane::wall(0.0, 1.0).unwrap().with_reflection_coeff(0.0).is_err());
    }

    #[test]
    fn negative_distance_flips_normal() {
        let p = Plane::new(Vec3::new(2.0, 0.0, 0.0), -1.0).unwrap();
        assert!(close(&p.normal(), &Vec3::new(-1.0, 0.0, 0.0), EPS));
        assert_eq!(p.distance(), 1.0);
        assert!(Plane::new(Vec3::zeros(), 1.0).is_err());
    }

    #[test]
    fn image_to_plane_examples() {
        let p = image_source_to_plane(1.0, 0.0).unwrap();
        assert!((p.distance() - 0.5).abs() < EPS);
        assert!(close(&p.normal(), &Vec3::new(1.0, 0.0, 0.0), EPS));

        let p = image_source_to_plane(1.0, PI / 2.0).unwrap();
        assert!((p.distance() - 0.5).abs() < EPS);
        assert!(close(&p.normal(), &Vec3::new(0.0, 1.0, 0.0), EPS));

        let p = image_source_to_plane(0.8, PI).unwrap();
        assert!((p.distance() - 0.4).abs() < EPS);
        assert!(close(&p.normal(), &Vec3::new(-1.0, 0.0, 0.0), EPS));

        assert!(image_source_to_plane(0.0, 0.0).is_err());
        assert!(image_source_to_plane(-1.0, 0.0).is_err());
    }

    #[test]
    fn azimuth_examples() {
        let p = Plane::new(Vec3::new(0.0, 1.0, 0.0), 1.0).unwrap();
        assert!((plane_azimuth(&p).unwrap() - PI / 2.0).abs() < EPS);
        let p = Plane::new(Vec3::new(-1.0, 0.0, 0.0), 1.0).unwrap();
        assert!((plane_azimuth(&p).unwrap() - PI).abs() < EPS);
        let p = Plane::new(Vec3::new(0.0, 0.0, 1.0), 1.0).unwrap();
        assert!(matches!(plane_azimuth(&p), Err(Error::NotVerticalPlane(_))));
    }

    #[test]
    fn horizontal_classification() {
        let up = Plane::new(Vec3::z(), 1.0).unwrap();
        let wall = Plane::new(Vec3::x(), 1.0).unwrap();
        let a = 2f64.to_radians();
        let tilted = Plane::new(Vec3::new(a.cos(), 0.0, a.sin()), 1.0).unwrap();
        assert!(is_horizontal(&up, 5.0));
        assert!(!is_horizontal(&wall, 5.0));
        assert!(!is_horizontal(&tilted, 5.0));
        assert!(is_level(&up, 5.0));
        assert!(!is_level(&wall, 5.0));
    }

    #[test]
    fn bounds_follow_basis() {
        let p = Plane::wall(PI, 1.0).unwrap().with_bounds(PlaneBounds {
            u_min: -0.5,
            u_max: 0.5,
            v_min: -0.2,
            v_max: 0.2,
        });
        let (u, v) = p.basis();
        assert!(u.dot(&p.normal()).abs() < EPS && v.dot(&p.normal()).abs() < EPS);
        assert!((v - Vec3::z()).norm() < EPS);
        let foot = p.normal() * p.distance();
        assert!(p.within_bounds(&(foot + u * 0.4 + v * 0.1)));
        assert!(!p.within_bounds(&(foot + u * 0.6)));
        assert!(!p.within_bounds(&(foot + v * 0.3)));
    }

    #[test]
    fn mic_layout() {
        let pose = SystemPose::new(0.05, 12).unwrap();
        assert!((pose.angular_step() - PI / 6.0).abs() < EPS);
        for (m, p) in pose.mic_positions().iter().enumerate() {
            assert!((p.norm() - 0.05).abs() < EPS);
            assert_eq!(p.z, 0.0);
            assert!(angle_diff(p.y.atan2(p.x), m as f64 * PI / 6.0) < 1e-12);
        }
        assert!(SystemPose::new(0.05, 2).is_err());
        assert!(SystemPose::new(0.0, 12).is_err());
    }

    fn any_plane() -> impl Strategy<Value = Plane> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.05..3.0f64)
            .prop_filter("non-degenerate normal", |(x, y, z, _)| (x * x + y * y + z * z) > 1e-3)
            .prop_map(|(x, y, z, d)| Plane::new(Vec3::new(x, y, z), d).unwrap())
    }

    proptest! {
        #[test]
        fn mirror_is_involution(plane in any_plane(),
                                sx in -2.0..2.0f64, sy in -2.0..2.0f64, sz in -2.0..2.0f64) {
            let src = Vec3::new(sx, sy, sz);
            let img = mirror_source(&src, &plane);
            let back = mirror_source(&img.position, &plane);
            prop_assert!((back.position - src).norm() < 1e-12);
            let mid = (src + img.position) / 2.0;
            prop_assert!(plane.signed_distance(&mid).abs() < 1e-12);
            prop_assert!((plane.normal().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn image_round_trip_for_walls(az in 0.0..TAU, d in 0.05..3.0f64) {
            let wall = Plane::wall(az, d).unwrap();
            let img = mirror_source(&Vec3::zeros(), &wall).position;
            let r = img.norm();
            let back = image_source_to_plane(r, img.y.atan2(img.x)).unwrap();
            prop_assert!((back.distance() - wall.distance()).abs() < 1e-12);
            prop_assert!((back.normal() - wall.normal()).norm() < 1e-12);
        }

        #[test]
        fn azimuth_inverts_conversion(az in -10.0..10.0f64, r in 0.1..5.0f64) {
            let p = image_source_to_plane(r, az).unwrap();
            let got = plane_azimuth(&p).unwrap();
            prop_assert!((0.0..TAU).contains(&got));
            prop_assert!(angle_diff(got, az) < 1e-10);
        }
    }
}
