//! Plane detection from point clouds by co-planar clustering followed by
//! total-least-squares fitting.
//!
//! The pipeline is: k-nearest-neighbor normals, region growing on normal and
//! point-to-plane agreement, per-cluster TLS fit, merging of clusters that
//! describe the same plane, and a minimum-size filter. All tie-breaks use
//! point coordinates, so the result does not depend on point order.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_horizontal, is_level, normal_angle, Plane, Vec3};
use crate::lidar::PointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub neighborhood_k: usize,
    pub normal_angle_tol_deg: f64,
    pub plane_dist_tol: f64,
    pub min_cluster_size: usize,
    pub merge_angle_tol_deg: f64,
    pub merge_dist_tol: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            neighborhood_k: 16,
            normal_angle_tol_deg: 10.0,
            plane_dist_tol: 0.01,
            min_cluster_size: 50,
            merge_angle_tol_deg: 5.0,
            merge_dist_tol: 0.02,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = self.neighborhood_k > 0
            && self.normal_angle_tol_deg > 0.0
            && self.plane_dist_tol > 0.0
            && self.merge_angle_tol_deg > 0.0
            && self.merge_dist_tol > 0.0;
        if !positive || self.min_cluster_size < 3 {
            return Err(Error::invalid(format!(
                "detector parameters must be positive with min_cluster_size >= 3: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedPlane {
    pub plane: Plane,
    pub inlier_count: usize,
    pub rms_residual: f64,
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Uniform voxel grid for exact k-nearest-neighbor queries.
struct VoxelIndex<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> VoxelIndex<'a> {
    fn new(points: &'a [Vec3], k: usize) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let mut ext = [hi.x - lo.x, hi.y - lo.y, hi.z - lo.z];
        ext.sort_by(|a, b| b.total_cmp(a));
        // clouds are mostly surfaces: size cells from the two largest extents
        let area = (ext[0] * ext[1]).max(ext[0] * ext[0] * 1e-6);
        let cell = (area * k as f64 / points.len() as f64).sqrt().max(1e-6);
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_of(p, cell)).or_default().push(i);
        }
        VoxelIndex { points, cell, cells }
    }

    fn key_of(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// The `k` nearest points to point `i` (including itself), ordered by
    /// distance then coordinates.
    fn knn(&self, i: usize, k: usize) -> Vec<usize> {
        let q = self.points[i];
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let (cx, cy, cz) = Self::key_of(&q, self.cell);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut r: i64 = 0;
        loop {
            let shell = (2 * r + 1).pow(3) - (2 * r - 1).max(0).pow(3);
            if shell as usize > self.cells.len() {
                // sparse or elongated clouds: cheaper to rank every point
                return self.knn_exhaustive(&q, k);
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            found.extend(ids.iter().map(|&j| ((self.points[j] - q).norm_squared(), j)));
                        }
                    }
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| {
                    a.0.total_cmp(&b.0)
                        .then_with(|| lex_cmp(&self.points[a.1], &self.points[b.1]))
                });
                let reach = r as f64 * self.cell;
                if found[k - 1].0 <= reach * reach || found.len() == self.points.len() {
                    return found[..k].iter().map(|&(_, j)| j).collect();
                }
            }
            r += 1;
        }
    }

    fn knn_exhaustive(&self, q: &Vec3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| ((p - q).norm_squared(), j))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0)
                .then_with(|| lex_cmp(&self.points[a.1], &self.points[b.1]))
        };
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, order);
            all.truncate(k);
        }
        all.sort_by(order);
        all.into_iter().map(|(_, j)| j).collect()
    }
}

/// Total-least-squares plane through `points[ids]`: returns the unit normal
/// (smallest covariance eigenvector), the centroid and the eigenvalues in
/// ascending order.
fn tls_fit(points: &[Vec3], ids: &[usize]) -> (Vec3, Vec3, [f64; 3]) {
    let n = ids.len() as f64;
    let centroid = ids.iter().fold(Vec3::zeros(), |acc, &i| acc + points[i]) / n;
    let mut cov = Matrix3::zeros();
    for &i in ids {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let vals = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    ];
    (normal, centroid, vals)
}

/// Orients a fitted plane so that `ρ = ν·c ≥ 0`.
fn oriented(normal: Vec3, centroid: &Vec3) -> (Vec3, f64) {
    let rho = normal.dot(centroid);
    if rho < 0.0 {
        (-normal, -rho)
    } else {
        (normal, rho)
    }
}

struct Cluster {
    ids: Vec<usize>,
    normal: Vec3,
    rho: f64,
}

impl Cluster {
    fn fit(points: &[Vec3], ids: Vec<usize>) -> Self {
        let (n, c, _) = tls_fit(points, &ids);
        let (normal, rho) = oriented(n, &c);
        Cluster { ids, normal, rho }
    }

    fn same_plane(&self, other: &Cluster, angle_tol: f64, dist_tol: f64) -> bool {
        if normal_angle(&self.normal, &other.normal) > angle_tol {
            return false;
        }
        let other_rho = if self.normal.dot(&other.normal) < 0.0 {
            -other.rho
        } else {
            other.rho
        };
        (self.rho - other_rho).abs() <= dist_tol
    }
}

fn grow_regions(points: &[Vec3], params: &DetectorParams) -> Vec<Vec<usize>> {
    let n = points.len();
    let k = params.neighborhood_k.max(3).min(n);
    let index = VoxelIndex::new(points, k);
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| index.knn(i, k)).collect();
    let mut normals = Vec::with_capacity(n);
    let mut curvature = Vec::with_capacity(n);
    for nb in &neighbors {
        let (normal, _, vals) = tls_fit(points, nb);
        let total = vals[0] + vals[1] + vals[2];
        normals.push(normal);
        curvature.push(if total > 0.0 { vals[0] / total } else { 0.0 });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        curvature[a]
            .total_cmp(&curvature[b])
            .then_with(|| lex_cmp(&points[a], &points[b]))
    });

    let angle_tol = params.normal_angle_tol_deg.to_radians();
    let mut visited = vec![false; n];
    let mut regions = Vec::new();
    for &seed in &order {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut members = vec![seed];
        let mut normal = normals[seed];
        let mut anchor = points[seed];
        let mut next_refit = 8;
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if visited[j] {
                    continue;
                }
                if normal_angle(&normals[j], &normal) > angle_tol {
                    continue;
                }
                if normal.dot(&(points[j] - anchor)).abs() > params.plane_dist_tol {
                    continue;
                }
                visited[j] = true;
                members.push(j);
                queue.push_back(j);
                if members.len() >= next_refit {
                    let (nn, c, _) = tls_fit(points, &members);
                    normal = nn;
                    anchor = c;
                    next_refit *= 2;
                }
            }
        }
        if members.len() >= 3 {
            regions.push(members);
        }
    }
    regions
}

/// Detects planes in `cloud`. Returns an empty list when the cloud has fewer
/// than `min_cluster_size` points.
pub fn detect_planes(cloud: &PointCloud, params: &DetectorParams) -> Result<Vec<DetectedPlane>> {
    params.validate()?;
    let points = &cloud.points;
    if points.len() < params.min_cluster_size {
        return Ok(Vec::new());
    }
    if points
        .iter()
        .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
    {
        return Err(Error::invalid("point cloud contains non-finite coordinates"));
    }

    let mut clusters: Vec<Cluster> = grow_regions(points, params)
        .into_iter()
        .map(|ids| Cluster::fit(points, ids))
        .collect();

    let merge_angle = params.merge_angle_tol_deg.to_radians();
    loop {
        clusters.sort_by(|a, b| {
            b.ids
                .len()
                .cmp(&a.ids.len())
                .then_with(|| a.rho.total_cmp(&b.rho))
                .then_with(|| lex_cmp(&a.normal, &b.normal))
        });
        let mut merged = None;
        'outer: for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                if clusters[i].same_plane(&clusters[j], merge_angle, params.merge_dist_tol) {
                    merged = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = merged else { break };
        let absorbed = clusters.swap_remove(j);
        let mut ids = std::mem::take(&mut clusters[i].ids);
        ids.extend(absorbed.ids);
        clusters[i] = Cluster::fit(points, ids);
    }

    let mut out = Vec::new();
    let mut accepted: Vec<(Vec3, f64)> = Vec::new();
    let tol = params.plane_dist_tol;
    let claimed = |accepted: &[(Vec3, f64)], p: &Vec3| accepted.iter().any(|(n, rho)| (n.dot(p) - rho).abs() <= tol);
    for c in clusters {
        if c.ids.len() < params.min_cluster_size {
            continue;
        }
        // points already explained by a larger plane (edges, corners) are dropped,
        // then refit on inliers and report the inlier set of the refit plane
        let inliers: Vec<usize> = c
            .ids
            .iter()
            .copied()
            .filter(|&i| (c.normal.dot(&points[i]) - c.rho).abs() <= tol)
            .filter(|&i| !claimed(&accepted, &points[i]))
            .collect();
        if inliers.len() < params.min_cluster_size {
            continue;
        }
        let refit = Cluster::fit(points, inliers);
        let residuals: Vec<f64> = refit
            .ids
            .iter()
            .map(|&i| refit.normal.dot(&points[i]) - refit.rho)
            .filter(|r| r.abs() <= params.plane_dist_tol)
            .collect();
        if residuals.len() < params.min_cluster_size {
            continue;
        }
        let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
        accepted.push((refit.normal, refit.rho));
        out.push(DetectedPlane {
            plane: Plane::new(refit.normal, refit.rho)?,
            inlier_count: residuals.len(),
            rms_residual: rms,
        });
    }
    out.sort_by(|a, b| {
        b.inlier_count
            .cmp(&a.inlier_count)
            .then_with(|| a.plane.distance().total_cmp(&b.plane.distance()))
            .then_with(|| lex_cmp(&a.plane.normal(), &b.plane.normal()))
    });
    Ok(out)
}

/// Detected planes partitioned by orientation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaneSplit {
    pub horizontal: Vec<DetectedPlane>,
    pub vertical: Vec<DetectedPlane>,
    pub discarded: Vec<DetectedPlane>,
}

/// Splits planes into level (floor/ceiling, normal within `tol_deg` of `z`),
/// vertical (normal within `tol_deg` of the horizontal plane) and slanted
/// planes that are neither.
pub fn split_horizontal_vertical(planes: &[DetectedPlane], tol_deg: f64) -> PlaneSplit {
    let mut split = PlaneSplit::default();
    for p in planes {
        if !is_horizontal(&p.plane, tol_deg) {
            split.vertical.push(p.clone());
        } else if is_level(&p.plane, tol_deg) {
            split.horizontal.push(p.clone());
        } else {
            split.discarded.push(p.clone());
        }
    }
    split
}
