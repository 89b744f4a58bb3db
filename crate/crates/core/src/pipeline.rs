//! End-to-end reflector estimation: LiDAR plane detection, horizontal
//! response removal, prior construction, sparse inverse solve, peak
//! extraction and conversion back to planes. Also the evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticParams, Directivity, ImpulseResponseSet};
use crate::error::{Error, Result};
use crate::geometry::{image_source_to_plane, plane_azimuth, Plane, SystemPose, Vec3, DEFAULT_HORIZONTAL_TOL_DEG};
use crate::lidar::PointCloud;
use crate::plane_detect::{detect_planes, split_horizontal_vertical, DetectedPlane, DetectorParams};
use crate::solver::{
    build_dictionary, build_prior_weight, estimate_horizontal_response, expected_sample, solve_lasso,
    solve_lasso_with_prior_from, subtract_horizontal, Dictionary, Gram, ImageSourceMap, LassoOptions, LassoSolution,
    LeastSquares, PolarGrid, Prior, PriorOptions, SampleReference,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakParams {
    /// Fraction of `max(s)` a cell must reach.
    pub rel_threshold: f64,
    pub nms_radius_q: usize,
    pub nms_radius_m: usize,
    pub max_peaks: usize,
}

impl Default for PeakParams {
    fn default() -> Self {
        PeakParams {
            rel_threshold: 0.5,
            nms_radius_q: 3,
            nms_radius_m: 1,
            max_peaks: 8,
        }
    }
}

impl PeakParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_threshold > 0.0 && self.rel_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "peak threshold must be in (0, 1], got {}",
                self.rel_threshold
            )));
        }
        if self.nms_radius_q == 0 || self.nms_radius_m == 0 || self.max_peaks == 0 {
            return Err(Error::invalid("peak radii and max_peaks must be at least 1"));
        }
        Ok(())
    }
}

/// A local maximum of the image-source map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub q: usize,
    pub m: usize,
    pub radius: f64,
    pub azimuth: f64,
    pub magnitude: f64,
}

/// Non-maximum suppression on the `(q, m)` lattice, circular in `m`.
/// Survivors closer than the radii to a larger survivor are merged into it.
pub fn extract_peaks(s: &ImageSourceMap, params: &PeakParams) -> Result<Vec<Peak>> {
    params.validate()?;
    let g = &s.grid;
    let max = s.values.iter().fold(0.0f64, |m, v| m.max(*v));
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let threshold = params.rel_threshold * max;
    let rq = params.nms_radius_q as i64;
    let rm = params.nms_radius_m.min(g.angular_count / 2) as i64;
    let t = g.radial_count as i64;
    let mc = g.angular_count as i64;

    let mut survivors = Vec::new();
    for m in 0..g.angular_count {
        for q in 0..g.radial_count {
            let v = s.get(q, m);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dm in -rm..=rm {
                let mm = (m as i64 + dm).rem_euclid(mc) as usize;
                for dq in -rq..=rq {
                    let qq = q as i64 + dq;
                    if qq < 0 || qq >= t || (dq == 0 && dm == 0) {
                        continue;
                    }
                    if s.get(qq as usize, mm) > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                survivors.push((q, m, v));
            }
        }
    }
    survivors.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut peaks: Vec<Peak> = Vec::new();
    for (q, m, v) in survivors {
        let near = peaks
            .iter()
            .any(|p| p.q.abs_diff(q) <= params.nms_radius_q && g.angular_distance(p.m, m) <= params.nms_radius_m);
        if near {
            continue;
        }
        peaks.push(Peak {
            q,
            m,
            radius: g.radius(q),
            azimuth: g.azimuth(m),
            magnitude: v,
        });
        if peaks.len() == params.max_peaks {
            break;
        }
    }
    Ok(peaks)
}

/// `P(q) = Σ_m max(s[q, m], 0)`: image-source mass per radius. Reflectors
/// the planar model cannot place (floor, ceiling) show up here as rings.
pub fn radial_profile(s: &ImageSourceMap) -> Vec<f64> {
    let g = &s.grid;
    (0..g.radial_count)
        .map(|q| (0..g.angular_count).map(|m| s.get(q, m).max(0.0)).sum())
        .collect()
}

/// Earliest strong arrival in the radial profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstArrival {
    /// Profile peak cell.
    pub q: usize,
    /// Mass-weighted radius over the centroid window.
    pub radius: f64,
    /// Azimuth of the largest cell at `q`.
    pub azimuth: f64,
    pub mass: f64,
}

/// Smallest-radius local maximum of [`radial_profile`] reaching
/// `rel_threshold·max P`. The radius is refined by the positive-mass
/// centroid within `centroid_radius` cells, which recenters the pair of
/// rings a channel-common echo produces.
pub fn first_arrival(
    s: &ImageSourceMap,
    rel_threshold: f64,
    nms_radius: usize,
    centroid_radius: usize,
) -> Option<FirstArrival> {
    let g = &s.grid;
    let p = radial_profile(s);
    let max = p.iter().fold(0.0f64, |m, v| m.max(*v));
    if !(max > 0.0) {
        return None;
    }
    let thr = rel_threshold * max;
    let t = p.len();
    let q = (0..t).find(|&q| {
        let lo = q.saturating_sub(nms_radius);
        let hi = (q + nms_radius).min(t - 1);
        p[q] >= thr && (lo..=hi).all(|j| p[j] <= p[q])
    })?;
    let lo = q.saturating_sub(centroid_radius);
    let hi = (q + centroid_radius).min(t - 1);
    let mass: f64 = p[lo..=hi].iter().sum();
    let qc = (lo..=hi).map(|j| j as f64 * p[j]).sum::<f64>() / mass;
    let m = (0..g.angular_count)
        .max_by(|&a, &b| s.get(q, a).total_cmp(&s.get(q, b)).then(b.cmp(&a)))
        .unwrap_or(0);
    Some(FirstArrival {
        q,
        radius: g.r_min() + qc * g.radial_step(),
        azimuth: g.azimuth(m),
        mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Acoustic-only sparse image-source estimate.
    #[default]
    Baseline,
    /// LiDAR-aided estimate with horizontal removal and priors.
    Proposed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Proposed => "proposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// `λ = lambda_rel · 2||Φᵀh||_∞`.
    pub lambda_rel: f64,
    /// Horizontal bound `b = scale · ||h||² / M`.
    pub horizontal_bound_scale: f64,
    /// Prior bound `b = scale · ||L s_unc||²`.
    pub prior_bound_scale: f64,
    /// Solve over unit-norm dictionary columns, so that `s` measures each
    /// cell's contribution to the data rather than its raw amplitude.
    pub normalize_columns: bool,
    pub horizontal_tol_deg: f64,
    pub sample_reference: SampleReference,
    pub detector: DetectorParams,
    pub peaks: PeakParams,
    pub lasso: LassoOptions,
    pub prior: PriorOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            lambda_rel: 0.3,
            horizontal_bound_scale: 10.0,
            prior_bound_scale: 0.05,
            normalize_columns: true,
            horizontal_tol_deg: DEFAULT_HORIZONTAL_TOL_DEG,
            sample_reference: SampleReference::Absolute,
            detector: DetectorParams::default(),
            peaks: PeakParams::default(),
            lasso: LassoOptions::default(),
            prior: PriorOptions::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.lambda_rel >= 0.0 && self.lambda_rel.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_rel must be >= 0, got {}",
                self.lambda_rel
            )));
        }
        if !pos(self.horizontal_bound_scale) || !pos(self.prior_bound_scale) {
            return Err(Error::invalid("bound scales must be positive and finite"));
        }
        if !(self.horizontal_tol_deg > 0.0 && self.horizontal_tol_deg < 45.0) {
            return Err(Error::invalid(format!(
                "horizontal tolerance must be in (0, 45) degrees, got {}",
                self.horizontal_tol_deg
            )));
        }
        self.detector.validate()?;
        self.peaks.validate()
    }
}

/// A reflector recovered from a peak of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub plane: Plane,
    pub peak: Peak,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub kkt_tol: f64,
    pub objective: f64,
    pub lipschitz: f64,
    /// Prior multiplier; zero when no prior was used or it was inactive.
    pub mu: f64,
    pub constraint_value: Option<f64>,
    pub constraint_bound: Option<f64>,
    pub constraint_met: Option<bool>,
    pub penalized_solves: usize,
    pub horizontal_mu: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

impl SolverDiagnostics {
    fn from_solution(sol: &LassoSolution, lambda: f64) -> Self {
        SolverDiagnostics {
            lambda,
            iterations: sol.iterations,
            converged: sol.converged,
            kkt_residual: sol.kkt_residual,
            kkt_tol: sol.kkt_tol,
            objective: sol.objective,
            lipschitz: sol.lipschitz,
            penalized_solves: 1,
            objective_trace: sol.objective_trace.clone(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: Method,
    /// Sorted by peak magnitude, largest first.
    pub detections: Vec<Detection>,
    pub horizontal_planes_used: Vec<Plane>,
    pub priors_used: Vec<Prior>,
    /// Vertical planes whose image source falls outside the grid.
    pub priors_skipped: Vec<Prior>,
    pub diagnostics: SolverDiagnostics,
    /// Solved coefficients; scaled by column norm when
    /// `normalize_columns` is set.
    pub map: ImageSourceMap,
}

impl EstimationResult {
    /// The detection with the smallest image-source distance.
    pub fn first_arriving(&self) -> Option<&Detection> {
        self.detections
            .iter()
            .min_by(|a, b| a.peak.radius.total_cmp(&b.peak.radius).then(a.peak.m.cmp(&b.peak.m)))
    }
}

/// Outcome of [`Estimator::remove_horizontal`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HorizontalRemoval {
    /// `h` with the horizontal response subtracted.
    pub response: Option<ImpulseResponseSet>,
    pub planes_used: Vec<Plane>,
    pub mu: Option<f64>,
}

/// Estimator with a precomputed dictionary and Gram matrix, shareable
/// across threads.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub dictionary: Dictionary,
    /// Gram matrix of the columns actually solved over.
    pub gram: Gram,
    /// Norms the columns were divided by; all ones without normalization.
    pub column_scale: Vec<f64>,
    pub config: EstimatorConfig,
}

impl Estimator {
    pub fn new(
        grid: &PolarGrid,
        pose: &SystemPose,
        directivity: &Directivity,
        params: &AcousticParams,
        n_samples: usize,
        config: EstimatorConfig,
    ) -> Result<Self> {
        config.validate()?;
        let dictionary = build_dictionary(grid, pose, directivity, params, n_samples)?;
        let raw = dictionary.gram();
        let n = raw.dim();
        let (gram, column_scale) = if config.normalize_columns {
            let scale: Vec<f64> = (0..n)
                .map(|j| {
                    let g = raw.get(j, j).sqrt();
                    if g > 0.0 {
                        g
                    } else {
                        1.0
                    }
                })
                .collect();
            let mut data = Vec::with_capacity(n * n);
            for i in 0..n {
                data.extend(raw.row(i).iter().zip(&scale).map(|(g, sj)| g / (scale[i] * sj)));
            }
            (Gram::new(n, data), scale)
        } else {
            (raw, vec![1.0; n])
        };
        Ok(Estimator {
            dictionary,
            gram,
            column_scale,
            config,
        })
    }

    /// Gram-form data for a stacked response over the solved columns.
    pub fn least_squares(&self, h: &[f64]) -> Result<LeastSquares<'_>> {
        let mut ls = LeastSquares::from_dictionary(&self.dictionary, &self.gram, h)?;
        for (c, s) in ls.rhs.iter_mut().zip(&self.column_scale) {
            *c /= s;
        }
        Ok(ls)
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.dictionary.grid
    }

    /// Estimates reflectors from a direct-path-free RIR. `Baseline` ignores
    /// the cloud; `Proposed` with `None` behaves as if the cloud were empty.
    pub fn estimate(
        &self,
        h: &ImpulseResponseSet,
        cloud: Option<&PointCloud>,
        method: Method,
    ) -> Result<EstimationResult> {
        match method {
            Method::Baseline => self.estimate_with_planes(h, &[], Method::Baseline),
            Method::Proposed => {
                let planes = match cloud {
                    Some(c) => detect_planes(c, &self.config.detector)?,
                    None => Vec::new(),
                };
                self.estimate_with_planes(h, &planes, Method::Proposed)
            }
        }
    }

    /// Same as [`Estimator::estimate`] with plane detection already done.
    pub fn estimate_with_planes(
        &self,
        h: &ImpulseResponseSet,
        planes: &[DetectedPlane],
        method: Method,
    ) -> Result<EstimationResult> {
        self.run(h, planes, method, &mut None)
    }

    /// Baseline and proposed estimates of the same measurement, sharing the
    /// unconstrained solve when no horizontal plane is subtracted.
    pub fn estimate_both(&self, h: &ImpulseResponseSet, planes: &[DetectedPlane]) -> Result<[EstimationResult; 2]> {
        let mut cache = None;
        let baseline = self.run(h, planes, Method::Baseline, &mut cache)?;
        let proposed = self.run(h, planes, Method::Proposed, &mut cache)?;
        Ok([baseline, proposed])
    }

    /// Estimates and subtracts the response of the level planes in
    /// `horizontal`; planes whose arrival falls past the end of `h` are
    /// ignored. `response` is `None` when nothing was subtracted.
    pub fn remove_horizontal(&self, h: &ImpulseResponseSet, horizontal: &[DetectedPlane]) -> Result<HorizontalRemoval> {
        let cfg = &self.config;
        let dict = &self.dictionary;
        let mut out = HorizontalRemoval::default();
        let mut anchors = Vec::new();
        for p in horizontal {
            let n = expected_sample(&p.plane, &dict.pose, &dict.params, cfg.sample_reference)?;
            if n < h.n_samples() {
                anchors.push(n);
                out.planes_used.push(p.plane.clone());
            }
        }
        if anchors.is_empty() {
            return Ok(out);
        }
        anchors.sort_unstable();
        anchors.dedup();
        let b = cfg.horizontal_bound_scale * h.energy() / h.n_channels() as f64;
        let est = estimate_horizontal_response(h, &anchors, b)?;
        out.mu = Some(est.mu);
        out.response = Some(subtract_horizontal(h, &est.response)?);
        Ok(out)
    }

    /// `cache` holds the unconstrained solution for the unmodified `h`.
    fn run(
        &self,
        h: &ImpulseResponseSet,
        planes: &[DetectedPlane],
        method: Method,
        cache: &mut Option<LassoSolution>,
    ) -> Result<EstimationResult> {
        let cfg = &self.config;
        let dict = &self.dictionary;
        if h.n_channels() != dict.pose.mic_count || h.n_samples() != dict.n_samples() {
            return Err(Error::invalid(format!(
                "RIR is {}x{} but the dictionary expects {}x{}",
                h.n_channels(),
                h.n_samples(),
                dict.pose.mic_count,
                dict.n_samples()
            )));
        }
        let planes = if method == Method::Baseline { &[][..] } else { planes };
        let split = split_horizontal_vertical(planes, cfg.horizontal_tol_deg);

        let removal = self.remove_horizontal(h, &split.horizontal)?;
        let horizontal_used = removal.planes_used;
        let horizontal_mu: Vec<f64> = removal.mu.into_iter().collect();
        let walls = removal.response;
        let subtracted = walls.is_some();
        let h_walls = walls.as_ref().unwrap_or(h);

        let grid = &dict.grid;
        let mut priors = Vec::new();
        let mut skipped = Vec::new();
        for p in &split.vertical {
            let prior = Prior {
                rho: p.plane.distance(),
                azimuth: plane_azimuth(&p.plane)?,
            };
            let r = 2.0 * prior.rho;
            if r >= grid.r_min() && r <= grid.r_max() {
                priors.push(prior);
            } else {
                skipped.push(prior);
            }
        }

        let ls = self.least_squares(h_walls.stack())?;
        let lambda = cfg.lambda_rel * 2.0 * ls.correlation_max();
        let unconstrained = match cache {
            Some(sol) if !subtracted => sol.clone(),
            _ => {
                let sol = solve_lasso(&ls, lambda, &cfg.lasso, None)?;
                if !subtracted {
                    *cache = Some(sol.clone());
                }
                sol
            }
        };
        let (solution, mut diag) = if priors.is_empty() {
            let diag = SolverDiagnostics::from_solution(&unconstrained, lambda);
            (unconstrained, diag)
        } else {
            let weight = build_prior_weight(grid, &priors)?;
            let scale = weight.weighted_energy(&unconstrained.values);
            let b = (cfg.prior_bound_scale * scale).max(f64::MIN_POSITIVE);
            let res =
                solve_lasso_with_prior_from(&ls, lambda, &weight, b, Some(&unconstrained), &cfg.lasso, &cfg.prior)?;
            let mut diag = SolverDiagnostics::from_solution(&res.solution, lambda);
            diag.mu = res.mu;
            diag.constraint_value = Some(res.constraint_value);
            diag.constraint_bound = Some(b);
            diag.constraint_met = Some(res.feasible);
            diag.penalized_solves = res.solves + 1;
            (res.solution, diag)
        };
        diag.horizontal_mu = horizontal_mu;

        let map = solution.into_map(dict)?;
        let peaks = extract_peaks(&map, &cfg.peaks)?;
        let mut detections = Vec::with_capacity(peaks.len());
        for peak in peaks {
            detections.push(Detection {
                plane: image_source_to_plane(peak.radius, peak.azimuth)?,
                peak,
            });
        }
        Ok(EstimationResult {
            method,
            detections,
            horizontal_planes_used: horizontal_used,
            priors_used: priors,
            priors_skipped: skipped,
            diagnostics: diag,
            map,
        })
    }
}

/// Tolerance for counting a detection as correct, in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HitSpec {
    pub tol_radial: usize,
    pub tol_angular: usize,
}

impl Default for HitSpec {
    fn default() -> Self {
        HitSpec {
            tol_radial: 2,
            tol_angular: 1,
        }
    }
}

/// Grid cell of a vertical plane's image source, `(q, m)` unrounded in `q`.
fn plane_cell(grid: &PolarGrid, plane: &Plane) -> Result<(i64, usize)> {
    let az = plane_azimuth(plane)?;
    let q = grid.radial_coord(2.0 * plane.distance()).round() as i64;
    let m = (az / grid.angular_step()).round() as usize % grid.angular_count;
    Ok((q, m))
}

/// One entry per truth plane: 1 if matched by a detection. Detections are
/// visited largest first and each matches at most one truth plane.
pub fn hitrate(result: &EstimationResult, truth: &[Plane], grid: &PolarGrid, spec: &HitSpec) -> Result<Vec<u8>> {
    let cells: Vec<(i64, usize)> = truth.iter().map(|p| plane_cell(grid, p)).collect::<Result<_>>()?;
    let mut hit = vec![0u8; truth.len()];
    for d in &result.detections {
        let (q, m) = (d.peak.q as i64, d.peak.m);
        let best = cells
            .iter()
            .enumerate()
            .filter(|(i, _)| hit[*i] == 0)
            .map(|(i, &(tq, tm))| (i, (q - tq).unsigned_abs() as usize, grid.angular_distance(m, tm)))
            .filter(|&(_, dq, dm)| dq <= spec.tol_radial && dm <= spec.tol_angular)
            .min_by_key(|&(i, dq, dm)| (dq + dm, i));
        if let Some((i, _, _)) = best {
            hit[i] = 1;
        }
    }
    Ok(hit)
}

/// Mean over components of `(a − b)²`.
pub fn normal_squared_error(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm_squared() / 3.0
}

/// MSE of the unit normal with the sentinel for missing detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalError {
    pub mse: f64,
    pub missing: bool,
}

/// MSE of an antipodal unit normal, reported when nothing was detected.
pub const NORMAL_MSE_SENTINEL: f64 = 4.0 / 3.0;

/// Normal MSE of the best-matching detection.
pub fn normal_mse(result: &EstimationResult, truth: &Plane) -> NormalError {
    let nt = truth.normal();
    let best = result
        .detections
        .iter()
        .map(|d| normal_squared_error(&d.plane.normal(), &nt))
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        NormalError {
            mse: best,
            missing: false,
        }
    } else {
        NormalError {
            mse: NORMAL_MSE_SENTINEL,
            missing: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::simulate_rir;
    use crate::lidar::{cast_cloud, LidarConfig};
    use std::f64::consts::PI;

    fn grid() -> PolarGrid {
        PolarGrid::new(120, 12, 0.05, 16_000.0, 343.0).unwrap()
    }

    fn map_with(cells: &[(usize, usize, f64)]) -> ImageSourceMap {
        let g = grid();
        let mut v = vec![0.0; g.len()];
        for &(q, m, x) in cells {
            v[g.index(q, m)] = x;
        }
        ImageSourceMap::new(v, g).unwrap()
    }

    #[test]
    fn peaks_single_and_merged() {
        let p = PeakParams::default();
        let one = extract_peaks(&map_with(&[(10, 3, 1.0)]), &p).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].q, one[0].m), (10, 3));

        let p2 = PeakParams {
            nms_radius_q: 2,
            ..p.clone()
        };
        let merged = extract_peaks(&map_with(&[(10, 3, 1.0), (11, 3, 0.9)]), &p2).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].q, 10);

        let two = extract_peaks(&map_with(&[(10, 3, 1.0), (40, 7, 0.8)]), &p).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two[0].magnitude > two[1].magnitude);
        assert!(extract_peaks(&map_with(&[]), &p).unwrap().is_empty());
    }

    #[test]
    fn peaks_wrap_in_azimuth_and_respect_threshold() {
        let p = PeakParams::default();
        let wrapped = extract_peaks(&map_with(&[(10, 0, 1.0), (10, 11, 0.95)]), &p).unwrap();
        assert_eq!(wrapped.len(), 1);
        let low = extract_peaks(&map_with(&[(10, 0, 1.0), (50, 6, 0.3)]), &p).unwrap();
        assert_eq!(low.len(), 1);
        // equal plateau collapses to one peak
        let flat = extract_peaks(&map_with(&[(10, 4, 1.0), (11, 4, 1.0)]), &p).unwrap();
        assert_eq!(flat.len(), 1);
        assert_eq!(flat[0].q, 10);
        let capped = PeakParams { max_peaks: 1, ..p };
        assert_eq!(
            extract_peaks(&map_with(&[(10, 0, 1.0), (60, 6, 0.9)]), &capped)
                .unwrap()
                .len(),
            1
        );
    }

    fn result_with(dets: &[(usize, usize, f64)]) -> EstimationResult {
        let g = grid();
        let detections = dets
            .iter()
            .map(|&(q, m, mag)| Detection {
                plane: image_source_to_plane(g.radius(q), g.azimuth(m)).unwrap(),
                peak: Peak {
                    q,
                    m,
                    radius: g.radius(q),
                    azimuth: g.azimuth(m),
                    magnitude: mag,
                },
            })
            .collect();
        EstimationResult {
            method: Method::Baseline,
            detections,
            horizontal_planes_used: vec![],
            priors_used: vec![],
            priors_skipped: vec![],
            diagnostics: SolverDiagnostics::default(),
            map: map_with(&[]),
        }
    }

    #[test]
    fn hitrate_rules() {
        let g = grid();
        let truth = image_source_to_plane(g.radius(40), g.azimuth(6)).unwrap();
        let spec = HitSpec::default();
        assert_eq!(
            hitrate(&result_with(&[(40, 6, 1.0)]), std::slice::from_ref(&truth), &g, &spec).unwrap(),
            vec![1]
        );
        assert_eq!(
            hitrate(&result_with(&[]), std::slice::from_ref(&truth), &g, &spec).unwrap(),
            vec![0]
        );
        assert_eq!(
            hitrate(&result_with(&[(43, 6, 1.0)]), std::slice::from_ref(&truth), &g, &spec).unwrap(),
            vec![0]
        );
        assert_eq!(
            hitrate(&result_with(&[(42, 7, 1.0)]), std::slice::from_ref(&truth), &g, &spec).unwrap(),
            vec![1]
        );
        assert_eq!(
            hitrate(&result_with(&[(40, 8, 1.0)]), std::slice::from_ref(&truth), &g, &spec).unwrap(),
            vec![0]
        );
        // one detection cannot satisfy two truths
        let near = image_source_to_plane(g.radius(41), g.azimuth(6)).unwrap();
        assert_eq!(
            hitrate(&result_with(&[(40, 6, 1.0)]), &[truth, near], &g, &spec).unwrap(),
            vec![1, 0]
        );
    }

    #[test]
    fn normal_mse_examples() {
        let g = grid();
        let truth = Plane::wall(0.0, 0.5).unwrap();
        let exact = result_with(&[(g.radial_coord(1.0).round() as usize, 0, 1.0)]);
        assert!(normal_mse(&exact, &truth).mse < 1e-20);
        let off = result_with(&[(40, 3, 1.0)]);
        assert!((normal_mse(&off, &truth).mse - 2.0 / 3.0).abs() < 1e-12);
        let none = normal_mse(&result_with(&[]), &truth);
        assert!(none.missing);
        assert_eq!(none.mse, 4.0 / 3.0);
    }

    fn estimator(directivity: Directivity, cfg: EstimatorConfig) -> Estimator {
        let pose = SystemPose::new(0.05, 12).unwrap();
        Estimator::new(&grid(), &pose, &directivity, &AcousticParams::default(), 256, cfg).unwrap()
    }

    #[test]
    fn baseline_ignores_cloud_and_matches_plain_lasso() {
        let est = estimator(Directivity::omni(), EstimatorConfig::default());
        let pose = SystemPose::new(0.05, 12).unwrap();
        let wall = Plane::wall(PI, 0.5).unwrap();
        let h = simulate_rir(
            std::slice::from_ref(&wall),
            &pose,
            &Directivity::omni(),
            &AcousticParams::default(),
            256,
            false,
        )
        .unwrap();
        let cloud = cast_cloud(&[wall], &LidarConfig::default()).unwrap();
        let a = est.estimate(&h, None, Method::Baseline).unwrap();
        let b = est.estimate(&h, Some(&cloud), Method::Baseline).unwrap();
        assert_eq!(a, b);
        let empty = est
            .estimate(&h, Some(&PointCloud::default()), Method::Proposed)
            .unwrap();
        assert_eq!(a.map, empty.map);

        let ls = est.least_squares(h.stack()).unwrap();
        let lam = est.config.lambda_rel * 2.0 * ls.correlation_max();
        let plain = solve_lasso(&ls, lam, &LassoOptions::default(), None).unwrap();
        assert_eq!(a.map.values, plain.values);
    }

    #[test]
    fn on_grid_source_round_trip() {
        let est = estimator(
            Directivity::omni(),
            EstimatorConfig {
                lambda_rel: 0.01,
                ..Default::default()
            },
        );
        let pose = SystemPose::new(0.05, 12).unwrap();
        let g = grid();
        for (q, m) in [(20usize, 0usize), (45, 5), (90, 11)] {
            let plane = image_source_to_plane(g.radius(q), g.azimuth(m)).unwrap();
            let h = simulate_rir(
                &[plane],
                &pose,
                &Directivity::omni(),
                &AcousticParams::default(),
                256,
                false,
            )
            .unwrap();
            let r = est.estimate(&h, None, Method::Baseline).unwrap();
            assert_eq!(r.map.argmax(), Some((q, m)));
        }
    }

    #[test]
    fn floor_hides_wall_without_lidar() {
        let est = estimator(
            Directivity::omni(),
            EstimatorConfig {
                horizontal_bound_scale: 20.0,
                ..Default::default()
            },
        );
        let pose = SystemPose::new(0.05, 12).unwrap();
        let wall = Plane::wall(0.0, 0.5).unwrap();
        let floor = Plane::floor(0.3).unwrap();
        let scene = [wall.clone(), floor.clone()];
        let h = simulate_rir(
            &scene,
            &pose,
            &Directivity::omni(),
            &AcousticParams::default(),
            256,
            false,
        )
        .unwrap();
        let lidar = LidarConfig {
            fov_hor_deg: 50.0,
            fov_ver_deg: 70.0,
            max_range: 1.12,
            ..Default::default()
        };
        let cloud = cast_cloud(&scene, &lidar).unwrap();
        let g = grid();
        let base = est.estimate(&h, None, Method::Baseline).unwrap();
        let first = first_arrival(&base.map, 0.5, 3, 4).unwrap();
        assert!((first.radius - 0.6).abs() <= 2.0 * g.radial_step(), "{}", first.radius);
        let prop = est.estimate(&h, Some(&cloud), Method::Proposed).unwrap();
        assert_eq!(prop.horizontal_planes_used.len(), 1);
        let first = first_arrival(&prop.map, 0.5, 3, 4).unwrap();
        assert!((first.radius - 1.0).abs() <= 2.0 * g.radial_step(), "{}", first.radius);
        assert!(normal_mse(&prop, &wall).mse < 1e-2);
    }

    #[test]
    fn rotation_permutes_azimuth_cells() {
        let est = estimator(Directivity::omni(), EstimatorConfig::default());
        let pose = SystemPose::new(0.05, 12).unwrap();
        let g = grid();
        let base = [Plane::wall(0.3, 0.45).unwrap(), Plane::wall(2.4, 0.8).unwrap()];
        let run = |k: usize| {
            let rot = k as f64 * g.angular_step();
            let planes: Vec<Plane> = base
                .iter()
                .map(|p| Plane::wall(plane_azimuth(p).unwrap() + rot, p.distance()).unwrap())
                .collect();
            let h = simulate_rir(
                &planes,
                &pose,
                &Directivity::omni(),
                &AcousticParams::default(),
                256,
                false,
            )
            .unwrap();
            est.estimate(&h, None, Method::Baseline).unwrap()
        };
        let r0 = run(0);
        for k in [1usize, 5] {
            let rk = run(k);
            assert_eq!(r0.detections.len(), rk.detections.len());
            for (a, b) in r0.detections.iter().zip(&rk.detections) {
                assert_eq!(a.peak.q, b.peak.q);
                assert_eq!((a.peak.m + k) % 12, b.peak.m);
            }
        }
    }

    #[test]
    fn prior_recovers_weak_wall() {
        let dir = Directivity::cardioid(0.4, 0.05).unwrap();
        let est = estimator(dir, EstimatorConfig::default());
        let pose = SystemPose::new(0.05, 12).unwrap();
        let wall = Plane::wall(PI, 0.5).unwrap();
        let h = simulate_rir(
            std::slice::from_ref(&wall),
            &pose,
            &dir,
            &AcousticParams::default(),
            256,
            false,
        )
        .unwrap();
        let cloud = cast_cloud(std::slice::from_ref(&wall), &LidarConfig::default()).unwrap();
        let r = est.estimate(&h, Some(&cloud), Method::Proposed).unwrap();
        assert_eq!(r.priors_used.len(), 1);
        let g = grid();
        assert_eq!(hitrate(&r, &[wall], &g, &HitSpec::default()).unwrap(), vec![1]);
    }
}
