//! Estimation and removal of the channel-common response of a horizontal
//! reflector (floor or ceiling).
//!
//! The estimate solves `min ||h − I_M ⊗ h_hor||²` subject to
//! `||L h_hor||² ≤ b` with `L = diag(l)`, `l[n] = min_k |n − p_k|²`. The KKT
//! conditions give `h_hor[n] = Σ_m h[n,m] / (M + μ l[n]²)`, and the
//! multiplier `μ` is found by bisection on the active constraint.

use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticParams, ImpulseResponseSet};
use crate::error::{Error, Result};
use crate::geometry::{is_horizontal, Plane, SystemPose, DEFAULT_HORIZONTAL_TOL_DEG};

/// `l[n] = min_k |n − p_k|²`.
pub fn horizontal_weights(n_samples: usize, anchors: &[usize]) -> Vec<f64> {
    (0..n_samples)
        .map(|n| {
            anchors
                .iter()
                .map(|&p| (n as f64 - p as f64).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizontalEstimate {
    pub response: Vec<f64>,
    pub mu: f64,
    /// `||L h_hor||²` of the returned response.
    pub weighted_energy: f64,
    pub bound: f64,
}

/// Closed-form estimate of the shared horizontal-reflector response.
/// `bound = +∞` returns the plain channel mean.
pub fn estimate_horizontal_response(
    h: &ImpulseResponseSet,
    anchors: &[usize],
    bound: f64,
) -> Result<HorizontalEstimate> {
    let n = h.n_samples();
    if anchors.is_empty() {
        return Err(Error::invalid("horizontal estimate needs at least one anchor sample"));
    }
    if let Some(&p) = anchors.iter().find(|&&p| p >= n) {
        return Err(Error::invalid(format!(
            "anchor sample {p} outside response of length {n}"
        )));
    }
    if !(bound > 0.0) {
        return Err(Error::invalid(format!("bound must be positive, got {bound}")));
    }
    let m = h.n_channels() as f64;
    let sum: Vec<f64> = (0..n).map(|i| (0..h.n_channels()).map(|c| h.get(i, c)).sum()).collect();
    let l2: Vec<f64> = horizontal_weights(n, anchors).iter().map(|l| l * l).collect();

    let response_at = |mu: f64| -> Vec<f64> { sum.iter().zip(&l2).map(|(s, w)| s / (m + mu * w)).collect() };
    let weighted = |x: &[f64]| -> f64 { x.iter().zip(&l2).map(|(v, w)| w * v * v).sum() };

    let mean = response_at(0.0);
    let e0 = weighted(&mean);
    if e0 <= bound {
        return Ok(HorizontalEstimate {
            response: mean,
            mu: 0.0,
            weighted_energy: e0,
            bound,
        });
    }

    // bracket: weighted energy is strictly decreasing in μ and tends to 0
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while weighted(&response_at(hi)) > bound {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::invalid("failed to bracket the horizontal multiplier"));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let e = weighted(&response_at(mid));
        if e > bound {
            lo = mid;
        } else {
            hi = mid;
        }
        if (bound - e).abs() <= 1e-12 * bound && e <= bound {
            break;
        }
    }
    let response = response_at(hi);
    let weighted_energy = weighted(&response);
    Ok(HorizontalEstimate {
        response,
        mu: hi,
        weighted_energy,
        bound,
    })
}

/// `h⁽ᵐ⁾ − h_hor` for every channel.
pub fn subtract_horizontal(h: &ImpulseResponseSet, h_hor: &[f64]) -> Result<ImpulseResponseSet> {
    if h_hor.len() != h.n_samples() {
        return Err(Error::invalid(format!(
            "horizontal response has {} samples, RIR has {}",
            h_hor.len(),
            h.n_samples()
        )));
    }
    let mut out = h.clone();
    for c in 0..h.n_channels() {
        for (y, v) in out.channel_mut(c).iter_mut().zip(h_hor) {
            *y -= v;
        }
    }
    Ok(out)
}

/// Time reference for [`expected_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleReference {
    /// Absolute sample index, valid when the direct path was removed by
    /// template subtraction.
    #[default]
    Absolute,
    /// Relative to the direct-path peak at `round(f_s·R_a / v_c)`.
    RelativeToDirect,
}

/// Sample at which a horizontal reflector's echo reaches the array:
/// `round(f_s·√(R_a² + (2ρ)²) / v_c)`.
pub fn expected_sample(
    plane: &Plane,
    pose: &SystemPose,
    params: &AcousticParams,
    reference: SampleReference,
) -> Result<usize> {
    if !is_horizontal(plane, DEFAULT_HORIZONTAL_TOL_DEG) {
        return Err(Error::invalid(format!(
            "expected_sample needs a horizontal plane, normal is {:?}",
            plane.normal()
        )));
    }
    let r_a = pose.array_radius;
    let path = (r_a * r_a + (2.0 * plane.distance()).powi(2)).sqrt();
    let p = params.delay_samples(path).round();
    let p = match reference {
        SampleReference::Absolute => p,
        SampleReference::RelativeToDirect => (p - params.delay_samples(r_a).round()).max(0.0),
    };
    Ok(p as usize)
}
