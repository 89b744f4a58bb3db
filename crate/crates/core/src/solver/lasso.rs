//! Monotone accelerated proximal gradient for
//! `min ||Φs − h||² + λ||s||₁ + Σ wᵢ sᵢ²`, working entirely in Gram form.
//!
//! The quadratic penalty `w` is zero for plain LASSO and `μ·l²` for the
//! prior-constrained problem. An active-set refinement step solves the
//! reduced normal equations on a stable support/sign pattern so that the
//! KKT tolerance is reached without thousands of first-order iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dictionary::{Dictionary, Gram};
use super::grid::ImageSourceMap;

/// Gram-form least-squares data: `||Φs − h||² = sᵀGs − 2cᵀs + hᵀh` with
/// `G = ΦᵀΦ`, `c = Φᵀh`.
#[derive(Debug, Clone)]
pub struct LeastSquares<'a> {
    pub gram: &'a Gram,
    pub rhs: Vec<f64>,
    pub offset: f64,
}

impl<'a> LeastSquares<'a> {
    pub fn new(gram: &'a Gram, rhs: Vec<f64>, offset: f64) -> Result<Self> {
        if rhs.len() != gram.dim() {
            return Err(Error::invalid(format!(
                "Φᵀh has length {}, Gram matrix is {}x{}",
                rhs.len(),
                gram.dim(),
                gram.dim()
            )));
        }
        Ok(LeastSquares { gram, rhs, offset })
    }

    pub fn from_dictionary(dict: &Dictionary, gram: &'a Gram, h: &[f64]) -> Result<Self> {
        if h.len() != dict.n_rows() {
            return Err(Error::invalid(format!(
                "stacked response has length {}, dictionary expects {}",
                h.len(),
                dict.n_rows()
            )));
        }
        let rhs = dict.apply_transpose(h);
        let offset = h.iter().map(|v| v * v).sum();
        LeastSquares::new(gram, rhs, offset)
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// `||Φᵀh||_∞`.
    pub fn correlation_max(&self) -> f64 {
        self.rhs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||Φs − h||²` given `gs = G s`.
    pub fn residual_energy(&self, s: &[f64], gs: &[f64]) -> f64 {
        let quad: f64 = s.iter().zip(gs).map(|(a, b)| a * b).sum();
        let lin: f64 = s.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        (quad - 2.0 * lin + self.offset).max(0.0)
    }

    /// Full objective with `ℓ₁` weight `lambda` and quadratic penalty `w`.
    pub fn objective(&self, s: &[f64], lambda: f64, w: Option<&[f64]>) -> f64 {
        let gs = self.gram.mul(s);
        self.objective_with(s, &gs, lambda, w)
    }

    fn objective_with(&self, s: &[f64], gs: &[f64], lambda: f64, w: Option<&[f64]>) -> f64 {
        smooth_value(self, s, gs, w) + lambda * l1(s)
    }
}

fn l1(s: &[f64]) -> f64 {
    s.iter().map(|v| v.abs()).sum()
}

fn smooth_value(ls: &LeastSquares, s: &[f64], gs: &[f64], w: Option<&[f64]>) -> f64 {
    let quad: f64 = s.iter().zip(gs).map(|(a, b)| a * b).sum();
    let lin: f64 = s.iter().zip(&ls.rhs).map(|(a, b)| a * b).sum();
    let pen = w.map_or(0.0, |w| s.iter().zip(w).map(|(a, b)| b * a * a).sum());
    quad - 2.0 * lin + ls.offset + pen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    pub max_iter: usize,
    /// KKT tolerance relative to `||Φᵀh||_∞`.
    pub kkt_rel_tol: f64,
    pub kkt_check_every: usize,
    pub active_set_refinement: bool,
    pub record_trace: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_iter: 20_000,
            kkt_rel_tol: 1e-6,
            kkt_check_every: 10,
            active_set_refinement: true,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub kkt_tol: f64,
    pub lipschitz: f64,
    pub objective_trace: Vec<f64>,
}

/// Largest violation of the optimality conditions of
/// `||Φs − h||² + λ||s||₁ + Σ wᵢ sᵢ²` in the half-gradient convention
/// `g = Φᵀ(Φs − h) + w∘s`: `|gᵢ| ≤ λ/2` where `sᵢ = 0`, and
/// `gᵢ = −(λ/2)·sign(sᵢ)` otherwise.
pub fn kkt_residual(ls: &LeastSquares, s: &[f64], gs: &[f64], lambda: f64, w: Option<&[f64]>) -> f64 {
    let half = lambda / 2.0;
    let mut worst: f64 = 0.0;
    for i in 0..s.len() {
        let mut g = gs[i] - ls.rhs[i];
        if let Some(w) = w {
            g += w[i] * s[i];
        }
        let viol = if s[i] == 0.0 {
            (g.abs() - half).max(0.0)
        } else {
            (g + half * s[i].signum()).abs()
        };
        worst = worst.max(viol);
    }
    worst
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Solves the reduced system on the support of `x` with its signs held
/// fixed. Returns `None` if the system is singular or a sign flips.
fn refine_on_support(ls: &LeastSquares, x: &[f64], lambda: f64, w: Option<&[f64]>) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    if support.is_empty() || support.len() > 600 {
        return None;
    }
    let k = support.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (r, &i) in support.iter().enumerate() {
        let row = ls.gram.row(i);
        for (c, &j) in support.iter().enumerate() {
            a[(r, c)] = row[j];
        }
        if let Some(w) = w {
            a[(r, r)] += w[i];
        }
        b[r] = ls.rhs[i] - 0.5 * lambda * x[i].signum();
    }
    let u = a.cholesky()?.solve(&b);
    let mut out = vec![0.0; x.len()];
    for (r, &i) in support.iter().enumerate() {
        if u[r] == 0.0 || u[r].signum() != x[i].signum() || !u[r].is_finite() {
            return None;
        }
        out[i] = u[r];
    }
    Some(out)
}

/// Core solver shared by the plain and penalized problems.
pub(crate) fn solve_penalized(
    ls: &LeastSquares,
    lambda: f64,
    w: Option<&[f64]>,
    opts: &LassoOptions,
    warm_start: Option<&[f64]>,
) -> Result<LassoSolution> {
    let n = ls.dim();
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("λ must be finite and >= 0, got {lambda}")));
    }
    if let Some(w) = w {
        if w.len() != n || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "quadratic penalty must be finite, non-negative, length n",
            ));
        }
    }
    let w_max = w.map_or(0.0, |w| w.iter().fold(0.0, |m: f64, v| m.max(*v)));
    let kkt_tol = opts.kkt_rel_tol * ls.correlation_max();

    let mut x: Vec<f64> = match warm_start {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![0.0; n],
    };
    let mut gx = ls.gram.mul(&x);
    let mut fx = ls.objective_with(&x, &gx, lambda, w);
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut t = 1.0f64;
    let mut lip = 2.0 * (ls.gram.max_eigenvalue() + w_max);
    if lip == 0.0 {
        lip = 1.0;
    }
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(fx);
    }

    let mut kkt = kkt_residual(ls, &x, &gx, lambda, w);
    if kkt <= kkt_tol {
        return Ok(LassoSolution {
            values: x,
            objective: fx,
            iterations: 0,
            converged: true,
            kkt_residual: kkt,
            kkt_tol,
            lipschitz: lip,
            objective_trace: trace,
        });
    }

    let mut last_support: Vec<bool> = x.iter().map(|v| *v != 0.0).collect();
    let mut stable_checks = 0usize;
    let mut converged = false;
    let mut iterations = 0;
    let mut z = vec![0.0; n];
    for it in 1..=opts.max_iter {
        iterations = it;
        // gradient of the smooth part at y
        let grad: Vec<f64> = (0..n)
            .map(|i| 2.0 * (gy[i] - ls.rhs[i] + w.map_or(0.0, |w| w[i] * y[i])))
            .collect();
        let fy = smooth_value(ls, &y, &gy, w);
        let (gz, fz_smooth) = loop {
            for i in 0..n {
                z[i] = soft_threshold(y[i] - grad[i] / lip, lambda / lip);
            }
            let gz = ls.gram.mul(&z);
            let fz = smooth_value(ls, &z, &gz, w);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                let d = z[i] - y[i];
                lin += grad[i] * d;
                sq += d * d;
            }
            let model = fy + lin + 0.5 * lip * sq;
            if fz <= model + 1e-12 * fy.abs().max(1.0) {
                break (gz, fz);
            }
            lip *= 2.0;
        };
        let fz = fz_smooth + lambda * l1(&z);

        let mut t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fz <= fx {
            // accepted step; momentum is reset when it points against the prox step
            let against: f64 = (0..n).map(|i| (y[i] - z[i]) * (z[i] - x[i])).sum();
            if against > 0.0 {
                t_next = 1.0;
            }
            let beta = if against > 0.0 { 0.0 } else { (t - 1.0) / t_next };
            for i in 0..n {
                let xi_new = z[i];
                y[i] = xi_new + beta * (xi_new - x[i]);
                gy[i] = gz[i] + beta * (gz[i] - gx[i]);
            }
            x.copy_from_slice(&z);
            gx = gz;
            fx = fz;
            t = t_next;
        } else {
            // monotone safeguard with momentum restart
            y.copy_from_slice(&x);
            gy.copy_from_slice(&gx);
            t = 1.0;
        }
        if it % 100 == 0 {
            gy = ls.gram.mul(&y);
            gx = ls.gram.mul(&x);
        }
        if opts.record_trace {
            trace.push(fx);
        }

        if it % opts.kkt_check_every.max(1) == 0 {
            kkt = kkt_residual(ls, &x, &gx, lambda, w);
            if kkt <= kkt_tol {
                converged = true;
                break;
            }
            let support: Vec<bool> = x.iter().map(|v| *v != 0.0).collect();
            if support == last_support {
                stable_checks += 1;
            } else {
                stable_checks = 0;
                last_support = support;
            }
            if opts.active_set_refinement && stable_checks >= 2 {
                if let Some(cand) = refine_on_support(ls, &x, lambda, w) {
                    let gc = ls.gram.mul(&cand);
                    let fc = ls.objective_with(&cand, &gc, lambda, w);
                    if fc <= fx {
                        x = cand;
                        gx = gc;
                        fx = fc;
                        y.copy_from_slice(&x);
                        gy.copy_from_slice(&gx);
                        t = 1.0;
                        if opts.record_trace {
                            *trace.last_mut().unwrap() = fx;
                        }
                        kkt = kkt_residual(ls, &x, &gx, lambda, w);
                        if kkt <= kkt_tol {
                            converged = true;
                            break;
                        }
                    }
                }
                stable_checks = 0;
            }
        }
    }
    if !converged {
        gx = ls.gram.mul(&x);
        kkt = kkt_residual(ls, &x, &gx, lambda, w);
        converged = kkt <= kkt_tol;
    }
    Ok(LassoSolution {
        values: x,
        objective: fx,
        iterations,
        converged,
        kkt_residual: kkt,
        kkt_tol,
        lipschitz: lip,
        objective_trace: trace,
    })
}

/// Solves `min ||Φs − h||² + λ||s||₁`. Non-convergence is reported through
/// [`LassoSolution::converged`], not as an error.
pub fn solve_lasso(
    ls: &LeastSquares,
    lambda: f64,
    opts: &LassoOptions,
    warm_start: Option<&[f64]>,
) -> Result<LassoSolution> {
    solve_penalized(ls, lambda, None, opts, warm_start)
}

impl LassoSolution {
    pub fn into_map(self, dict: &Dictionary) -> Result<ImageSourceMap> {
        ImageSourceMap::new(self.values, dict.grid.clone())
    }
}
