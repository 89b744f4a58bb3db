//! LiDAR prior for the inverse problem: a weighted energy constraint
//! `||L s||² ≤ b` that is zero at the image-source cell implied by a
//! detected plane and grows with grid distance from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::grid::PolarGrid;
use super::lasso::{solve_penalized, LassoOptions, LassoSolution, LeastSquares};

/// A vertical plane seen by the LiDAR: distance `rho` and normal azimuth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub rho: f64,
    pub azimuth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    /// Anchor cells `(n_pc, m_pc)` in grid coordinates.
    pub anchors: Vec<(usize, usize)>,
}

impl WeightVector {
    pub fn zeros(len: usize) -> Self {
        WeightVector {
            values: vec![0.0; len],
            anchors: Vec::new(),
        }
    }

    /// `||L s||² = Σ lᵢ² sᵢ²`.
    pub fn weighted_energy(&self, s: &[f64]) -> f64 {
        self.values.iter().zip(s).map(|(l, v)| (l * v).powi(2)).sum()
    }
}

/// `l[m, n] = |n − n_pc|·(1 + |m − m_pc|)` with circular angular distance,
/// taking the minimum over priors. A prior maps to `n_pc =
/// round((2ρ − R_a)/ΔR)` and `m_pc = round(α/Δα) mod M`.
pub fn build_prior_weight(grid: &PolarGrid, priors: &[Prior]) -> Result<WeightVector> {
    let mut anchors = Vec::with_capacity(priors.len());
    for p in priors {
        let r = 2.0 * p.rho;
        if !(r >= grid.r_min() && r <= grid.r_max()) || !p.azimuth.is_finite() {
            return Err(Error::PriorOutOfRange {
                rho: p.rho,
                azimuth: p.azimuth,
                reason: format!(
                    "image distance {r:.4} m outside [{:.4}, {:.4}] m",
                    grid.r_min(),
                    grid.r_max()
                ),
            });
        }
        let n_pc = (grid.radial_coord(r).round() as usize).min(grid.radial_count - 1);
        let m_pc = (crate::geometry::wrap_angle(p.azimuth) / grid.angular_step()).round() as usize % grid.angular_count;
        anchors.push((n_pc, m_pc));
    }
    let mut values = vec![f64::INFINITY; grid.len()];
    if anchors.is_empty() {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    for &(n_pc, m_pc) in &anchors {
        for m in 0..grid.angular_count {
            let dm = grid.angular_distance(m, m_pc) as f64;
            for n in 0..grid.radial_count {
                let l = (n as f64 - n_pc as f64).abs() * (1.0 + dm);
                let slot = &mut values[grid.index(n, m)];
                *slot = slot.min(l);
            }
        }
    }
    Ok(WeightVector { values, anchors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorOptions {
    /// Upper end of the multiplier search.
    pub mu_max: f64,
    /// Stop the μ search once `μ_hi / μ_lo ≤ 1 + mu_rel_tol` or the
    /// constraint value is within `mu_rel_tol` of the bound.
    pub mu_rel_tol: f64,
    pub max_bisections: usize,
    pub fallback_grid_points: usize,
    /// Relative slack on the constraint when testing feasibility.
    pub feasibility_tol: f64,
}

impl Default for PriorOptions {
    fn default() -> Self {
        PriorOptions {
            mu_max: 1e12,
            mu_rel_tol: 1e-3,
            max_bisections: 60,
            fallback_grid_points: 40,
            feasibility_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSolution {
    pub solution: LassoSolution,
    pub mu: f64,
    pub constraint_value: f64,
    pub bound: f64,
    pub feasible: bool,
    /// Set when the μ-grid fallback replaced the bracketed search.
    pub used_fallback: bool,
    /// Penalized solves performed, including the unconstrained one.
    pub solves: usize,
}

/// Solves `min ||Φs − h||² + λ||s||₁` s.t. `||L s||² ≤ b` through the
/// penalized problem `+ μ||L s||²`, choosing the smallest `μ` (up to the
/// search tolerance) whose solution is feasible.
pub fn solve_lasso_with_prior(
    ls: &LeastSquares,
    lambda: f64,
    weight: &WeightVector,
    bound: f64,
    opts: &LassoOptions,
    prior_opts: &PriorOptions,
) -> Result<PriorSolution> {
    solve_lasso_with_prior_from(ls, lambda, weight, bound, None, opts, prior_opts)
}

/// [`solve_lasso_with_prior`] reusing an already computed `μ = 0` solution.
pub fn solve_lasso_with_prior_from(
    ls: &LeastSquares,
    lambda: f64,
    weight: &WeightVector,
    bound: f64,
    unconstrained: Option<&LassoSolution>,
    opts: &LassoOptions,
    prior_opts: &PriorOptions,
) -> Result<PriorSolution> {
    if weight.values.len() != ls.dim() {
        return Err(Error::invalid(format!(
            "weight vector has length {}, problem has {} unknowns",
            weight.values.len(),
            ls.dim()
        )));
    }
    if !(bound > 0.0) {
        return Err(Error::invalid(format!(
            "constraint bound must be positive, got {bound}"
        )));
    }
    let l2: Vec<f64> = weight.values.iter().map(|l| l * l).collect();
    let feasible = |v: f64| v <= bound * (1.0 + prior_opts.feasibility_tol);
    let mut solves = 0usize;

    let base = match unconstrained {
        Some(b) => b.clone(),
        None => {
            solves += 1;
            solve_penalized(ls, lambda, None, opts, None)?
        }
    };
    let base_value = weight.weighted_energy(&base.values);
    if feasible(base_value) {
        return Ok(PriorSolution {
            solution: base,
            mu: 0.0,
            constraint_value: base_value,
            bound,
            feasible: true,
            used_fallback: false,
            solves,
        });
    }

    let penalty = |mu: f64| -> Vec<f64> { l2.iter().map(|w| mu * w).collect() };
    let mut solve_at = |mu: f64, warm: &[f64]| -> Result<(LassoSolution, f64)> {
        solves += 1;
        let w = penalty(mu);
        let sol = solve_penalized(ls, lambda, Some(&w), opts, Some(warm))?;
        let v = weight.weighted_energy(&sol.values);
        Ok((sol, v))
    };

    let l2_max = l2.iter().fold(0.0f64, |m, v| m.max(*v));
    // first guess: penalty comparable to the l1 term at the unconstrained solution
    let l1_base: f64 = base.values.iter().map(|v| v.abs()).sum();
    let mu0 = if lambda > 0.0 && l1_base > 0.0 {
        lambda * l1_base / base_value
    } else {
        (ls.gram.max_eigenvalue() / l2_max.max(1e-300)) * 1e-4
    };
    let mut history: Vec<(f64, f64)> = vec![(0.0, base_value)];
    // bracket [lo, hi] with lo infeasible and hi feasible
    let mut lo: Option<(f64, f64)> = None;
    let mut hi: Option<(f64, LassoSolution, f64)> = None;
    let mut mu = mu0;
    let mut warm = base.values.clone();
    while mu <= prior_opts.mu_max {
        let (sol, v) = solve_at(mu, &warm)?;
        history.push((mu, v));
        if feasible(v) {
            hi = Some((mu, sol, v));
            break;
        }
        lo = Some((mu, v));
        warm = sol.values;
        mu *= 10.0;
    }
    if let (None, Some((h_mu, h_sol, _))) = (&lo, &hi) {
        let (mut mu, mut warm) = (*h_mu / 10.0, h_sol.values.clone());
        for _ in 0..30 {
            let (sol, v) = solve_at(mu, &warm)?;
            history.push((mu, v));
            if !feasible(v) {
                lo = Some((mu, v));
                break;
            }
            warm = sol.values.clone();
            hi = Some((mu, sol, v));
            mu /= 10.0;
        }
    }

    if let Some((mut hi_mu, mut hi_sol, mut hi_value)) = hi.take() {
        if let Some((mut lo_mu, lo_value)) = lo {
            // Illinois regula falsi on (ln μ, ln(v / b))
            let f = |v: f64| (v.max(1e-300) / bound).ln();
            let (mut f_lo, mut f_hi) = (f(lo_value), f(hi_value));
            let mut side = 0i8;
            let mut steps = 0;
            let tight = |v: f64| v >= bound * (1.0 - prior_opts.mu_rel_tol);
            while hi_mu > lo_mu * (1.0 + prior_opts.mu_rel_tol) && !tight(hi_value) && steps < prior_opts.max_bisections
            {
                steps += 1;
                let (a, b) = (lo_mu.ln(), hi_mu.ln());
                let mut t = if f_lo > f_hi {
                    a + (b - a) * f_lo / (f_lo - f_hi)
                } else {
                    0.5 * (a + b)
                };
                // keep a minimum step so a converged end does not stall the other
                let margin = (0.5 * prior_opts.mu_rel_tol.ln_1p()).min(0.25 * (b - a));
                if !t.is_finite() {
                    t = 0.5 * (a + b);
                }
                t = t.clamp(a + margin, b - margin);
                let mid = t.exp();
                let (sol, v) = solve_at(mid, &hi_sol.values)?;
                history.push((mid, v));
                if feasible(v) {
                    hi_mu = mid;
                    hi_value = v;
                    hi_sol = sol;
                    f_hi = f(v);
                    if side == 1 {
                        f_lo *= 0.5;
                    }
                    side = 1;
                } else {
                    lo_mu = mid;
                    f_lo = f(v);
                    if side == -1 {
                        f_hi *= 0.5;
                    }
                    side = -1;
                }
            }
        }
        // check the recorded path for monotone decrease in μ
        let mut sorted = history.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let monotone = !sorted.windows(2).any(|w| w[1].1 > w[0].1 * (1.0 + 1e-6) + 1e-15);
        if monotone {
            return Ok(PriorSolution {
                solution: hi_sol,
                mu: hi_mu,
                constraint_value: hi_value,
                bound,
                feasible: true,
                used_fallback: false,
                solves,
            });
        }
    }

    // μ-grid fallback: log-spaced scan, smallest feasible μ wins
    let points = prior_opts.fallback_grid_points.max(2);
    let start = (ls.gram.max_eigenvalue() / l2_max.max(1e-300)) * 1e-8;
    let ratio = (prior_opts.mu_max / start).powf(1.0 / (points - 1) as f64);
    let mut warm = base.values.clone();
    let mut last: Option<(f64, LassoSolution, f64)> = None;
    for k in 0..points {
        let mu = start * ratio.powi(k as i32);
        let (sol, v) = solve_at(mu, &warm)?;
        if feasible(v) {
            return Ok(PriorSolution {
                solution: sol,
                mu,
                constraint_value: v,
                bound,
                feasible: true,
                used_fallback: true,
                solves,
            });
        }
        warm = sol.values.clone();
        last = Some((mu, sol, v));
    }
    let (mu, sol, v) = last.expect("fallback grid has at least two points");
    Ok(PriorSolution {
        solution: sol,
        mu,
        constraint_value: v,
        bound,
        feasible: false,
        used_fallback: true,
        solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_lasso, Gram};

    fn grid() -> PolarGrid {
        PolarGrid::new(20, 12, 0.05, 16_000.0, 343.0).unwrap()
    }

    #[test]
    fn weight_formula() {
        let g = grid();
        let r = g.radius(8);
        let w = build_prior_weight(
            &g,
            &[Prior {
                rho: r / 2.0,
                azimuth: g.azimuth(4),
            }],
        )
        .unwrap();
        assert_eq!(w.anchors, vec![(8, 4)]);
        assert_eq!(w.values[g.index(8, 4)], 0.0);
        assert_eq!(w.values[g.index(10, 4)], 2.0);
        assert_eq!(w.values[g.index(10, 7)], 8.0);
        assert_eq!(w.values[g.index(10, 1)], 8.0);
        // circular angular distance: m = 11 is 5 steps from 4 either way... 7 one way, 5 the other
        assert_eq!(w.values[g.index(9, 11)], 1.0 * 6.0);
    }

    #[test]
    fn weights_grow_away_from_anchor() {
        let g = grid();
        let w = build_prior_weight(
            &g,
            &[Prior {
                rho: 0.15,
                azimuth: 1.0,
            }],
        )
        .unwrap();
        let (n0, m0) = w.anchors[0];
        for m in 0..12 {
            for n in 0..19 {
                let a = w.values[g.index(n, m)];
                let b = w.values[g.index(n + 1, m)];
                if n >= n0 {
                    assert!(b >= a);
                } else {
                    assert!(b <= a);
                }
            }
        }
        assert_eq!(w.values[g.index(n0, m0)], 0.0);
    }

    #[test]
    fn multiple_priors_take_minimum() {
        let g = grid();
        let a = Prior {
            rho: g.radius(5) / 2.0,
            azimuth: 0.0,
        };
        let b = Prior {
            rho: g.radius(15) / 2.0,
            azimuth: g.azimuth(6),
        };
        let both = build_prior_weight(&g, &[a, b]).unwrap();
        let wa = build_prior_weight(&g, &[a]).unwrap();
        let wb = build_prior_weight(&g, &[b]).unwrap();
        for i in 0..g.len() {
            assert_eq!(both.values[i], wa.values[i].min(wb.values[i]));
        }
    }

    #[test]
    fn out_of_range_prior_is_rejected() {
        let g = grid();
        let err = build_prior_weight(&g, &[Prior { rho: 5.0, azimuth: 0.0 }]).unwrap_err();
        assert!(matches!(err, Error::PriorOutOfRange { .. }));
        assert!(err.to_string().contains("rho=5.0000"));
        assert!(build_prior_weight(
            &g,
            &[Prior {
                rho: 0.01,
                azimuth: 0.0
            }]
        )
        .is_err());
    }

    fn small_problem() -> (Gram, Vec<f64>, f64) {
        // 3 x 4 system with correlated columns
        let a = [1.0, 0.5, 0.0, 0.2, 0.0, 1.0, 0.4, 0.0, 0.3, 0.0, 1.0, 0.6];
        let h = [1.0, 0.8, 0.9];
        let g = Gram::from_dense(&a, 3, 4);
        let rhs: Vec<f64> = (0..4).map(|j| (0..3).map(|r| a[r * 4 + j] * h[r]).sum()).collect();
        (g, rhs, h.iter().map(|v| v * v).sum())
    }

    #[test]
    fn inactive_constraint_matches_lasso() {
        let (g, rhs, off) = small_problem();
        let ls = LeastSquares::new(&g, rhs, off).unwrap();
        let lam = 0.1;
        let plain = solve_lasso(&ls, lam, &LassoOptions::default(), None).unwrap();
        let w = WeightVector {
            values: vec![1.0, 2.0, 3.0, 4.0],
            anchors: vec![],
        };
        let inf = solve_lasso_with_prior(
            &ls,
            lam,
            &w,
            f64::INFINITY,
            &LassoOptions::default(),
            &PriorOptions::default(),
        )
        .unwrap();
        assert_eq!(inf.solution.values, plain.values);
        assert_eq!(inf.mu, 0.0);
        let zero = WeightVector::zeros(4);
        let z = solve_lasso_with_prior(
            &ls,
            lam,
            &zero,
            1e-3,
            &LassoOptions::default(),
            &PriorOptions::default(),
        )
        .unwrap();
        assert_eq!(z.solution.values, plain.values);
    }

    #[test]
    fn tight_bound_is_met() {
        let (g, rhs, off) = small_problem();
        let ls = LeastSquares::new(&g, rhs, off).unwrap();
        let w = WeightVector {
            values: vec![0.0, 1.0, 2.0, 3.0],
            anchors: vec![],
        };
        let plain = solve_lasso(&ls, 0.05, &LassoOptions::default(), None).unwrap();
        let b = 0.05 * w.weighted_energy(&plain.values);
        let sol = solve_lasso_with_prior(&ls, 0.05, &w, b, &LassoOptions::default(), &PriorOptions::default()).unwrap();
        assert!(sol.feasible);
        assert!(sol.mu > 0.0);
        assert!(sol.constraint_value <= b * (1.0 + 1e-6));
        assert!(sol.solution.values[0].abs() >= sol.solution.values[1].abs());
    }

    fn coordinate_descent(ls: &LeastSquares, lambda: f64, w: &[f64]) -> Vec<f64> {
        let g = ls.gram;
        let n = ls.dim();
        let mut s = vec![0.0; n];
        for _ in 0..20_000 {
            let mut delta: f64 = 0.0;
            for i in 0..n {
                let row = g.row(i);
                let r: f64 = ls.rhs[i] - (0..n).filter(|&j| j != i).map(|j| row[j] * s[j]).sum::<f64>();
                let v = r.signum() * (r.abs() - lambda / 2.0).max(0.0) / (row[i] + w[i]);
                delta = delta.max((v - s[i]).abs());
                s[i] = v;
            }
            if delta < 1e-13 {
                break;
            }
        }
        s
    }

    #[test]
    fn penalized_solution_matches_coordinate_descent() {
        use rand::{Rng, SeedableRng};
        let g = PolarGrid::new(12, 12, 0.05, 16_000.0, 343.0).unwrap();
        let n = g.len();
        let rows = 160;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rho = (0.05 + 6.0 * g.radial_step()) / 2.0;
        let weight = build_prior_weight(&g, &[Prior { rho, azimuth: 1.0 }]).unwrap();
        for _ in 0..5 {
            let a: Vec<f64> = (0..rows * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gram = Gram::from_dense(&a, rows, n);
            let rhs: Vec<f64> = (0..n).map(|j| (0..rows).map(|r| a[r * n + j] * h[r]).sum()).collect();
            let ls = LeastSquares::new(&gram, rhs, h.iter().map(|v| v * v).sum()).unwrap();
            let lam = 0.2 * 2.0 * ls.correlation_max();
            let plain = solve_lasso(&ls, lam, &LassoOptions::default(), None).unwrap();
            let b = 0.1 * weight.weighted_energy(&plain.values);
            let sol = solve_lasso_with_prior(&ls, lam, &weight, b, &LassoOptions::default(), &PriorOptions::default())
                .unwrap();
            assert!(sol.feasible && sol.mu > 0.0);
            let pen: Vec<f64> = weight.values.iter().map(|l| sol.mu * l * l).collect();
            let oracle = coordinate_descent(&ls, lam, &pen);
            let want = ls.objective(&oracle, lam, Some(&pen));
            let got = ls.objective(&sol.solution.values, lam, Some(&pen));
            assert!((got - want).abs() <= 1e-4 * want, "{got} vs {want}");
        }
    }
}
