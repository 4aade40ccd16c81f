//! Vanishing-discount approximation
//!
//! ```text
//! δu + H(p + u', x) = K   on [-L, L],   u'(±L) = 0
//! ```
//!
//! discretized with the Lax–Friedrichs numerical Hamiltonian on a uniform
//! grid through `x = 0`. Reflecting ends avoid the one-cell layers that
//! incompatible Dirichlet data create at outflow boundaries; either way the
//! truncation error at `x = 0` decays like `exp(−δL/θ)`. The scheme is monotone once the viscosity `θ`
//! bounds `|∂ₚH|`, so its Jacobian is a strictly diagonally dominant
//! M-matrix; the discrete system is solved by damped Newton steps with a
//! tridiagonal solve, continued down from a large discount rate. `−δu(0) → H̄(p)` as `δ → 0` (for `K = 0`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::StrainHamiltonian;

const CHUNK: usize = 4096;
const MAX_BACKTRACKS: usize = 30;
/// Consecutive uphill full Newton steps allowed, and how far uphill.
const MAX_UPHILL: usize = 4;
const UPHILL_FACTOR: f64 = 1e6;
/// First rung of the continuation ladder and the ratio between rungs.
const LADDER_START: f64 = 8.0;
const LADDER_RATIO: f64 = 2.0;
/// Newton budget on intermediate rungs before the rung is split.
const RUNG_ITERATIONS: usize = 30;
const MAX_SPLITS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountProblem {
    pub delta: f64,
    pub p: f64,
    /// Half-length of `[-L, L]`; `domain_factor·θ/δ` when absent.
    pub half_length: Option<f64>,
    pub domain_factor: f64,
    pub grid_step: f64,
    /// Replaces the analytic `1 + c‖s‖/|m|`.
    pub theta_override: Option<f64>,
    /// Constant source `K`.
    pub source: f64,
    /// Sup-norm residual target, relative to `max(1, sup|H(p, ·)|)`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl DiscountProblem {
    pub fn new(delta: f64, p: f64, grid_step: f64) -> Self {
        Self {
            delta,
            p,
            half_length: None,
            domain_factor: 10.0,
            grid_step,
            theta_override: None,
            source: 0.0,
            tol: 1e-8,
            max_iterations: 200,
        }
    }

    /// `1 + c‖s‖/|m|` bounds `|∂ₚH|` for every `p` and `x`.
    pub fn theta(&self, h: &StrainHamiltonian) -> f64 {
        self.theta_override.unwrap_or_else(|| 1.0 + h.c() * h.strain_sup_bound() / h.m().abs())
    }

    pub fn domain(&self, h: &StrainHamiltonian) -> f64 {
        self.half_length.unwrap_or_else(|| self.domain_factor * self.theta(h) / self.delta)
    }

    fn validate(&self, h: &StrainHamiltonian) -> Result<()> {
        let theta = self.theta(h);
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("discount rate {} must be positive", self.delta)));
        }
        if !(self.grid_step > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter("grid step must be positive and slope finite".into()));
        }
        if !(theta >= 1.0) {
            return Err(Error::InvalidParameter(format!("viscosity {theta} below the gradient bound 1")));
        }
        let domain = self.domain(h);
        if domain < 3.0 * theta / self.delta * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!(
                "domain half-length {domain} below 3θ/δ = {}",
                3.0 * theta / self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountSolution {
    pub delta: f64,
    pub p: f64,
    pub theta: f64,
    pub grid_step: f64,
    pub half_length: f64,
    pub iterations: usize,
    /// Final sup-norm residual of the discrete equation.
    pub residual: f64,
    /// `−δu(0)`.
    pub estimate: f64,
    /// `sup |δu|` over the grid.
    pub sup_scaled: f64,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl DiscountSolution {
    /// Grid position of `values[i]`.
    pub fn position(&self, i: usize) -> f64 {
        (i as f64 - ((self.values.len() - 1) / 2) as f64) * self.grid_step
    }
}

struct Grid<'a> {
    h: &'a StrainHamiltonian,
    coefficients: &'a [(f64, f64)],
    step: f64,
    p: f64,
    delta: f64,
    theta: f64,
    source: f64,
}

impl Grid<'_> {
    fn with_delta(&self, delta: f64) -> Grid<'_> {
        Grid { delta, ..*self }
    }

    fn gradient(&self, u: &[f64], i: usize) -> f64 {
        self.p + (u[i + 1] - u[i - 1]) / (2.0 * self.step)
    }

    fn local(&self, i: usize) -> crate::hamiltonian::LocalHamiltonian {
        let (k, s) = self.coefficients[i];
        crate::hamiltonian::LocalHamiltonian { m: self.h.m(), c: self.h.c(), k, s }
    }

    fn residual_at(&self, u: &[f64], i: usize) -> f64 {
        let lap = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (2.0 * self.step);
        self.delta * u[i] + self.local(i).eval(self.gradient(u, i)) - self.theta * lap - self.source
    }

    /// Residuals; the end rows impose `u₀ = u₁` and `u_{n-1} = u_{n-2}`.
    fn residual(&self, u: &[f64], out: &mut [f64]) -> f64 {
        let n = u.len();
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            for (j, r) in chunk.iter_mut().enumerate() {
                let i = c * CHUNK + j;
                *r = if i == 0 {
                    u[0] - u[1]
                } else if i == n - 1 {
                    u[n - 1] - u[n - 2]
                } else {
                    self.residual_at(u, i)
                };
            }
        });
        out.par_iter().map(|r| r.abs()).reduce(|| 0.0, f64::max)
    }

    /// Tridiagonal Jacobian rows `(lower, diagonal, upper)`.
    fn jacobian(&self, u: &[f64], lower: &mut [f64], diag: &mut [f64], upper: &mut [f64]) {
        let n = u.len();
        let centre = self.delta + self.theta / self.step;
        let scale = 0.5 / self.step;
        lower
            .par_chunks_mut(CHUNK)
            .zip(diag.par_chunks_mut(CHUNK))
            .zip(upper.par_chunks_mut(CHUNK))
            .enumerate()
            .for_each(|(c, ((lo, di), up))| {
                for j in 0..lo.len() {
                    let i = c * CHUNK + j;
                    if i == 0 {
                        (lo[j], di[j], up[j]) = (0.0, 1.0, -1.0);
                    } else if i == n - 1 {
                        (lo[j], di[j], up[j]) = (-1.0, 1.0, 0.0);
                    } else {
                        let slope = self.local(i).dhdp(self.gradient(u, i));
                        (lo[j], di[j], up[j]) = (-(slope + self.theta) * scale, centre, (slope - self.theta) * scale);
                    }
                }
            });
    }
}

/// Thomas algorithm; `rhs` is overwritten with the solution.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &mut [f64], rhs: &mut [f64]) {
    let n = diag.len();
    upper[0] /= diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let pivot = diag[i] - lower[i] * upper[i - 1];
        upper[i] /= pivot;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= upper[i] * rhs[i + 1];
    }
}

/// Newton on the discrete system at the grid's current `δ`.
///
/// For convex `H` a full Newton step lands on a supersolution, from which the
/// iteration decreases monotonically, even though the residual may first
/// grow. Full steps are therefore accepted uphill a few times in a row;
/// if that does not pay off the best iterate is restored and steps are
/// halved until the sup residual drops. Returns the iteration count and
/// final sup residual.
fn newton(grid: &Grid, u: &mut Vec<f64>, target: f64, max_iterations: usize) -> Result<(usize, f64)> {
    let n = u.len();
    let mut res = vec![0.0; n];
    let (mut lower, mut diag, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut trial = vec![0.0; n];
    let mut direction = vec![0.0; n];
    let mut norm = grid.residual(u, &mut res);
    let mut best = u.clone();
    let mut best_norm = norm;
    // uphill steps taken since `best`, and whether more are allowed
    let mut uphill = 0;
    let mut watchdog_armed = true;
    let mut iterations = 0;
    while norm > target {
        if iterations == max_iterations {
            return Err(Error::Divergence { iterations, residual: best_norm.min(norm) });
        }
        iterations += 1;
        grid.jacobian(u, &mut lower, &mut diag, &mut upper);
        direction.iter_mut().zip(&res).for_each(|(d, r)| *d = -r);
        solve_tridiagonal(&lower, &diag, &mut upper, &mut direction);

        let mut damping = 1.0;
        let mut accepted = false;
        for attempt in 0..MAX_BACKTRACKS {
            trial.par_iter_mut().zip(&*u).zip(&direction).for_each(|((t, a), d)| *t = a + damping * d);
            let trial_norm = grid.residual(&trial, &mut res);
            let watchdog = attempt == 0 && watchdog_armed && uphill < MAX_UPHILL && trial_norm <= UPHILL_FACTOR * best_norm;
            if trial_norm < norm || watchdog {
                if trial_norm >= norm {
                    uphill += 1;
                }
                std::mem::swap(u, &mut trial);
                norm = trial_norm;
                accepted = true;
                break;
            }
            if attempt == 0 && uphill > 0 {
                // the uphill excursion failed: back to the best iterate
                u.copy_from_slice(&best);
                norm = grid.residual(u, &mut res);
                uphill = 0;
                watchdog_armed = false;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if !accepted {
            return Err(Error::Divergence { iterations, residual: norm });
        }
        if norm < best_norm {
            best.copy_from_slice(u);
            best_norm = norm;
            uphill = 0;
            watchdog_armed = true;
        }
        log::trace!("δ={} newton {iterations}: residual {norm:e} damping {damping}", grid.delta);
    }
    Ok((iterations, norm))
}

/// Solves the discounted problem for one `(δ, p)`.
///
/// Newton alone cannot bridge the `O(1/δ)` gap between a constant guess and
/// the solution, so the rate is lowered along a ladder `δ₀, δ₀/2, …, δ`.
/// At `δ₀` the frozen profile `(K − H(p, x))/δ₀` is nearly exact; each
/// later rung starts from the previous solution shifted by a constant.
/// A rung that stalls is replaced by the geometric midpoint of its ends.
/// All rungs share the grid of the target problem.
pub fn solve_discounted(problem: &DiscountProblem, h: &StrainHamiltonian) -> Result<DiscountSolution> {
    problem.validate(h)?;
    let theta = problem.theta(h);
    let half_cells = (problem.domain(h) / problem.grid_step).ceil() as usize;
    let n = 2 * half_cells + 1;
    let step = problem.grid_step;
    let position = |i: usize| (i as f64 - half_cells as f64) * step;
    let coefficients: Vec<(f64, f64)> = (0..n).into_par_iter().map(|i| h.coefficients(position(i))).collect();
    let grid = Grid { h, coefficients: &coefficients, step, p: problem.p, delta: problem.delta, theta, source: problem.source };

    let frozen: Vec<f64> = (0..n).into_par_iter().map(|i| problem.source - grid.local(i).eval(problem.p)).collect();
    let scale = frozen.iter().fold(1.0, |a: f64, v| a.max((v - problem.source).abs()));
    let target = problem.tol * scale;

    let mut delta = problem.delta;
    while delta < LADDER_START {
        delta *= LADDER_RATIO;
    }
    let mut u: Vec<f64> = frozen.iter().map(|v| v / delta).collect();
    let (mut iterations, mut norm) = newton(&grid.with_delta(delta), &mut u, target, problem.max_iterations)?;
    let mut ratio = LADDER_RATIO;
    let mut splits = 0;
    while delta > problem.delta {
        let next = (delta / ratio).max(problem.delta);
        // a constant shift keeps u' and moves δu(0) onto the new rung
        let shift = u[half_cells] * (delta / next - 1.0);
        let mut trial: Vec<f64> = u.par_iter().map(|v| v + shift).collect();
        let budget = if next == problem.delta { problem.max_iterations } else { RUNG_ITERATIONS };
        match newton(&grid.with_delta(next), &mut trial, target, budget.min(problem.max_iterations)) {
            Ok((its, r)) => {
                iterations += its;
                norm = r;
                u = trial;
                delta = next;
                ratio = LADDER_RATIO;
            }
            Err(Error::Divergence { iterations: its, .. }) if splits < MAX_SPLITS => {
                iterations += its;
                splits += 1;
                ratio = (delta / next).sqrt();
                log::debug!("rung δ = {next} stalled; retrying with ratio {ratio}");
            }
            Err(e) => return Err(e),
        }
    }
    let sup_scaled = u.par_iter().map(|v| (problem.delta * v).abs()).reduce(|| 0.0, f64::max);
    Ok(DiscountSolution {
        delta: problem.delta,
        p: problem.p,
        theta,
        grid_step: step,
        half_length: half_cells as f64 * step,
        iterations,
        residual: norm,
        estimate: -problem.delta * u[half_cells],
        sup_scaled,
        values: u,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountEstimate {
    pub delta: f64,
    pub grid_step: f64,
    pub estimate: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingDiscount {
    pub p: f64,
    pub entries: Vec<DiscountEstimate>,
    /// Linear extrapolation to `δ = 0` through the two smallest rates.
    pub extrapolated: f64,
}

impl VanishingDiscount {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "delta,grid_step,estimate,iterations,residual")?;
        for e in &self.entries {
            writeln!(out, "{:.6e},{:.6e},{:.12e},{},{:.3e}", e.delta, e.grid_step, e.estimate, e.iterations, e.residual)?;
        }
        writeln!(out, "0,0,{:.12e},0,0", self.extrapolated)?;
        Ok(())
    }
}

/// Solves for each `δ` in a decreasing list. The grid step is
/// `grid_ratio·δ`, so consistency errors in `δ` and `Δx` shrink together
/// and a linear extrapolation removes both leading terms.
pub fn vanishing_discount_estimate(
    h: &StrainHamiltonian,
    p: f64,
    deltas: &[f64],
    grid_ratio: f64,
    template: &DiscountProblem,
) -> Result<VanishingDiscount> {
    if !(grid_ratio > 0.0) {
        return Err(Error::InvalidParameter(format!("grid ratio {grid_ratio} must be positive")));
    }
    vanishing_discount_with(h, p, deltas, |delta| grid_ratio * delta, template)
}

/// Like [`vanishing_discount_estimate`] with an arbitrary rule `δ ↦ Δx`.
pub fn vanishing_discount_with<S: Fn(f64) -> f64>(
    h: &StrainHamiltonian,
    p: f64,
    deltas: &[f64],
    grid_step: S,
    template: &DiscountProblem,
) -> Result<VanishingDiscount> {
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidParameter("discount rates must be positive".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("discount rates must be strictly decreasing".into()));
    }
    let mut entries = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let problem = DiscountProblem { delta, p, grid_step: grid_step(delta), ..template.clone() };
        let sol = solve_discounted(&problem, h)?;
        entries.push(DiscountEstimate {
            delta,
            grid_step: sol.grid_step,
            estimate: sol.estimate,
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    let extrapolated = match entries.as_slice() {
        [.., a, b] => b.estimate - b.delta * (a.estimate - b.estimate) / (a.delta - b.delta),
        [only] => only.estimate,
        [] => unreachable!(),
    };
    Ok(VanishingDiscount { p, entries, extrapolated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sample_field, FieldSpec};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn h_of(spec: FieldSpec, m: f64, c: f64) -> StrainHamiltonian {
        StrainHamiltonian::shear(Arc::new(sample_field(&spec).unwrap()), m, c).unwrap()
    }

    fn small(delta: f64, p: f64, dx: f64) -> DiscountProblem {
        DiscountProblem { domain_factor: 3.0, ..DiscountProblem::new(delta, p, dx) }
    }

    #[test]
    fn zero_field_constant_solutions() {
        let h = h_of(FieldSpec::zero(), 1.0, 0.5);
        let s0 = solve_discounted(&small(0.1, 0.0, 0.05), &h).unwrap();
        assert_abs_diff_eq!(s0.estimate, 1.0, epsilon = 1e-12);
        let s1 = solve_discounted(&small(0.1, 1.0, 0.05), &h).unwrap();
        assert_abs_diff_eq!(s1.estimate, 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(s1.iterations, 0);
    }

    #[test]
    fn rejects_short_domain_and_bad_rates() {
        let h = h_of(FieldSpec::zero(), 1.0, 0.0);
        let mut p = small(0.1, 0.0, 0.05);
        p.half_length = Some(10.0);
        assert!(matches!(solve_discounted(&p, &h), Err(Error::Precondition(_))));
        assert!(solve_discounted(&small(0.0, 0.0, 0.05), &h).is_err());
        assert!(vanishing_discount_estimate(&h, 0.0, &[0.1, 0.2], 0.5, &small(0.1, 0.0, 0.05)).is_err());
    }

    #[test]
    fn source_shift_moves_solution_by_k_over_delta() {
        let h = h_of(FieldSpec::periodic(0.5, 1.0), 1.0, 0.3);
        let base = solve_discounted(&small(0.2, 0.4, 0.02), &h).unwrap();
        let shifted = solve_discounted(&DiscountProblem { source: 1.0, ..small(0.2, 0.4, 0.02) }, &h).unwrap();
        let worst = base
            .values
            .iter()
            .zip(&shifted.values)
            .map(|(a, b)| (b - a - 1.0 / 0.2).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "shift error {worst}");
    }

    #[test]
    fn scaled_solution_is_bounded_by_hamiltonian() {
        let h = h_of(FieldSpec::periodic(0.5, 1.0), 0.6, 0.5);
        let sol = solve_discounted(&small(0.1, 0.8, 0.02), &h).unwrap();
        let bound = (0..2000).map(|i| h.eval_h(0.8, i as f64 * 1e-3).abs()).fold(0.0, f64::max);
        assert!(sol.sup_scaled <= bound + 1e-6);
    }

    #[test]
    fn strain_comparison_bound_per_delta() {
        let a = h_of(FieldSpec::periodic(0.5, 1.0), 0.6, 0.1);
        let b = a.with_markstein(0.4).unwrap();
        let norm = a.strain_sup_bound();
        let pr = DiscountProblem { half_length: Some(3.0 * (1.0 + 0.4 * norm / 0.6) / 0.1), ..small(0.1, 0.8, 0.02) };
        let ua = solve_discounted(&pr, &a).unwrap();
        let ub = solve_discounted(&pr, &b).unwrap();
        assert!((ua.estimate - ub.estimate).abs() <= norm * 0.3 + 1e-9);
    }

    #[test]
    fn extrapolation_is_exact_on_zero_field() {
        let h = h_of(FieldSpec::zero(), 1.0, 0.0);
        let v = vanishing_discount_estimate(&h, 1.0, &[0.2, 0.1, 0.05], 0.5, &small(0.1, 1.0, 0.05)).unwrap();
        assert!(v.entries.iter().all(|e| (e.estimate - 2f64.sqrt()).abs() < 1e-12));
        assert_abs_diff_eq!(v.extrapolated, 2f64.sqrt(), epsilon = 1e-12);
    }
}
