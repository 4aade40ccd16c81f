//! Assembly of the effective Hamiltonian `H̄(p, c)`.
//!
//! Above the flat level `H̄* = |m| + sup k`, each level `μ` has two branch
//! roots `q±(μ, x)` at every position. Their spatial averages `P±(μ)` are
//! strictly monotone in `μ`; inverting them gives `H̄` off the flat piece
//! `[p̄₋, p̄₊]`, and `H̄ = H̄*` on it. The ergodic expectation is replaced by
//! the average over one realization on `[0, L]`.
//!
//! The flat-piece endpoints are computed as the averages of the level-`H̄*`
//! roots `p±(x)`, which are the monotone limits of `q±(μ, x)` as `μ ↓ H̄*`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{CoefficientBounds, LocalHamiltonian, StrainHamiltonian};
use crate::quadrature::{gk15_from_values, kronrod_nodes, refine, NODES};

/// Panels per wavelength of the fastest mode.
const PANELS_PER_WAVELENGTH: f64 = 4.0;
const MAX_REFINE_DEPTH: u32 = 16;
const MAX_INVERSION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Upper,
    Lower,
}

/// Which part of the piecewise effective Hamiltonian a slope falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Piece {
    Lower,
    Flat,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectiveConfig {
    /// Averaging window `L`; the field's default when absent.
    pub window: Option<f64>,
    /// Samples for the bound scan; the field's default when absent.
    pub bound_samples: Option<usize>,
    /// Smallest table level above `H̄*`.
    pub eps_gap: f64,
    /// Table levels reach `H̄* + mu_span`.
    pub mu_span: f64,
    pub table_points: usize,
    /// Table rows are refined until adjacent `P₊` differ by at most this.
    pub table_max_step: f64,
    /// `|P(μ) − p|` accepted when inverting a branch.
    pub inversion_tol: f64,
    /// Absolute quadrature tolerance per unit length.
    pub quadrature_tol: f64,
}

impl Default for EffectiveConfig {
    fn default() -> Self {
        Self {
            window: None,
            bound_samples: None,
            eps_gap: 1e-3,
            mu_span: 5.0,
            table_points: 24,
            table_max_step: 0.25,
            inversion_tol: 1e-10,
            quadrature_tol: 1e-11,
        }
    }
}

impl EffectiveConfig {
    pub fn with_window(window: f64) -> Self {
        Self { window: Some(window), ..Self::default() }
    }
}

/// One quadrature panel with `(k, s)` cached at its Kronrod nodes.
#[derive(Debug, Clone)]
struct Panel {
    a: f64,
    b: f64,
    coefficients: [(f64, f64); NODES],
}

/// Quadrature layout of `[0, L]` for one realization. Independent of `c`,
/// so one window serves a whole strain curve.
#[derive(Debug, Clone)]
pub struct AveragingWindow {
    length: f64,
    panels: Vec<Panel>,
}

impl AveragingWindow {
    pub fn new(h: &StrainHamiltonian, length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!("window length {length} must be positive")));
        }
        let width = h.largest_frequency().map_or(1.0, |f| 1.0 / (PANELS_PER_WAVELENGTH * f));
        // even count so the first half is a whole number of panels
        let count = ((length / width).ceil() as usize).max(1).next_multiple_of(2);
        let step = length / count as f64;
        let panels = (0..count)
            .into_par_iter()
            .map(|i| {
                let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
                let coefficients = kronrod_nodes(a, b).map(|x| h.coefficients(x));
                Panel { a, b, coefficients }
            })
            .collect();
        Ok(Self { length, panels })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn panel_count(&self) -> usize {
        self.panels.len()
    }

    /// Averages `f(H(·, x))` over the window and over its first half.
    ///
    /// Panel sums are collected in order and added sequentially, so results
    /// do not depend on the thread count.
    pub(crate) fn average<const N: usize, F>(&self, h: &StrainHamiltonian, f: &F, tol: f64) -> ([f64; N], [f64; N])
    where
        F: Fn(&LocalHamiltonian) -> [f64; N] + Sync,
    {
        let (m, c) = (h.m(), h.c());
        let fallback = |x: f64| f(&h.local(x));
        let integrals: Vec<[f64; N]> = self
            .panels
            .par_iter()
            .map(|panel| {
                let values = panel.coefficients.map(|(k, s)| f(&LocalHamiltonian { m, c, k, s }));
                let width = panel.b - panel.a;
                let (kronrod, gauss) = gk15_from_values(&values, 0.5 * width);
                // relative once roots grow like c|s|
                let budget = tol * width * (kronrod[0] / width).abs().max(1.0);
                if (kronrod[0] - gauss[0]).abs() <= budget {
                    kronrod
                } else {
                    refine(&fallback, panel.a, panel.b, &values, budget, MAX_REFINE_DEPTH)
                }
            })
            .collect();
        let half = integrals.len() / 2;
        let mut first = [0.0; N];
        let mut total = [0.0; N];
        for (i, v) in integrals.iter().enumerate() {
            for d in 0..N {
                total[d] += v[d];
                if i < half {
                    first[d] += v[d];
                }
            }
        }
        let half_length = self.panels[..half].last().map_or(self.length, |p| p.b);
        (total.map(|v| v / self.length), first.map(|v| v / half_length))
    }
}

/// A branch average `P±(μ)` with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchAverage {
    pub level: f64,
    pub value: f64,
    /// The same average over `[0, L/2]`.
    pub half_window_value: f64,
    /// `|P(L) − P(L/2)|`, a window-truncation error estimate.
    pub window_error: f64,
    /// `dP/dμ = average of 1/∂ₚH(q)`.
    pub slope: f64,
}

/// Rows of `(μ, P₊(μ), P₋(μ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTable {
    pub flat_level: f64,
    pub p_bar_minus: f64,
    pub p_bar_plus: f64,
    pub rows: Vec<(f64, f64, f64)>,
}

impl BranchTable {
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].1 > w[0].1 && w[1].2 < w[0].2)
            && self.rows.first().map_or(true, |r| r.1 >= self.p_bar_plus && r.2 <= self.p_bar_minus)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mu,p_plus,p_minus")?;
        for (mu, pp, pm) in &self.rows {
            writeln!(out, "{mu:.12e},{pp:.12e},{pm:.12e}")?;
        }
        Ok(())
    }
}

/// `p ↦ H̄(p, c)` for one realization and one `c`.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    h: StrainHamiltonian,
    window: Arc<AveragingWindow>,
    bounds: CoefficientBounds,
    flat_level: f64,
    p_bar_minus: f64,
    p_bar_plus: f64,
    config: EffectiveConfig,
}

impl EffectiveHamiltonian {
    pub fn build(h: StrainHamiltonian, config: &EffectiveConfig) -> Result<Self> {
        let length = config.window.unwrap_or_else(|| h.default_window());
        let samples = config.bound_samples.unwrap_or_else(|| h.default_samples(length));
        let bounds = h.field_bounds(length, samples);
        let window = Arc::new(AveragingWindow::new(&h, length)?);
        Self::with_window(h, window, bounds, config)
    }

    /// Reuses a window and bounds computed for the same coefficients.
    pub fn with_window(
        h: StrainHamiltonian,
        window: Arc<AveragingWindow>,
        bounds: CoefficientBounds,
        config: &EffectiveConfig,
    ) -> Result<Self> {
        let flat_level = h.m().abs() + bounds.k_max;
        let tol = config.quadrature_tol;
        let (upper, _) = window.average(&h, &|l: &LocalHamiltonian| [l.upper_root(flat_level)], tol);
        let (lower, _) = window.average(&h, &|l: &LocalHamiltonian| [l.lower_root(flat_level)], tol);
        Ok(Self {
            h,
            window,
            bounds,
            flat_level,
            p_bar_minus: lower[0],
            p_bar_plus: upper[0],
            config: config.clone(),
        })
    }

    pub fn hamiltonian(&self) -> &StrainHamiltonian {
        &self.h
    }

    pub fn window(&self) -> &Arc<AveragingWindow> {
        &self.window
    }

    pub fn bounds(&self) -> &CoefficientBounds {
        &self.bounds
    }

    pub fn config(&self) -> &EffectiveConfig {
        &self.config
    }

    /// `H̄* = |m| + k̄`.
    pub fn flat_level(&self) -> f64 {
        self.flat_level
    }

    /// `[p̄₋, p̄₊]`.
    pub fn flat_interval(&self) -> (f64, f64) {
        (self.p_bar_minus, self.p_bar_plus)
    }

    pub fn piece(&self, p: f64) -> Piece {
        if p < self.p_bar_minus {
            Piece::Lower
        } else if p > self.p_bar_plus {
            Piece::Upper
        } else {
            Piece::Flat
        }
    }

    pub fn p_plus(&self, mu: f64) -> Result<BranchAverage> {
        self.p_branch(mu, Branch::Upper)
    }

    pub fn p_minus(&self, mu: f64) -> Result<BranchAverage> {
        self.p_branch(mu, Branch::Lower)
    }

    /// `P±(μ)`; requires `μ > H̄*`.
    pub fn p_branch(&self, mu: f64, branch: Branch) -> Result<BranchAverage> {
        if !(mu > self.flat_level) {
            return Err(Error::OutOfRange { level: mu, flat: self.flat_level });
        }
        let integrand = |l: &LocalHamiltonian| {
            let q = match branch {
                Branch::Upper => l.upper_root(mu),
                Branch::Lower => l.lower_root(mu),
            };
            let slope = l.dhdp(q);
            [q, if slope != 0.0 { 1.0 / slope } else { 0.0 }]
        };
        let (total, first) = self.window.average(&self.h, &integrand, self.config.quadrature_tol);
        Ok(BranchAverage {
            level: mu,
            value: total[0],
            half_window_value: first[0],
            window_error: (total[0] - first[0]).abs(),
            slope: total[1],
        })
    }

    /// Inverse of `P₊` (upper) or `P₋` (lower) at slope `p`.
    ///
    /// The bracket `[H̄*, H̄* + c‖s‖ + |p| + 1e-3]` is certain: on the upper
    /// branch `q₊ ≥ μ − H̄* − c‖s‖` pointwise. Inside it, Newton steps on
    /// `P(μ) − p` are taken when they stay in the bracket, else bisection.
    pub fn mu_branch(&self, p: f64, branch: Branch) -> Result<f64> {
        let (sign, flat_end) = match branch {
            Branch::Upper => (1.0, self.p_bar_plus),
            Branch::Lower => (-1.0, self.p_bar_minus),
        };
        // work with t = sign·p so that t(μ) increases
        let target = sign * p;
        if !(target > sign * flat_end) {
            return Err(Error::FlatPiece { slope: p, lower: self.p_bar_minus, upper: self.p_bar_plus });
        }
        let mut lo = self.flat_level;
        let mut hi = self.flat_level + self.h.c() * self.bounds.strain_norm() + target.max(0.0) + 1e-3;
        let mut mu = (self.flat_level + target - sign * flat_end).clamp(lo, hi);
        if !(mu > lo && mu < hi) {
            mu = 0.5 * (lo + hi);
        }
        let mut step = hi - lo;
        let mut step_before = 2.0 * step;
        for _ in 0..MAX_INVERSION_STEPS {
            let avg = self.p_branch(mu, branch)?;
            let residual = sign * avg.value - target;
            if residual.abs() < self.config.inversion_tol {
                return Ok(mu);
            }
            if residual < 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
                return Ok(mu);
            }
            let slope = sign * avg.slope;
            let newton = mu - residual / slope;
            let next = if slope.is_finite() && slope > 0.0 && newton > lo && newton < hi && (newton - mu).abs() <= 0.5 * step_before {
                newton
            } else {
                0.5 * (lo + hi)
            };
            step_before = step;
            step = (next - mu).abs();
            mu = next;
        }
        Err(Error::Divergence { iterations: MAX_INVERSION_STEPS, residual: f64::NAN })
    }

    /// Window average of `f` applied to the local Hamiltonian at each `x`.
    pub fn spatial_average<const N: usize, F>(&self, f: F) -> [f64; N]
    where
        F: Fn(&LocalHamiltonian) -> [f64; N] + Sync,
    {
        self.window.average(&self.h, &f, self.config.quadrature_tol).0
    }

    /// `H̄(p, c)`.
    pub fn eval(&self, p: f64) -> Result<f64> {
        match self.piece(p) {
            Piece::Flat => Ok(self.flat_level),
            Piece::Upper => self.mu_branch(p, Branch::Upper),
            Piece::Lower => self.mu_branch(p, Branch::Lower),
        }
    }

    /// Geometric level grid above `H̄* + eps_gap`, refined where `P₊` or
    /// `P₋` jumps by more than `table_max_step`.
    pub fn tables(&self) -> Result<BranchTable> {
        let cfg = &self.config;
        let n = cfg.table_points.max(2);
        let ratio = (cfg.mu_span / cfg.eps_gap).powf(1.0 / (n - 1) as f64);
        let levels: Vec<f64> = (0..n).map(|i| self.flat_level + cfg.eps_gap * ratio.powi(i as i32)).collect();
        let row = |mu: f64| -> Result<(f64, f64, f64)> { Ok((mu, self.p_plus(mu)?.value, self.p_minus(mu)?.value)) };
        let mut rows = levels.into_iter().map(row).collect::<Result<Vec<_>>>()?;
        for _ in 0..8 {
            let mut refined = Vec::with_capacity(rows.len() * 2);
            let mut changed = false;
            for w in rows.windows(2) {
                refined.push(w[0]);
                if (w[1].1 - w[0].1).abs() > cfg.table_max_step || (w[1].2 - w[0].2).abs() > cfg.table_max_step {
                    refined.push(row(0.5 * (w[0].0 + w[1].0))?);
                    changed = true;
                }
            }
            refined.push(*rows.last().expect("nonempty table"));
            rows = refined;
            if !changed {
                break;
            }
        }
        Ok(BranchTable { flat_level: self.flat_level, p_bar_minus: self.p_bar_minus, p_bar_plus: self.p_bar_plus, rows })
    }

    /// Samples `(p, H̄(p))` on a uniform grid of `[p_min, p_max]`.
    pub fn sample(&self, p_min: f64, p_max: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
        let n = steps.max(2);
        (0..n)
            .map(|i| {
                let p = p_min + (p_max - p_min) * i as f64 / (n - 1) as f64;
                Ok((p, self.eval(p)?))
            })
            .collect()
    }
}

/// `P₊(μ)` averaged over `[0, window]`.
pub fn p_plus(h: &StrainHamiltonian, mu: f64, window: f64) -> Result<BranchAverage> {
    EffectiveHamiltonian::build(h.clone(), &EffectiveConfig::with_window(window))?.p_plus(mu)
}

/// `P₋(μ)` averaged over `[0, window]`.
pub fn p_minus(h: &StrainHamiltonian, mu: f64, window: f64) -> Result<BranchAverage> {
    EffectiveHamiltonian::build(h.clone(), &EffectiveConfig::with_window(window))?.p_minus(mu)
}

/// Sampled sub-linear corrector `γ` of the cell problem at level `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrector {
    pub level: f64,
    /// Average slope `P₊(μ)` over the corrector's own window.
    pub slope: f64,
    pub xs: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `γ'(x) = q₊(μ, x) − P₊`.
    pub gamma_prime: Vec<f64>,
    /// `sup_{x ∈ [L/2, L]} |γ(x)|/x`.
    pub drift: f64,
}

/// Integrates `q₊(μ, ·) − P₊(μ)` cumulatively on a uniform grid of
/// `[0, length]`, with `P₊` the average over the same grid.
pub fn corrector(h: &StrainHamiltonian, mu: f64, length: f64, grid_step: f64) -> Result<Corrector> {
    if !(grid_step > 0.0 && length > 0.0) {
        return Err(Error::InvalidParameter("corrector needs positive length and grid step".into()));
    }
    let cells = (length / grid_step).ceil() as usize;
    let step = length / cells as f64;
    let root = |x: f64| -> Result<f64> { Ok(h.branch_roots(x, mu)?.q_plus) };
    let cell_integrals: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
            let xs = kronrod_nodes(a, b);
            let mut values = [[0.0]; NODES];
            for (v, x) in values.iter_mut().zip(xs) {
                v[0] = root(x)?;
            }
            Ok(gk15_from_values(&values, 0.5 * (b - a)).0[0])
        })
        .collect::<Result<_>>()?;
    let slope = cell_integrals.iter().sum::<f64>() / length;
    let xs: Vec<f64> = (0..=cells).map(|i| i as f64 * step).collect();
    let nodes: Vec<f64> = xs.par_iter().map(|&x| root(x)).collect::<Result<_>>()?;
    let mut gamma = Vec::with_capacity(cells + 1);
    let mut running = 0.0;
    gamma.push(0.0);
    for (i, integral) in cell_integrals.iter().enumerate() {
        running += integral;
        gamma.push(running - slope * xs[i + 1]);
    }
    let gamma_prime = nodes.iter().map(|q| q - slope).collect();
    let drift = xs
        .iter()
        .zip(&gamma)
        .filter(|(x, _)| **x >= 0.5 * length)
        .map(|(x, g)| g.abs() / x)
        .fold(0.0, f64::max);
    Ok(Corrector { level: mu, slope, xs, gamma, gamma_prime, drift })
}

/// `max_j |H(p + γ'(x_j), x_j) − μ|` over the corrector grid.
pub fn verify_cell(h: &StrainHamiltonian, mu: f64, p: f64, corrector: &Corrector) -> f64 {
    corrector
        .xs
        .iter()
        .zip(&corrector.gamma_prime)
        .map(|(&x, &dg)| (h.eval_h(p + dg, x) - mu).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sample_field, FieldSpec};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::SQRT_2;

    fn zero_h(m: f64, c: f64) -> StrainHamiltonian {
        StrainHamiltonian::shear(Arc::new(sample_field(&FieldSpec::zero()).unwrap()), m, c).unwrap()
    }

    fn cosine_h(m: f64, c: f64) -> StrainHamiltonian {
        StrainHamiltonian::shear(Arc::new(sample_field(&FieldSpec::periodic(0.5, 1.0)).unwrap()), m, c).unwrap()
    }

    #[test]
    fn zero_field_branches_are_explicit() {
        let eff = EffectiveHamiltonian::build(zero_h(1.0, 0.3), &EffectiveConfig::with_window(10.0)).unwrap();
        assert_eq!(eff.flat_level(), 1.0);
        assert_eq!(eff.flat_interval(), (0.0, 0.0));
        assert_abs_diff_eq!(eff.p_plus(SQRT_2).unwrap().value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eff.p_minus(SQRT_2).unwrap().value, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eff.mu_branch(1.0, Branch::Upper).unwrap(), SQRT_2, epsilon = 1e-10);
        assert_abs_diff_eq!(eff.eval(0.0).unwrap(), 1.0);
        assert!(matches!(eff.p_plus(1.0), Err(Error::OutOfRange { .. })));
        assert!(matches!(eff.mu_branch(0.0, Branch::Upper), Err(Error::FlatPiece { .. })));
    }

    #[test]
    fn cosine_flat_piece_contains_zero() {
        let eff = EffectiveHamiltonian::build(cosine_h(1.0, 0.0), &EffectiveConfig::with_window(20.0)).unwrap();
        assert_abs_diff_eq!(eff.flat_level(), 1.5, epsilon = 1e-14);
        let (lo, hi) = eff.flat_interval();
        assert!(lo < 0.0 && hi > 0.0);
        assert_abs_diff_eq!(lo, -hi, epsilon = 1e-10);
        assert_eq!(eff.eval(0.0).unwrap(), 1.5);
    }

    #[test]
    fn symmetric_field_branches_mirror_at_zero_strain() {
        let eff = EffectiveHamiltonian::build(cosine_h(1.0, 0.0), &EffectiveConfig::with_window(20.0)).unwrap();
        for mu in [1.6, 2.0, 3.0] {
            let pp = eff.p_plus(mu).unwrap().value;
            let pm = eff.p_minus(mu).unwrap().value;
            assert_abs_diff_eq!(pm, -pp, epsilon = 1e-10);
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let eff = EffectiveHamiltonian::build(cosine_h(0.6, 0.4), &EffectiveConfig::with_window(10.0)).unwrap();
        let mu = 1.3;
        let d = 1e-5;
        let fd = (eff.p_plus(mu + d).unwrap().value - eff.p_plus(mu - d).unwrap().value) / (2.0 * d);
        assert_abs_diff_eq!(eff.p_plus(mu).unwrap().slope, fd, epsilon = 1e-6);
    }

    #[test]
    fn tables_are_monotone() {
        let mut cfg = EffectiveConfig::with_window(10.0);
        cfg.table_points = 8;
        let eff = EffectiveHamiltonian::build(cosine_h(0.6, 0.5), &cfg).unwrap();
        let t = eff.tables().unwrap();
        assert!(t.is_monotone());
        assert!(t.p_bar_minus <= t.p_bar_plus);
        assert!(t.rows.windows(2).all(|w| (w[1].1 - w[0].1) <= cfg.table_max_step + 1e-12));
    }

    #[test]
    fn zero_field_corrector_vanishes() {
        let c = corrector(&zero_h(1.0, 0.0), 2.0, 50.0, 0.1).unwrap();
        assert!(c.gamma.iter().all(|g| g.abs() < 1e-12));
        assert_abs_diff_eq!(c.slope, 3f64.sqrt(), epsilon = 1e-12);
        assert_eq!(verify_cell(&zero_h(1.0, 0.0), 2.0, c.slope, &c) < 1e-12, true);
    }

    #[test]
    fn cell_residual_detects_perturbed_slope() {
        let h = cosine_h(0.6, 0.3);
        let c = corrector(&h, 1.4, 20.0, 0.05).unwrap();
        assert!(verify_cell(&h, 1.4, c.slope, &c) < 1e-8);
        assert!(verify_cell(&h, 1.4, c.slope + 0.01, &c) > 1e-3);
    }

    #[test]
    fn periodic_corrector_is_periodic() {
        let h = cosine_h(1.0, 0.2);
        let c = corrector(&h, 2.0, 100.0, 0.05).unwrap();
        // one grid point per 20 cells lands on an integer period
        let at_periods: Vec<f64> = c.gamma.iter().step_by(20).copied().collect();
        assert!(at_periods.iter().all(|g| g.abs() < 1e-9));
        let amplitude = c.gamma.iter().fold(0.0, |a: f64, g| a.max(g.abs()));
        assert!(c.drift <= amplitude / 50.0 + 1e-12);
        let longer = corrector(&h, 2.0, 500.0, 0.05).unwrap();
        assert!(longer.drift <= 1e-3, "drift {}", longer.drift);
    }
}
