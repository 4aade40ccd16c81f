//! The strain curve `h(c) = H̄(m, n, c)` and its structural checks.
//!
//! For a unit slope `(m, n)` and shear flow `v`, the 2-d problem reduces to
//! the 1-d Hamiltonian with `k = m·v`, `s = m·v'` evaluated at `p = n`.
//! The curve is Lipschitz with constant `‖s‖ = sup|s|`, strictly decreasing
//! while above the flat level `H̄* = |m| + sup k`, and equal to `H̄*` once
//! `c` exceeds the explicit threshold
//!
//! ```text
//! c̄ = 2/(τm²)·((2n/α)³ + m²·(2n/α)),   τ = |inf s|,   α = |{s < −τ/2}|
//! ```
//!
//! A negative `n` is handled by the mirror `(n, s) → (−n, −s)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{AveragingWindow, EffectiveConfig, EffectiveHamiltonian, Piece};
use crate::error::{Error, Result};
use crate::field::{level_fraction, FieldRealization};
use crate::hamiltonian::{CoefficientBounds, LocalHamiltonian, StrainHamiltonian};
use crate::quadrature::integrate_adaptive;

/// Grid cap for pointwise diagnostics.
const MAX_SAMPLES: usize = 4_000_000;
/// Ramp width of the witness bumps, as a fraction of each interval.
const RAMP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrainConfig {
    pub effective: EffectiveConfig,
    /// Accepted excess of `|Δh|/(‖s‖Δc)` over 1.
    pub lipschitz_slack: f64,
    /// Largest accepted increase `Δh` between adjacent curve points.
    pub monotone_tol: f64,
    /// Points with `h > H̄* + strict_margin` must drop by `strict_drop`.
    pub strict_margin: f64,
    pub strict_drop: f64,
    /// `|h − H̄*|` accepted past the quench threshold.
    pub quench_tol: f64,
    /// Accepted excess of `max H(n + φ')` over `H̄*`.
    pub witness_tol: f64,
    /// Tolerance of a single averaged quantity; sandwich checks use twice it.
    pub averaging_tol: f64,
    /// Minimum `h(0) − h(c)` for the strict-reduction check.
    pub gap_tol: f64,
    /// Step for central differences in `c`.
    pub derivative_step: f64,
    /// Claim 1 and the identity need `h > H̄* + hypothesis_margin`.
    pub hypothesis_margin: f64,
    /// Pointwise diagnostics sample this many points per shortest wavelength.
    pub samples_per_wavelength: f64,
    /// Sampling density for the level fraction `α`.
    pub fraction_samples_per_wavelength: f64,
}

impl Default for StrainConfig {
    fn default() -> Self {
        Self {
            // curve checks resolve h to 1e-3; roots grow like c|s| past the quench
            effective: EffectiveConfig { quadrature_tol: 1e-9, ..EffectiveConfig::default() },
            lipschitz_slack: 0.05,
            monotone_tol: 1e-3,
            strict_margin: 1e-2,
            strict_drop: 1e-3,
            quench_tol: 1e-3,
            witness_tol: 1e-6,
            averaging_tol: 1e-4,
            gap_tol: 1e-3,
            derivative_step: 1e-3,
            hypothesis_margin: 1e-3,
            samples_per_wavelength: 32.0,
            fraction_samples_per_wavelength: 4096.0,
        }
    }
}

/// `τ` and `α` of the strain coefficient over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub tau: f64,
    pub alpha: f64,
    pub window: f64,
}

/// One realization, one unit slope, every `c`.
///
/// The averaging window and coefficient bounds do not depend on `c` and
/// are shared by every point of a curve.
#[derive(Debug, Clone)]
pub struct StrainProblem {
    base: StrainHamiltonian,
    n: f64,
    window: Arc<AveragingWindow>,
    bounds: CoefficientBounds,
    config: StrainConfig,
}

fn check_unit(m: f64, n: f64) -> Result<()> {
    if !(m.is_finite() && n.is_finite()) || ((m * m + n * n) - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("slope ({m}, {n}) is not a unit vector")));
    }
    Ok(())
}

impl StrainProblem {
    /// Shear flow `v` at unit slope `(m, n)`, `m ≠ 0`.
    pub fn shear(field: Arc<FieldRealization>, m: f64, n: f64, config: &StrainConfig) -> Result<Self> {
        check_unit(m, n)?;
        Self::from_hamiltonian(StrainHamiltonian::shear(field, m, 0.0)?, n, config)
    }

    /// Any Hamiltonian; its own `c` is ignored.
    pub fn from_hamiltonian(h: StrainHamiltonian, n: f64, config: &StrainConfig) -> Result<Self> {
        let base = if n < 0.0 { h.mirrored() } else { h };
        let length = config.effective.window.unwrap_or_else(|| base.default_window());
        let samples = config.effective.bound_samples.unwrap_or_else(|| base.default_samples(length));
        let bounds = base.field_bounds(length, samples);
        let window = Arc::new(AveragingWindow::new(&base, length)?);
        Ok(Self { base, n: n.abs(), window, bounds, config: config.clone() })
    }

    pub fn m(&self) -> f64 {
        self.base.m()
    }

    /// `|n|`; negative slopes are mirrored on construction.
    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn bounds(&self) -> &CoefficientBounds {
        &self.bounds
    }

    pub fn config(&self) -> &StrainConfig {
        &self.config
    }

    pub fn hamiltonian(&self) -> &StrainHamiltonian {
        &self.base
    }

    pub fn window_length(&self) -> f64 {
        self.window.length()
    }

    pub fn flat_level(&self) -> f64 {
        self.m().abs() + self.bounds.k_max
    }

    pub fn strain_norm(&self) -> f64 {
        self.bounds.strain_norm()
    }

    pub fn at(&self, c: f64) -> Result<EffectiveHamiltonian> {
        let h = self.base.with_markstein(c)?;
        EffectiveHamiltonian::with_window(h, self.window.clone(), self.bounds, &self.config.effective)
    }

    /// `h(c)`.
    pub fn h(&self, c: f64) -> Result<f64> {
        self.at(c)?.eval(self.n)
    }

    pub fn field_stats(&self) -> FieldStats {
        let tau = (-self.bounds.s_min).max(0.0);
        let length = self.window.length();
        let fmax = self.base.largest_frequency().unwrap_or(1.0);
        let count = ((2.0 * length * fmax * self.config.fraction_samples_per_wavelength).ceil() as usize)
            .clamp(16, 8 * MAX_SAMPLES);
        let alpha = level_fraction(|x| self.base.coefficients(x).1, -0.5 * tau, length, count);
        FieldStats { tau, alpha, window: length }
    }

    pub fn quench_threshold(&self) -> Result<f64> {
        quench_threshold(&self.field_stats(), self.m(), self.n)
    }

    fn sample_count(&self, length: f64) -> usize {
        let fmax = self.base.largest_frequency().unwrap_or(1.0);
        ((length * fmax * self.config.samples_per_wavelength).ceil() as usize).clamp(16, MAX_SAMPLES)
    }

    fn sample_positions(&self) -> Vec<f64> {
        let length = self.window.length();
        let count = self.sample_count(length);
        let step = length / count as f64;
        (0..count).map(|i| (i as f64 + 0.5) * step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub c: f64,
    pub h: f64,
    pub piece: Piece,
    pub p_bar_minus: f64,
    pub p_bar_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrainCurve {
    pub m: f64,
    pub n: f64,
    pub flat_level: f64,
    pub strain_norm: f64,
    pub window: f64,
    pub points: Vec<CurvePoint>,
}

impl StrainCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "c,h,flat_flag,p_bar_minus,p_bar_plus")?;
        for p in &self.points {
            let flag = u8::from(p.piece == Piece::Flat);
            writeln!(out, "{:.12e},{:.12e},{flag},{:.12e},{:.12e}", p.c, p.h, p.p_bar_minus, p.p_bar_plus)?;
        }
        Ok(())
    }

    /// First grid point from which `h` stays within `tol` of `H̄*`.
    pub fn empirical_quench_point(&self, tol: f64) -> Option<f64> {
        let last_above = self.points.iter().rposition(|p| p.h > self.flat_level + tol);
        match last_above {
            None => self.points.first().map(|p| p.c),
            Some(i) => self.points.get(i + 1).map(|p| p.c),
        }
    }
}

/// Bisects between the last grid point above `H̄* + tol` and the next one,
/// `steps` times. `None` when the curve never reaches the flat level or is
/// flat from its first point.
pub fn refine_quench_point(problem: &StrainProblem, curve: &StrainCurve, tol: f64, steps: usize) -> Result<Option<f64>> {
    let above = |h: f64| h > curve.flat_level + tol;
    let Some(i) = curve.points.iter().rposition(|p| above(p.h)) else {
        return Ok(None);
    };
    let Some(next) = curve.points.get(i + 1) else {
        return Ok(None);
    };
    let (mut lo, mut hi) = (curve.points[i].c, next.c);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if above(problem.h(mid)?) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(hi))
}

/// `h(c)` at every `c` of a sorted nonnegative grid.
pub fn strain_curve(problem: &StrainProblem, c_grid: &[f64]) -> Result<StrainCurve> {
    if c_grid.is_empty() || c_grid.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(Error::InvalidParameter("c grid must be nonempty, finite and nonnegative".into()));
    }
    if c_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("c grid must be sorted".into()));
    }
    let points = c_grid
        .par_iter()
        .map(|&c| {
            let eff = problem.at(c)?;
            let (p_bar_minus, p_bar_plus) = eff.flat_interval();
            Ok(CurvePoint { c, h: eff.eval(problem.n)?, piece: eff.piece(problem.n), p_bar_minus, p_bar_plus })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StrainCurve {
        m: problem.m(),
        n: problem.n,
        flat_level: problem.flat_level(),
        strain_norm: problem.strain_norm(),
        window: problem.window_length(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `max |Δh|/(‖s‖·Δc)` over adjacent pairs; zero for constant curves.
    pub max_ratio: f64,
    pub passed: bool,
}

pub fn check_lipschitz(curve: &StrainCurve, slack: f64) -> Result<LipschitzReport> {
    if curve.points.len() < 2 {
        return Err(Error::InvalidParameter("a Lipschitz check needs two curve points".into()));
    }
    let max_ratio = curve
        .points
        .windows(2)
        .filter(|w| w[1].c > w[0].c)
        .map(|w| {
            let dh = (w[1].h - w[0].h).abs();
            if dh == 0.0 {
                0.0
            } else {
                dh / (curve.strain_norm * (w[1].c - w[0].c))
            }
        })
        .fold(0.0, f64::max);
    Ok(LipschitzReport { max_ratio, passed: max_ratio <= 1.0 + slack })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    /// Largest `h(c_{i+1}) − h(c_i)`.
    pub max_increase: f64,
    /// Smallest drop among points more than `strict_margin` above `H̄*`;
    /// `None` when no point qualifies.
    pub min_strict_drop: Option<f64>,
    pub passed: bool,
}

pub fn check_monotone(curve: &StrainCurve, config: &StrainConfig) -> MonotoneReport {
    let mut max_increase = f64::NEG_INFINITY;
    let mut min_strict_drop: Option<f64> = None;
    for w in curve.points.windows(2) {
        let drop = w[0].h - w[1].h;
        max_increase = max_increase.max(-drop);
        if w[0].h > curve.flat_level + config.strict_margin {
            min_strict_drop = Some(min_strict_drop.map_or(drop, |d| d.min(drop)));
        }
    }
    let passed = max_increase <= config.monotone_tol && min_strict_drop.map_or(true, |d| d > config.strict_drop);
    MonotoneReport { max_increase: max_increase.max(0.0), min_strict_drop, passed }
}

/// `c̄ = 2/(τm²)·((2n/α)³ + m²·(2n/α))`, with `n → |n|`.
pub fn quench_threshold(stats: &FieldStats, m: f64, n: f64) -> Result<f64> {
    if m == 0.0 || !m.is_finite() {
        return Err(Error::UndefinedThreshold("m must be nonzero".into()));
    }
    if !(stats.tau > 0.0) {
        return Err(Error::UndefinedThreshold("strain is constant (τ = 0)".into()));
    }
    if !(stats.alpha > 0.0 && stats.alpha < 1.0) {
        return Err(Error::UndefinedThreshold(format!("level fraction {} outside (0, 1)", stats.alpha)));
    }
    let t = 2.0 * n.abs() / stats.alpha;
    let m2 = m * m;
    Ok(2.0 / (stats.tau * m2) * (t.powi(3) + m2 * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuenchVerdict {
    pub c: f64,
    pub c_bar: f64,
    pub h: f64,
    pub flat_level: f64,
    pub passed: bool,
}

/// `h(c) = H̄*` for `c > c̄`.
pub fn quench_check(problem: &StrainProblem, c: f64) -> Result<QuenchVerdict> {
    let c_bar = problem.quench_threshold()?;
    if !(c > c_bar) {
        return Err(Error::Precondition(format!("c = {c} does not exceed the threshold {c_bar}")));
    }
    let h = problem.h(c)?;
    let flat_level = problem.flat_level();
    Ok(QuenchVerdict { c, c_bar, h, flat_level, passed: (h - flat_level).abs() <= problem.config.quench_tol })
}

/// Plateau bump on `[0, 1]` with smoothstep ramps of width `RAMP`; its
/// mean is `1 − RAMP`.
fn plateau(t: f64) -> f64 {
    let smooth = |u: f64| u * u * (3.0 - 2.0 * u);
    if !(0.0..=1.0).contains(&t) {
        0.0
    } else if t < RAMP {
        smooth(t / RAMP)
    } else if t > 1.0 - RAMP {
        smooth((1.0 - t) / RAMP)
    } else {
        1.0
    }
}

/// The sub-solution `n + φ'` that certifies quenching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchWitness {
    pub c: f64,
    pub c_bar: f64,
    pub tau: f64,
    /// Level fraction over the scan window.
    pub alpha: f64,
    /// Measure fraction of the intervals actually used.
    pub alpha_kept: f64,
    pub intervals: Vec<(f64, f64)>,
    pub dropped: usize,
    /// `sup ψ = n/((1 − RAMP)·α_kept)`.
    pub bump_height: f64,
    /// `2n/α_kept`.
    pub bump_bound: f64,
    /// Largest deviation of a numerically integrated interval mean from `n/α_kept`.
    pub max_mean_error: f64,
    /// `max_x H(n + φ'(x), x, c)` over the sample grid.
    pub max_hamiltonian: f64,
    pub flat_level: f64,
    /// `|φ(L)|/L`.
    pub edge_drift: f64,
    pub passed: bool,
}

impl QuenchWitness {
    /// `ψ(x)`.
    pub fn psi(&self, n: f64, x: f64) -> f64 {
        let i = self.intervals.partition_point(|(l, _)| *l <= x);
        if i == 0 {
            return 0.0;
        }
        let (l, r) = self.intervals[i - 1];
        if x > r {
            0.0
        } else {
            n / ((1.0 - RAMP) * self.alpha_kept) * plateau((x - l) / (r - l))
        }
    }
}

/// Builds `ψ` on the maximal intervals of `{s < −τ/2}` inside the window
/// and evaluates `H(n + φ') = H(ψ)` on a fine grid.
///
/// Intervals touching the window ends or shorter than four scan steps are
/// dropped; the remaining bumps are scaled so that `ψ` still averages to
/// `n` over the window.
pub fn build_quench_witness(problem: &StrainProblem, c: f64) -> Result<QuenchWitness> {
    let stats = problem.field_stats();
    let c_bar = quench_threshold(&stats, problem.m(), problem.n)?;
    if !(c > c_bar) {
        return Err(Error::Precondition(format!("c = {c} does not exceed the threshold {c_bar}")));
    }
    let h = problem.base.with_markstein(c)?;
    let length = problem.window_length();
    let level = |x: f64| h.coefficients(x).1 + 0.5 * stats.tau;
    let count = problem.sample_count(length);
    let step = length / count as f64;

    let crossing = |a: f64, b: f64| {
        let (mut neg, mut pos) = if level(a) < 0.0 { (a, b) } else { (b, a) };
        for _ in 0..100 {
            let mid = 0.5 * (neg + pos);
            if (neg - pos).abs() <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
                break;
            }
            if level(mid) < 0.0 {
                neg = mid;
            } else {
                pos = mid;
            }
        }
        0.5 * (neg + pos)
    };
    let mut intervals = Vec::new();
    let mut dropped = 0;
    let mut start: Option<f64> = None;
    let mut clipped = level(0.0) < 0.0;
    let mut prev = 0.0;
    for i in 1..=count {
        let x = i as f64 * step;
        let (inside_prev, inside) = (level(prev) < 0.0, level(x) < 0.0);
        if !inside_prev && inside {
            start = Some(crossing(prev, x));
        } else if inside_prev && !inside {
            let end = crossing(prev, x);
            match start.take() {
                Some(l) if !clipped && end - l >= 4.0 * step => intervals.push((l, end)),
                _ => dropped += 1,
            }
            clipped = false;
        }
        prev = x;
    }
    if start.is_some() || clipped && level(length) < 0.0 {
        dropped += 1;
    }
    if intervals.is_empty() {
        return Err(Error::InsufficientWindow(length));
    }

    let n = problem.n;
    let alpha_kept = intervals.iter().map(|(l, r)| r - l).sum::<f64>() / length;
    let bump_height = n / ((1.0 - RAMP) * alpha_kept);
    let target_mean = n / alpha_kept;
    let max_mean_error = intervals
        .iter()
        .map(|&(l, r)| {
            let psi = |x: f64| [bump_height * plateau((x - l) / (r - l))];
            let mut total = 0.0;
            // split at the ramp corners, where the bump is only C¹
            let cuts = [l, l + RAMP * (r - l), r - RAMP * (r - l), r];
            for w in cuts.windows(2) {
                total += integrate_adaptive(&psi, w[0], w[1], 1e-13 * (r - l), 30)[0];
            }
            (total / (r - l) - target_mean).abs()
        })
        .fold(0.0, f64::max);

    let mut witness = QuenchWitness {
        c,
        c_bar,
        tau: stats.tau,
        alpha: stats.alpha,
        alpha_kept,
        intervals,
        dropped,
        bump_height,
        bump_bound: 2.0 * n / alpha_kept,
        max_mean_error,
        max_hamiltonian: f64::NEG_INFINITY,
        flat_level: problem.flat_level(),
        edge_drift: 0.0,
        passed: false,
    };
    let fine = 4 * count;
    let fine_step = length / fine as f64;
    let w = &witness;
    witness.max_hamiltonian = (0..=fine)
        .into_par_iter()
        .map(|i| {
            let x = i as f64 * fine_step;
            h.eval_h(w.psi(n, x), x)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let integral: f64 = witness.intervals.iter().map(|(l, r)| (r - l) * (1.0 - RAMP) * bump_height).sum();
    witness.edge_drift = (integral - n * length).abs() / length;
    witness.passed = witness.max_hamiltonian <= witness.flat_level + problem.config.witness_tol
        && witness.bump_height <= witness.bump_bound
        && witness.max_mean_error <= 1e-6;
    Ok(witness)
}

/// Level and branch sign `σ` (`+1` upper, `−1` lower) of `n` at `c`.
fn branch_at(problem: &StrainProblem, eff: &EffectiveHamiltonian) -> Result<(f64, f64)> {
    let sign = match eff.piece(problem.n) {
        Piece::Upper => 1.0,
        Piece::Lower => -1.0,
        Piece::Flat => {
            return Err(Error::HypothesisNotMet(format!(
                "slope {} lies on the flat piece at c = {}",
                problem.n,
                eff.hamiltonian().c()
            )))
        }
    };
    let level = eff.eval(problem.n)?;
    if level <= eff.flat_level() + problem.config.hypothesis_margin {
        return Err(Error::HypothesisNotMet(format!(
            "h = {level} is within {} of the flat level",
            problem.config.hypothesis_margin
        )));
    }
    Ok((level, sign))
}

fn branch_root(l: &LocalHamiltonian, level: f64, sign: f64) -> f64 {
    if sign > 0.0 {
        l.upper_root(level)
    } else {
        l.lower_root(level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Claim1Report {
    pub c: f64,
    pub level: f64,
    /// `min σ·(n + u' + c·s)`.
    pub min_shifted_slope: f64,
    /// `min σ·(f' + c·s·f'') = min σ·∂ₚH`.
    pub min_branch_slope: f64,
    pub passed: bool,
}

/// Positivity of `n + u' + cs` and of `∂ₚH` along the corrector.
pub fn claim1_check(problem: &StrainProblem, c: f64) -> Result<Claim1Report> {
    let eff = problem.at(c)?;
    let (level, sign) = branch_at(problem, &eff)?;
    let h = eff.hamiltonian();
    let xs = problem.sample_positions();
    let (a, b) = xs
        .par_iter()
        .map(|&x| {
            let l = h.local(x);
            let t = branch_root(&l, level, sign);
            (sign * (t + c * l.s), sign * l.dhdp(t))
        })
        .reduce(|| (f64::INFINITY, f64::INFINITY), |p, q| (p.0.min(q.0), p.1.min(q.1)));
    Ok(Claim1Report { c, level, min_shifted_slope: a, min_branch_slope: b, passed: a > 0.0 && b > 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub c: f64,
    pub h: f64,
    /// Central difference of `h` (one-sided near `c = 0`).
    pub h_prime: f64,
    /// `max |h'/∂ₚH − s/(1 + a·s) − ∂_c u'|` over the sample grid.
    pub max_residual: f64,
    /// `E[1/∂ₚH]`.
    pub mean_inverse_slope: f64,
    /// `E[s/(1 + a·s)]`; negative for `c > 0` on the upper branch, zero at `c = 0`.
    pub mean_strain_term: f64,
    /// `E[∂_c u']`.
    pub mean_corrector_rate: f64,
    pub passed: bool,
}

/// Checks `h'/(f' + csf'') = s/(1 + as) + ∂_c u'`, `a = m²c/(t(m² + t²))`,
/// with `t = n + u'` the branch root at level `h(c)`.
///
/// `s/(1 + as)` is evaluated as `s·t(m²+t²)/(t(m²+t²) + m²cs)`, whose
/// denominator is `(m²+t²)^{3/2}·∂ₚH`, so it stays finite where `t = 0`.
pub fn differentiated_identity_check(problem: &StrainProblem, c: f64) -> Result<IdentityReport> {
    let dc = problem.config.derivative_step;
    // stencil offsets and weights for d/dc
    let (offsets, weights): ([f64; 2], [f64; 3]) =
        if c >= dc { ([-dc, dc], [-0.5, 0.0, 0.5]) } else { ([dc, 2.0 * dc], [-1.5, 2.0, -0.5]) };
    let eff = problem.at(c)?;
    let (level, sign) = branch_at(problem, &eff)?;
    let mut levels = [level, 0.0, 0.0];
    for (slot, off) in levels[1..].iter_mut().zip(offsets) {
        let e = problem.at(c + off)?;
        let (l, s) = branch_at(problem, &e)?;
        if s != sign {
            return Err(Error::HypothesisNotMet("slope changes branch inside the stencil".into()));
        }
        *slot = l;
    }
    let cs = [c, c + offsets[0], c + offsets[1]];
    // weights are ordered (c, c+off0, c+off1) for the one-sided stencil and
    // (c−dc, c, c+dc) for the central one
    let order: [usize; 3] = if c >= dc { [1, 0, 2] } else { [0, 1, 2] };
    let derivative = |vals: [f64; 3]| -> f64 { (0..3).map(|j| weights[j] * vals[order[j]]).sum::<f64>() / dc };
    let h_prime = derivative(levels);
    let m2 = problem.m() * problem.m();

    let pointwise = |l: &LocalHamiltonian| -> [f64; 4] {
        let roots = [0, 1, 2].map(|j| {
            let lj = LocalHamiltonian { c: cs[j], ..*l };
            branch_root(&lj, levels[j], sign)
        });
        let t = roots[0];
        let hp = l.dhdp(t);
        let cubic = t * (m2 + t * t);
        let strain_term = l.s * cubic / (cubic + m2 * c * l.s);
        let rate = derivative(roots);
        let residual = h_prime / hp - strain_term - rate;
        [1.0 / hp, strain_term, rate, residual]
    };
    let means = eff.spatial_average(|l: &LocalHamiltonian| {
        let [a, b, r, _] = pointwise(l);
        [a, b, r]
    });
    let h = eff.hamiltonian();
    let max_residual = problem
        .sample_positions()
        .par_iter()
        .map(|&x| pointwise(&h.local(x))[3].abs())
        .reduce(|| 0.0, f64::max);
    let [mean_inverse_slope, mean_strain_term, mean_corrector_rate] = means;
    // at c = 0, a = 0 and E[s/(1 + as)] = E[s] = 0
    let strain_sign_ok = if c > 0.0 { sign * mean_strain_term < 0.0 } else { mean_strain_term.abs() < 1e-8 };
    let passed = sign * mean_inverse_slope > 0.0 && strain_sign_ok && mean_corrector_rate.abs() < 1e-2;
    Ok(IdentityReport {
        c,
        h: level,
        h_prime,
        max_residual,
        mean_inverse_slope,
        mean_strain_term,
        mean_corrector_rate,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeCase {
    /// `m = 0`: `h ≡ |n| = 1`.
    Vertical,
    /// `n = 0`: `h ≡ |m| + sup m·v`.
    Horizontal,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichEntry {
    pub c: f64,
    pub h: f64,
    pub sandwich_ok: bool,
    /// `h(0) − h(c)` where strict reduction is required.
    pub strict_gap: Option<f64>,
    pub strict_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainTheoremReport {
    pub case: SlopeCase,
    pub m: f64,
    pub n: f64,
    pub flat_level: f64,
    /// `|m| + sup m·v` from the closed-form field bounds.
    pub potential_level: f64,
    pub h0: f64,
    pub entries: Vec<SandwichEntry>,
    pub passed: bool,
}

/// `h(0) ≥ h(c) ≥ |m| + sup m·v ≥ H̄*` at every `c`, and `h(c) < h(0)` for
/// `c > 0` when `v` is nonconstant and `h(0) > H̄*`.
pub fn main_theorem_check(
    field: Arc<FieldRealization>,
    m: f64,
    n: f64,
    c_list: &[f64],
    config: &StrainConfig,
) -> Result<MainTheoremReport> {
    check_unit(m, n)?;
    if m == 0.0 {
        return Ok(vertical_report(n, c_list));
    }
    let problem = StrainProblem::shear(field.clone(), m, n, config)?;
    let h0 = problem.h(0.0)?;
    let hs = c_list.par_iter().map(|&c| problem.h(c)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(f64, f64)> = c_list.iter().copied().zip(hs).collect();
    Ok(sandwich(&field, &problem, h0, &pairs, true))
}

/// The sandwich part of [`main_theorem_check`] on the points of an existing
/// curve, which must start at `c = 0`. Strict reduction is not required:
/// `h` is flat to first order at `c = 0`, so a fine grid has tiny gaps.
pub fn main_theorem_on_curve(field: Arc<FieldRealization>, problem: &StrainProblem, curve: &StrainCurve) -> Result<MainTheoremReport> {
    let first = curve.points.first().filter(|p| p.c == 0.0).ok_or_else(|| {
        Error::InvalidParameter("the sandwich check needs a curve starting at c = 0".into())
    })?;
    let pairs: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.c, p.h)).collect();
    Ok(sandwich(&field, problem, first.h, &pairs, false))
}

fn vertical_report(n: f64, c_list: &[f64]) -> MainTheoremReport {
    let entries = c_list
        .iter()
        .map(|&c| SandwichEntry { c, h: n.abs(), sandwich_ok: true, strict_gap: None, strict_ok: None })
        .collect();
    MainTheoremReport {
        case: SlopeCase::Vertical,
        m: 0.0,
        n,
        flat_level: n.abs(),
        potential_level: n.abs(),
        h0: n.abs(),
        entries,
        passed: true,
    }
}

fn sandwich(field: &FieldRealization, problem: &StrainProblem, h0: f64, pairs: &[(f64, f64)], strict: bool) -> MainTheoremReport {
    let config = &problem.config;
    let (m, n) = (problem.m(), problem.n);
    let flat_level = problem.flat_level();
    let length = problem.window_length();
    let fb = field.field_bounds(length, field.default_samples(length));
    let potential_level = m.abs() + if m > 0.0 { m * fb.value_max } else { m * fb.value_min };
    let tol = 2.0 * config.averaging_tol;
    let case = if n == 0.0 { SlopeCase::Horizontal } else { SlopeCase::General };
    let nonconstant = !field.is_zero();
    let entries: Vec<SandwichEntry> = pairs
        .iter()
        .map(|&(c, h)| {
            let sandwich_ok = flat_level <= potential_level + tol && potential_level <= h + tol && h <= h0 + tol;
            let strict = strict && nonconstant && c > 0.0 && h0 > flat_level + config.gap_tol && case == SlopeCase::General;
            let strict_gap = strict.then_some(h0 - h);
            SandwichEntry { c, h, sandwich_ok, strict_gap, strict_ok: strict_gap.map(|g| g > config.gap_tol) }
        })
        .collect();
    let mut passed = entries.iter().all(|e| e.sandwich_ok && e.strict_ok != Some(false));
    if case == SlopeCase::Horizontal {
        passed &= entries.iter().all(|e| (e.h - potential_level).abs() <= tol);
    }
    MainTheoremReport { case, m, n, flat_level, potential_level, h0, entries, passed }
}
