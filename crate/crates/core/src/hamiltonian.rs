//! The one-dimensional strain Hamiltonian
//!
//! ```text
//! H(p, x, c) = √(m² + p²) + c·s(x)·p/√(m² + p²) + k(x)
//! ```
//!
//! For a shear flow `v` the coefficients are `k = m·v` and `s = m·v'`.
//! `∂H/∂p = (p³ + m²p + c·s·m²)/(m² + p²)^{3/2}` has exactly one real zero,
//! so `H(·, x, c)` decreases then increases: every level above the local
//! minimum is hit exactly twice.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{scan_extrema, FieldRealization};
use crate::roots::bracketed_newton;

/// Relative residual accepted for branch roots.
pub const ROOT_RTOL: f64 = 1e-12;

/// Where `k` and `s` come from.
#[derive(Debug, Clone)]
enum Coefficients {
    /// `k = m·v`, `s = m·v'`.
    Shear(Arc<FieldRealization>),
    /// Independent `k` and `s` series.
    General { k: Arc<FieldRealization>, s: Arc<FieldRealization> },
}

/// Extrema of `k` and `s` over `[0, window]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoefficientBounds {
    pub k_min: f64,
    pub k_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub window: f64,
}

impl CoefficientBounds {
    /// `sup |s|` on the window.
    pub fn strain_norm(&self) -> f64 {
        self.s_min.abs().max(self.s_max.abs())
    }
}

/// The Hamiltonian bound to one realization and to `(m, c)`.
#[derive(Debug, Clone)]
pub struct StrainHamiltonian {
    m: f64,
    c: f64,
    coefficients: Coefficients,
    /// `-1` mirrors the problem through `(p, s) -> (-p, -s)`.
    strain_sign: f64,
}

/// `H` frozen at one position: the coefficients are plain numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalHamiltonian {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub s: f64,
}

/// The two solutions of `H(·, x, c) = level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchRoots {
    pub q_minus: f64,
    pub q_plus: f64,
    pub level: f64,
    pub x: f64,
}

impl StrainHamiltonian {
    /// Shear-flow Hamiltonian with `k = m·v`, `s = m·v'`.
    pub fn shear(field: Arc<FieldRealization>, m: f64, c: f64) -> Result<Self> {
        check_parameters(m, c)?;
        Ok(Self { m, c, coefficients: Coefficients::Shear(field), strain_sign: 1.0 })
    }

    /// Hamiltonian with hand-supplied `k` and `s`.
    ///
    /// `s` must vanish wherever `k` has a local maximum; this is checked on
    /// `[0, window]` unless `allow_violation` is set.
    pub fn general(
        k: Arc<FieldRealization>,
        s: Arc<FieldRealization>,
        m: f64,
        c: f64,
        window: f64,
        allow_violation: bool,
    ) -> Result<Self> {
        check_parameters(m, c)?;
        if !allow_violation {
            if let Some((x, sx)) = strain_at_peaks_violation(&k, &s, window) {
                return Err(Error::InvalidSpec(format!(
                    "s({x:.6}) = {sx:.3e} is nonzero at a local maximum of k"
                )));
            }
        }
        Ok(Self { m, c, coefficients: Coefficients::General { k, s }, strain_sign: 1.0 })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Same coefficients, different Markstein number.
    pub fn with_markstein(&self, c: f64) -> Result<Self> {
        check_parameters(self.m, c)?;
        Ok(Self { c, ..self.clone() })
    }

    /// The problem mirrored through `(p, s) -> (-p, -s)`: `H'(p) = H(-p)`.
    pub fn mirrored(&self) -> Self {
        Self { strain_sign: -self.strain_sign, ..self.clone() }
    }

    pub fn is_mirrored(&self) -> bool {
        self.strain_sign < 0.0
    }

    /// `(k(x), s(x))`.
    #[inline]
    pub fn coefficients(&self, x: f64) -> (f64, f64) {
        let (k, s) = match &self.coefficients {
            Coefficients::Shear(field) => {
                let (v, dv) = field.eval_pair(x);
                (self.m * v, self.m * dv)
            }
            Coefficients::General { k, s } => (k.value(x), s.value(x)),
        };
        (k, self.strain_sign * s)
    }

    #[inline]
    pub fn local(&self, x: f64) -> LocalHamiltonian {
        let (k, s) = self.coefficients(x);
        LocalHamiltonian { m: self.m, c: self.c, k, s }
    }

    /// A bound on `sup_x |s(x)|` valid on the whole line.
    pub fn strain_sup_bound(&self) -> f64 {
        match &self.coefficients {
            Coefficients::Shear(field) => self.m.abs() * field.slope_bound(),
            Coefficients::General { s, .. } => s.amplitude_bound(),
        }
    }

    /// A bound on `sup_x |k(x)|` valid on the whole line.
    pub fn potential_sup_bound(&self) -> f64 {
        match &self.coefficients {
            Coefficients::Shear(field) => self.m.abs() * field.amplitude_bound(),
            Coefficients::General { k, .. } => k.amplitude_bound(),
        }
    }

    /// The underlying shear field, if any.
    pub fn shear_field(&self) -> Option<&Arc<FieldRealization>> {
        match &self.coefficients {
            Coefficients::Shear(field) => Some(field),
            Coefficients::General { .. } => None,
        }
    }

    /// Highest frequency present in `k` or `s`, `None` for vanishing fields.
    pub fn largest_frequency(&self) -> Option<f64> {
        match &self.coefficients {
            Coefficients::Shear(field) => field.largest_frequency(),
            Coefficients::General { k, s } => match (k.largest_frequency(), s.largest_frequency()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }

    pub fn default_window(&self) -> f64 {
        match &self.coefficients {
            Coefficients::Shear(field) => field.default_window(),
            Coefficients::General { k, s } => k.default_window().max(s.default_window()),
        }
    }

    pub fn default_samples(&self, window: f64) -> usize {
        match &self.coefficients {
            Coefficients::Shear(field) => field.default_samples(window),
            Coefficients::General { k, s } => k.default_samples(window).max(s.default_samples(window)),
        }
    }

    /// `(k_min, k_max, s_min, s_max)` over `[0, window]`. The `m` factor and
    /// the mirror sign are applied before extremizing.
    pub fn field_bounds(&self, window: f64, samples: usize) -> CoefficientBounds {
        let (k_min, k_max) = match &self.coefficients {
            Coefficients::Shear(field) => {
                let m = self.m;
                scan_extrema(
                    |x| m * field.derivative(x, 0),
                    |x| (m * field.derivative(x, 1), m * field.derivative(x, 2)),
                    window,
                    samples,
                )
            }
            Coefficients::General { k, .. } => {
                scan_extrema(|x| k.derivative(x, 0), |x| (k.derivative(x, 1), k.derivative(x, 2)), window, samples)
            }
        };
        let scale = match &self.coefficients {
            Coefficients::Shear(_) => self.m * self.strain_sign,
            Coefficients::General { .. } => self.strain_sign,
        };
        let (s_min, s_max) = match &self.coefficients {
            Coefficients::Shear(field) => scan_extrema(
                |x| scale * field.derivative(x, 1),
                |x| (scale * field.derivative(x, 2), scale * field.derivative(x, 3)),
                window,
                samples,
            ),
            Coefficients::General { s, .. } => scan_extrema(
                |x| scale * s.derivative(x, 0),
                |x| (scale * s.derivative(x, 1), scale * s.derivative(x, 2)),
                window,
                samples,
            ),
        };
        CoefficientBounds { k_min, k_max, s_min, s_max, window }
    }

    pub fn eval_h(&self, p: f64, x: f64) -> f64 {
        self.local(x).eval(p)
    }

    pub fn eval_dhdp(&self, p: f64, x: f64) -> f64 {
        self.local(x).dhdp(p)
    }

    pub fn critical_point(&self, x: f64) -> (f64, f64) {
        self.local(x).critical_point()
    }

    pub fn branch_roots(&self, x: f64, level: f64) -> Result<BranchRoots> {
        let (q_minus, q_plus) = self.local(x).branch_roots(level).map_err(|e| match e {
            Error::NoRoot { level, minimum, .. } => Error::NoRoot { x, level, minimum },
            other => other,
        })?;
        Ok(BranchRoots { q_minus, q_plus, level, x })
    }

    /// Endpoints `p₋ ≤ p₊` of the sublevel set `{H(·, x, c) ≤ flat_level}`.
    pub fn p_plus_minus(&self, x: f64, flat_level: f64) -> Result<(f64, f64)> {
        let local = self.local(x);
        let (p_star, h_min) = local.critical_point();
        let touch = ROOT_RTOL * flat_level.abs().max(1.0);
        if h_min > flat_level + touch {
            return Err(Error::InconsistentBounds { x, level: flat_level, minimum: h_min });
        }
        if h_min >= flat_level - touch {
            return Ok((p_star, p_star));
        }
        local.branch_roots(flat_level)
    }
}

fn check_parameters(m: f64, c: f64) -> Result<()> {
    if !(m.is_finite() && m != 0.0) {
        return Err(Error::InvalidParameter(format!("m = {m} must be finite and nonzero")));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidParameter(format!("Markstein number c = {c} must be finite and >= 0")));
    }
    Ok(())
}

/// First local maximum of `k` on `[0, window]` where `|s|` is not small.
fn strain_at_peaks_violation(k: &FieldRealization, s: &FieldRealization, window: f64) -> Option<(f64, f64)> {
    let samples = k.default_samples(window).max(s.default_samples(window));
    let h = window / (samples - 1) as f64;
    let tol = 1e-8 * s.amplitude_bound().max(1.0);
    (1..samples - 1).find_map(|i| {
        let (a, b) = ((i - 1) as f64 * h, (i + 1) as f64 * h);
        let (da, db) = (k.derivative(a, 1), k.derivative(b, 1));
        if !(da > 0.0 && db <= 0.0) {
            return None;
        }
        let x = bracketed_newton(|x| (k.derivative(x, 1), k.derivative(x, 2)), b, a, None, 0.0);
        let sx = s.value(x);
        (sx.abs() > tol).then_some((x, sx))
    })
}

impl LocalHamiltonian {
    #[inline]
    pub fn eval(&self, p: f64) -> f64 {
        let r = self.m.hypot(p);
        r + self.c * self.s * p / r + self.k
    }

    #[inline]
    pub fn dhdp(&self, p: f64) -> f64 {
        let m2 = self.m * self.m;
        let r2 = m2 + p * p;
        (p * r2 + self.c * self.s * m2) / (r2 * r2.sqrt())
    }

    /// The unique zero `p*` of `p³ + m²p + c·s·m²` and `H(p*)`.
    pub fn critical_point(&self) -> (f64, f64) {
        let m2 = self.m * self.m;
        let cs = self.c * self.s;
        if cs == 0.0 {
            return (0.0, self.eval(0.0));
        }
        // the cubic p³ + m²p + cs·m² has one real root; Cardano in the
        // cancellation-free form −q/(A² + m²/3 + m⁴/(9A²)), then one Newton polish
        let q = cs * m2;
        let a = (0.5 * q.abs() + (0.25 * q * q + m2 * m2 * m2 / 27.0).sqrt()).cbrt();
        let a2 = a * a;
        let mut p_star = -q / (a2 + m2 / 3.0 + m2 * m2 / (9.0 * a2));
        let f = p_star * (p_star * p_star + m2) + q;
        p_star -= f / (3.0 * p_star * p_star + m2);
        (p_star, self.eval(p_star))
    }

    /// `(q₋, q₊)` with `H(q±) = level` and `q₋ < p* < q₊`.
    pub fn branch_roots(&self, level: f64) -> Result<(f64, f64)> {
        let (p_star, h_min) = self.critical_point();
        if !(level > h_min) {
            return Err(Error::NoRoot { x: f64::NAN, level, minimum: h_min });
        }
        Ok(self.roots_above(level, p_star))
    }

    /// Like [`branch_roots`](Self::branch_roots) but collapses to `(p*, p*)`
    /// when the level does not exceed the local minimum.
    #[inline]
    pub fn roots_or_touch(&self, level: f64) -> (f64, f64) {
        let (p_star, h_min) = self.critical_point();
        if level > h_min {
            self.roots_above(level, p_star)
        } else {
            (p_star, p_star)
        }
    }

    /// Upper root only, or `p*` below the local minimum.
    #[inline]
    pub fn upper_root(&self, level: f64) -> f64 {
        let (p_star, h_min) = self.critical_point();
        if level > h_min {
            self.branch_root(level, p_star, true)
        } else {
            p_star
        }
    }

    #[inline]
    pub fn lower_root(&self, level: f64) -> f64 {
        let (p_star, h_min) = self.critical_point();
        if level > h_min {
            self.branch_root(level, p_star, false)
        } else {
            p_star
        }
    }

    fn roots_above(&self, level: f64, p_star: f64) -> (f64, f64) {
        (self.branch_root(level, p_star, false), self.branch_root(level, p_star, true))
    }

    /// Root on one monotone branch. `H ≥ |p| − c|s| + k`, so `|p| = R` with
    /// `R = level − k + c|s|` already lies above the level.
    fn branch_root(&self, level: f64, p_star: f64, upper: bool) -> f64 {
        let reach = (level - self.k + self.c * self.s.abs()).max(p_star.abs()) + 1e-12;
        // near a touch |H − level| is tiny long before p is accurate, so the
        // residual test is off and Newton runs to ulp-sized steps
        let tol = 0.0;
        let g = |p: f64| (self.eval(p) - level, self.dhdp(p));
        // large-|p| asymptote H ≈ |p| + k ± c·s
        let sign = if upper { 1.0 } else { -1.0 };
        let a = (level - self.k - sign * self.c * self.s).max(0.0);
        let guess = sign * (a * a - self.m * self.m).max(0.0).sqrt();
        if upper {
            bracketed_newton(g, p_star, reach, Some(guess), tol)
        } else {
            bracketed_newton(g, p_star, -reach, Some(guess), tol)
        }
    }
}

/// Outcome of a level-set convexity scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuasiconvexVerdict {
    Pass,
    /// `p < q < r` with `value(q) > max(value(p), value(r)) + tol`.
    Fail { witness: [(f64, f64); 3] },
}

impl QuasiconvexVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, QuasiconvexVerdict::Pass)
    }
}

/// Checks `value(q) ≤ max(value(p), value(r))` for all sampled `p < q < r`.
///
/// The worst triple for a middle index uses the smallest value on each side,
/// so a single pass with prefix and suffix minima suffices.
pub fn check_quasiconvex(samples: &[(f64, f64)], tol: f64) -> Result<QuasiconvexVerdict> {
    if samples.len() < 3 {
        return Err(Error::InvalidParameter("quasiconvexity check needs at least 3 samples".into()));
    }
    if samples.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::InvalidParameter("samples must be sorted by strictly increasing p".into()));
    }
    let n = samples.len();
    let mut suffix_min = vec![n - 1; n];
    for i in (0..n - 1).rev() {
        let j = suffix_min[i + 1];
        suffix_min[i] = if samples[i].1 < samples[j].1 { i } else { j };
    }
    let mut left = 0;
    for mid in 1..n - 1 {
        let right = suffix_min[mid + 1];
        if samples[mid].1 > samples[left].1.max(samples[right].1) + tol {
            return Ok(QuasiconvexVerdict::Fail { witness: [samples[left], samples[mid], samples[right]] });
        }
        if samples[mid].1 < samples[left].1 {
            left = mid;
        }
    }
    Ok(QuasiconvexVerdict::Pass)
}

/// A level-set convex piecewise-linear function plus `eps·p²`, which is no
/// longer level-set convex for small `eps > 0`. Used as a negative fixture
/// for [`check_quasiconvex`].
pub fn perturbed_piecewise(p: f64, eps: f64) -> f64 {
    let base = if p <= 0.0 {
        -p
    } else if p <= 1.0 {
        0.0
    } else if p <= 2.0 {
        -p + 1.0
    } else {
        p - 3.0
    };
    eps * p * p + base
}
