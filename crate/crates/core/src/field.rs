//! Stationary random fields on the line.
//!
//! A field is a finite trigonometric sum
//! `v(x) = Σ a_j cos(2π f_j x + θ_j)`. For the random-phase model the phases
//! are drawn uniformly on `[0, 2π)` from the seed, which makes `v` stationary;
//! rationally independent frequencies make it ergodic. All derivatives are
//! available in closed form, so nothing downstream carries interpolation
//! error.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::bracketed_newton;

/// Largest denominator probed when rejecting rationally dependent frequencies.
const MAX_RATIONAL_DENOMINATOR: u32 = 64;
/// Samples per shortest wavelength used when no explicit count is given.
pub const SAMPLES_PER_WAVELENGTH: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldModel {
    RandomPhase,
    PeriodicSingleMode,
    Zero,
}

/// Description of a field, serializable to a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub model: FieldModel,
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    /// Cycles per unit length.
    #[serde(default)]
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl FieldSpec {
    pub fn zero() -> Self {
        Self { model: FieldModel::Zero, amplitudes: vec![], frequencies: vec![], seed: 0 }
    }

    /// `a·cos(2π f x)`.
    pub fn periodic(amplitude: f64, frequency: f64) -> Self {
        Self {
            model: FieldModel::PeriodicSingleMode,
            amplitudes: vec![amplitude],
            frequencies: vec![frequency],
            seed: 0,
        }
    }

    pub fn random_phase(amplitudes: Vec<f64>, frequencies: Vec<f64>, seed: u64) -> Self {
        Self { model: FieldModel::RandomPhase, amplitudes, frequencies, seed }
    }

    /// Three-mode random-phase field with amplitude sum 0.5 and frequencies
    /// `1, √2, √3`.
    pub fn default_random_phase(seed: u64) -> Self {
        Self::random_phase(vec![0.25, 0.15, 0.1], vec![1.0, 2f64.sqrt(), 3f64.sqrt()], seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidSpec(msg));
        if self.amplitudes.len() != self.frequencies.len() {
            return invalid(format!(
                "{} amplitudes but {} frequencies",
                self.amplitudes.len(),
                self.frequencies.len()
            ));
        }
        if let Some(a) = self.amplitudes.iter().find(|a| !a.is_finite()) {
            return invalid(format!("non-finite amplitude {a}"));
        }
        if let Some(f) = self.frequencies.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return invalid(format!("frequency {f} must be finite and positive"));
        }
        match self.model {
            FieldModel::Zero => Ok(()),
            FieldModel::PeriodicSingleMode => {
                if self.amplitudes.len() != 1 {
                    return invalid("periodic-single-mode takes exactly one mode".into());
                }
                Ok(())
            }
            FieldModel::RandomPhase => {
                if self.amplitudes.is_empty() {
                    return invalid("random-phase model needs at least one mode".into());
                }
                for (i, fi) in self.frequencies.iter().enumerate() {
                    for fj in &self.frequencies[i + 1..] {
                        if let Some((p, q)) = rational_approximation(fi / fj) {
                            return invalid(format!(
                                "frequencies {fi} and {fj} are rationally dependent (ratio {p}/{q})"
                            ));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// Returns `(p, q)` if `ratio` equals `p/q` for some small denominator.
fn rational_approximation(ratio: f64) -> Option<(u64, u32)> {
    (1..=MAX_RATIONAL_DENOMINATOR).find_map(|q| {
        let p = (ratio * q as f64).round();
        ((ratio * q as f64 - p).abs() < 1e-9 * q as f64).then_some((p as u64, q))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mode {
    amplitude: f64,
    /// `2π f`
    wavenumber: f64,
    phase: f64,
}

/// A concrete sample path. Immutable and cheap to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    model: FieldModel,
    modes: Vec<Mode>,
}

/// Extrema of a field and of its derivative over a scan window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    pub value_min: f64,
    pub value_max: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub window: f64,
}

/// Draws the realization described by `spec`.
pub fn sample_field(spec: &FieldSpec) -> Result<FieldRealization> {
    spec.validate()?;
    let modes = match spec.model {
        FieldModel::Zero => Vec::new(),
        FieldModel::PeriodicSingleMode => vec![Mode {
            amplitude: spec.amplitudes[0],
            wavenumber: TAU * spec.frequencies[0],
            phase: 0.0,
        }],
        FieldModel::RandomPhase => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            spec.amplitudes
                .iter()
                .zip(&spec.frequencies)
                .map(|(&amplitude, &f)| Mode { amplitude, wavenumber: TAU * f, phase: TAU * rng.gen::<f64>() })
                .collect()
        }
    };
    Ok(FieldRealization { model: spec.model, modes })
}

impl FieldRealization {
    pub fn model(&self) -> FieldModel {
        self.model
    }

    pub fn phases(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.phase).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.amplitude == 0.0)
    }

    /// `(v(x), v'(x))`.
    #[inline]
    pub fn eval_pair(&self, x: f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for m in &self.modes {
            let (sin, cos) = (m.wavenumber * x + m.phase).sin_cos();
            v += m.amplitude * cos;
            dv -= m.amplitude * m.wavenumber * sin;
        }
        (v, dv)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.derivative(x, 0)
    }

    /// `d^order v / dx^order` at `x`.
    pub fn derivative(&self, x: f64, order: u32) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let arg = m.wavenumber * x + m.phase;
                let trig = match order % 4 {
                    0 => arg.cos(),
                    1 => -arg.sin(),
                    2 => -arg.cos(),
                    _ => arg.sin(),
                };
                m.amplitude * m.wavenumber.powi(order as i32) * trig
            })
            .sum()
    }

    /// `Σ |a_j|`, a bound on `|v|` over the whole line.
    pub fn amplitude_bound(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude.abs()).sum()
    }

    /// `Σ 2π f_j |a_j|`, a bound on `|v'|` over the whole line.
    pub fn slope_bound(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude.abs() * m.wavenumber).sum()
    }

    /// Smallest frequency in cycles per unit length, `None` for the zero field.
    pub fn smallest_frequency(&self) -> Option<f64> {
        self.modes.iter().map(|m| m.wavenumber / TAU).reduce(f64::min)
    }

    pub fn largest_frequency(&self) -> Option<f64> {
        self.modes.iter().map(|m| m.wavenumber / TAU).reduce(f64::max)
    }

    /// Spatial period when the field is periodic. The zero field reports
    /// `Some(0.0)`: every length is a period.
    pub fn period(&self) -> Option<f64> {
        match self.model {
            FieldModel::Zero => Some(0.0),
            FieldModel::PeriodicSingleMode => Some(TAU / self.modes[0].wavenumber),
            FieldModel::RandomPhase => None,
        }
    }

    /// Default ergodic averaging window: 2000 wavelengths of the slowest mode.
    pub fn default_window(&self) -> f64 {
        2000.0 / self.smallest_frequency().unwrap_or(1.0)
    }

    /// Default sample count for scanning `[0, window]`.
    pub fn default_samples(&self, window: f64) -> usize {
        let fmax = self.largest_frequency().unwrap_or(1.0);
        ((window * fmax * SAMPLES_PER_WAVELENGTH).ceil() as usize).max(16)
    }

    /// Extrema of `v` and `v'` on `[0, window]`.
    pub fn field_bounds(&self, window: f64, samples: usize) -> FieldBounds {
        let (value_min, value_max) = scan_extrema(
            |x| self.derivative(x, 0),
            |x| (self.derivative(x, 1), self.derivative(x, 2)),
            window,
            samples,
        );
        let (slope_min, slope_max) = scan_extrema(
            |x| self.derivative(x, 1),
            |x| (self.derivative(x, 2), self.derivative(x, 3)),
            window,
            samples,
        );
        FieldBounds { value_min, value_max, slope_min, slope_max, window }
    }

    /// Writes `x,v,v'` rows on a uniform grid of `[0, window]`.
    pub fn write_csv<W: Write>(&self, mut out: W, window: f64, samples: usize) -> Result<()> {
        writeln!(out, "x,v,v_prime")?;
        let n = samples.max(2);
        for i in 0..n {
            let x = window * i as f64 / (n - 1) as f64;
            let (v, dv) = self.eval_pair(x);
            writeln!(out, "{x:.12e},{v:.12e},{dv:.12e}")?;
        }
        Ok(())
    }
}

/// Min and max of `f` over `[0, window]`: dense sampling, then Newton on
/// `f'` inside every discrete local extremum. The refined value only replaces
/// a sample when it improves it, so every sample stays inside the range.
pub(crate) fn scan_extrema<F, D>(f: F, df: D, window: f64, samples: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> (f64, f64),
{
    let n = samples.max(3);
    let h = window / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for i in 1..n - 1 {
        let (a, b) = (xs[i - 1], xs[i + 1]);
        let is_max = ys[i] >= ys[i - 1] && ys[i] >= ys[i + 1];
        let is_min = ys[i] <= ys[i - 1] && ys[i] <= ys[i + 1];
        if !(is_max || is_min) {
            continue;
        }
        let (da, db) = (df(a).0, df(b).0);
        // at a max f' goes from + to -, at a min from - to +
        let bracket = if is_max && da > 0.0 && db < 0.0 {
            Some((b, a))
        } else if is_min && da < 0.0 && db > 0.0 {
            Some((a, b))
        } else {
            None
        };
        if let Some((neg, pos)) = bracket {
            let x = bracketed_newton(&df, neg, pos, Some(xs[i]), 0.0);
            let y = f(x);
            if is_max {
                hi = hi.max(y);
            } else {
                lo = lo.min(y);
            }
        }
    }
    (lo, hi)
}

/// Fraction of `[-window, window]` on which `g < threshold`, by midpoint
/// sampling with `samples` cells.
pub fn level_fraction<G: Fn(f64) -> f64>(g: G, threshold: f64, window: f64, samples: usize) -> f64 {
    let n = samples.max(1);
    let h = 2.0 * window / n as f64;
    let below = (0..n).filter(|&i| g(-window + (i as f64 + 0.5) * h) < threshold).count();
    below as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn zero_model_vanishes() {
        let r = sample_field(&FieldSpec::zero()).unwrap();
        assert_eq!(r.eval_pair(3.7), (0.0, 0.0));
        let b = r.field_bounds(10.0, 100);
        assert_eq!((b.value_min, b.value_max, b.slope_min, b.slope_max), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_mode_closed_form() {
        let r = sample_field(&FieldSpec::periodic(0.5, 1.0)).unwrap();
        let (v, dv) = r.eval_pair(0.0);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(dv, 0.0, epsilon = 1e-15);
        let (v, dv) = r.eval_pair(0.25);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dv, -PI, epsilon = 1e-14);
        for x in [0.1, 0.37, 2.9] {
            assert_abs_diff_eq!(r.value(x), 0.5 * (TAU * x).cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn random_phase_is_deterministic() {
        let spec = FieldSpec::default_random_phase(42);
        let a = sample_field(&spec).unwrap();
        let b = sample_field(&spec).unwrap();
        assert_eq!(a.eval_pair(1.7).0.to_bits(), b.eval_pair(1.7).0.to_bits());
        assert_eq!(a, b);
        let c = sample_field(&spec.with_seed(43)).unwrap();
        assert_ne!(a.phases(), c.phases());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(sample_field(&FieldSpec::random_phase(vec![], vec![], 1)).is_err());
        assert!(sample_field(&FieldSpec::random_phase(vec![0.5, 0.5], vec![1.0, 1.5], 1)).is_err());
        assert!(sample_field(&FieldSpec::random_phase(vec![f64::NAN], vec![1.0], 1)).is_err());
        assert!(sample_field(&FieldSpec::random_phase(vec![1.0], vec![1.0, 2.0], 1)).is_err());
        assert!(sample_field(&FieldSpec::random_phase(vec![1.0], vec![-1.0], 1)).is_err());
    }

    #[test]
    fn single_mode_bounds_are_exact() {
        let r = sample_field(&FieldSpec::periodic(0.5, 1.0)).unwrap();
        // window not a multiple of the sample spacing of the extrema
        let b = r.field_bounds(1.3, 37);
        assert_abs_diff_eq!(b.value_max, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(b.value_min, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(b.slope_max, PI, epsilon = 1e-13);
        assert_abs_diff_eq!(b.slope_min, -PI, epsilon = 1e-13);
    }

    #[test]
    fn random_phase_bounds_respect_amplitude_sum() {
        for seed in 0..5 {
            let r = sample_field(&FieldSpec::default_random_phase(seed)).unwrap();
            let b = r.field_bounds(200.0, r.default_samples(200.0));
            assert!(b.value_max <= 1.0 && b.value_min >= -1.0);
            assert!(b.slope_max <= r.slope_bound() && b.slope_min >= -r.slope_bound());
            let wider = r.field_bounds(400.0, r.default_samples(400.0));
            assert!(wider.value_max >= b.value_max && wider.value_min <= b.value_min);
        }
    }

    #[test]
    fn level_fraction_of_sine() {
        // s = -π sin(2πx) < -π/2  <=>  sin(2πx) > 1/2, one third of each period
        let r = sample_field(&FieldSpec::periodic(0.5, 1.0)).unwrap();
        let frac = level_fraction(|x| r.eval_pair(x).1, -PI / 2.0, 50.0, 600_000);
        assert_abs_diff_eq!(frac, 1.0 / 3.0, epsilon = 1e-5);
        let zero = sample_field(&FieldSpec::zero()).unwrap();
        assert_eq!(level_fraction(|x| zero.eval_pair(x).1, -0.1, 10.0, 1000), 0.0);
        assert_eq!(level_fraction(|x| r.eval_pair(x).1, 4.0, 10.0, 1000), 1.0);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = FieldSpec::default_random_phase(7);
        let text = toml::to_string(&spec).unwrap();
        assert!(text.contains("model = \"random-phase\""));
        let back: FieldSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let r = sample_field(&FieldSpec::periodic(0.5, 1.0)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf, 1.0, 5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("x,v,v_prime\n"));
    }
}
