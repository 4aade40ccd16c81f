//! Bracketed scalar root finding shared by the Hamiltonian and field kernels.

const MAX_ITERATIONS: usize = 400;

/// Finds a zero of `f` between a point where it is negative and a point where
/// it is positive. `f` returns the value and its derivative.
///
/// Newton steps are taken while they stay inside the current bracket and at
/// least halve relative to the step before last; otherwise the bracket is
/// bisected. Returns once `|f| <= abs_tol`, the step drops to an ulp, or the
/// bracket has collapsed to a few ulps.
pub(crate) fn bracketed_newton<F>(f: F, mut neg: f64, mut pos: f64, guess: Option<f64>, abs_tol: f64) -> f64
where
    F: Fn(f64) -> (f64, f64),
{
    let inside = |x: f64, a: f64, b: f64| x > a.min(b) && x < a.max(b);
    let mut x = match guess {
        Some(g) if inside(g, neg, pos) => g,
        _ => 0.5 * (neg + pos),
    };
    let mut step = (pos - neg).abs();
    let mut step_before = 2.0 * step;
    for _ in 0..MAX_ITERATIONS {
        let (fx, dfx) = f(x);
        if fx == 0.0 || fx.abs() <= abs_tol {
            return x;
        }
        if fx < 0.0 {
            neg = x;
        } else {
            pos = x;
        }
        let (lo, hi) = (neg.min(pos), neg.max(pos));
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1e-300) {
            return x;
        }
        let newton = x - fx / dfx;
        let newton_step = (newton - x).abs();
        let next = if dfx.is_finite() && dfx != 0.0 && inside(newton, lo, hi) && newton_step <= 0.5 * step_before {
            if newton_step <= 2.0 * f64::EPSILON * x.abs().max(1e-300) {
                return newton;
            }
            newton
        } else {
            0.5 * (lo + hi)
        };
        step_before = step;
        step = (next - x).abs();
        x = next;
    }
    x
}
