//! Adaptive Simpson quadrature and bracketing root finders.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;
/// Cap on subdivisions per call, so hopeless integrands fail fast.
const MAX_PANELS: u64 = 2_000_000;

/// Result of an adaptive quadrature: the integral and the summed local
/// error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

#[inline]
fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

struct Acc {
    value: f64,
    error: f64,
    unconverged: f64,
    panels: u64,
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    acc: &mut Acc,
) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    acc.panels += 1;
    let leaf = delta.abs() <= 15.0 * tol || !delta.is_finite();
    if leaf || depth >= MAX_DEPTH || acc.panels >= MAX_PANELS || lm <= a || rm >= b {
        let local = delta.abs() / 15.0;
        acc.value += left + right + delta / 15.0;
        acc.error += local;
        if !leaf || !local.is_finite() {
            acc.unconverged += local;
        }
        return;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, acc);
    recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, acc);
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Fails when subdivision bottoms out while the summed error estimate
/// still exceeds `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("quadrature tolerance must be positive, got {tol}")));
    }
    if b <= a {
        return Ok(Quadrature { value: 0.0, error: 0.0 });
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    let mut acc = Acc { value: 0.0, error: 0.0, unconverged: 0.0, panels: 0 };
    recurse(&f, a, b, fa, fm, fb, whole, tol, 0, &mut acc);
    if !acc.value.is_finite() || acc.unconverged > tol {
        return Err(Error::Quadrature { achieved: acc.error, requested: tol });
    }
    Ok(Quadrature { value: acc.value, error: acc.error })
}

/// Integrates across `nodes` (sorted, first and last are the limits),
/// running one adaptive pass per sub-interval so that kinks and jumps at
/// the nodes never fall inside a Simpson panel. The right end of each
/// sub-interval is sampled one ulp to its left, so a right-continuous
/// integrand contributes its left limit there. The tolerance is shared in
/// proportion to sub-interval length.
pub fn integrate_piecewise<F: Fn(f64) -> f64>(f: F, nodes: &[f64], tol: f64) -> Result<Quadrature> {
    let (Some(&lo), Some(&hi)) = (nodes.first(), nodes.last()) else {
        return Ok(Quadrature { value: 0.0, error: 0.0 });
    };
    let span = hi - lo;
    let mut total = Quadrature { value: 0.0, error: 0.0 };
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let share = (tol * (b - a) / span).max(f64::MIN_POSITIVE);
        let inner = b.next_down();
        let q = adaptive_simpson(|t| f(t.min(inner)), a, b, share).map_err(|e| match e {
            Error::Quadrature { achieved, .. } => Error::Quadrature { achieved, requested: tol },
            other => other,
        })?;
        total.value += q.value;
        total.error += q.error;
    }
    Ok(total)
}

/// Bisection on a bracket where `f(lo) < 0 <= f(hi)` (increasing sign
/// change). Returns the right end of the final bracket, which is the
/// smallest point found with `f >= 0`.
pub fn bisect_increasing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= xtol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((q.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_singular_derivative_converges() {
        let q = adaptive_simpson(f64::sqrt, 0.0, 1.0, 1e-10).unwrap();
        assert!((q.value - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn kink_handled_by_forced_node() {
        let f = |x: f64| (x - 0.3).abs();
        let q = integrate_piecewise(f, &[0.0, 0.3, 1.0], 1e-12).unwrap();
        assert!((q.value - (0.045 + 0.245)).abs() < 1e-12);
    }

    #[test]
    fn jump_without_node_still_converges() {
        let f = |x: f64| if x < 0.5 { 0.0 } else { 1.0 };
        let q = adaptive_simpson(f, 0.0, 1.0, 1e-9).unwrap();
        assert!((q.value - 0.5).abs() < 1e-8);
    }

    #[test]
    fn right_continuous_jump_at_node() {
        let f = |x: f64| if x < 0.3 { 0.0 } else { 1.0 };
        let q = integrate_piecewise(f, &[0.0, 0.3, 1.0], 1e-12).unwrap();
        assert!((q.value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn nan_integrand_is_reported() {
        let err = adaptive_simpson(|_| f64::NAN, 0.0, 1.0, 1e-9).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect_increasing(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }
}
