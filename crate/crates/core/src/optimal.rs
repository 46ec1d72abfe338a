//! Revenue-optimal auction for a single ROI-constrained bidder.
//!
//! Under decreasing marginal revenue the optimal allocation is a ramp
//! `x(v) = (v / D)^{1/(M−1)}` below a threshold `D`, with `x = 1` above it.
//! Bidders below `D` pay their value (`p = v·x`) and bidders above pay `D`.
//! The threshold solves
//!
//! ```text
//! H(D) = ∫_0^D ψ(v)·v^{1/(M−1)} dv = 0
//! ```
//!
//! or is `vmax` when `H(vmax) <= 0`. Substituting `v = D·t^{1/(e+1)}` with
//! `e = 1/(M−1)` gives `H(D) = D^{e+1}/(e+1)·J(D)` with
//! `J(D) = ∫_0^1 ψ(D·t^{1/(e+1)}) dt`, which has the sign of `H` without the
//! overflow of `D^{e+1}` for `M` near 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alloc::make_power_ramp;
use crate::audit::{AuditReport, CheckEntry, Mechanism, Witness};
use crate::dist::{check_dmr, ValueDistribution};
use crate::error::{Error, Result};
use crate::numeric::{bisect_increasing, integrate_piecewise};
use crate::payment::RoiTarget;
use crate::revenue::expected_revenue_quadrature;

/// Grid used for the DMR gate before solving.
pub const DMR_GRID_N: usize = 10_001;
/// Ramp exponents above this trigger a conditioning warning.
pub const LARGE_EXPONENT: f64 = 50.0;
/// Tolerance of the structural audit.
pub const STRUCTURAL_TOL: f64 = 1e-7;
const J_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCase {
    /// `H` changes sign inside the support.
    InteriorRoot,
    /// `H(vmax) <= 0`; the ramp covers the whole support.
    FullSupport,
}

impl fmt::Display for BoundaryCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryCase::InteriorRoot => "interior_root",
            BoundaryCase::FullSupport => "full_support",
        })
    }
}

fn exponent(m: RoiTarget) -> f64 {
    1.0 / (m.get() - 1.0)
}

fn check_threshold(d: &ValueDistribution, threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= d.vmax()) {
        return Err(Error::Domain { value: threshold, vmax: d.vmax() });
    }
    Ok(())
}

/// `J(D) = ∫_0^1 ψ(D·t^{1/(e+1)}) dt`, integrated with nodes at the images
/// of the distribution's breakpoints.
fn scaled_integral(d: &ValueDistribution, e1: f64, threshold: f64) -> Result<f64> {
    let mut nodes = vec![0.0, 1.0];
    nodes.extend(d.breakpoints().into_iter().filter(|&b| b > 0.0 && b < threshold).map(|b| (b / threshold).powf(e1)));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let q = integrate_piecewise(|t| d.psi_unchecked((threshold * t.powf(1.0 / e1)).min(threshold)), &nodes, J_TOL)?;
    Ok(q.value)
}

/// `H(D) = ∫_0^D ψ(v)·v^{1/(M−1)} dv`.
pub fn weighted_psi_integral(d: &ValueDistribution, m: RoiTarget, threshold: f64) -> Result<f64> {
    if threshold == 0.0 {
        return Ok(0.0);
    }
    check_threshold(d, threshold)?;
    let e1 = exponent(m) + 1.0;
    Ok(threshold.powf(e1) / e1 * scaled_integral(d, e1, threshold)?)
}

/// `d rev / dD = −(1/(M−1))·D^{−M/(M−1)}·H(D)` for the ramp family
/// indexed by `D`.
pub fn revenue_derivative(d: &ValueDistribution, m: RoiTarget, threshold: f64) -> Result<f64> {
    check_threshold(d, threshold)?;
    let e = exponent(m);
    let e1 = e + 1.0;
    // D^{-(e+1)}·H(D) = J(D)/(e+1) keeps the computation finite.
    Ok(-e / e1 * scaled_integral(d, e1, threshold)?)
}

fn dmr_gate(d: &ValueDistribution) -> Result<()> {
    let report = check_dmr(d, DMR_GRID_N)?;
    if !report.pass {
        return Err(Error::NotDmr { worst_decrease: report.worst_decrease, location: report.location.unwrap_or(0.0) });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub threshold: f64,
    pub boundary_case: BoundaryCase,
    /// `H` at the returned threshold.
    pub residual: f64,
}

/// Solves for the optimal threshold `D`. Fails with [`Error::NotDmr`] when
/// the distribution does not have decreasing marginal revenue.
///
/// Bisection stops once the bracket is narrower than `tol·vmax` and `|H|`
/// is at most `tol`, or when the bracket cannot shrink further.
pub fn solve_threshold(d: &ValueDistribution, m: RoiTarget, tol: f64) -> Result<Threshold> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    dmr_gate(d)?;
    let vmax = d.vmax();
    let e1 = exponent(m) + 1.0;
    let j = |x: f64| scaled_integral(d, e1, x);
    if j(vmax)? <= 0.0 {
        return Ok(Threshold {
            threshold: vmax,
            boundary_case: BoundaryCase::FullSupport,
            residual: weighted_psi_integral(d, m, vmax)?,
        });
    }
    // H' = ψ·v^e, so H decreases until ψ turns nonnegative and increases
    // after; the root lies right of the first point where ψ >= 0.
    let psi_root = bisect_increasing(|v| d.psi_unchecked(v), 0.0, vmax, 1e-15 * vmax);
    let mut lo = psi_root.min(vmax);
    let mut hi = vmax;
    let mut failure = None;
    let mut sign = |x: f64| match j(x) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sign(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= tol * vmax && weighted_psi_integral(d, m, hi).is_ok_and(|h| h.abs() <= tol) {
            break;
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Threshold {
        threshold: hi,
        boundary_case: BoundaryCase::InteriorRoot,
        residual: weighted_psi_integral(d, m, hi)?,
    })
}

#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub threshold: f64,
    pub boundary_case: BoundaryCase,
    pub expected_revenue: f64,
    pub mechanism: Mechanism,
    pub warnings: Vec<String>,
}

/// The optimal ramp mechanism, its payments on a `grid_n`-point schedule,
/// and its expected revenue.
pub fn optimal_mechanism(d: &ValueDistribution, m: RoiTarget, grid_n: usize, tol: f64) -> Result<OptimalSolution> {
    let t = solve_threshold(d, m, tol)?;
    let mut warnings = Vec::new();
    let e = exponent(m);
    if e > LARGE_EXPONENT {
        let msg =
            format!("ramp exponent 1/(M-1) = {e:.4} exceeds {LARGE_EXPONENT}; the allocation is nearly a step at D");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let alloc = make_power_ramp(d.vmax(), t.threshold, m)?;
    let mechanism = Mechanism::truthful(alloc, m, grid_n)?;
    let expected_revenue = expected_revenue_quadrature(&mechanism, d)?.mean;
    Ok(OptimalSolution {
        threshold: t.threshold,
        boundary_case: t.boundary_case,
        expected_revenue,
        mechanism,
        warnings,
    })
}

/// Checks the structural properties of an optimal mechanism.
pub fn structural_audit(sol: &OptimalSolution, grid_n: usize) -> Result<AuditReport> {
    structural_audit_mechanism(&sol.mechanism, sol.threshold, grid_n)
}

/// Structural checks on a mechanism claimed optimal with threshold `D`, at
/// `grid_n` audited points:
///
/// * `no_rebate`: `M·p̃(v) <= v·x(v)`, so the rebate term vanishes;
/// * `first_price_or_flat`: at each `v` either `x'(v) = 0` or
///   `p(v) = v·x(v)`;
/// * `single_flat_interval`: at most one maximal interval where `x` is
///   flat, ending at `vmax`; the violation is the total length of any
///   other flat stretch;
/// * `power_ramp`: on `[0, D]`, `x(v) = (v / D)^{1/(M−1)}·x(D)`;
/// * `threshold`: `x(D) = 1`.
pub fn structural_audit_mechanism(mech: &Mechanism, threshold: f64, grid_n: usize) -> Result<AuditReport> {
    let vmax = mech.vmax();
    if !(threshold > 0.0 && threshold <= vmax) {
        return Err(Error::Domain { value: threshold, vmax });
    }
    if grid_n < 2 {
        return Err(Error::InvalidArgument(format!("grid_n must be >= 2, got {grid_n}")));
    }
    let a = &mech.allocation;
    let mm = mech.m.get();
    let e = 1.0 / (mm - 1.0);
    let x_at = a.eval(threshold);
    let pts = mech.audit_points(grid_n);

    #[derive(Default)]
    struct Worst(f64, Option<f64>);
    impl Worst {
        fn bump(&mut self, viol: f64, v: f64) {
            if viol > self.0 {
                *self = Worst(viol, Some(v));
            }
        }
        fn entry(self, name: &str) -> CheckEntry {
            let mut w = Witness::new();
            if let Some(v) = self.1 {
                w.insert("v".into(), v);
            }
            CheckEntry { name: name.into(), pass: self.0 <= STRUCTURAL_TOL, worst_violation: self.0, witness: w }
        }
    }

    let mut no_rebate = Worst::default();
    let mut first_price = Worst::default();
    let mut ramp = Worst::default();
    for &(v, x, p) in &pts {
        let pm = v * x - a.integral(v);
        no_rebate.bump(mm * pm - v * x, v);
        first_price.bump(a.derivative(v)?.abs().min((p - v * x).abs()), v);
        if v <= threshold {
            ramp.bump((x - (v / threshold).powf(e) * x_at).abs(), v);
        }
    }

    // Maximal runs of grid cells where x does not move; only a run that
    // reaches vmax is allowed.
    let mut flat = Worst::default();
    let mut run: Option<(f64, f64)> = None;
    let mut stray = 0.0;
    for w in pts.windows(2) {
        let (v0, x0, _) = w[0];
        let (v1, x1, _) = w[1];
        if (x1 - x0).abs() <= STRUCTURAL_TOL {
            let start = run.map_or(v0, |r| r.0);
            run = Some((start, v1));
        } else if let Some((start, end)) = run.take() {
            stray += end - start;
            flat.1.get_or_insert(start);
        }
    }
    flat.0 = stray;

    let gap = (x_at - 1.0).abs();
    let mut w = Witness::new();
    w.insert("D".into(), threshold);
    w.insert("x".into(), x_at);
    Ok(AuditReport {
        checks: vec![
            no_rebate.entry("no_rebate"),
            first_price.entry("first_price_or_flat"),
            flat.entry("single_flat_interval"),
            ramp.entry("power_ramp"),
            CheckEntry { name: "threshold".into(), pass: gap <= STRUCTURAL_TOL, worst_violation: gap, witness: w },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{make_step, make_zero};
    use crate::numeric::adaptive_simpson;

    fn m(x: f64) -> RoiTarget {
        RoiTarget::new(x).unwrap()
    }

    fn uniform() -> ValueDistribution {
        ValueDistribution::uniform(1.0).unwrap()
    }

    /// Oracle: `H` integrated directly in value space.
    fn h_direct(d: &ValueDistribution, mm: f64, threshold: f64) -> f64 {
        let e = 1.0 / (mm - 1.0);
        adaptive_simpson(|v| d.psi_unchecked(v) * v.powf(e), 0.0, threshold, 1e-13).unwrap().value
    }

    #[test]
    fn substitution_matches_direct_integral() {
        let dists = [
            uniform(),
            ValueDistribution::power_cdf(2.0, 3.0).unwrap(),
            ValueDistribution::piecewise_linear_density(vec![0.0, 0.5, 1.0], vec![0.5, 1.0, 1.5]).unwrap(),
        ];
        for d in &dists {
            for mm in [1.5, 2.0, 3.0, 5.0] {
                for frac in [0.3, 0.7, 1.0] {
                    let t = frac * d.vmax();
                    let got = weighted_psi_integral(d, m(mm), t).unwrap();
                    let want = h_direct(d, mm, t);
                    assert!((got - want).abs() < 1e-11, "M={mm} D={t}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn uniform_closed_form_h() {
        // ψ = 2v − 1, e = 1: H(D) = 2D³/3 − D²/2.
        for t in [0.25, 0.5, 0.75, 1.0] {
            let h = weighted_psi_integral(&uniform(), m(2.0), t).unwrap();
            assert!((h - (2.0 * t.powi(3) / 3.0 - t * t / 2.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn thresholds_match_closed_forms() {
        let t = solve_threshold(&uniform(), m(2.0), 1e-12).unwrap();
        assert!((t.threshold - 0.75).abs() < 1e-10);
        assert_eq!(t.boundary_case, BoundaryCase::InteriorRoot);
        let t = solve_threshold(&uniform(), m(3.0), 1e-12).unwrap();
        assert!((t.threshold - 5.0 / 6.0).abs() < 1e-10);
        let p2 = ValueDistribution::power_cdf(1.0, 2.0).unwrap();
        let t = solve_threshold(&p2, m(2.0), 1e-12).unwrap();
        assert!((t.threshold - (2.0f64 / 3.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn threshold_scales_with_support() {
        let a = solve_threshold(&uniform(), m(2.5), 1e-12).unwrap().threshold;
        let b = solve_threshold(&ValueDistribution::uniform(4.0).unwrap(), m(2.5), 1e-12).unwrap().threshold;
        assert!((4.0 * a - b).abs() < 1e-9);
    }

    #[test]
    fn weighted_integral_is_positive_at_vmax_under_dmr() {
        // ψ integrates to zero and is non-decreasing, so weighting by the
        // increasing v^e makes H(vmax) positive.
        let dists = [uniform(), ValueDistribution::power_cdf(1.0, 4.0).unwrap()];
        for d in &dists {
            for mm in [1.2, 2.0, 10.0, 1e4] {
                assert!(weighted_psi_integral(d, m(mm), 1.0).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn threshold_tends_to_vmax_for_large_m() {
        let t = solve_threshold(&uniform(), m(1e4), 1e-12).unwrap();
        assert_eq!(t.boundary_case, BoundaryCase::InteriorRoot);
        assert!(t.threshold > 0.999 && t.threshold < 1.0);
    }

    #[test]
    fn non_dmr_is_rejected() {
        let d = ValueDistribution::piecewise_linear_density(vec![0.0, 1.0], vec![2.0, 0.0]).unwrap();
        let err = solve_threshold(&d, m(2.0), 1e-9).unwrap_err();
        match err {
            Error::NotDmr { location, worst_decrease } => {
                assert!(location > 2.0 / 3.0);
                assert!(worst_decrease > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn revenue_derivative_signs() {
        let d = uniform();
        assert!(revenue_derivative(&d, m(2.0), 0.5).unwrap() > 0.0);
        assert!(revenue_derivative(&d, m(2.0), 0.75).unwrap().abs() < 1e-12);
        assert!(revenue_derivative(&d, m(2.0), 0.9).unwrap() < 0.0);
        assert!(revenue_derivative(&d, m(2.0), 0.0).is_err());
    }

    #[test]
    fn revenue_derivative_matches_finite_difference() {
        let d = ValueDistribution::power_cdf(1.0, 2.0).unwrap();
        let rev = |t: f64| {
            let a = make_power_ramp(1.0, t, m(3.0)).unwrap();
            let mech = Mechanism::truthful(a, m(3.0), 11).unwrap();
            expected_revenue_quadrature(&mech, &d).unwrap().mean
        };
        let h = 1e-4;
        for t in [0.4, 0.6, 0.9] {
            // The displayed derivative is for the Myerson-payment revenue;
            // actual payments are M times larger on the ramp family.
            let fd = (rev(t + h) - rev(t - h)) / (2.0 * h) / 3.0;
            let an = revenue_derivative(&d, m(3.0), t).unwrap();
            assert!((fd - an).abs() < 1e-6, "D={t}: {fd} vs {an}");
        }
    }

    #[test]
    fn example_one_solution() {
        let sol = optimal_mechanism(&uniform(), m(2.0), 1001, 1e-12).unwrap();
        assert!((sol.threshold - 0.75).abs() < 1e-10);
        assert!((sol.expected_revenue - 0.375).abs() < 1e-9);
        assert!(sol.warnings.is_empty());
    }

    #[test]
    fn large_exponent_warns() {
        let sol = optimal_mechanism(&uniform(), m(1.01), 101, 1e-9).unwrap();
        assert_eq!(sol.warnings.len(), 1);
    }

    #[test]
    fn structural_audit_passes_on_optimum() {
        for mm in [1.5, 2.0, 3.0, 5.0] {
            let sol = optimal_mechanism(&uniform(), m(mm), 2001, 1e-12).unwrap();
            let report = structural_audit(&sol, 201).unwrap();
            assert!(report.pass(), "M={mm}: {}", report.to_json());
        }
    }

    #[test]
    fn structural_audit_flags_step() {
        let step = Mechanism::truthful(make_step(1.0, 0.5).unwrap(), m(2.0), 201).unwrap();
        let report = structural_audit_mechanism(&step, 0.75, 201).unwrap();
        let no_rebate = report.get("no_rebate").unwrap();
        assert!(!no_rebate.pass);
        // M·p̃ = 1 at v = 1/2, where v·x = 1/2.
        assert!((no_rebate.worst_violation - 0.5).abs() < 1e-12);
        assert!(!report.get("single_flat_interval").unwrap().pass);
        assert!(!report.get("power_ramp").unwrap().pass);
    }

    #[test]
    fn zero_allocation_fails_only_threshold() {
        let zero = Mechanism::truthful(make_zero(1.0).unwrap(), m(2.0), 201).unwrap();
        let report = structural_audit_mechanism(&zero, 1.0, 201).unwrap();
        for e in &report.checks {
            assert_eq!(e.pass, e.name != "threshold", "{e:?}");
        }
    }
}
