//! Truthful payments for ROI-constrained bidders.
//!
//! For a monotone allocation `x` the Myerson payment is
//! `p̃(v) = v·x(v) − ∫_0^v x(z) dz`. An ROI-constrained bidder with public
//! target `M` is charged
//!
//! ```text
//! p(v) = M·p̃(v) − max_{0 ≤ z ≤ v} g(z),    g(z) = M·p̃(z) − z·x(z)
//! ```
//!
//! where the prefix maximum of the *violation* `g` is a rebate that keeps
//! every type's payment at or below its value `v·x(v)`.
//!
//! The rebate is computed exactly. Between consecutive knots of the rule,
//! `g` is smooth with `g'(z) = (M − 1)·z·x'(z) − x(z)`; on constant and
//! power pieces its sign is fixed, and on linear pieces `x = a + s·z` it
//! vanishes only at `z = a / ((M − 2)·s)`. With those critical points added
//! to the knots, `g` is monotone between candidates, so the running maximum
//! over the candidates (plus the evaluation point itself) is the true
//! supremum.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alloc::{AllocationRule, Shape};
use crate::error::{Error, Result};

/// Grid size used when none is given.
pub const DEFAULT_GRID_N: usize = 10_001;
/// Absolute tolerance for payment comparisons.
pub const PAYMENT_TOL: f64 = 1e-9;

/// Public ROI target `M`, with `1 < M < ∞`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RoiTarget(f64);

impl RoiTarget {
    pub fn new(m: f64) -> Result<Self> {
        if m > 1.0 && m.is_finite() {
            Ok(Self(m))
        } else {
            Err(Error::InvalidRoiTarget(m))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RoiTarget {
    type Error = Error;
    fn try_from(m: f64) -> Result<Self> {
        Self::new(m)
    }
}

impl From<RoiTarget> for f64 {
    fn from(m: RoiTarget) -> f64 {
        m.0
    }
}

impl fmt::Display for RoiTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn check_domain(a: &AllocationRule, v: f64) -> Result<()> {
    if v.is_nan() || v < 0.0 || v > a.vmax() {
        return Err(Error::Domain { value: v, vmax: a.vmax() });
    }
    Ok(())
}

fn check_grid(grid_n: usize) -> Result<()> {
    if grid_n < 2 {
        return Err(Error::InvalidArgument(format!("grid_n must be >= 2, got {grid_n}")));
    }
    Ok(())
}

fn uniform_grid(vmax: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i + 1 == n { vmax } else { vmax * i as f64 / (n - 1) as f64 })
}

#[inline]
fn myerson(a: &AllocationRule, v: f64) -> f64 {
    v * a.eval(v) - a.integral(v)
}

#[inline]
fn violation(a: &AllocationRule, m: f64, z: f64) -> f64 {
    m * myerson(a, z) - z * a.eval(z)
}

/// Violation evaluated with the left limit of `x` at `z`.
#[inline]
fn violation_left(a: &AllocationRule, m: f64, z: f64) -> f64 {
    let x = a.eval_left(z);
    m * (z * x - a.integral(z)) - z * x
}

/// Myerson payment `p̃(v) = v·x(v) − ∫_0^v x`.
pub fn myerson_payment(a: &AllocationRule, v: f64) -> Result<f64> {
    check_domain(a, v)?;
    Ok(myerson(a, v))
}

/// ROI violation `g(z) = M·p̃(z) − z·x(z)`.
pub fn roi_violation(a: &AllocationRule, m: RoiTarget, z: f64) -> Result<f64> {
    check_domain(a, z)?;
    Ok(violation(a, m.get(), z))
}

/// Interior critical points of `g`, one per linear piece at most.
fn critical_points(a: &AllocationRule, m: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut linear = |lo: f64, hi: f64, slope: f64, intercept: f64| {
        let denom = (m - 2.0) * slope;
        if denom != 0.0 {
            let z = intercept / denom;
            if z > lo && z < hi {
                out.push(z);
            }
        }
    };
    for s in a.segments() {
        match &s.shape {
            Shape::Linear { slope, intercept } => linear(s.lo, s.hi, *slope, *intercept),
            Shape::Table { points } => {
                for w in points.windows(2) {
                    let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                    linear(w[0].0, w[1].0, slope, w[0].1 - slope * w[0].0);
                }
            }
            Shape::Constant { .. } | Shape::Power { .. } => {}
        }
    }
    out
}

/// Knots and critical points of `g`, sorted.
fn structural_candidates(a: &AllocationRule, m: f64) -> Vec<f64> {
    let mut c = a.knots();
    c.extend(critical_points(a, m));
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// Rebate `max_{0 ≤ z ≤ v} g(z)` by direct enumeration of the grid points,
/// knots (both one-sided limits), critical points of `g`, and `v` itself.
pub fn rebate(a: &AllocationRule, m: RoiTarget, v: f64, grid_n: usize) -> Result<f64> {
    check_domain(a, v)?;
    check_grid(grid_n)?;
    let mm = m.get();
    let mut best = violation(a, mm, v).max(0.0);
    for z in uniform_grid(a.vmax(), grid_n).take_while(|&z| z <= v) {
        best = best.max(violation(a, mm, z));
    }
    for z in structural_candidates(a, mm).into_iter().take_while(|&z| z <= v) {
        best = best.max(violation(a, mm, z)).max(violation_left(a, mm, z));
    }
    Ok(best)
}

/// ROI-adjusted DSIC payment `p(v) = M·p̃(v) − rebate(v)`.
pub fn roi_payment(a: &AllocationRule, m: RoiTarget, v: f64, grid_n: usize) -> Result<f64> {
    let r = rebate(a, m, v, grid_n)?;
    Ok(m.get() * myerson(a, v) - r)
}

/// Precomputed exact ROI payment rule: evaluates `p(v)` anywhere in
/// `O(log n)` using the running maximum of `g` over structural candidates.
#[derive(Debug, Clone)]
pub struct RoiPaymentRule {
    alloc: AllocationRule,
    m: RoiTarget,
    candidates: Vec<f64>,
    /// `max(0, sup g)` over `[0, candidates[j]]`.
    running: Vec<f64>,
}

impl RoiPaymentRule {
    pub fn new(alloc: &AllocationRule, m: RoiTarget) -> Self {
        let mm = m.get();
        let candidates = structural_candidates(alloc, mm);
        let mut running = Vec::with_capacity(candidates.len());
        let mut best = 0.0_f64;
        for &z in &candidates {
            best = best.max(violation(alloc, mm, z)).max(violation_left(alloc, mm, z));
            running.push(best);
        }
        Self { alloc: alloc.clone(), m, candidates, running }
    }

    pub fn allocation(&self) -> &AllocationRule {
        &self.alloc
    }

    pub fn roi_target(&self) -> RoiTarget {
        self.m
    }

    /// Points where the payment curve may kink or jump.
    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn rebate(&self, v: f64) -> f64 {
        let j = self.candidates.partition_point(|&c| c <= v);
        let prior = if j == 0 { 0.0 } else { self.running[j - 1] };
        prior.max(violation(&self.alloc, self.m.get(), v))
    }

    pub fn myerson(&self, v: f64) -> f64 {
        myerson(&self.alloc, v)
    }

    pub fn payment(&self, v: f64) -> f64 {
        self.m.get() * self.myerson(v) - self.rebate(v)
    }
}

/// Payments sampled on a sorted value grid, together with the allocation
/// and Myerson payment at each point.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSchedule {
    vmax: f64,
    m: RoiTarget,
    pub grid: Vec<f64>,
    pub allocation: Vec<f64>,
    pub myerson: Vec<f64>,
    pub payments: Vec<f64>,
    pub rebate: Vec<f64>,
}

impl PaymentSchedule {
    /// Builds a schedule from raw columns. Only structure is validated:
    /// payments need not be truthful.
    pub fn from_columns(
        vmax: f64,
        m: RoiTarget,
        grid: Vec<f64>,
        allocation: Vec<f64>,
        myerson: Vec<f64>,
        payments: Vec<f64>,
        rebate: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        if n < 2 || [allocation.len(), myerson.len(), payments.len(), rebate.len()].iter().any(|&l| l != n) {
            return Err(Error::InvalidArgument("schedule columns must share a length >= 2".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("schedule grid must be strictly increasing".into()));
        }
        if grid[0] < 0.0 || grid[n - 1] > vmax {
            return Err(Error::InvalidArgument(format!("schedule grid must lie in [0, {vmax}]")));
        }
        if payments.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("schedule payments must be finite".into()));
        }
        Ok(Self { vmax, m, grid, allocation, myerson, payments, rebate })
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    pub fn roi_target(&self) -> RoiTarget {
        self.m
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Payment at an arbitrary `v`: exact on grid points, linear in between
    /// unless `a` jumps inside the cell, in which case the sample on the
    /// same side of the jump is held.
    pub fn payment_at(&self, a: &AllocationRule, v: f64) -> f64 {
        let g = &self.grid;
        let k = g.partition_point(|&x| x <= v);
        if k == 0 {
            return self.payments[0];
        }
        let i = k - 1;
        if g[i] == v || i + 1 == g.len() {
            return self.payments[i];
        }
        let (lo, hi) = (g[i], g[i + 1]);
        if let Some(j) = a.jumps().iter().find(|j| j.at > lo && j.at <= hi) {
            return if v < j.at { self.payments[i] } else { self.payments[i + 1] };
        }
        let w = (v - lo) / (hi - lo);
        self.payments[i] + w * (self.payments[i + 1] - self.payments[i])
    }

    /// CSV with header `v,x,p_myerson,p_roi,rebate`, numbers at 12
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("v,x,p_myerson,p_roi,rebate\n");
        for i in 0..self.grid.len() {
            let row = [self.grid[i], self.allocation[i], self.myerson[i], self.payments[i], self.rebate[i]];
            let cells: Vec<String> = row.iter().map(|&x| fmt_sig(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, vmax: f64, m: RoiTarget) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty schedule CSV".into()))?;
        if header.trim() != "v,x,p_myerson,p_roi,rebate" {
            return Err(Error::Parse(format!("unexpected schedule header `{header}`")));
        }
        let mut cols: [Vec<f64>; 5] = Default::default();
        for (lineno, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(Error::Parse(format!("row {} has {} fields, expected 5", lineno + 2, cells.len())));
            }
            for (col, cell) in cols.iter_mut().zip(cells) {
                let x = cell
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{cell}`: {e}", lineno + 2)))?;
                col.push(x);
            }
        }
        let [grid, x, pm, p, r] = cols;
        Self::from_columns(vmax, m, grid, x, pm, p, r)
    }
}

/// [`RoiPaymentRule`] sampled on a uniform grid of `grid_n` points.
pub fn payment_schedule(a: &AllocationRule, m: RoiTarget, grid_n: usize) -> Result<PaymentSchedule> {
    check_grid(grid_n)?;
    let rule = RoiPaymentRule::new(a, m);
    let grid: Vec<f64> = uniform_grid(a.vmax(), grid_n).collect();
    let allocation = grid.iter().map(|&v| a.eval(v)).collect();
    let myerson_col = grid.iter().map(|&v| rule.myerson(v)).collect();
    let payments = grid.iter().map(|&v| rule.payment(v)).collect();
    let rebates = grid.iter().map(|&v| rule.rebate(v)).collect();
    PaymentSchedule::from_columns(a.vmax(), m, grid, allocation, myerson_col, payments, rebates)
}

/// Formats like C's `%.12g`.
pub fn fmt_sig(x: f64) -> String {
    const SIG: i32 = 12;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (SIG - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..SIG).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (SIG - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
