//! Brute-force truthfulness audits on discretized value grids.
//!
//! Every check compares utilities or payments at sampled types. The grid
//! oracle is sound but incomplete: a pass certifies the sampled pairs only.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::AllocationRule;
use crate::error::{Error, Result};
use crate::payment::{payment_schedule, PaymentSchedule, RoiPaymentRule, RoiTarget};

/// Slack on the ROI feasibility test `v·x >= p`, so that exact first-price
/// payments count as feasible.
pub const FEASIBILITY_SLACK: f64 = 1e-12;
/// Own-value grid used by audits when none is given.
pub const DEFAULT_AUDIT_GRID_N: usize = 201;
/// Opponent-bid grid used by profile audits when none is given.
pub const DEFAULT_OPPONENT_GRID_N: usize = 21;

/// Utility of an ROI-constrained bidder. `Infeasible` stands for the
/// `−∞` outcome where the payment exceeds the obtained value; it orders
/// below every finite utility and never enters arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Utility {
    Infeasible,
    Finite(f64),
}

impl PartialOrd for Utility {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Utility::Infeasible, Utility::Infeasible) => Some(Ordering::Equal),
            (Utility::Infeasible, Utility::Finite(_)) => Some(Ordering::Less),
            (Utility::Finite(_), Utility::Infeasible) => Some(Ordering::Greater),
            (Utility::Finite(a), Utility::Finite(b)) => a.partial_cmp(b),
        }
    }
}

/// `M·v·x − p` when `v·x >= p` (up to [`FEASIBILITY_SLACK`]), otherwise
/// [`Utility::Infeasible`].
pub fn utility(v: f64, x: f64, p: f64, m: RoiTarget) -> Utility {
    if v * x >= p - FEASIBILITY_SLACK {
        Utility::Finite(m.get() * v * x - p)
    } else {
        Utility::Infeasible
    }
}

/// A single-parameter mechanism for one ROI-constrained bidder (or one
/// bidder with the others' bids held fixed).
#[derive(Debug, Clone)]
pub struct Mechanism {
    pub allocation: AllocationRule,
    pub schedule: PaymentSchedule,
    pub m: RoiTarget,
    exact: Option<RoiPaymentRule>,
}

impl Mechanism {
    /// The truthful mechanism for `allocation`: payments from the
    /// ROI-adjusted rule, sampled on `grid_n` points.
    pub fn truthful(allocation: AllocationRule, m: RoiTarget, grid_n: usize) -> Result<Self> {
        let schedule = payment_schedule(&allocation, m, grid_n)?;
        let exact = Some(RoiPaymentRule::new(&allocation, m));
        Ok(Self { allocation, schedule, m, exact })
    }

    /// A mechanism with externally supplied payments. Between grid points
    /// the payment is interpolated (see [`PaymentSchedule::payment_at`]).
    pub fn with_schedule(allocation: AllocationRule, schedule: PaymentSchedule) -> Result<Self> {
        if schedule.vmax() != allocation.vmax() {
            return Err(Error::InvalidArgument(format!(
                "schedule vmax {} does not match allocation vmax {}",
                schedule.vmax(),
                allocation.vmax()
            )));
        }
        let m = schedule.roi_target();
        Ok(Self { allocation, schedule, m, exact: None })
    }

    pub fn vmax(&self) -> f64 {
        self.allocation.vmax()
    }

    /// Payment charged to a report of `v`.
    pub fn payment(&self, v: f64) -> f64 {
        match &self.exact {
            Some(rule) => rule.payment(v),
            None => self.schedule.payment_at(&self.allocation, v),
        }
    }

    /// Points where the payment curve may kink or jump.
    pub fn payment_knots(&self) -> Vec<f64> {
        let mut k = match &self.exact {
            Some(rule) => rule.candidates().to_vec(),
            None => self.schedule.grid.clone(),
        };
        k.extend(self.allocation.knots());
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// The same allocation with payments replaced by `payments`.
    pub fn with_payments(&self, payments: Vec<f64>) -> Result<Self> {
        let s = &self.schedule;
        let schedule = PaymentSchedule::from_columns(
            s.vmax(),
            s.roi_target(),
            s.grid.clone(),
            s.allocation.clone(),
            s.myerson.clone(),
            payments,
            s.rebate.clone(),
        )?;
        Self::with_schedule(self.allocation.clone(), schedule)
    }

    /// Indices of schedule points visited by a `grid_n`-point audit.
    fn audit_indices(&self, grid_n: usize) -> Vec<usize> {
        let n = self.schedule.len();
        if grid_n >= n {
            return (0..n).collect();
        }
        let mut idx: Vec<usize> =
            (0..grid_n).map(|i| ((i as f64) * (n - 1) as f64 / (grid_n - 1) as f64).round() as usize).collect();
        idx.dedup();
        idx
    }

    /// `(v, x(v), p(v))` at the audited schedule points.
    pub(crate) fn audit_points(&self, grid_n: usize) -> Vec<(f64, f64, f64)> {
        self.audit_indices(grid_n)
            .into_iter()
            .map(|i| {
                let v = self.schedule.grid[i];
                (v, self.allocation.eval(v), self.schedule.payments[i])
            })
            .collect()
    }
}

pub type Witness = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub pass: bool,
    pub worst_violation: f64,
    pub witness: Witness,
}

impl CheckEntry {
    fn new(name: &str, worst_violation: f64, tol: f64, witness: Witness) -> Self {
        Self { name: name.to_string(), pass: worst_violation <= tol, worst_violation, witness }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub checks: Vec<CheckEntry>,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn witness<const N: usize>(pairs: [(&str, f64); N]) -> Witness {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn check_grid(grid_n: usize) -> Result<()> {
    if grid_n < 2 {
        return Err(Error::InvalidArgument(format!("grid_n must be >= 2, got {grid_n}")));
    }
    Ok(())
}

/// Gain from reporting `b` instead of `v`; `None` when misreporting is no
/// better. A truthful report that breaks the ROI constraint while some
/// misreport is feasible counts as a violation of at least its ROI
/// shortfall.
fn misreport_gain(m: RoiTarget, v: f64, truth: (f64, f64), report: (f64, f64)) -> Option<f64> {
    let (xv, pv) = truth;
    let (xb, pb) = report;
    match (utility(v, xv, pv, m), utility(v, xb, pb, m)) {
        (_, Utility::Infeasible) => None,
        (Utility::Finite(ut), Utility::Finite(ub)) => (ub > ut).then_some(ub - ut),
        (Utility::Infeasible, Utility::Finite(ub)) => {
            let shortfall = pv - v * xv;
            Some(shortfall.max(ub - (m.get() * v * xv - pv)))
        }
    }
}

/// Largest worst-case gain over rows, ties broken by the earliest row, so
/// the result does not depend on thread scheduling.
fn reduce_rows(rows: Vec<(f64, f64, f64)>) -> (f64, f64, f64) {
    rows.into_iter().fold((0.0, f64::NAN, f64::NAN), |best, r| if r.0 > best.0 { r } else { best })
}

/// Checks `u(v, v) >= u(b, v) − tol` over all ordered pairs of audited
/// grid points.
pub fn check_dsic(m: &Mechanism, grid_n: usize, tol: f64) -> Result<CheckEntry> {
    check_grid(grid_n)?;
    let pts = m.audit_points(grid_n);
    let rows: Vec<(f64, f64, f64)> = pts
        .par_iter()
        .map(|&(v, xv, pv)| {
            let mut best = (0.0, f64::NAN, f64::NAN);
            for &(b, xb, pb) in &pts {
                if let Some(gain) = misreport_gain(m.m, v, (xv, pv), (xb, pb)) {
                    if gain > best.0 {
                        best = (gain, v, b);
                    }
                }
            }
            best
        })
        .collect();
    let (worst, v, b) = reduce_rows(rows);
    let w = if worst > 0.0 { witness([("v", v), ("b", b)]) } else { Witness::new() };
    Ok(CheckEntry::new("dsic", worst, tol, w))
}

/// Checks `p(v) <= v·x(v) + tol` at every audited point, which is both
/// individual rationality and the ex post ROI constraint.
pub fn check_ir(m: &Mechanism, grid_n: usize, tol: f64) -> Result<CheckEntry> {
    check_grid(grid_n)?;
    let mut worst = 0.0;
    let mut at = f64::NAN;
    for (v, x, p) in m.audit_points(grid_n) {
        let excess = p - v * x;
        if excess > worst {
            worst = excess;
            at = v;
        }
    }
    let w = if worst > 0.0 { witness([("v", at)]) } else { Witness::new() };
    Ok(CheckEntry::new("ir", worst, tol, w))
}

/// Recomputes the ROI-adjusted payments from the allocation at every
/// schedule point and compares them with the supplied schedule; also checks
/// that the allocation is monotone, which truthfulness requires.
pub fn check_characterization(m: &Mechanism, grid_n: usize, tol: f64) -> Result<CheckEntry> {
    check_grid(grid_n)?;
    let mono = m.allocation.check_monotone(grid_n)?;
    let rule = RoiPaymentRule::new(&m.allocation, m.m);
    let mut gap = 0.0;
    let mut at = f64::NAN;
    for (&v, &p) in m.schedule.grid.iter().zip(&m.schedule.payments) {
        let d = (rule.payment(v) - p).abs();
        if d > gap {
            gap = d;
            at = v;
        }
    }
    let mut w = witness([("payment_gap", gap), ("monotone_violation", mono.worst_violation)]);
    if gap > 0.0 {
        w.insert("v".into(), at);
    }
    if let Some(loc) = mono.location {
        w.insert("monotone_at".into(), loc);
    }
    Ok(CheckEntry::new("characterization", gap.max(mono.worst_violation), tol, w))
}

/// Shifts the payments on the top half of the value range by each offset
/// and confirms the DSIC or IR check rejects every shifted schedule.
pub fn uniqueness_probe(m: &Mechanism, offsets: &[f64], grid_n: usize, tol: f64) -> Result<CheckEntry> {
    if offsets.iter().any(|&d| d == 0.0 || !d.is_finite()) {
        return Err(Error::InvalidArgument("uniqueness offsets must be finite and nonzero".into()));
    }
    let half = 0.5 * m.vmax();
    let mut worst = 0.0_f64;
    let mut w = witness([("probes", offsets.len() as f64)]);
    for &delta in offsets {
        let shifted: Vec<f64> = m
            .schedule
            .grid
            .iter()
            .zip(&m.schedule.payments)
            .map(|(&v, &p)| if v >= half { p + delta } else { p })
            .collect();
        let probe = m.with_payments(shifted)?;
        let caught = !check_dsic(&probe, grid_n, tol)?.pass || !check_ir(&probe, grid_n, tol)?.pass;
        if !caught && delta.abs() > worst {
            worst = delta.abs();
            w.insert("uncaught_offset".into(), delta);
        }
    }
    // Any uncaught probe fails regardless of its size.
    let mut entry = CheckEntry::new("uniqueness", worst, 0.0, w);
    entry.pass = worst == 0.0;
    Ok(entry)
}

/// The standard battery: monotonicity, characterization, DSIC, IR, and
/// uniqueness probes at `±0.01`.
pub fn full_audit(m: &Mechanism, grid_n: usize, tol: f64) -> Result<AuditReport> {
    let mono = m.allocation.check_monotone(grid_n)?;
    let mut mono_w = Witness::new();
    if let Some(loc) = mono.location {
        mono_w.insert("v".into(), loc);
    }
    Ok(AuditReport {
        checks: vec![
            CheckEntry::new("monotone", mono.worst_violation, crate::alloc::MONOTONE_TOL, mono_w),
            check_characterization(m, grid_n, tol)?,
            check_dsic(m, grid_n, tol)?,
            check_ir(m, grid_n, tol)?,
            uniqueness_probe(m, &[0.01, -0.01], grid_n, tol)?,
        ],
    })
}

/// A multi-bidder allocation rule seen from one bidder: the curve of
/// allocation probability against own bid, with the other bids fixed.
pub trait ProfileRule: Sync {
    fn n_bidders(&self) -> usize;
    fn vmax(&self) -> f64;
    fn induced(&self, bidder: usize, opponents: &[f64]) -> Result<AllocationRule>;
}

/// Single item to the highest bid; the right-continuity convention gives
/// ties to the bidder under consideration.
#[derive(Debug, Clone, Copy)]
pub struct HighestBidWins {
    pub n: usize,
    pub vmax: f64,
}

impl ProfileRule for HighestBidWins {
    fn n_bidders(&self) -> usize {
        self.n
    }

    fn vmax(&self) -> f64 {
        self.vmax
    }

    fn induced(&self, _bidder: usize, opponents: &[f64]) -> Result<AllocationRule> {
        let top = opponents.iter().copied().fold(0.0, f64::max);
        if top >= self.vmax {
            crate::alloc::make_zero(self.vmax)
        } else {
            crate::alloc::make_step(self.vmax, top)
        }
    }
}

/// Never allocates.
#[derive(Debug, Clone, Copy)]
pub struct NoAllocation {
    pub n: usize,
    pub vmax: f64,
}

impl ProfileRule for NoAllocation {
    fn n_bidders(&self) -> usize {
        self.n
    }

    fn vmax(&self) -> f64 {
        self.vmax
    }

    fn induced(&self, _bidder: usize, _opponents: &[f64]) -> Result<AllocationRule> {
        crate::alloc::make_zero(self.vmax)
    }
}

/// How induced mechanisms are priced in [`profile_audit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentMode {
    /// The ROI-adjusted truthful payment.
    RoiAdjusted,
    /// `M` times the Myerson payment, with no rebate.
    NaiveScaledMyerson,
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileAuditConfig {
    pub opponent_grid_n: usize,
    pub own_grid_n: usize,
    pub tol: f64,
    pub mode: PaymentMode,
}

impl Default for ProfileAuditConfig {
    fn default() -> Self {
        Self {
            opponent_grid_n: DEFAULT_OPPONENT_GRID_N,
            own_grid_n: DEFAULT_AUDIT_GRID_N,
            tol: 1e-6,
            mode: PaymentMode::RoiAdjusted,
        }
    }
}

fn opponent_profiles(n_opponents: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n_opponents {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                grid.iter().map(move |&b| {
                    let mut p = prefix.clone();
                    p.push(b);
                    p
                })
            })
            .collect();
    }
    out
}

struct ProfileOutcome {
    monotone: f64,
    dsic: CheckEntry,
    ir: CheckEntry,
}

/// Runs the DSIC and IR checks for every bidder and every opponent bid
/// profile on a grid, aggregating the worst violations. Entries:
/// `profile_monotone`, `profile_dsic`, `profile_ir`; witnesses name the
/// bidder and the opponents' bids (`opp0`, `opp1`, ...).
pub fn profile_audit(rule: &dyn ProfileRule, ms: &[RoiTarget], cfg: ProfileAuditConfig) -> Result<AuditReport> {
    let n = rule.n_bidders();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("profile audits need >= 2 bidders, got {n}")));
    }
    if ms.len() != n {
        return Err(Error::InvalidArgument(format!("expected {n} ROI targets, got {}", ms.len())));
    }
    check_grid(cfg.opponent_grid_n)?;
    check_grid(cfg.own_grid_n)?;
    let vmax = rule.vmax();
    let grid: Vec<f64> = (0..cfg.opponent_grid_n).map(|i| vmax * i as f64 / (cfg.opponent_grid_n - 1) as f64).collect();
    let profiles = opponent_profiles(n - 1, &grid);
    let jobs: Vec<(usize, &Vec<f64>)> = (0..n).flat_map(|i| profiles.iter().map(move |p| (i, p))).collect();

    let outcomes: Vec<Result<ProfileOutcome>> = jobs
        .par_iter()
        .map(|&(i, opp)| {
            let a = rule.induced(i, opp)?;
            let monotone = a.check_monotone(cfg.own_grid_n)?.worst_violation;
            let mech = match cfg.mode {
                PaymentMode::RoiAdjusted => Mechanism::truthful(a, ms[i], cfg.own_grid_n)?,
                PaymentMode::NaiveScaledMyerson => {
                    let base = Mechanism::truthful(a, ms[i], cfg.own_grid_n)?;
                    let naive = base.schedule.myerson.iter().map(|p| ms[i].get() * p).collect();
                    base.with_payments(naive)?
                }
            };
            Ok(ProfileOutcome {
                monotone,
                dsic: check_dsic(&mech, cfg.own_grid_n, cfg.tol)?,
                ir: check_ir(&mech, cfg.own_grid_n, cfg.tol)?,
            })
        })
        .collect();

    let tag = |i: usize, opp: &[f64], inner: &Witness| {
        let mut w = inner.clone();
        w.insert("bidder".into(), i as f64);
        for (k, b) in opp.iter().enumerate() {
            w.insert(format!("opp{k}"), *b);
        }
        w
    };
    let mut mono = CheckEntry::new("profile_monotone", 0.0, crate::alloc::MONOTONE_TOL, Witness::new());
    let mut dsic = CheckEntry::new("profile_dsic", 0.0, cfg.tol, Witness::new());
    let mut ir = CheckEntry::new("profile_ir", 0.0, cfg.tol, Witness::new());
    let mut failing_profiles = [0usize; 3];
    for (&(i, opp), outcome) in jobs.iter().zip(outcomes) {
        let o = outcome?;
        if o.monotone > crate::alloc::MONOTONE_TOL {
            failing_profiles[0] += 1;
        }
        if o.monotone > mono.worst_violation {
            mono.worst_violation = o.monotone;
            mono.witness = tag(i, opp, &Witness::new());
        }
        for (slot, (agg, e)) in [(&mut dsic, o.dsic), (&mut ir, o.ir)].into_iter().enumerate() {
            if !e.pass {
                failing_profiles[slot + 1] += 1;
            }
            if e.worst_violation > agg.worst_violation {
                agg.worst_violation = e.worst_violation;
                agg.witness = tag(i, opp, &e.witness);
            }
        }
    }
    let mut checks = vec![mono, dsic, ir];
    for (entry, count) in checks.iter_mut().zip(failing_profiles) {
        entry.pass = count == 0;
        entry.witness.insert("failing_profiles".into(), count as f64);
    }
    Ok(AuditReport { checks })
}
