//! Piecewise allocation rules `x: [0, vmax] → [0, 1]`.
//!
//! A rule is a tiling of `[0, vmax]` by segments, each carrying a closed-form
//! shape. Evaluation is right-continuous: at a join, the value is the right
//! segment's limit. Every shape has an exact antiderivative, so
//! [`AllocationRule::prefix_integral`] carries no quadrature error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::payment::RoiTarget;

/// Slack allowed on the `[0, 1]` range check for rounding in closed forms.
const RANGE_SLACK: f64 = 1e-12;
/// Tolerance used by [`AllocationRule::check_monotone`].
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Constant {
        level: f64,
    },
    /// `x(v) = slope·v + intercept`.
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// `x(v) = level·(v / pivot)^exponent`, i.e. a power curve `scale·v^e`
    /// with `scale = level / pivot^e`, stored so large exponents do not
    /// overflow.
    Power {
        pivot: f64,
        level: f64,
        exponent: f64,
    },
    /// Linear interpolation through `(v, x)` points that span the segment.
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl Shape {
    fn eval(&self, v: f64) -> f64 {
        match self {
            Shape::Constant { level } => *level,
            Shape::Linear { slope, intercept } => slope * v + intercept,
            Shape::Power { pivot, level, exponent } => level * (v / pivot).powf(*exponent),
            Shape::Table { points } => {
                let i = table_piece(points, v);
                let (x0, y0) = points[i];
                let (x1, y1) = points[i + 1];
                y0 + (y1 - y0) * (v - x0) / (x1 - x0)
            }
        }
    }

    /// `∫_lo^v x(z) dz` for `lo <= v` inside the segment.
    fn integral(&self, lo: f64, v: f64) -> f64 {
        match self {
            Shape::Constant { level } => level * (v - lo),
            Shape::Linear { slope, intercept } => 0.5 * slope * (v * v - lo * lo) + intercept * (v - lo),
            Shape::Power { pivot, level, exponent } => {
                let e1 = exponent + 1.0;
                level * pivot / e1 * ((v / pivot).powf(e1) - (lo / pivot).powf(e1))
            }
            Shape::Table { points } => {
                let mut acc = 0.0;
                for w in points.windows(2) {
                    let (x0, y0) = w[0];
                    let (x1, y1) = w[1];
                    if x0 >= v {
                        break;
                    }
                    let b = x1.min(v);
                    let yb = y0 + (y1 - y0) * (b - x0) / (x1 - x0);
                    acc += 0.5 * (y0 + yb) * (b - x0);
                }
                acc
            }
        }
    }
}

fn table_piece(points: &[(f64, f64)], v: f64) -> usize {
    let k = points.partition_point(|p| p.0 <= v);
    k.saturating_sub(1).min(points.len() - 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub shape: Shape,
}

/// A discontinuity of the rule: `x` jumps by `size` at `at` (right limit
/// minus left limit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub at: f64,
    pub size: f64,
}

/// A right-continuous piecewise allocation curve on `[0, vmax]`.
///
/// Construction checks the tiling and the `[0, 1]` range but not
/// monotonicity; use [`AllocationRule::check_monotone`] for that, or one of
/// the `make_*` constructors, which reject non-monotone input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AllocationDescriptor", into = "AllocationDescriptor")]
pub struct AllocationRule {
    vmax: f64,
    segments: Vec<Segment>,
    /// `∫_0^{lo_i} x` for each segment start.
    offsets: Vec<f64>,
    jumps: Vec<Jump>,
}

/// JSON form of an [`AllocationRule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationDescriptor {
    pub vmax: f64,
    pub segments: Vec<Segment>,
}

impl TryFrom<AllocationDescriptor> for AllocationRule {
    type Error = Error;
    fn try_from(d: AllocationDescriptor) -> Result<Self> {
        AllocationRule::new(d.vmax, d.segments)
    }
}

impl From<AllocationRule> for AllocationDescriptor {
    fn from(a: AllocationRule) -> Self {
        AllocationDescriptor { vmax: a.vmax, segments: a.segments }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidAllocation(msg.into())
}

impl AllocationRule {
    pub fn new(vmax: f64, segments: Vec<Segment>) -> Result<Self> {
        if !(vmax > 0.0) || !vmax.is_finite() {
            return Err(invalid(format!("vmax must be positive and finite, got {vmax}")));
        }
        let (Some(first), Some(last)) = (segments.first(), segments.last()) else {
            return Err(invalid("at least one segment is required"));
        };
        if first.lo != 0.0 {
            return Err(invalid(format!("first segment must start at 0, starts at {}", first.lo)));
        }
        if last.hi != vmax {
            return Err(invalid(format!("last segment must end at vmax = {vmax}, ends at {}", last.hi)));
        }
        for w in segments.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(invalid(format!("gap or overlap between segments at {} / {}", w[0].hi, w[1].lo)));
            }
        }
        for s in &segments {
            validate_segment(s)?;
        }
        let mut offsets = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            offsets.push(acc);
            acc += s.shape.integral(s.lo, s.hi);
        }
        let jumps = segments
            .windows(2)
            .filter_map(|w| {
                let at = w[1].lo;
                let size = w[1].shape.eval(at) - w[0].shape.eval(at);
                (size != 0.0).then_some(Jump { at, size })
            })
            .collect();
        Ok(Self { vmax, segments, offsets, jumps })
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Discontinuities at segment joins, in increasing order.
    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// All points where the rule may fail to be smooth: segment endpoints
    /// and interior table points, sorted and deduplicated.
    pub fn knots(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for s in &self.segments {
            if let Shape::Table { points } = &s.shape {
                out.extend(points.iter().map(|p| p.0).filter(|&v| v > s.lo && v < s.hi));
            }
            out.push(s.hi);
        }
        out.dedup();
        out
    }

    fn segment_index(&self, v: f64) -> usize {
        let k = self.segments.partition_point(|s| s.lo <= v);
        k.saturating_sub(1)
    }

    fn check(&self, v: f64) -> Result<()> {
        if v.is_nan() || v < 0.0 || v > self.vmax {
            return Err(Error::Domain { value: v, vmax: self.vmax });
        }
        Ok(())
    }

    /// Right-continuous value `x(v)`.
    pub fn evaluate(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok(self.eval(v))
    }

    pub(crate) fn eval(&self, v: f64) -> f64 {
        let s = &self.segments[self.segment_index(v)];
        s.shape.eval(v).clamp(0.0, 1.0)
    }

    /// Left limit `x(v−)`; equals `x(0)` at `v = 0`.
    pub(crate) fn eval_left(&self, v: f64) -> f64 {
        let k = self.segments.partition_point(|s| s.lo < v);
        let s = &self.segments[k.saturating_sub(1)];
        s.shape.eval(v).clamp(0.0, 1.0)
    }

    /// Right derivative `x'(v+)`; the left derivative at `vmax`.
    pub fn derivative(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        let i = if v >= self.vmax { self.segments.len() - 1 } else { self.segment_index(v) };
        let s = &self.segments[i];
        Ok(match &s.shape {
            Shape::Constant { .. } => 0.0,
            Shape::Linear { slope, .. } => *slope,
            Shape::Power { pivot, level, exponent } => {
                if v == 0.0 {
                    if *exponent < 1.0 && *level > 0.0 {
                        f64::INFINITY
                    } else if *exponent == 1.0 {
                        level / pivot
                    } else {
                        0.0
                    }
                } else {
                    level * exponent / pivot * (v / pivot).powf(exponent - 1.0)
                }
            }
            Shape::Table { points } => {
                let k = if v >= s.hi { points.len() - 2 } else { table_piece(points, v) };
                (points[k + 1].1 - points[k].1) / (points[k + 1].0 - points[k].0)
            }
        })
    }

    /// Exact `∫_0^v x(z) dz`.
    pub fn prefix_integral(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok(self.integral(v))
    }

    pub(crate) fn integral(&self, v: f64) -> f64 {
        let i = self.segment_index(v);
        let s = &self.segments[i];
        self.offsets[i] + s.shape.integral(s.lo, v)
    }

    /// Checks `x(v_{i+1}) >= x(v_i) − 1e-12` along a uniform grid of
    /// `grid_n` points merged with every knot, visiting both the left
    /// limit and the value at each join.
    pub fn check_monotone(&self, grid_n: usize) -> Result<MonotonicityReport> {
        if grid_n < 2 {
            return Err(Error::InvalidArgument(format!("grid_n must be >= 2, got {grid_n}")));
        }
        let mut pts: Vec<f64> = (0..grid_n).map(|i| self.vmax * i as f64 / (grid_n - 1) as f64).collect();
        pts.extend(self.knots());
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut report = MonotonicityReport { pass: true, worst_violation: 0.0, location: None };
        let mut prev = self.eval(0.0);
        for &v in &pts[1..] {
            for cur in [self.eval_left(v), self.eval(v)] {
                let drop = prev - cur;
                if drop > report.worst_violation {
                    report.worst_violation = drop;
                    report.location = Some(v);
                }
                prev = cur;
            }
        }
        report.pass = report.worst_violation <= MONOTONE_TOL;
        Ok(report)
    }

    /// Samples the rule at `n` uniform points into a single table segment.
    /// Jumps are smeared over one grid cell.
    pub fn to_table(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("table needs >= 2 points, got {n}")));
        }
        let points = (0..n)
            .map(|i| {
                let v = self.vmax * i as f64 / (n - 1) as f64;
                (v, self.eval(v))
            })
            .collect();
        make_table(self.vmax, points)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("allocation serializes")
    }
}

fn validate_segment(s: &Segment) -> Result<()> {
    if !(s.hi > s.lo) {
        return Err(invalid(format!("segment [{}, {}] is empty", s.lo, s.hi)));
    }
    let in_range = |x: f64| x.is_finite() && (-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&x);
    match &s.shape {
        Shape::Power { pivot, level, exponent } => {
            if !(*pivot > 0.0) || !(*exponent > 0.0) || !(*level >= 0.0) || !exponent.is_finite() {
                return Err(invalid("power shape needs pivot > 0, level >= 0 and a finite exponent > 0"));
            }
        }
        Shape::Table { points } => {
            if points.len() < 2 {
                return Err(invalid("table shape needs at least two points"));
            }
            if points[0].0 != s.lo || points[points.len() - 1].0 != s.hi {
                return Err(invalid(format!("table points must span the segment [{}, {}]", s.lo, s.hi)));
            }
            if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return Err(invalid("table points must have strictly increasing v"));
            }
            if let Some(p) = points.iter().find(|p| !in_range(p.1)) {
                return Err(invalid(format!("table level {} at v = {} is outside [0, 1]", p.1, p.0)));
            }
        }
        Shape::Constant { .. } | Shape::Linear { .. } => {}
    }
    // Every shape is monotone within a segment, so the endpoint values
    // bound its range.
    for v in [s.lo, s.hi] {
        let x = s.shape.eval(v);
        if !in_range(x) {
            return Err(invalid(format!("allocation {x} at v = {v} is outside [0, 1]")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub pass: bool,
    pub worst_violation: f64,
    pub location: Option<f64>,
}

fn require_monotone(rule: AllocationRule) -> Result<AllocationRule> {
    let report = rule.check_monotone(2)?;
    if !report.pass {
        return Err(invalid(format!(
            "allocation decreases by {:e} at v = {}",
            report.worst_violation,
            report.location.unwrap_or(0.0)
        )));
    }
    Ok(rule)
}

/// The rule that never allocates.
pub fn make_zero(vmax: f64) -> Result<AllocationRule> {
    AllocationRule::new(vmax, vec![Segment { lo: 0.0, hi: vmax, shape: Shape::Constant { level: 0.0 } }])
}

/// Deterministic posted price: `x = 0` below `r`, `1` from `r` on.
pub fn make_step(vmax: f64, r: f64) -> Result<AllocationRule> {
    if !(0.0..vmax).contains(&r) {
        return Err(invalid(format!("step threshold {r} must lie in [0, {vmax})")));
    }
    if r == 0.0 {
        return AllocationRule::new(vmax, vec![Segment { lo: 0.0, hi: vmax, shape: Shape::Constant { level: 1.0 } }]);
    }
    make_piecewise_constant(vmax, &[r], &[0.0, 1.0])
}

/// Levels `levels[i]` on `[breaks[i-1], breaks[i])`, with `breaks` strictly
/// inside `(0, vmax)`.
pub fn make_piecewise_constant(vmax: f64, breaks: &[f64], levels: &[f64]) -> Result<AllocationRule> {
    if levels.len() != breaks.len() + 1 {
        return Err(invalid("need exactly one more level than breaks"));
    }
    if breaks.iter().any(|&b| !(b > 0.0 && b < vmax)) {
        return Err(invalid("breaks must lie strictly inside (0, vmax)"));
    }
    let mut edges = Vec::with_capacity(breaks.len() + 2);
    edges.push(0.0);
    edges.extend_from_slice(breaks);
    edges.push(vmax);
    let segments = edges
        .windows(2)
        .zip(levels)
        .map(|(w, &level)| Segment { lo: w[0], hi: w[1], shape: Shape::Constant { level } })
        .collect();
    require_monotone(AllocationRule::new(vmax, segments)?)
}

/// The ramp `x(v) = (v / threshold)^{1/(M−1)}` below `threshold` and `1`
/// from `threshold` to `vmax`.
pub fn make_power_ramp(vmax: f64, threshold: f64, m: RoiTarget) -> Result<AllocationRule> {
    if !(threshold > 0.0 && threshold <= vmax) {
        return Err(invalid(format!("ramp threshold {threshold} must lie in (0, {vmax}]")));
    }
    let ramp = Shape::Power { pivot: threshold, level: 1.0, exponent: 1.0 / (m.get() - 1.0) };
    let mut segments = vec![Segment { lo: 0.0, hi: threshold, shape: ramp }];
    if threshold < vmax {
        segments.push(Segment { lo: threshold, hi: vmax, shape: Shape::Constant { level: 1.0 } });
    }
    AllocationRule::new(vmax, segments)
}

/// Linear interpolation through `points`, which must run from `v = 0` to
/// `v = vmax` and be non-decreasing in both coordinates.
pub fn make_table(vmax: f64, points: Vec<(f64, f64)>) -> Result<AllocationRule> {
    require_monotone(AllocationRule::new(vmax, vec![Segment { lo: 0.0, hi: vmax, shape: Shape::Table { points } }])?)
}
