//! Bidder value distributions on `[0, vmax]`.
//!
//! Besides the CDF and density, a distribution exposes the two derived
//! curves the revenue analysis is phrased in:
//!
//! * the virtual value `φ(v) = v − (1 − F(v)) / f(v)`, and
//! * the marginal revenue `ψ(v) = v·f(v) + F(v) − 1 = φ(v)·f(v)`.
//!
//! A distribution has *decreasing marginal revenue* (DMR) when `ψ` is
//! non-decreasing in value space, equivalently when `v·(1 − F(v))` is
//! concave. [`check_dmr`] verifies this on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Relative slack allowed on the total mass of a piecewise-linear density
/// before it is rejected. Inputs within the slack are renormalized.
const MASS_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum DistributionKind {
    Uniform,
    /// `F(v) = (v / vmax)^exponent`, exponent ≥ 1.
    PowerCdf {
        exponent: f64,
    },
    /// Density linear between consecutive breakpoints.
    PiecewiseLinearDensity {
        breakpoints: Vec<f64>,
        densities: Vec<f64>,
    },
    /// CDF linearly interpolated between sorted `(v, F)` points.
    TabulatedCdf {
        points: Vec<(f64, f64)>,
    },
}

/// A continuous value distribution supported on `[0, vmax]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDistribution {
    vmax: f64,
    kind: DistributionKind,
    /// CDF at each breakpoint of a piecewise-linear density.
    cumulative: Vec<f64>,
}

impl ValueDistribution {
    pub fn uniform(vmax: f64) -> Result<Self> {
        check_vmax(vmax)?;
        Ok(Self { vmax, kind: DistributionKind::Uniform, cumulative: Vec::new() })
    }

    pub fn power_cdf(vmax: f64, exponent: f64) -> Result<Self> {
        check_vmax(vmax)?;
        if !(exponent >= 1.0) || !exponent.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "power_cdf exponent must be a finite number >= 1, got {exponent}"
            )));
        }
        Ok(Self { vmax, kind: DistributionKind::PowerCdf { exponent }, cumulative: Vec::new() })
    }

    pub fn piecewise_linear_density(breakpoints: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != densities.len() {
            return Err(Error::InvalidDistribution(
                "piecewise_linear_density needs >= 2 breakpoints and one density per breakpoint".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidDistribution("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDistribution("breakpoints must be strictly increasing".into()));
        }
        if densities.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidDistribution("densities must be finite and non-negative".into()));
        }
        let vmax = *breakpoints.last().unwrap();
        check_vmax(vmax)?;
        let mass: f64 =
            breakpoints.windows(2).zip(densities.windows(2)).map(|(b, d)| 0.5 * (d[0] + d[1]) * (b[1] - b[0])).sum();
        if (mass - 1.0).abs() > MASS_SLACK {
            return Err(Error::InvalidDistribution(format!("density integrates to {mass}, expected 1")));
        }
        let densities: Vec<f64> = densities.into_iter().map(|d| d / mass).collect();
        let mut cumulative = Vec::with_capacity(breakpoints.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for (b, d) in breakpoints.windows(2).zip(densities.windows(2)) {
            acc += 0.5 * (d[0] + d[1]) * (b[1] - b[0]);
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self { vmax, kind: DistributionKind::PiecewiseLinearDensity { breakpoints, densities }, cumulative })
    }

    pub fn tabulated_cdf(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidDistribution("tabulated_cdf needs at least two points".into()));
        }
        let first = points[0];
        let last = *points.last().unwrap();
        if first != (0.0, 0.0) {
            return Err(Error::InvalidDistribution("tabulated_cdf must start at (0, 0)".into()));
        }
        if last.1 != 1.0 {
            return Err(Error::InvalidDistribution("tabulated_cdf must end at F = 1".into()));
        }
        check_vmax(last.0)?;
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidDistribution("tabulated_cdf values must be strictly increasing".into()));
            }
            if !(w[1].1 >= w[0].1) || w[1].1 > 1.0 {
                return Err(Error::InvalidDistribution(
                    "tabulated_cdf probabilities must be non-decreasing within [0, 1]".into(),
                ));
            }
        }
        Ok(Self { vmax: last.0, kind: DistributionKind::TabulatedCdf { points }, cumulative: Vec::new() })
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    pub fn kind(&self) -> &DistributionKind {
        &self.kind
    }

    /// Points where the density may have a kink or jump, including both
    /// ends of the support.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            DistributionKind::Uniform | DistributionKind::PowerCdf { .. } => vec![0.0, self.vmax],
            DistributionKind::PiecewiseLinearDensity { breakpoints, .. } => breakpoints.clone(),
            DistributionKind::TabulatedCdf { points } => points.iter().map(|p| p.0).collect(),
        }
    }

    fn check(&self, v: f64) -> Result<()> {
        if v.is_nan() || v < 0.0 || v > self.vmax {
            return Err(Error::Domain { value: v, vmax: self.vmax });
        }
        Ok(())
    }

    /// Index `i` of the piece `[x[i], x[i+1])` holding `v`; the last piece
    /// is closed on the right.
    fn piece(xs: impl ExactSizeIterator<Item = f64> + Clone, v: f64) -> usize {
        let n = xs.len();
        let k = xs.clone().take_while(|&x| x <= v).count();
        k.saturating_sub(1).min(n - 2)
    }

    pub fn cdf(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok(self.cdf_unchecked(v))
    }

    pub(crate) fn cdf_unchecked(&self, v: f64) -> f64 {
        let vmax = self.vmax;
        match &self.kind {
            DistributionKind::Uniform => v / vmax,
            DistributionKind::PowerCdf { exponent } => (v / vmax).powf(*exponent),
            DistributionKind::PiecewiseLinearDensity { breakpoints, densities } => {
                let i = Self::piece(breakpoints.iter().copied(), v);
                let t = v - breakpoints[i];
                let slope = (densities[i + 1] - densities[i]) / (breakpoints[i + 1] - breakpoints[i]);
                (self.cumulative[i] + densities[i] * t + 0.5 * slope * t * t).min(1.0)
            }
            DistributionKind::TabulatedCdf { points } => {
                let i = Self::piece(points.iter().map(|p| p.0), v);
                let (x0, f0) = points[i];
                let (x1, f1) = points[i + 1];
                f0 + (f1 - f0) * (v - x0) / (x1 - x0)
            }
        }
    }

    pub fn pdf(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok(self.pdf_unchecked(v))
    }

    pub(crate) fn pdf_unchecked(&self, v: f64) -> f64 {
        let vmax = self.vmax;
        match &self.kind {
            DistributionKind::Uniform => 1.0 / vmax,
            DistributionKind::PowerCdf { exponent: k } => k * (v / vmax).powf(k - 1.0) / vmax,
            DistributionKind::PiecewiseLinearDensity { breakpoints, densities } => {
                let i = Self::piece(breakpoints.iter().copied(), v);
                let w = (v - breakpoints[i]) / (breakpoints[i + 1] - breakpoints[i]);
                densities[i] + (densities[i + 1] - densities[i]) * w
            }
            DistributionKind::TabulatedCdf { points } => {
                let i = Self::piece(points.iter().map(|p| p.0), v);
                (points[i + 1].1 - points[i].1) / (points[i + 1].0 - points[i].0)
            }
        }
    }

    /// Virtual value `φ(v)`. Errors where the density vanishes.
    pub fn virtual_value(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        match &self.kind {
            DistributionKind::Uniform => Ok(2.0 * v - self.vmax),
            _ => {
                let f = self.pdf_unchecked(v);
                if !(f > 0.0) {
                    return Err(Error::Singularity { at: v });
                }
                Ok(v - (1.0 - self.cdf_unchecked(v)) / f)
            }
        }
    }

    /// Marginal revenue `ψ(v) = v·f(v) + F(v) − 1`.
    pub fn marginal_revenue(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok(self.psi_unchecked(v))
    }

    pub(crate) fn psi_unchecked(&self, v: f64) -> f64 {
        match &self.kind {
            DistributionKind::Uniform => 2.0 * v / self.vmax - 1.0,
            DistributionKind::PowerCdf { exponent: k } => (k + 1.0) * (v / self.vmax).powf(*k) - 1.0,
            _ => v * self.pdf_unchecked(v) + self.cdf_unchecked(v) - 1.0,
        }
    }

    /// Inverse CDF: the smallest `v` with `F(v) >= u`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if u.is_nan() || !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!("quantile level {u} is outside [0, 1]")));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return self.vmax;
        }
        match &self.kind {
            DistributionKind::Uniform => u * self.vmax,
            DistributionKind::PowerCdf { exponent } => self.vmax * u.powf(1.0 / exponent),
            DistributionKind::PiecewiseLinearDensity { breakpoints, .. } => {
                let i = Self::piece(self.cumulative.iter().copied(), u);
                let (lo, hi) = (breakpoints[i], breakpoints[i + 1]);
                numeric::bisect_increasing(|v| self.cdf_unchecked(v) - u, lo, hi, 0.0)
            }
            DistributionKind::TabulatedCdf { points } => {
                let i = points.partition_point(|p| p.1 < u).max(1) - 1;
                let (x0, f0) = points[i];
                let (x1, f1) = points[i + 1];
                if f1 <= f0 {
                    x0
                } else {
                    (x0 + (x1 - x0) * (u - f0) / (f1 - f0)).min(x1)
                }
            }
        }
    }
}

fn check_vmax(vmax: f64) -> Result<()> {
    if !(vmax > 0.0) || !vmax.is_finite() {
        return Err(Error::InvalidDistribution(format!("vmax must be positive and finite, got {vmax}")));
    }
    Ok(())
}

/// Outcome of a grid check of marginal-revenue monotonicity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmrReport {
    pub pass: bool,
    pub grid_n: usize,
    pub tolerance: f64,
    /// Largest drop `ψ(v_i) − ψ(v_{i+1})` seen, or 0 when ψ never drops.
    pub worst_decrease: f64,
    /// Right end of the grid pair with the largest drop.
    pub location: Option<f64>,
    /// Right ends of the first and last violating grid pairs.
    pub violation_start: Option<f64>,
    pub violation_end: Option<f64>,
}

/// Checks that `ψ` is non-decreasing on a uniform grid of `grid_n` points,
/// allowing drops up to `1e-9·max(1, |ψ(vmax)|)`.
pub fn check_dmr(d: &ValueDistribution, grid_n: usize) -> Result<DmrReport> {
    if grid_n < 2 {
        return Err(Error::InvalidArgument(format!("grid_n must be >= 2, got {grid_n}")));
    }
    let vmax = d.vmax();
    let tolerance = 1e-9 * d.psi_unchecked(vmax).abs().max(1.0);
    let at = |i: usize| vmax * i as f64 / (grid_n - 1) as f64;
    let mut report = DmrReport {
        pass: true,
        grid_n,
        tolerance,
        worst_decrease: 0.0,
        location: None,
        violation_start: None,
        violation_end: None,
    };
    let mut prev = d.psi_unchecked(0.0);
    for i in 1..grid_n {
        let v = at(i);
        let cur = d.psi_unchecked(v);
        let drop = prev - cur;
        if drop > tolerance {
            report.pass = false;
            report.violation_start.get_or_insert(v);
            report.violation_end = Some(v);
        }
        if drop > report.worst_decrease {
            report.worst_decrease = drop;
            report.location = Some(v);
        }
        prev = cur;
    }
    Ok(report)
}

/// JSON descriptor for a value distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionDescriptor {
    Uniform { vmax: f64 },
    PowerCdf { vmax: f64, exponent: f64 },
    PiecewiseLinearDensity { vmax: f64, breakpoints: Vec<f64>, densities: Vec<f64> },
    TabulatedCdf { vmax: f64, points: Vec<(f64, f64)> },
}

impl TryFrom<DistributionDescriptor> for ValueDistribution {
    type Error = Error;

    fn try_from(desc: DistributionDescriptor) -> Result<Self> {
        let (declared, dist) = match desc {
            DistributionDescriptor::Uniform { vmax } => (vmax, Self::uniform(vmax)?),
            DistributionDescriptor::PowerCdf { vmax, exponent } => (vmax, Self::power_cdf(vmax, exponent)?),
            DistributionDescriptor::PiecewiseLinearDensity { vmax, breakpoints, densities } => {
                (vmax, Self::piecewise_linear_density(breakpoints, densities)?)
            }
            DistributionDescriptor::TabulatedCdf { vmax, points } => (vmax, Self::tabulated_cdf(points)?),
        };
        if declared != dist.vmax() {
            return Err(Error::InvalidDistribution(format!(
                "declared vmax {declared} does not match the last breakpoint {}",
                dist.vmax()
            )));
        }
        Ok(dist)
    }
}

impl From<&ValueDistribution> for DistributionDescriptor {
    fn from(d: &ValueDistribution) -> Self {
        let vmax = d.vmax;
        match &d.kind {
            DistributionKind::Uniform => Self::Uniform { vmax },
            DistributionKind::PowerCdf { exponent } => Self::PowerCdf { vmax, exponent: *exponent },
            DistributionKind::PiecewiseLinearDensity { breakpoints, densities } => {
                Self::PiecewiseLinearDensity { vmax, breakpoints: breakpoints.clone(), densities: densities.clone() }
            }
            DistributionKind::TabulatedCdf { points } => Self::TabulatedCdf { vmax, points: points.clone() },
        }
    }
}

impl ValueDistribution {
    pub fn from_json(text: &str) -> Result<Self> {
        let desc: DistributionDescriptor = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        desc.try_into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decreasing() -> ValueDistribution {
        ValueDistribution::piecewise_linear_density(vec![0.0, 1.0], vec![2.0, 0.0]).unwrap()
    }

    fn all() -> Vec<ValueDistribution> {
        vec![
            ValueDistribution::uniform(1.0).unwrap(),
            ValueDistribution::uniform(2.0).unwrap(),
            ValueDistribution::power_cdf(1.0, 2.0).unwrap(),
            ValueDistribution::power_cdf(3.0, 3.5).unwrap(),
            decreasing(),
            ValueDistribution::piecewise_linear_density(vec![0.0, 0.5, 1.0], vec![0.5, 1.0, 1.5]).unwrap(),
        ]
    }

    #[test]
    fn cdf_examples() {
        let u = ValueDistribution::uniform(1.0).unwrap();
        assert_eq!(u.cdf(0.5).unwrap(), 0.5);
        let p = ValueDistribution::power_cdf(1.0, 2.0).unwrap();
        assert_eq!(p.cdf(0.5).unwrap(), 0.25);
        let t = ValueDistribution::tabulated_cdf(vec![(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!((t.cdf(0.3).unwrap() - 0.3).abs() < 1e-15);
        for d in all() {
            assert_eq!(d.cdf(0.0).unwrap(), 0.0);
            assert!((d.cdf(d.vmax()).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pdf_examples() {
        assert_eq!(ValueDistribution::uniform(1.0).unwrap().pdf(0.77).unwrap(), 1.0);
        assert_eq!(ValueDistribution::power_cdf(1.0, 2.0).unwrap().pdf(0.5).unwrap(), 1.0);
        assert!((decreasing().pdf(0.25).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_support_is_domain_error() {
        let u = ValueDistribution::uniform(1.0).unwrap();
        assert!(matches!(u.cdf(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(u.pdf(1.1), Err(Error::Domain { .. })));
        assert!(matches!(u.cdf(f64::NAN), Err(Error::Domain { .. })));
    }

    #[test]
    fn virtual_value_examples() {
        let u = ValueDistribution::uniform(1.0).unwrap();
        for v in [0.0, 0.2, 0.5, 0.9, 1.0] {
            assert!((u.virtual_value(v).unwrap() - (2.0 * v - 1.0)).abs() < 1e-15);
        }
        assert_eq!(u.virtual_value(0.5).unwrap(), 0.0);
        let p = ValueDistribution::power_cdf(1.0, 2.0).unwrap();
        assert!((p.virtual_value(1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn virtual_value_singular_where_density_vanishes() {
        let p = ValueDistribution::power_cdf(1.0, 2.0).unwrap();
        assert_eq!(p.virtual_value(0.0), Err(Error::Singularity { at: 0.0 }));
        assert_eq!(decreasing().virtual_value(1.0), Err(Error::Singularity { at: 1.0 }));
    }

    #[test]
    fn marginal_revenue_examples() {
        let u = ValueDistribution::uniform(1.0).unwrap();
        assert_eq!(u.marginal_revenue(0.0).unwrap(), -1.0);
        let d = decreasing();
        for i in 0..=20 {
            let v = i as f64 / 20.0;
            assert!((u.marginal_revenue(v).unwrap() - (2.0 * v - 1.0)).abs() < 1e-14);
            assert!((d.marginal_revenue(v).unwrap() - (4.0 * v - 3.0 * v * v - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn psi_endpoints() {
        for d in all() {
            assert!((d.marginal_revenue(0.0).unwrap() + 1.0).abs() < 1e-15);
            let vmax = d.vmax();
            let expect = vmax * d.pdf(vmax).unwrap();
            assert!((d.marginal_revenue(vmax).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        for d in all() {
            let vmax = d.vmax();
            let h = vmax * 1e-5;
            for i in 1..100 {
                let v = vmax * i as f64 / 100.0;
                let num = (d.cdf(v + h).unwrap() - d.cdf(v - h).unwrap()) / (2.0 * h);
                assert!((num - d.pdf(v).unwrap()).abs() <= 1e-4, "{d:?} at {v}");
            }
        }
    }

    #[test]
    fn psi_equals_phi_times_density() {
        for d in all() {
            for i in 0..=100 {
                let v = d.vmax() * i as f64 / 100.0;
                let f = d.pdf(v).unwrap();
                if f > 0.0 {
                    let lhs = d.marginal_revenue(v).unwrap();
                    let rhs = d.virtual_value(v).unwrap() * f;
                    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{d:?} at {v}");
                }
            }
        }
    }

    #[test]
    fn quantile_examples() {
        let u = ValueDistribution::uniform(1.0).unwrap();
        assert_eq!(u.quantile(0.25).unwrap(), 0.25);
        let p = ValueDistribution::power_cdf(1.0, 2.0).unwrap();
        assert_eq!(p.quantile(0.25).unwrap(), 0.5);
        for d in all() {
            assert_eq!(d.quantile(1.0).unwrap(), d.vmax());
        }
        assert!(u.quantile(1.5).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for d in all() {
            for i in 0..100 {
                let v = d.vmax() * i as f64 / 99.0;
                let back = d.quantile(d.cdf(v).unwrap()).unwrap();
                assert!((back - v).abs() <= 1e-8, "{d:?}: {v} -> {back}");
            }
        }
    }

    #[test]
    fn tabulated_quantile_is_linear_inverse() {
        let t = ValueDistribution::tabulated_cdf(vec![(0.0, 0.0), (0.5, 0.25), (1.0, 1.0)]).unwrap();
        assert!((t.quantile(0.125).unwrap() - 0.25).abs() < 1e-15);
        assert!((t.quantile(0.625).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dmr_examples() {
        assert!(check_dmr(&ValueDistribution::uniform(1.0).unwrap(), 1000).unwrap().pass);
        assert!(check_dmr(&ValueDistribution::power_cdf(1.0, 2.0).unwrap(), 1000).unwrap().pass);
        let bad = check_dmr(&decreasing(), 1000).unwrap();
        assert!(!bad.pass);
        assert!(bad.violation_start.unwrap() > 2.0 / 3.0);
        assert!(bad.violation_start.unwrap() < 2.0 / 3.0 + 0.01);
        assert!(bad.violation_end.unwrap() <= 1.0);
        assert!(bad.location.unwrap() > 2.0 / 3.0);
        assert!(check_dmr(&decreasing(), 1).is_err());
    }

    #[test]
    fn descriptor_round_trip_and_unknown_fields() {
        let d = ValueDistribution::from_json(r#"{"kind":"power_cdf","vmax":1.0,"exponent":2}"#).unwrap();
        assert_eq!(d, ValueDistribution::power_cdf(1.0, 2.0).unwrap());
        let text = serde_json::to_string(&DistributionDescriptor::from(&d)).unwrap();
        assert_eq!(ValueDistribution::from_json(&text).unwrap(), d);
        assert!(ValueDistribution::from_json(r#"{"kind":"uniform","vmax":1.0,"mean":0.5}"#).is_err());
        assert!(ValueDistribution::from_json(r#"{"kind":"beta","vmax":1.0}"#).is_err());
        assert!(ValueDistribution::from_json(
            r#"{"kind":"piecewise_linear_density","vmax":2.0,"breakpoints":[0,1],"densities":[2,0]}"#
        )
        .is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(ValueDistribution::uniform(0.0).is_err());
        assert!(ValueDistribution::power_cdf(1.0, 0.5).is_err());
        assert!(ValueDistribution::piecewise_linear_density(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(ValueDistribution::tabulated_cdf(vec![(0.0, 0.0), (1.0, 0.9)]).is_err());
        assert!(ValueDistribution::tabulated_cdf(vec![(0.0, 0.0), (0.5, 0.6), (1.0, 0.5)]).is_err());
    }
}
