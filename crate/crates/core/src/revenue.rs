//! Expected revenue by quadrature and by seeded Monte Carlo, and the
//! comparison against the posted-price baseline.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::{make_step, make_zero};
use crate::audit::Mechanism;
use crate::dist::{check_dmr, ValueDistribution};
use crate::error::{Error, Result};
use crate::numeric::{bisect_increasing, integrate_piecewise};
use crate::optimal::{optimal_mechanism, DMR_GRID_N};
use crate::payment::{fmt_sig, RoiTarget};

/// Absolute tolerance of the revenue quadrature.
pub const REVENUE_TOL: f64 = 1e-9;
/// Draws per Monte Carlo substream.
pub const MC_CHUNK: usize = 4096;
/// Slack on the dominance check in [`compare`].
pub const DOMINANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RevenueMethod {
    Quadrature,
    MonteCarlo { n_samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RevenueEstimate {
    pub mean: f64,
    /// Zero for quadrature.
    pub stderr: f64,
    pub method: RevenueMethod,
}

/// `∫_0^{vmax} p(v) f(v) dv`, split at every payment knot and density
/// breakpoint.
pub fn expected_revenue_quadrature(m: &Mechanism, d: &ValueDistribution) -> Result<RevenueEstimate> {
    if (m.vmax() - d.vmax()).abs() > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "mechanism vmax {} does not match distribution vmax {}",
            m.vmax(),
            d.vmax()
        )));
    }
    let mut nodes = m.payment_knots();
    nodes.extend(d.breakpoints());
    nodes.push(0.0);
    nodes.push(d.vmax());
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let q = integrate_piecewise(|v| m.payment(v) * d.pdf_unchecked(v), &nodes, REVENUE_TOL)?;
    Ok(RevenueEstimate { mean: q.value, stderr: 0.0, method: RevenueMethod::Quadrature })
}

/// `n` uniform draws on `[0, 1)`. Draw `i` comes from substream
/// `i / MC_CHUNK` of a ChaCha8 generator seeded with `seed`, so any prefix
/// or chunk can be regenerated independently.
pub fn uniform_draws(seed: u64, n: usize) -> Vec<f64> {
    let chunks = n.div_ceil(MC_CHUNK);
    (0..chunks).flat_map(|c| chunk_draws(seed, c, chunk_len(n, c))).collect()
}

fn chunk_len(n: usize, c: usize) -> usize {
    MC_CHUNK.min(n - c * MC_CHUNK)
}

fn chunk_draws(seed: u64, chunk: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    (0..len).map(|_| rng.gen::<f64>()).collect()
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of(xs: impl Iterator<Item = f64>) -> Self {
        let mut s = Moments { n: 0.0, mean: 0.0, m2: 0.0 };
        for x in xs {
            s.n += 1.0;
            let d = x - s.mean;
            s.mean += d / s.n;
            s.m2 += d * (x - s.mean);
        }
        s
    }

    fn merge(self, o: Self) -> Self {
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments { n, mean: self.mean + d * o.n / n, m2: self.m2 + o.m2 + d * d * self.n * o.n / n }
    }
}

/// Sample mean of `p(quantile(u_i))` over `n` seeded draws, with standard
/// error `s / √n`. Chunks are evaluated in parallel and combined in chunk
/// order, so the result depends only on `(seed, n)`.
pub fn expected_revenue_mc(m: &Mechanism, d: &ValueDistribution, n: usize, seed: u64) -> Result<RevenueEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least one sample".into()));
    }
    let chunks: Vec<Moments> = (0..n.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| {
            let us = chunk_draws(seed, c, chunk_len(n, c));
            Moments::of(us.into_iter().map(|u| m.payment(d.quantile_unchecked(u))))
        })
        .collect();
    let total = chunks.into_iter().fold(Moments { n: 0.0, mean: 0.0, m2: 0.0 }, Moments::merge);
    let stderr = if n > 1 { (total.m2 / (total.n - 1.0)).sqrt() / total.n.sqrt() } else { 0.0 };
    Ok(RevenueEstimate { mean: total.mean, stderr, method: RevenueMethod::MonteCarlo { n_samples: n, seed } })
}

/// The single-bidder Myerson auction: a posted price at the root of `ψ`.
#[derive(Debug, Clone)]
pub struct PostedPrice {
    pub price: f64,
    pub mechanism: Mechanism,
}

/// Posted price at `r*` with `ψ(r*) = 0`, priced for an ROI target `m`.
/// The ROI-adjusted payment of a step rule is the step location for every
/// `M`, so the baseline charges `r*` regardless of `m`.
pub fn myerson_baseline(d: &ValueDistribution, m: RoiTarget, grid_n: usize) -> Result<PostedPrice> {
    let report = check_dmr(d, DMR_GRID_N)?;
    if !report.pass {
        return Err(Error::NotDmr { worst_decrease: report.worst_decrease, location: report.location.unwrap_or(0.0) });
    }
    let vmax = d.vmax();
    let price = bisect_increasing(|v| d.psi_unchecked(v), 0.0, vmax, 1e-15 * vmax);
    let alloc = if price < vmax { make_step(vmax, price)? } else { make_zero(vmax)? };
    Ok(PostedPrice { price, mechanism: Mechanism::truthful(alloc, m, grid_n)? })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub threshold: f64,
    pub rev_quad: f64,
    pub rev_mc: Option<f64>,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub m: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,threshold,rev_quad,rev_mc,stderr\n");
        for r in &self.rows {
            let opt = |x: Option<f64>| x.map(fmt_sig).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.name,
                fmt_sig(r.threshold),
                fmt_sig(r.rev_quad),
                opt(r.rev_mc),
                opt(r.stderr)
            ));
        }
        out
    }

    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "M = {}", self.m)?;
        writeln!(f, "{:<22} {:>10} {:>12} {:>24}", "mechanism", "threshold", "revenue", "monte carlo")?;
        for r in &self.rows {
            let mc = match (r.rev_mc, r.stderr) {
                (Some(mean), Some(se)) => format!("{mean:.6} ± {se:.6}"),
                _ => "-".to_string(),
            };
            writeln!(f, "{:<22} {:>10.6} {:>12.6} {:>24}", r.name, r.threshold, r.rev_quad, mc)?;
        }
        Ok(())
    }
}

/// Posted-price baseline against the ROI-optimal mechanism. Monte Carlo
/// columns are filled when `mc_samples > 0`. Fails with
/// [`Error::Dominance`] if the optimum falls below the baseline.
pub fn compare(
    d: &ValueDistribution,
    m: RoiTarget,
    mc_samples: usize,
    seed: u64,
    grid_n: usize,
    tol: f64,
) -> Result<ComparisonTable> {
    let base = myerson_baseline(d, m, grid_n)?;
    let opt = optimal_mechanism(d, m, grid_n, tol)?;
    let mut rows = Vec::with_capacity(2);
    for (name, threshold, mech) in
        [("myerson_posted_price", base.price, &base.mechanism), ("roi_optimal", opt.threshold, &opt.mechanism)]
    {
        let rev_quad = expected_revenue_quadrature(mech, d)?.mean;
        let (rev_mc, stderr) = if mc_samples > 0 {
            let e = expected_revenue_mc(mech, d, mc_samples, seed)?;
            (Some(e.mean), Some(e.stderr))
        } else {
            (None, None)
        };
        rows.push(ComparisonRow { name: name.to_string(), threshold, rev_quad, rev_mc, stderr });
    }
    let (baseline, optimal) = (rows[0].rev_quad, rows[1].rev_quad);
    if optimal < baseline - DOMINANCE_TOL {
        return Err(Error::Dominance { optimal, baseline });
    }
    Ok(ComparisonTable { m: m.get(), rows })
}
