//! Truthful mechanisms and revenue-optimal auctions for bidders with an
//! ex post return-on-investment constraint.
//!
//! A bidder with value `v` and public ROI target `M > 1` who wins with
//! probability `x` and pays `p` has utility `M·v·x − p` as long as
//! `v·x >= p`, and is infeasible otherwise. For every monotone allocation
//! rule there is a unique truthful payment rule, computed by
//! [`payment::RoiPaymentRule`]. Under decreasing marginal revenue the
//! revenue-optimal rule is a power ramp followed by a flat top, solved by
//! [`optimal::optimal_mechanism`].
//!
//! ```
//! use roi_auction::{optimal_mechanism, RoiTarget, ValueDistribution};
//!
//! let d = ValueDistribution::uniform(1.0)?;
//! let sol = optimal_mechanism(&d, RoiTarget::new(2.0)?, 1001, 1e-12)?;
//! assert!((sol.threshold - 0.75).abs() < 1e-9);
//! assert!((sol.expected_revenue - 0.375).abs() < 1e-9);
//! # Ok::<(), roi_auction::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod audit;
pub mod cli;
pub mod dist;
pub mod error;
pub mod numeric;
pub mod optimal;
pub mod payment;
pub mod revenue;

pub use alloc::{AllocationRule, Segment, Shape};
pub use audit::{AuditReport, CheckEntry, Mechanism, Utility};
pub use dist::{check_dmr, DmrReport, ValueDistribution};
pub use error::{Error, Result};
pub use optimal::{optimal_mechanism, solve_threshold, BoundaryCase, OptimalSolution};
pub use payment::{payment_schedule, PaymentSchedule, RoiPaymentRule, RoiTarget};
pub use revenue::{compare, expected_revenue_mc, expected_revenue_quadrature, RevenueEstimate};
