//! Guide chapters, compiled so their examples run as doc-tests.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/distributions.md")]
pub mod distributions {}

#[doc = include_str!("../../../book/src/allocations.md")]
pub mod allocations {}

#[doc = include_str!("../../../book/src/payments.md")]
pub mod payments {}

#[doc = include_str!("../../../book/src/optimal.md")]
pub mod optimal {}

#[doc = include_str!("../../../book/src/auditing.md")]
pub mod auditing {}

#[doc = include_str!("../../../book/src/revenue.md")]
pub mod revenue {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
