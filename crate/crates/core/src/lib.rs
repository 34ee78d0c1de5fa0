//! Control-barrier-function safety filters for adaptive cruise control.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the dense algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acc;
pub mod cbf;
pub mod ode;
pub mod qp;
pub mod report;
pub mod selftest;
pub mod sim;
pub mod validate;
