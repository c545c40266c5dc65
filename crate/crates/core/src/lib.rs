//! Non-local fundamental-diagram estimation from vehicle trajectories.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anticipation;
pub mod artifacts;
pub mod fields;
pub mod fitting;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod validation;
